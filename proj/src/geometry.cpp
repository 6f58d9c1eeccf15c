#include "neurove/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace neurove {

Quat Quat::from_axis_angle(const Vec3& axis, double angle) {
    const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    if (n == 0.0) return identity();
    const double h = 0.5 * angle;
    const double s = std::sin(h) / n;
    return Quat{std::cos(h), axis[0] * s, axis[1] * s, axis[2] * s};
}

double Quat::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quat Quat::normalized() const {
    const double n = norm();
    if (n == 0.0) throw std::invalid_argument("Quat: zero norm");
    return Quat{w / n, x / n, y / n, z / n};
}

Quat Quat::operator*(const Quat& o) const {
    return Quat{w * o.w - x * o.x - y * o.y - z * o.z, w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x, w * o.z + x * o.y - y * o.x + z * o.w};
}

Vec3 Quat::rotate(const Vec3& v) const {
    // v' = q * (0, v) * q^-1 expanded
    const Quat p{0.0, v[0], v[1], v[2]};
    const Quat r = (*this) * p * conjugate();
    return Vec3{r.x, r.y, r.z};
}

Vec3 Quat::log() const {
    Quat q = *this;
    if (q.w < 0.0) q = Quat{-q.w, -q.x, -q.y, -q.z};  // shortest arc
    const double vn = std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
    if (vn < 1e-15) return Vec3{0.0, 0.0, 0.0};
    const double angle = 2.0 * std::atan2(vn, q.w);
    const double s = angle / vn;
    return Vec3{q.x * s, q.y * s, q.z * s};
}

Vec3 Quat::to_euler_zyx() const {
    // R = Rz(yaw) * Ry(pitch) * Rx(roll)
    const double sinp = 2.0 * (w * y - z * x);
    const double pitch = std::abs(sinp) >= 1.0 ? std::copysign(M_PI / 2.0, sinp) : std::asin(sinp);
    const double roll = std::atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y));
    const double yaw = std::atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z));
    return Vec3{roll, pitch, yaw};
}

Vec3 body_rate_to_euler_rates(const Vec3& omega_body, const Quat& attitude) {
    const Vec3 e = attitude.to_euler_zyx();
    const double roll = e[0], pitch = e[1];
    const double cp = std::cos(pitch);
    if (std::abs(cp) < 1e-6) throw std::runtime_error("body_rate_to_euler_rates: gimbal lock");
    const double sr = std::sin(roll), cr = std::cos(roll);
    const double tp = std::tan(pitch);
    const double wx = omega_body[0], wy = omega_body[1], wz = omega_body[2];
    return Vec3{wx + (wy * sr + wz * cr) * tp, wy * cr - wz * sr, (wy * sr + wz * cr) / cp};
}

}  // namespace neurove
