#pragma once

#include <array>

namespace neurove {

using Vec3 = std::array<double, 3>;

/// Unit quaternion (w, x, y, z) mapping camera-frame vectors into the world
/// frame: v_world = R(q) * v_cam.
struct Quat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    static Quat identity() { return {}; }
    static Quat from_axis_angle(const Vec3& axis, double angle);
    static Quat from_yaw(double yaw) { return from_axis_angle({0.0, 0.0, 1.0}, yaw); }

    double norm() const;
    Quat normalized() const;
    Quat conjugate() const { return {w, -x, -y, -z}; }
    Quat operator*(const Quat& o) const;
    Vec3 rotate(const Vec3& v) const;

    /// Rotation vector (axis * angle) of the shortest arc.
    Vec3 log() const;
    /// ZYX intrinsic Euler angles (roll about X, pitch about Y, yaw about Z).
    Vec3 to_euler_zyx() const;
};

/// Body angular rate -> ZYX Euler-angle rates (roll_dot, pitch_dot,
/// yaw_dot) at the given attitude. Throws near gimbal lock (|pitch| -> 90deg).
Vec3 body_rate_to_euler_rates(const Vec3& omega_body, const Quat& attitude);

}  // namespace neurove
