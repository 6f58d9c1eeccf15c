#include "neurove/datasets.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "neurove/parallel.hpp"
#include "neurove/rng.hpp"

namespace neurove {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDegPerRad = 180.0 / kPi;

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + p.string());
    return os;
}

std::ifstream open_in(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + p.string());
    return is;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("malformed number '" + s + "' in " + context);
    }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os = open_out(tmp);
        os << content;
        if (!os) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

// --- sine ---------------------------------------------------------------------

void SineDatasetSpec::validate() const {
    if (train_count + val_count != num_sequences)
        throw std::invalid_argument("SineDatasetSpec: train_count + val_count must equal num_sequences");
    if (steps == 0) throw std::invalid_argument("SineDatasetSpec: steps must be > 0");
    if (!(x_step > 0.0)) throw std::invalid_argument("SineDatasetSpec: x_step must be > 0");
}

SineDataset gen_sine_dataset(const SineDatasetSpec& spec, std::uint64_t seed) {
    spec.validate();
    SineDataset ds;
    ds.spec = spec;
    ds.sequences.resize(spec.num_sequences);

    auto phase_rng = make_rng(derive_seed(seed, 0));
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * kPi);
    for (std::size_t i = 0; i < spec.num_sequences; ++i) {
        SineSequence& s = ds.sequences[i];
        s.phase = phase_dist(phase_rng);
        s.y.resize(spec.total_steps());
        for (std::size_t k = 0; k < s.y.size(); ++k)
            s.y[k] = std::sin(static_cast<double>(k) * spec.x_step + s.phase);
    }

    std::vector<std::size_t> order(spec.num_sequences);
    std::iota(order.begin(), order.end(), 0);
    auto split_rng = make_rng(derive_seed(seed, 1));
    std::shuffle(order.begin(), order.end(), split_rng);
    ds.train_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.train_count));
    ds.val_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(spec.train_count), order.end());
    return ds;
}

void save_sine_dataset(const SineDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["kind"] = "sine";
    manifest["spec"] = {
        {"num_sequences", ds.spec.num_sequences}, {"train_count", ds.spec.train_count},
        {"val_count", ds.spec.val_count},         {"steps", ds.spec.steps},
        {"forecast_steps", ds.spec.forecast_steps}, {"x_step", ds.spec.x_step},
    };
    manifest["sequences"] = nlohmann::json::array();
    for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "seq_%03zu.csv", i);
        std::ostringstream csv;
        csv << "step,y\n";
        for (std::size_t k = 0; k < ds.sequences[i].y.size(); ++k)
            csv << k << ',' << fmt_double(ds.sequences[i].y[k]) << '\n';
        write_file_atomic(dir / name, csv.str());
        const bool is_val = std::find(ds.val_indices.begin(), ds.val_indices.end(), i) != ds.val_indices.end();
        manifest["sequences"].push_back({{"id", i},
                                         {"file", name},
                                         {"phase", ds.sequences[i].phase},
                                         {"split", is_val ? "val" : "train"}});
    }
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

SineDataset load_sine_dataset(const std::filesystem::path& dir) {
    std::ifstream ms = open_in(dir / "manifest.json");
    nlohmann::json manifest = nlohmann::json::parse(ms);
    if (manifest.at("kind").get<std::string>() != "sine")
        throw std::runtime_error("load_sine_dataset: manifest kind is not 'sine'");
    SineDataset ds;
    const auto& js = manifest.at("spec");
    ds.spec.num_sequences = js.at("num_sequences").get<std::size_t>();
    ds.spec.train_count = js.at("train_count").get<std::size_t>();
    ds.spec.val_count = js.at("val_count").get<std::size_t>();
    ds.spec.steps = js.at("steps").get<std::size_t>();
    ds.spec.forecast_steps = js.at("forecast_steps").get<std::size_t>();
    ds.spec.x_step = js.at("x_step").get<double>();
    ds.sequences.resize(ds.spec.num_sequences);
    for (const auto& entry : manifest.at("sequences")) {
        const std::size_t id = entry.at("id").get<std::size_t>();
        SineSequence& s = ds.sequences.at(id);
        s.phase = entry.at("phase").get<double>();
        std::ifstream cs = open_in(dir / entry.at("file").get<std::string>());
        std::string line;
        std::getline(cs, line);  // header
        while (std::getline(cs, line)) {
            if (line.empty()) continue;
            auto cols = split_csv_line(line);
            if (cols.size() != 2) throw std::runtime_error("sine csv: expected 2 columns");
            s.y.push_back(parse_double(cols[1], "sine csv"));
        }
        if (s.y.size() != ds.spec.total_steps()) throw std::runtime_error("sine csv: wrong sequence length");
        if (entry.at("split").get<std::string>() == "val")
            ds.val_indices.push_back(id);
        else
            ds.train_indices.push_back(id);
    }
    return ds;
}

// --- poses ----------------------------------------------------------------------

void PoseSample::validate() const {
    if (std::abs(orientation.norm() - 1.0) > 1e-9)
        throw std::invalid_argument("PoseSample: quaternion must be unit norm");
}

std::vector<TimedVelocity> poses_to_velocity(std::span<const PoseSample> poses) {
    if (poses.size() < 3) throw std::invalid_argument("poses_to_velocity: need >= 3 samples");
    for (std::size_t i = 0; i < poses.size(); ++i) {
        poses[i].validate();
        if (i > 0 && !(poses[i].t > poses[i - 1].t))
            throw std::invalid_argument("poses_to_velocity: timestamps must be strictly increasing");
    }

    const std::size_t n = poses.size();
    std::vector<TimedVelocity> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t lo = k == 0 ? 0 : k - 1;
        const std::size_t hi = k == n - 1 ? n - 1 : k + 1;
        const double dt = poses[hi].t - poses[lo].t;

        Vec3 v_world{};
        for (int i = 0; i < 3; ++i) v_world[i] = (poses[hi].position[i] - poses[lo].position[i]) / dt;
        const Vec3 v_cam = poses[k].orientation.conjugate().rotate(v_world);

        const Quat rel = poses[lo].orientation.conjugate() * poses[hi].orientation;
        const Vec3 rotvec = rel.log();
        const Vec3 omega_body{rotvec[0] / dt, rotvec[1] / dt, rotvec[2] / dt};
        const Vec3 euler = body_rate_to_euler_rates(omega_body, poses[k].orientation);

        out[k].t = poses[k].t;
        out[k].linear = v_cam;
        for (int i = 0; i < 3; ++i) out[k].angular_deg[i] = euler[i] * kDegPerRad;
    }
    return out;
}

// --- synthetic scene ---------------------------------------------------------------

Vec3 TrajectorySpec::position(double t) const {
    return Vec3{start_position[0] + linear_velocity_world[0] * t, start_position[1] + linear_velocity_world[1] * t,
                start_position[2] + linear_velocity_world[2] * t};
}

Quat TrajectorySpec::orientation(double t) const { return Quat::from_yaw(start_yaw_rad + spin_rate_rad * t); }

void SyntheticSceneSpec::validate() const {
    if (!(intrinsics.focal_px > 0.0)) throw std::invalid_argument("SyntheticSceneSpec: focal must be > 0");
    if (sensor_w == 0 || sensor_h == 0) throw std::invalid_argument("SyntheticSceneSpec: sensor dims");
    if (!(texture_cell_m > 0.0)) throw std::invalid_argument("SyntheticSceneSpec: texture_cell_m");
    if (!(texture_density >= 0.0 && texture_density <= 1.0))
        throw std::invalid_argument("SyntheticSceneSpec: texture_density in [0,1]");
    if (!(intensity_dark > 0.0 && intensity_bright > intensity_dark))
        throw std::invalid_argument("SyntheticSceneSpec: need 0 < intensity_dark < intensity_bright");
    if (!(contrast_threshold > 0.0)) throw std::invalid_argument("SyntheticSceneSpec: contrast_threshold");
    if (!(sim_dt > 0.0)) throw std::invalid_argument("SyntheticSceneSpec: sim_dt");
    if (!(pose_rate_hz > 0.0)) throw std::invalid_argument("SyntheticSceneSpec: pose_rate_hz");
}

namespace {

// Deterministic per-cell texture value from (seed, ix, iy).
double texture_cell_value(const SyntheticSceneSpec& scene, std::uint64_t seed, std::int64_t ix, std::int64_t iy) {
    std::uint64_t s = seed ^ (static_cast<std::uint64_t>(ix) * 0x9e3779b97f4a7c15ull) ^
                      (static_cast<std::uint64_t>(iy) * 0xc2b2ae3d27d4eb4full);
    const std::uint64_t h = splitmix64(s);
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    return u < scene.texture_density ? scene.intensity_dark : scene.intensity_bright;
}

// Bilinear interpolation of the cell lattice at plane point (x, y).
double texture_intensity(const SyntheticSceneSpec& scene, std::uint64_t seed, double x, double y) {
    const double u = x / scene.texture_cell_m;
    const double v = y / scene.texture_cell_m;
    const double fu = std::floor(u), fv = std::floor(v);
    const auto i0 = static_cast<std::int64_t>(fu);
    const auto j0 = static_cast<std::int64_t>(fv);
    const double du = u - fu, dv = v - fv;
    const double v00 = texture_cell_value(scene, seed, i0, j0);
    const double v10 = texture_cell_value(scene, seed, i0 + 1, j0);
    const double v01 = texture_cell_value(scene, seed, i0, j0 + 1);
    const double v11 = texture_cell_value(scene, seed, i0 + 1, j0 + 1);
    return (1.0 - du) * (1.0 - dv) * v00 + du * (1.0 - dv) * v10 + (1.0 - du) * dv * v01 + du * dv * v11;
}

// Log intensity seen by pixel (px, py) at time t.
double pixel_log_intensity(const SyntheticSceneSpec& scene, std::uint64_t seed, const Vec3& cam_pos,
                           const Quat& cam_rot, std::size_t px, std::size_t py) {
    const Vec3 dir_cam{(static_cast<double>(px) - scene.intrinsics.cx) / scene.intrinsics.focal_px,
                       (static_cast<double>(py) - scene.intrinsics.cy) / scene.intrinsics.focal_px, 1.0};
    const Vec3 dir_w = cam_rot.rotate(dir_cam);
    if (dir_w[2] <= 1e-9) throw std::runtime_error("gen_synthetic_events: ray parallel to scene plane");
    const double s = (scene.plane_z - cam_pos[2]) / dir_w[2];
    const double x = cam_pos[0] + s * dir_w[0];
    const double y = cam_pos[1] + s * dir_w[1];
    return std::log(texture_intensity(scene, seed, x, y));
}

}  // namespace

SyntheticClip gen_synthetic_events(const SyntheticSceneSpec& scene, double duration, std::uint64_t seed) {
    scene.validate();
    if (!(duration > 0.0)) throw std::invalid_argument("gen_synthetic_events: duration must be > 0");

    SyntheticClip clip;
    const std::size_t npix = scene.sensor_w * scene.sensor_h;
    std::vector<double> ref(npix), prev(npix);

    // Degenerate geometry check over the whole trajectory.
    for (double t : {0.0, duration}) {
        const Vec3 p = scene.trajectory.position(t);
        if (p[2] >= scene.plane_z - 1e-6)
            throw std::runtime_error("gen_synthetic_events: camera reaches the scene plane");
    }

    const std::size_t ticks = static_cast<std::size_t>(std::ceil(duration / scene.sim_dt));
    for (std::size_t k = 0; k <= ticks; ++k) {
        const double t = std::min(static_cast<double>(k) * scene.sim_dt, duration);
        const double t_prev = k == 0 ? 0.0 : std::min(static_cast<double>(k - 1) * scene.sim_dt, duration);
        const Vec3 pos = scene.trajectory.position(t);
        const Quat rot = scene.trajectory.orientation(t);
        for (std::size_t py = 0; py < scene.sensor_h; ++py)
            for (std::size_t px = 0; px < scene.sensor_w; ++px) {
                const std::size_t i = py * scene.sensor_w + px;
                const double L = pixel_log_intensity(scene, seed, pos, rot, px, py);
                if (k == 0) {
                    ref[i] = L;
                    prev[i] = L;
                    continue;
                }
                while (std::abs(L - ref[i]) >= scene.contrast_threshold) {
                    const double sign = L > ref[i] ? 1.0 : -1.0;
                    const double target = ref[i] + sign * scene.contrast_threshold;
                    double frac = 1.0;
                    if (L != prev[i]) frac = (target - prev[i]) / (L - prev[i]);
                    frac = std::min(std::max(frac, 0.0), 1.0);
                    const double te = t_prev + frac * (t - t_prev);
                    clip.events.push_back(Event{static_cast<std::uint64_t>(std::llround(te * 1e6)),
                                                static_cast<std::uint16_t>(px), static_cast<std::uint16_t>(py),
                                                static_cast<std::int8_t>(sign > 0 ? 1 : -1)});
                    ref[i] = target;
                }
                prev[i] = L;
            }
    }
    std::stable_sort(clip.events.begin(), clip.events.end(),
                     [](const Event& a, const Event& b) { return a.t_us < b.t_us; });

    const double pose_dt = 1.0 / scene.pose_rate_hz;
    const std::size_t nposes = static_cast<std::size_t>(std::floor(duration / pose_dt + 1e-9)) + 1;
    const Vec3 omega_body{0.0, 0.0, scene.trajectory.spin_rate_rad};
    for (std::size_t k = 0; k < nposes; ++k) {
        const double t = static_cast<double>(k) * pose_dt;
        PoseSample ps;
        ps.t = t;
        ps.position = scene.trajectory.position(t);
        ps.orientation = scene.trajectory.orientation(t);
        clip.poses.push_back(ps);

        TimedVelocity tv;
        tv.t = t;
        tv.linear = ps.orientation.conjugate().rotate(
            Vec3{scene.trajectory.linear_velocity_world[0], scene.trajectory.linear_velocity_world[1],
                 scene.trajectory.linear_velocity_world[2]});
        const Vec3 euler = body_rate_to_euler_rates(omega_body, ps.orientation);
        for (int i = 0; i < 3; ++i) tv.angular_deg[i] = euler[i] * kDegPerRad;
        clip.velocities.push_back(tv);
    }
    return clip;
}

// --- event file ingestion ------------------------------------------------------------

std::vector<Event> load_events(const std::filesystem::path& path, EventFileFormat format,
                               std::optional<std::pair<std::size_t, std::size_t>> sensor_wh) {
    std::ifstream is = open_in(path);
    std::vector<Event> events =
        format == EventFileFormat::text ? read_events_text(is) : read_events_binary(is);
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (i > 0 && events[i].t_us < events[i - 1].t_us)
            throw std::runtime_error("load_events: events not sorted at record " + std::to_string(i));
        if (sensor_wh && (events[i].x >= sensor_wh->first || events[i].y >= sensor_wh->second))
            throw std::runtime_error("load_events: coordinate out of bounds at record " + std::to_string(i));
    }
    return events;
}

void save_events(const std::filesystem::path& path, EventFileFormat format, std::span<const Event> events) {
    std::ofstream os = open_out(path);
    if (format == EventFileFormat::text)
        write_events_text(os, events);
    else
        write_events_binary(os, events);
    if (!os) throw std::runtime_error("save_events: write failed: " + path.string());
}

// --- pose / velocity csv ------------------------------------------------------------

void save_poses_csv(const std::filesystem::path& path, std::span<const PoseSample> poses) {
    std::ostringstream os;
    os << "t_s,px,py,pz,qw,qx,qy,qz\n";
    for (const PoseSample& p : poses) {
        os << fmt_double(p.t) << ',' << fmt_double(p.position[0]) << ',' << fmt_double(p.position[1]) << ','
           << fmt_double(p.position[2]) << ',' << fmt_double(p.orientation.w) << ',' << fmt_double(p.orientation.x)
           << ',' << fmt_double(p.orientation.y) << ',' << fmt_double(p.orientation.z) << '\n';
    }
    write_file_atomic(path, os.str());
}

std::vector<PoseSample> load_poses_csv(const std::filesystem::path& path) {
    std::ifstream is = open_in(path);
    std::vector<PoseSample> poses;
    std::string line;
    std::getline(is, line);  // header
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cols = split_csv_line(line);
        if (cols.size() != 8)
            throw std::runtime_error("poses csv: expected 8 columns on line " + std::to_string(line_no));
        PoseSample p;
        p.t = parse_double(cols[0], "poses csv");
        for (int i = 0; i < 3; ++i) p.position[static_cast<std::size_t>(i)] = parse_double(cols[1 + i], "poses csv");
        p.orientation = Quat{parse_double(cols[4], "poses csv"), parse_double(cols[5], "poses csv"),
                             parse_double(cols[6], "poses csv"), parse_double(cols[7], "poses csv")};
        poses.push_back(p);
    }
    return poses;
}

void save_velocity_csv(const std::filesystem::path& path, std::span<const TimedVelocity> rows) {
    std::ostringstream os;
    os << "t_s,vx,vy,vz,roll_rate,pitch_rate,yaw_rate\n";
    for (const TimedVelocity& r : rows) {
        os << fmt_double(r.t);
        for (double v : r.linear) os << ',' << fmt_double(v);
        for (double v : r.angular_deg) os << ',' << fmt_double(v);
        os << '\n';
    }
    write_file_atomic(path, os.str());
}

std::vector<TimedVelocity> load_velocity_csv(const std::filesystem::path& path) {
    std::ifstream is = open_in(path);
    std::vector<TimedVelocity> rows;
    std::string line;
    std::getline(is, line);  // header
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cols = split_csv_line(line);
        if (cols.size() != 7)
            throw std::runtime_error("velocity csv: expected 7 columns on line " + std::to_string(line_no));
        TimedVelocity r;
        r.t = parse_double(cols[0], "velocity csv");
        for (int i = 0; i < 3; ++i) r.linear[static_cast<std::size_t>(i)] = parse_double(cols[1 + i], "velocity csv");
        for (int i = 0; i < 3; ++i)
            r.angular_deg[static_cast<std::size_t>(i)] = parse_double(cols[4 + i], "velocity csv");
        rows.push_back(r);
    }
    return rows;
}

// --- velocity dataset ------------------------------------------------------------------

void VelocityDatasetSpec::validate() const {
    scene.validate();
    window.validate();
    if (train_clips == 0 || val_clips == 0)
        throw std::invalid_argument("VelocityDatasetSpec: need train and val clips");
    if (!(speed_min > 0.0 && speed_max >= speed_min))
        throw std::invalid_argument("VelocityDatasetSpec: bad speed range");
    if (scene.sensor_w != window.sensor_w || scene.sensor_h != window.sensor_h)
        throw std::invalid_argument("VelocityDatasetSpec: scene and window sensor dims differ");
}

namespace {

nlohmann::json scene_to_json(const SyntheticSceneSpec& s) {
    return {
        {"focal_px", s.intrinsics.focal_px},
        {"cx", s.intrinsics.cx},
        {"cy", s.intrinsics.cy},
        {"sensor_w", s.sensor_w},
        {"sensor_h", s.sensor_h},
        {"plane_z", s.plane_z},
        {"texture_cell_m", s.texture_cell_m},
        {"texture_density", s.texture_density},
        {"intensity_dark", s.intensity_dark},
        {"intensity_bright", s.intensity_bright},
        {"contrast_threshold", s.contrast_threshold},
        {"sim_dt", s.sim_dt},
        {"pose_rate_hz", s.pose_rate_hz},
    };
}

SyntheticSceneSpec scene_from_json(const nlohmann::json& j) {
    SyntheticSceneSpec s;
    s.intrinsics.focal_px = j.at("focal_px").get<double>();
    s.intrinsics.cx = j.at("cx").get<double>();
    s.intrinsics.cy = j.at("cy").get<double>();
    s.sensor_w = j.at("sensor_w").get<std::size_t>();
    s.sensor_h = j.at("sensor_h").get<std::size_t>();
    s.plane_z = j.at("plane_z").get<double>();
    s.texture_cell_m = j.at("texture_cell_m").get<double>();
    s.texture_density = j.at("texture_density").get<double>();
    s.intensity_dark = j.at("intensity_dark").get<double>();
    s.intensity_bright = j.at("intensity_bright").get<double>();
    s.contrast_threshold = j.at("contrast_threshold").get<double>();
    s.sim_dt = j.at("sim_dt").get<double>();
    s.pose_rate_hz = j.at("pose_rate_hz").get<double>();
    return s;
}

nlohmann::json window_to_json(const WindowSpec& w) {
    return {{"window_duration", w.window_duration},
            {"n_bins", w.n_bins},
            {"t_steps", w.t_steps},
            {"sensor_h", w.sensor_h},
            {"sensor_w", w.sensor_w}};
}

WindowSpec window_from_json(const nlohmann::json& j) {
    WindowSpec w;
    w.window_duration = j.at("window_duration").get<double>();
    w.n_bins = j.at("n_bins").get<std::size_t>();
    w.t_steps = j.at("t_steps").get<std::size_t>();
    w.sensor_h = j.at("sensor_h").get<std::size_t>();
    w.sensor_w = j.at("sensor_w").get<std::size_t>();
    return w;
}

}  // namespace

VelocityDatasetIndex gen_velocity_dataset(const VelocityDatasetSpec& spec, const std::filesystem::path& dir,
                                          std::uint64_t seed) {
    spec.validate();
    std::filesystem::create_directories(dir);

    VelocityDatasetIndex index;
    index.spec = spec;
    index.base_dir = dir;

    auto rng = make_rng(derive_seed(seed, 2));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> speed_dist(spec.speed_min, spec.speed_max);
    std::uniform_real_distribution<double> spin_dist(-spec.spin_max_deg, spec.spin_max_deg);
    std::uniform_real_distribution<double> offset_dist(-0.2, 0.2);

    const std::size_t total = spec.train_clips + spec.val_clips;
    const double duration = spec.clip_duration();
    std::vector<SyntheticSceneSpec> scenes;
    for (std::size_t i = 0; i < total; ++i) {
        SyntheticSceneSpec scene = spec.scene;
        // random unit direction (rejection sampled) scaled to a random speed
        Vec3 direction{};
        double n2 = 0.0;
        do {
            for (auto& d : direction) d = unit(rng);
            n2 = direction[0] * direction[0] + direction[1] * direction[1] + direction[2] * direction[2];
        } while (n2 < 1e-4 || n2 > 1.0);
        const double speed = speed_dist(rng);
        const double inv = speed / std::sqrt(n2);
        scene.trajectory.linear_velocity_world =
            Vec3{direction[0] * inv, direction[1] * inv, direction[2] * inv};
        scene.trajectory.spin_rate_rad = spin_dist(rng) / kDegPerRad;
        scene.trajectory.start_position = Vec3{offset_dist(rng), offset_dist(rng), 0.0};
        scene.trajectory.start_yaw_rad = unit(rng) * kPi;
        scenes.push_back(scene);

        char id[32];
        std::snprintf(id, sizeof(id), "clip_%03zu", i);
        VelocityClip meta;
        meta.id = id;
        meta.events_file = std::string(id) + "/events.evt";
        meta.poses_file = std::string(id) + "/poses.csv";
        meta.gt_file = std::string(id) + "/gt.csv";
        meta.split = i < spec.train_clips ? "train" : "val";
        index.clips.push_back(meta);
    }

    // clips are independent; per-clip seeds keep the output identical for
    // any worker count
    parallel_for(total, [&](std::size_t i) {
        const std::filesystem::path clip_dir = dir / index.clips[i].id;
        std::filesystem::create_directories(clip_dir);
        const SyntheticClip clip = gen_synthetic_events(scenes[i], duration, derive_seed(seed, 100 + i));
        save_events(clip_dir / "events.evt", EventFileFormat::binary, clip.events);
        save_poses_csv(clip_dir / "poses.csv", clip.poses);
        save_velocity_csv(clip_dir / "gt.csv", clip.velocities);
    });

    nlohmann::json manifest;
    manifest["kind"] = "velocity";
    manifest["scene"] = scene_to_json(spec.scene);
    manifest["window"] = window_to_json(spec.window);
    manifest["spec"] = {{"train_clips", spec.train_clips},
                        {"val_clips", spec.val_clips},
                        {"speed_min", spec.speed_min},
                        {"speed_max", spec.speed_max},
                        {"spin_max_deg", spec.spin_max_deg}};
    manifest["clips"] = nlohmann::json::array();
    for (const VelocityClip& c : index.clips)
        manifest["clips"].push_back({{"id", c.id},
                                     {"events", c.events_file},
                                     {"poses", c.poses_file},
                                     {"gt", c.gt_file},
                                     {"split", c.split}});
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    return index;
}

VelocityDatasetIndex load_velocity_dataset(const std::filesystem::path& dir) {
    std::ifstream ms = open_in(dir / "manifest.json");
    nlohmann::json manifest = nlohmann::json::parse(ms);
    if (manifest.at("kind").get<std::string>() != "velocity")
        throw std::runtime_error("load_velocity_dataset: manifest kind is not 'velocity'");
    VelocityDatasetIndex index;
    index.base_dir = dir;
    index.spec.scene = scene_from_json(manifest.at("scene"));
    index.spec.window = window_from_json(manifest.at("window"));
    const auto& js = manifest.at("spec");
    index.spec.train_clips = js.at("train_clips").get<std::size_t>();
    index.spec.val_clips = js.at("val_clips").get<std::size_t>();
    index.spec.speed_min = js.at("speed_min").get<double>();
    index.spec.speed_max = js.at("speed_max").get<double>();
    index.spec.spin_max_deg = js.at("spin_max_deg").get<double>();
    for (const auto& entry : manifest.at("clips")) {
        VelocityClip c;
        c.id = entry.at("id").get<std::string>();
        c.events_file = entry.at("events").get<std::string>();
        c.poses_file = entry.at("poses").get<std::string>();
        c.gt_file = entry.at("gt").get<std::string>();
        c.split = entry.at("split").get<std::string>();
        index.clips.push_back(c);
    }
    return index;
}

}  // namespace neurove
