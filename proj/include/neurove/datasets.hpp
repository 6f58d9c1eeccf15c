#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "neurove/encoding.hpp"
#include "neurove/geometry.hpp"

namespace neurove {

// --- sine regression / forecast dataset -----------------------------------

struct SineDatasetSpec {
    std::size_t num_sequences = 100;
    std::size_t train_count = 97;
    std::size_t val_count = 3;
    std::size_t steps = 1000;
    std::size_t forecast_steps = 1000;
    double x_step = 2.0 * 3.14159265358979323846 / 100.0;

    void validate() const;
    std::size_t total_steps() const { return steps + forecast_steps; }
};

struct SineSequence {
    double phase = 0.0;
    std::vector<double> y;  // length steps + forecast_steps
};

struct SineDataset {
    SineDatasetSpec spec;
    std::vector<SineSequence> sequences;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
};

/// 100 sequences sin(k*x_step + d_i) with seeded uniform phases in
/// [0, 2pi) and a seeded 97/3 shuffle split.
SineDataset gen_sine_dataset(const SineDatasetSpec& spec, std::uint64_t seed);

void save_sine_dataset(const SineDataset& ds, const std::filesystem::path& dir);
SineDataset load_sine_dataset(const std::filesystem::path& dir);

// --- pose ground truth ------------------------------------------------------

struct PoseSample {
    double t = 0.0;    // seconds
    Vec3 position{};   // meters, world frame
    Quat orientation;  // camera-to-world

    void validate() const;
};

/// Camera-frame velocity row: linear m/s, angular as ZYX Euler-angle rates
/// in deg/s.
struct TimedVelocity {
    double t = 0.0;
    Vec3 linear{};
    Vec3 angular_deg{};
};

/// Central differences on position (re-expressed in the camera frame) and
/// relative-quaternion body rates converted to Euler rates; endpoints use
/// one-sided differences. Needs >= 3 strictly increasing samples.
std::vector<TimedVelocity> poses_to_velocity(std::span<const PoseSample> poses);

// --- synthetic event-camera scene -------------------------------------------

struct CameraIntrinsics {
    double focal_px = 60.0;
    double cx = 31.5;
    double cy = 31.5;
};

/// Constant-twist trajectory: world-frame linear velocity plus a spin about
/// the optical axis (the Z axis of the ZYX Euler convention).
struct TrajectorySpec {
    Vec3 start_position{0.0, 0.0, 0.0};
    Vec3 linear_velocity_world{0.0, 0.0, 0.0};
    double spin_rate_rad = 0.0;
    double start_yaw_rad = 0.0;

    Vec3 position(double t) const;
    Quat orientation(double t) const;
};

struct SyntheticSceneSpec {
    CameraIntrinsics intrinsics{};
    std::size_t sensor_w = 64;
    std::size_t sensor_h = 64;
    double plane_z = 2.0;           // fronto-parallel textured plane
    double texture_cell_m = 0.08;   // random binary pattern cell size
    double texture_density = 0.5;   // fraction of dark cells
    double intensity_dark = 0.2;
    double intensity_bright = 1.0;
    double contrast_threshold = 0.2;
    double sim_dt = 2.5e-3;
    double pose_rate_hz = 100.0;
    TrajectorySpec trajectory{};

    void validate() const;
};

struct SyntheticClip {
    std::vector<Event> events;
    std::vector<PoseSample> poses;
    std::vector<TimedVelocity> velocities;  // analytic, same clock as events
};

/// Ideal contrast-trigger event generation over the textured plane, plus
/// pose samples and analytic velocity ground truth on one shared clock.
SyntheticClip gen_synthetic_events(const SyntheticSceneSpec& scene, double duration, std::uint64_t seed);

// --- event file ingestion -----------------------------------------------------

enum class EventFileFormat { text, binary };

std::vector<Event> load_events(const std::filesystem::path& path, EventFileFormat format,
                               std::optional<std::pair<std::size_t, std::size_t>> sensor_wh = {});
void save_events(const std::filesystem::path& path, EventFileFormat format, std::span<const Event> events);

// --- velocity dataset on disk ---------------------------------------------------

struct VelocityDatasetSpec {
    SyntheticSceneSpec scene{};
    WindowSpec window{};
    std::size_t train_clips = 200;
    std::size_t val_clips = 20;
    double speed_min = 0.4;   // m/s
    double speed_max = 1.2;   // m/s
    double spin_max_deg = 20.0;

    double clip_duration() const { return window.window_duration * static_cast<double>(window.t_steps); }
    void validate() const;
};

struct VelocityClip {
    std::string id;
    std::string events_file;
    std::string poses_file;
    std::string gt_file;
    std::string split;  // "train" | "val"
};

struct VelocityDatasetIndex {
    VelocityDatasetSpec spec;
    std::filesystem::path base_dir;
    std::vector<VelocityClip> clips;
};

/// Generate clips with seeded random constant twists and write events,
/// poses, and derived ground truth under dir; the manifest is written last.
VelocityDatasetIndex gen_velocity_dataset(const VelocityDatasetSpec& spec, const std::filesystem::path& dir,
                                          std::uint64_t seed);
VelocityDatasetIndex load_velocity_dataset(const std::filesystem::path& dir);

std::vector<PoseSample> load_poses_csv(const std::filesystem::path& path);
void save_poses_csv(const std::filesystem::path& path, std::span<const PoseSample> poses);
std::vector<TimedVelocity> load_velocity_csv(const std::filesystem::path& path);
void save_velocity_csv(const std::filesystem::path& path, std::span<const TimedVelocity> rows);

}  // namespace neurove
