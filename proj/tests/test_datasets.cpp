#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "neurove/datasets.hpp"

using namespace neurove;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("neurove_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("sine dataset basics") {
    SineDatasetSpec spec;
    spec.num_sequences = 10;
    spec.train_count = 8;
    spec.val_count = 2;
    spec.steps = 50;
    spec.forecast_steps = 50;
    const SineDataset ds = gen_sine_dataset(spec, 42);
    CHECK(ds.sequences.size() == 10);
    CHECK(ds.train_indices.size() == 8);
    CHECK(ds.val_indices.size() == 2);

    // split is a partition
    std::set<std::size_t> all(ds.train_indices.begin(), ds.train_indices.end());
    all.insert(ds.val_indices.begin(), ds.val_indices.end());
    CHECK(all.size() == 10);

    for (const SineSequence& s : ds.sequences) {
        CHECK(s.y.size() == 100);
        CHECK(s.phase >= 0.0);
        CHECK(s.phase < 2.0 * kPi);
        for (std::size_t k = 0; k < s.y.size(); ++k) {
            CHECK(std::abs(s.y[k]) <= 1.0);
            CHECK(s.y[k] == doctest::Approx(std::sin(k * spec.x_step + s.phase)).epsilon(1e-15));
        }
    }

    // zero phase, k = 0 -> sin(0) = 0
    SineSequence zero;
    zero.phase = 0.0;
    CHECK(std::sin(0.0 * spec.x_step + zero.phase) == 0.0);

    // determinism
    const SineDataset ds2 = gen_sine_dataset(spec, 42);
    CHECK(ds2.train_indices == ds.train_indices);
    for (std::size_t i = 0; i < 10; ++i) CHECK(ds2.sequences[i].phase == ds.sequences[i].phase);
}

TEST_CASE("sine dataset default spec matches the experiment protocol") {
    SineDatasetSpec spec;
    CHECK(spec.num_sequences == 100);
    CHECK(spec.train_count == 97);
    CHECK(spec.val_count == 3);
    CHECK(spec.steps == 1000);
    CHECK(spec.forecast_steps == 1000);
    SineDatasetSpec bad = spec;
    bad.val_count = 4;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("sine dataset round trips through disk byte-identically") {
    SineDatasetSpec spec;
    spec.num_sequences = 6;
    spec.train_count = 5;
    spec.val_count = 1;
    spec.steps = 20;
    spec.forecast_steps = 10;
    const SineDataset ds = gen_sine_dataset(spec, 9);
    const auto dir = temp_dir("sine_io");
    save_sine_dataset(ds, dir);
    const SineDataset back = load_sine_dataset(dir);
    CHECK(back.train_indices.size() == 5);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(back.sequences[i].phase == ds.sequences[i].phase);
        CHECK(back.sequences[i].y == ds.sequences[i].y);
    }
    // rerun with the same seed -> byte-identical files
    const auto dir2 = temp_dir("sine_io2");
    save_sine_dataset(gen_sine_dataset(spec, 9), dir2);
    CHECK(slurp(dir / "seq_000.csv") == slurp(dir2 / "seq_000.csv"));
    CHECK(slurp(dir / "manifest.json") == slurp(dir2 / "manifest.json"));
}

TEST_CASE("poses_to_velocity recovers constant linear motion exactly") {
    std::vector<PoseSample> poses;
    for (int k = 0; k <= 20; ++k) {
        PoseSample p;
        p.t = 0.1 * k;
        p.position = {0.0, 0.0, 1.0 * p.t};
        p.orientation = Quat::identity();
        poses.push_back(p);
    }
    const auto vel = poses_to_velocity(poses);
    REQUIRE(vel.size() == poses.size());
    for (const TimedVelocity& v : vel) {
        CHECK(std::abs(v.linear[0]) <= 1e-9);
        CHECK(std::abs(v.linear[1]) <= 1e-9);
        CHECK(std::abs(v.linear[2] - 1.0) <= 1e-9);
        for (double a : v.angular_deg) CHECK(std::abs(a) <= 1e-9);
    }
}

TEST_CASE("poses_to_velocity: constant position gives zero velocity") {
    std::vector<PoseSample> poses;
    for (int k = 0; k < 5; ++k) {
        PoseSample p;
        p.t = 0.5 * k;
        p.position = {1.0, -2.0, 0.5};
        p.orientation = Quat::identity();
        poses.push_back(p);
    }
    for (const TimedVelocity& v : poses_to_velocity(poses))
        for (double x : v.linear) CHECK(x == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("poses_to_velocity recovers a uniform yaw rate") {
    // 90 degrees over 9 s at 10 Hz -> 10 deg/s within 0.1 (slerp-exact here)
    std::vector<PoseSample> poses;
    const double rate = 10.0 * kPi / 180.0;
    for (int k = 0; k <= 90; ++k) {
        PoseSample p;
        p.t = 0.1 * k;
        p.position = {0.0, 0.0, 0.0};
        p.orientation = Quat::from_yaw(rate * p.t);
        poses.push_back(p);
    }
    const auto vel = poses_to_velocity(poses);
    for (const TimedVelocity& v : vel) {
        CHECK(std::abs(v.angular_deg[2] - 10.0) <= 0.1);
        CHECK(std::abs(v.angular_deg[0]) <= 0.1);
        CHECK(std::abs(v.angular_deg[1]) <= 0.1);
    }
}

TEST_CASE("poses_to_velocity input validation") {
    std::vector<PoseSample> two(2);
    two[0].t = 0.0;
    two[1].t = 1.0;
    CHECK_THROWS_AS(poses_to_velocity(two), std::invalid_argument);

    std::vector<PoseSample> dup(3);
    dup[0].t = 0.0;
    dup[1].t = 0.0;
    dup[2].t = 1.0;
    CHECK_THROWS_AS(poses_to_velocity(dup), std::invalid_argument);

    std::vector<PoseSample> bad_quat(3);
    for (int k = 0; k < 3; ++k) bad_quat[static_cast<std::size_t>(k)].t = k;
    bad_quat[1].orientation.w = 1.1;
    CHECK_THROWS_AS(poses_to_velocity(bad_quat), std::invalid_argument);
}

TEST_CASE("static camera emits no events and zero velocities") {
    SyntheticSceneSpec scene;
    scene.sensor_w = scene.sensor_h = 16;
    scene.intrinsics = {30.0, 7.5, 7.5};
    const SyntheticClip clip = gen_synthetic_events(scene, 0.05, 3);
    CHECK(clip.events.empty());
    for (const TimedVelocity& v : clip.velocities) {
        for (double x : v.linear) CHECK(x == 0.0);
        for (double a : v.angular_deg) CHECK(a == 0.0);
    }
}

TEST_CASE("pure Z translation has the expected analytic ground truth") {
    SyntheticSceneSpec scene;
    scene.sensor_w = scene.sensor_h = 16;
    scene.intrinsics = {30.0, 7.5, 7.5};
    scene.trajectory.linear_velocity_world = {0.0, 0.0, 1.0};
    const SyntheticClip clip = gen_synthetic_events(scene, 0.1, 4);
    CHECK(!clip.events.empty());
    for (const TimedVelocity& v : clip.velocities) {
        CHECK(v.linear[0] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(v.linear[1] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(v.linear[2] == doctest::Approx(1.0).epsilon(1e-12));
        for (double a : v.angular_deg) CHECK(a == doctest::Approx(0.0).epsilon(1e-12));
    }
    // events and poses share one clock starting at zero
    CHECK(clip.poses.front().t == 0.0);
    CHECK(clip.events.front().t_us >= 0);
}

TEST_CASE("spin about the optical axis fires the periphery harder than the center") {
    SyntheticSceneSpec scene;
    scene.sensor_w = scene.sensor_h = 32;
    scene.intrinsics = {30.0, 15.5, 15.5};
    scene.trajectory.spin_rate_rad = 60.0 * kPi / 180.0;
    const SyntheticClip clip = gen_synthetic_events(scene, 0.2, 5);
    REQUIRE(!clip.events.empty());
    // brute-force comparison of per-pixel rates by radius
    double center_events = 0.0, center_px = 0.0, edge_events = 0.0, edge_px = 0.0;
    std::vector<std::size_t> per_pixel(32 * 32, 0);
    for (const Event& e : clip.events) per_pixel[e.y * 32 + e.x] += 1;
    for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
            const double r = std::hypot(static_cast<double>(x) - 15.5, static_cast<double>(y) - 15.5);
            if (r < 5.0) {
                center_events += per_pixel[y * 32 + x];
                center_px += 1.0;
            } else if (r > 12.0) {
                edge_events += per_pixel[y * 32 + x];
                edge_px += 1.0;
            }
        }
    CHECK(edge_events / edge_px > center_events / center_px);
}

TEST_CASE("synthetic generation is deterministic and degenerate geometry throws") {
    SyntheticSceneSpec scene;
    scene.sensor_w = scene.sensor_h = 16;
    scene.intrinsics = {30.0, 7.5, 7.5};
    scene.trajectory.linear_velocity_world = {0.4, 0.0, 0.3};
    const SyntheticClip a = gen_synthetic_events(scene, 0.1, 11);
    const SyntheticClip b = gen_synthetic_events(scene, 0.1, 11);
    CHECK(a.events == b.events);

    SyntheticSceneSpec bad = scene;
    bad.trajectory.start_position = {0.0, 0.0, 2.5};  // behind the plane
    CHECK_THROWS_AS(gen_synthetic_events(bad, 0.1, 1), std::runtime_error);
}

TEST_CASE("event files round trip losslessly through both formats") {
    SyntheticSceneSpec scene;
    scene.sensor_w = scene.sensor_h = 16;
    scene.intrinsics = {30.0, 7.5, 7.5};
    scene.trajectory.linear_velocity_world = {0.5, -0.2, 0.0};
    const SyntheticClip clip = gen_synthetic_events(scene, 0.1, 21);
    REQUIRE(!clip.events.empty());

    const auto dir = temp_dir("event_io");
    save_events(dir / "e.txt", EventFileFormat::text, clip.events);
    save_events(dir / "e.evt", EventFileFormat::binary, clip.events);
    const auto from_text = load_events(dir / "e.txt", EventFileFormat::text, std::make_pair<std::size_t>(16, 16));
    const auto from_bin = load_events(dir / "e.evt", EventFileFormat::binary, std::make_pair<std::size_t>(16, 16));
    CHECK(from_text == clip.events);
    CHECK(from_bin == clip.events);

    // empty file -> empty list (text); binary still needs its magic
    save_events(dir / "empty.txt", EventFileFormat::text, {});
    CHECK(load_events(dir / "empty.txt", EventFileFormat::text).empty());
    save_events(dir / "empty.evt", EventFileFormat::binary, {});
    CHECK(load_events(dir / "empty.evt", EventFileFormat::binary).empty());

    // bounds validation
    CHECK_THROWS(load_events(dir / "e.txt", EventFileFormat::text, std::make_pair<std::size_t>(4, 4)));
}

TEST_CASE("velocity dataset generation writes a loadable manifest") {
    VelocityDatasetSpec spec;
    spec.scene.sensor_w = spec.scene.sensor_h = 16;
    spec.scene.intrinsics = {30.0, 7.5, 7.5};
    spec.window.sensor_w = spec.window.sensor_h = 16;
    spec.window.t_steps = 2;
    spec.window.n_bins = 3;
    spec.window.window_duration = 0.02;
    spec.train_clips = 3;
    spec.val_clips = 1;
    const auto dir = temp_dir("vel_ds");
    const VelocityDatasetIndex index = gen_velocity_dataset(spec, dir, 77);
    CHECK(index.clips.size() == 4);

    const VelocityDatasetIndex loaded = load_velocity_dataset(dir);
    CHECK(loaded.clips.size() == 4);
    CHECK(loaded.spec.window.n_bins == 3);
    std::size_t train = 0, val = 0;
    for (const VelocityClip& c : loaded.clips) {
        (c.split == "train" ? train : val) += 1;
        const auto events = load_events(dir / c.events_file, EventFileFormat::binary);
        CHECK(!events.empty());
        const auto poses = load_poses_csv(dir / c.poses_file);
        CHECK(poses.size() >= 3);
        const auto gt = load_velocity_csv(dir / c.gt_file);
        CHECK(gt.size() == poses.size());
        // ground truth and poses share the clip clock exactly
        for (std::size_t i = 0; i < gt.size(); ++i) CHECK(gt[i].t == poses[i].t);
    }
    CHECK(train == 3);
    CHECK(val == 1);

    // analytic gt vs pose differentiation agree on these constant-twist clips
    const auto poses = load_poses_csv(dir / loaded.clips[0].poses_file);
    const auto gt = load_velocity_csv(dir / loaded.clips[0].gt_file);
    const auto derived = poses_to_velocity(poses);
    for (std::size_t i = 1; i + 1 < derived.size(); ++i)
        for (int j = 0; j < 3; ++j) {
            CHECK(derived[i].linear[static_cast<std::size_t>(j)] ==
                  doctest::Approx(gt[i].linear[static_cast<std::size_t>(j)]).epsilon(2e-3));
            CHECK(std::abs(derived[i].angular_deg[static_cast<std::size_t>(j)] -
                           gt[i].angular_deg[static_cast<std::size_t>(j)]) < 0.2);
        }
}
