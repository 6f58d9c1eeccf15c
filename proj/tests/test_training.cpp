#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "neurove/training.hpp"

using namespace neurove;

TEST_CASE("velocity loss: Eq-10 style evaluation") {
    // single row, e_l = (3,4,0), e_a = 0, scales 1 -> L = 0.5*sqrt(9+16) = 2.5
    Tensor pred = Tensor::zeros({1, 1, 6});
    Tensor gt({1, 1, 6}, {3.0, 4.0, 0.0, 0.0, 0.0, 0.0});
    LossScaleState unit;
    const VelocityLossParts parts = velocity_loss(pred, gt, unit);
    CHECK(parts.total == 2.5);
    CHECK(parts.linear == 2.5);
    CHECK(parts.angular == 0.0);

    // pred == gt -> 0
    CHECK(velocity_loss(gt, gt, unit).total == 0.0);

    // degree-1 homogeneity: doubling e doubles L
    Tensor gt2({1, 1, 6}, {6.0, 8.0, 0.0, 0.0, 0.0, 0.0});
    CHECK(velocity_loss(pred, gt2, unit).total == doctest::Approx(5.0).epsilon(1e-15));

    // scales weigh the parts
    LossScaleState sc;
    sc.scale_l = 2.0;
    sc.scale_a = 3.0;
    Tensor gt3({1, 1, 6}, {3.0, 4.0, 0.0, 0.0, 3.0, 4.0});
    CHECK(velocity_loss(pred, gt3, sc).total == doctest::Approx(2.0 * 2.5 + 3.0 * 2.5).epsilon(1e-15));
}

TEST_CASE("loss-scale updates follow the EMA geometric-mean rule") {
    LossScaleState s;

    // equal norms -> scales converge to 1
    for (int k = 0; k < 200; ++k) s = update_loss_scales(s, 0.5, 0.5);
    CHECK(s.scale_a == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.scale_l == doctest::Approx(1.0).epsilon(1e-12));

    // sustained 100:1 -> ratio 1/100 and balance property
    LossScaleState t;
    for (int k = 0; k < 2000; ++k) t = update_loss_scales(t, 1.0, 0.01);
    CHECK(t.scale_a / t.scale_l == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(t.scale_a * t.ema_angular == doctest::Approx(t.scale_l * t.ema_linear).epsilon(0.01));

    // one-sided zero never divides by zero
    LossScaleState z = update_loss_scales(LossScaleState{}, 0.7, 0.0);
    CHECK(std::isfinite(z.scale_a));
    CHECK(std::isfinite(z.scale_l));
    // both zero: unchanged
    LossScaleState u;
    const LossScaleState u2 = update_loss_scales(u, 0.0, 0.0);
    CHECK(u2.scale_a == 1.0);
    CHECK(u2.scale_l == 1.0);
    CHECK_FALSE(u2.initialized);

    // clamp bounds
    LossScaleState c;
    for (int k = 0; k < 4000; ++k) c = update_loss_scales(c, 1e9, 1e-9);
    CHECK(c.scale_a >= 1e-3);
    CHECK(c.scale_l <= 1e3);

    CHECK_THROWS_AS(update_loss_scales(s, -1.0, 0.0), std::invalid_argument);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    Tensor w({3}, {1.0, -2.0, 0.5});
    std::vector<ParamRef> params{{"w", &w}};
    std::vector<Tensor> grads{Tensor::zeros({3})};
    Adam adam;
    CHECK(adam.step(params, grads));
    CHECK(w.vec() == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("adam: constant gradient approaches the lr-sized signed step") {
    AdamConfig cfg;
    cfg.lr = 1e-3;
    Adam adam(cfg);
    Tensor w({1}, {0.0});
    std::vector<ParamRef> params{{"w", &w}};
    std::vector<Tensor> grads{Tensor({1}, {0.37})};
    double prev = 0.0;
    double step = 0.0;
    for (int k = 0; k < 2000; ++k) {
        adam.step(params, grads);
        step = prev - w[0];
        prev = w[0];
    }
    CHECK(step == doctest::Approx(cfg.lr).epsilon(0.02));
}

TEST_CASE("adam: quadratic bowl converges far below the start") {
    AdamConfig cfg;
    cfg.lr = 1e-2;
    Adam adam(cfg);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor w({10});
    for (double& x : w.vec()) x = dist(rng);
    double start = 0.0;
    for (double x : w.vec()) start += x * x;
    std::vector<ParamRef> params{{"w", &w}};
    for (int k = 0; k < 500; ++k) {
        Tensor g({10});
        for (std::size_t j = 0; j < 10; ++j) g[j] = 2.0 * w[j];
        std::vector<Tensor> grads{g};
        adam.step(params, grads);
    }
    double end = 0.0;
    for (double x : w.vec()) end += x * x;
    CHECK(end < 1e-4 * start);
}

TEST_CASE("adam: non-finite gradient skips the step and reports") {
    Adam adam;
    Tensor w({2}, {1.0, 1.0});
    std::vector<ParamRef> params{{"w", &w}};
    Tensor bad({2}, {0.1, std::numeric_limits<double>::quiet_NaN()});
    std::vector<Tensor> grads{bad};
    CHECK_FALSE(adam.step(params, grads));
    CHECK(adam.skipped_steps() == 1);
    CHECK(w.vec() == std::vector<double>{1.0, 1.0});
}

TEST_CASE("global norm clipping") {
    std::vector<Tensor> grads{Tensor({2}, {3.0, 0.0}), Tensor({1}, {4.0})};
    const double norm = clip_global_norm(grads, 2.5);
    CHECK(norm == doctest::Approx(5.0).epsilon(1e-15));
    double clipped = 0.0;
    for (const Tensor& g : grads)
        for (std::size_t i = 0; i < g.size(); ++i) clipped += g[i] * g[i];
    CHECK(std::sqrt(clipped) == doctest::Approx(2.5).epsilon(1e-12));
}

namespace {

SineDataset tiny_sine(std::size_t steps, std::size_t n_train, std::size_t n_val, std::uint64_t seed) {
    SineDatasetSpec spec;
    spec.num_sequences = n_train + n_val;
    spec.train_count = n_train;
    spec.val_count = n_val;
    spec.steps = steps;
    spec.forecast_steps = steps;
    return gen_sine_dataset(spec, seed);
}

SineModelConfig tiny_sine_cfg() {
    SineModelConfig cfg;
    cfg.hidden_dim = 12;
    cfg.num_layers = 2;
    return cfg;
}

}  // namespace

TEST_CASE("lr = 0 keeps the loss curve and parameters constant") {
    const SineDataset ds = tiny_sine(60, 4, 2, 3);
    SineForecastModel model = build_sine_model(tiny_sine_cfg(), 9);
    const std::vector<double> before = model.head_w.vec();
    SineTrainConfig cfg;
    cfg.adam.lr = 0.0;
    cfg.epochs = 3;
    cfg.batch = 4;
    cfg.tbptt = 30;
    std::vector<double> losses;
    train_sine(model, ds, cfg, [&](const SineEpochLog& log) { losses.push_back(log.train_loss); });
    REQUIRE(losses.size() == 3);
    CHECK(losses[0] == losses[1]);
    CHECK(losses[1] == losses[2]);
    CHECK(model.head_w.vec() == before);
}

TEST_CASE("training reduces the loss and is deterministic") {
    const SineDataset ds = tiny_sine(80, 6, 2, 4);
    SineTrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch = 6;
    cfg.tbptt = 40;
    cfg.adam.lr = 5e-3;

    std::vector<std::string> log_a, log_b;
    SineForecastModel m1 = build_sine_model(tiny_sine_cfg(), 9);
    const TrainOutcome out1 =
        train_sine(m1, ds, cfg, [&](const SineEpochLog& log) { log_a.push_back(log.to_ndjson()); });
    SineForecastModel m2 = build_sine_model(tiny_sine_cfg(), 9);
    train_sine(m2, ds, cfg, [&](const SineEpochLog& log) { log_b.push_back(log.to_ndjson()); });

    CHECK(log_a == log_b);  // end-to-end determinism
    CHECK_FALSE(out1.diverged);
    REQUIRE(out1.best_params.size() == m1.parameters().size());

    // the overfit direction: train loss at the end well below the start
    const auto first = log_a.front().find("train_loss");
    CHECK(first != std::string::npos);
}

TEST_CASE("overfit mode: a single training sequence fits quickly") {
    const SineDataset ds = tiny_sine(120, 1, 1, 8);
    SineTrainConfig cfg;
    cfg.epochs = 60;
    cfg.batch = 1;
    cfg.tbptt = 119;
    cfg.adam.lr = 5e-3;
    SineForecastModel model = build_sine_model(tiny_sine_cfg(), 2);
    std::vector<double> losses;
    train_sine(model, ds, cfg, [&](const SineEpochLog& log) { losses.push_back(log.train_loss); });
    REQUIRE(losses.size() == 60);
    CHECK(losses.back() < 0.25 * losses.front());
}

TEST_CASE("closed-loop fine-tune phase runs and logs its phase") {
    const SineDataset ds = tiny_sine(80, 4, 1, 5);
    SineTrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 4;
    cfg.tbptt = 40;
    cfg.closed_loop_epochs = 2;
    cfg.closed_loop_rollout = 16;
    SineForecastModel model = build_sine_model(tiny_sine_cfg(), 12);
    std::vector<std::string> phases;
    train_sine(model, ds, cfg, [&](const SineEpochLog& log) { phases.push_back(log.phase); });
    REQUIRE(phases.size() == 4);
    CHECK(phases[0] == "fit");
    CHECK(phases[3] == "closed_loop");
}

TEST_CASE("velocity gt rows interpolate the track at final-window bin centers") {
    WindowSpec w;
    w.window_duration = 0.1;
    w.n_bins = 2;
    w.t_steps = 2;
    w.sensor_h = w.sensor_w = 8;
    // ramp track: linear.x = t, yaw rate constant 4 deg/s
    std::vector<TimedVelocity> track;
    for (int k = 0; k <= 20; ++k) {
        TimedVelocity tv;
        tv.t = 0.01 * k;
        tv.linear = {tv.t, 0.0, 0.0};
        tv.angular_deg = {0.0, 0.0, 4.0};
        track.push_back(tv);
    }
    const Tensor rows = velocity_rows_at_bins(track, w);
    REQUIRE(rows.shape() == Shape{2, 6});
    // bin centers at 0.125 and 0.175 within the second window
    CHECK(rows[0] == doctest::Approx(0.125).epsilon(1e-9));
    CHECK(rows[6] == doctest::Approx(0.175).epsilon(1e-9));
    CHECK(rows[5] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("velocity training on a miniature synthetic set stays finite and improves") {
    VelocityDatasetSpec spec;
    spec.scene.sensor_w = spec.scene.sensor_h = 16;
    spec.scene.intrinsics = {30.0, 7.5, 7.5};
    spec.window.sensor_w = spec.window.sensor_h = 16;
    spec.window.t_steps = 2;
    spec.window.n_bins = 3;
    spec.window.window_duration = 0.02;
    spec.train_clips = 6;
    spec.val_clips = 2;
    const auto dir = std::filesystem::temp_directory_path() / "neurove_train_vel";
    std::filesystem::remove_all(dir);
    const VelocityDatasetIndex index = gen_velocity_dataset(spec, dir, 3);

    std::vector<EncodedVelocitySample> train, val;
    for (std::size_t i = 0; i < index.clips.size(); ++i) {
        (index.clips[i].split == "train" ? train : val).push_back(prepare_velocity_sample(index, i));
    }

    VelocityTrainConfig cfg;
    cfg.extractor.blocks = {ConvBlockConfig{4, 3, 2, 1}, ConvBlockConfig{8, 3, 2, 1}};
    cfg.estimator.hidden_dim = 16;
    cfg.epochs = 15;
    cfg.adam.lr = 1e-2;
    cfg.batch = 3;
    NeuroVEModel model = build_model(cfg.extractor, cfg.estimator, spec.window, 5);
    std::vector<VelocityEpochLog> logs;
    const TrainOutcome out =
        train_velocity(model, train, val, cfg, [&](const VelocityEpochLog& log) { logs.push_back(log); });
    CHECK_FALSE(out.diverged);
    REQUIRE(logs.size() == 15);
    for (const auto& log : logs) {
        CHECK(std::isfinite(log.train_loss));
        CHECK(std::isfinite(log.val_rmse_linear));
        CHECK(log.scale_a > 0.0);
        CHECK(log.scale_l > 0.0);
        CHECK(!log.block_firing_rates.empty());
    }
    CHECK(std::min(logs[logs.size() - 1].train_loss, logs[logs.size() - 2].train_loss) <
          logs.front().train_loss);

    const Tensor pred = predict_velocity(model, val);
    CHECK(pred.shape() == Shape{val.size(), spec.window.n_bins, 6});
}
