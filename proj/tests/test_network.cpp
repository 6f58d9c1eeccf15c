#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "neurove/network.hpp"

using namespace neurove;

namespace {

WindowSpec tiny_window() {
    WindowSpec w;
    w.window_duration = 0.02;
    w.n_bins = 3;
    w.t_steps = 2;
    w.sensor_h = 16;
    w.sensor_w = 16;
    return w;
}

FeatureExtractorConfig tiny_extractor() {
    FeatureExtractorConfig cfg;
    cfg.blocks = {ConvBlockConfig{4, 3, 2, 1}, ConvBlockConfig{8, 3, 2, 1}};
    return cfg;
}

EstimatorConfig tiny_estimator() {
    EstimatorConfig cfg;
    cfg.hidden_dim = 16;
    return cfg;
}

SpikeTensor random_spikes(const WindowSpec& w, std::size_t batch, std::uint64_t seed, double density = 0.1) {
    SpikeTensor st = SpikeTensor::zeros(w.t_steps, batch, w.channels(), w.sensor_h, w.sensor_w);
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution dist(density);
    for (auto& v : st.data) v = dist(rng) ? 1 : 0;
    return st;
}

std::filesystem::path temp_file(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("neurove_net_" + name);
    std::filesystem::remove(p);
    return p;
}

}  // namespace

TEST_CASE("build_model is deterministic and counts parameters in closed form") {
    const WindowSpec w = tiny_window();
    const FeatureExtractorConfig ext = tiny_extractor();
    const EstimatorConfig est = tiny_estimator();
    NeuroVEModel a = build_model(ext, est, w, 5);
    NeuroVEModel b = build_model(ext, est, w, 5);
    for (std::size_t i = 0; i < a.parameters().size(); ++i)
        CHECK(a.parameters()[i].tensor->vec() == b.parameters()[i].tensor->vec());

    // independently summed layer sizes
    const std::size_t c_in = w.channels();  // 6
    std::size_t expected = 0;
    expected += 4 * c_in * 9 + 4 + 4 + 4;  // conv w+b, bn gamma+beta
    expected += 8 * 4 * 9 + 8 + 8 + 8;
    const std::size_t feat = 8 * 4 * 4;  // 16x16 -> 8x8 -> 4x4
    const std::size_t h = est.hidden_dim;
    expected += (feat * h) * 6 + (h * h) * 4;  // cell0: w_i..w_o, w_v, w_r + u_*
    expected += (h * h) * 6 + (h * h) * 4;     // cell1
    expected += h * (w.n_bins * 6) + w.n_bins * 6;
    CHECK(a.param_count() == expected);
    CHECK(a.feature_dim == feat);
}

TEST_CASE("spatially exhausted config is rejected") {
    WindowSpec w = tiny_window();
    w.sensor_h = w.sensor_w = 4;
    FeatureExtractorConfig ext;
    ext.blocks = {ConvBlockConfig{4, 7, 1, 0}};  // kernel larger than input, no padding
    CHECK_THROWS_AS(build_model(ext, tiny_estimator(), w, 1), std::invalid_argument);
}

TEST_CASE("all-zero spikes stay silent through the extractor") {
    const WindowSpec w = tiny_window();
    NeuroVEModel model = build_model(tiny_extractor(), tiny_estimator(), w, 3);
    const SpikeTensor zeros = SpikeTensor::zeros(w.t_steps, 2, w.channels(), w.sensor_h, w.sensor_w);
    // zero conv bias holds at init, but BN's beta shift is also zero, so the
    // pre-activations stay 0 and no LIF can cross threshold
    const Tensor features = feature_extract(model, zeros);
    for (std::size_t i = 0; i < features.size(); ++i) CHECK(features[i] == 0.0);
}

TEST_CASE("block outputs are binary and shapes follow the contract") {
    const WindowSpec w = tiny_window();
    NeuroVEModel model = build_model(tiny_extractor(), tiny_estimator(), w, 3);
    const SpikeTensor spikes = random_spikes(w, 2, 9);
    const Tensor features = feature_extract(model, spikes);
    CHECK(features.shape() == Shape{w.t_steps, 2, model.feature_dim});
    for (std::size_t i = 0; i < features.size(); ++i) CHECK((features[i] == 0.0 || features[i] == 1.0));

    const Tensor pred = estimate_velocity(model, features);
    CHECK(pred.shape() == Shape{2, w.n_bins, 6});
}

TEST_CASE("forward returns [B,n,6] records with telemetry rates in [0,1]") {
    const WindowSpec w = tiny_window();
    NeuroVEModel model = build_model(tiny_extractor(), tiny_estimator(), w, 3);
    const SpikeTensor spikes = random_spikes(w, 2, 10, 0.3);
    ModelTelemetry telemetry;
    const auto records = forward(model, spikes, &telemetry);
    REQUIRE(records.size() == 2);
    for (const auto& sample : records) {
        REQUIRE(sample.size() == w.n_bins);
        for (std::size_t r = 0; r < sample.size(); ++r) {
            CHECK(sample[r].bin_index == r);
            for (double v : sample[r].linear) CHECK(std::isfinite(v));
            for (double v : sample[r].angular_deg) CHECK(std::isfinite(v));
        }
    }
    REQUIRE(telemetry.block_firing_rates.size() == 2);
    REQUIRE(telemetry.cell_firing_rates.size() == 2);
    for (double r : telemetry.block_firing_rates) {
        CHECK(r >= 0.0);
        CHECK(r <= 1.0);
    }
    for (double r : telemetry.cell_firing_rates) {
        CHECK(r >= 0.0);
        CHECK(r <= 1.0);
    }

    // empty batch -> empty output
    const SpikeTensor empty = SpikeTensor::zeros(w.t_steps, 0, w.channels(), w.sensor_h, w.sensor_w);
    CHECK(forward(model, empty).empty());
}

TEST_CASE("forward is deterministic for a fixed seed and input") {
    const WindowSpec w = tiny_window();
    const SpikeTensor spikes = random_spikes(w, 3, 11, 0.2);
    NeuroVEModel m1 = build_model(tiny_extractor(), tiny_estimator(), w, 21);
    NeuroVEModel m2 = build_model(tiny_extractor(), tiny_estimator(), w, 21);
    const Tensor f1 = feature_extract(m1, spikes);
    const Tensor f2 = feature_extract(m2, spikes);
    CHECK(f1.vec() == f2.vec());
    CHECK(estimate_velocity(m1, f1).vec() == estimate_velocity(m2, f2).vec());
}

TEST_CASE("temporal-priority schedule: each layer finishes all steps first") {
    const WindowSpec w = tiny_window();
    NeuroVEModel model = build_model(tiny_extractor(), tiny_estimator(), w, 3);
    const SpikeTensor spikes = random_spikes(w, 1, 12);
    std::vector<std::pair<std::size_t, std::size_t>> order;
    ad::Tape tape(false);
    build_velocity_graph(tape, model, spikes.to_tensor(), false,
                         [&](std::size_t layer, std::size_t t) { order.push_back({layer, t}); });
    const std::size_t layers = model.blocks.size() + model.cells.size();
    REQUIRE(order.size() == layers * w.t_steps);
    std::size_t i = 0;
    for (std::size_t layer = 0; layer < layers; ++layer)
        for (std::size_t t = 0; t < w.t_steps; ++t) {
            CHECK(order[i].first == layer);
            CHECK(order[i].second == t);
            ++i;
        }
}

TEST_CASE("taped cell step agrees with the eager cell") {
    ASLSTMParams params = ASLSTMParams::init(3, 8, 2025);
    params.diffusion_d = 0.35;
    ASLSTMState eager = ASLSTMState::zeros(8);
    ad::Tape tape(false);
    TapedCell cell = lift_cell(tape, params, false);
    TapedCellState taped = taped_cell_init(tape, 1, 8);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int k = 0; k < 40; ++k) {
        std::vector<double> x{dist(rng), dist(rng), dist(rng)};
        eager = aslstm_step(eager, x, params);
        taped = taped_cell_step(tape, cell, taped, tape.constant(Tensor({1, 3}, x)));
        for (std::size_t j = 0; j < 8; ++j) {
            CHECK(tape.val(taped.v)[j] == doctest::Approx(eager.v[j]).epsilon(1e-12));
            CHECK(tape.val(taped.c)[j] == doctest::Approx(eager.c[j]).epsilon(1e-12));
            CHECK(tape.val(taped.s)[j] == eager.s[j]);
        }
    }
    // readout parity
    std::vector<double> x{0.3, -0.2, 0.9};
    const std::vector<double> x_cur = x;
    eager = aslstm_step(eager, x, params);
    taped = taped_cell_step(tape, cell, taped, tape.constant(Tensor({1, 3}, x)));
    const OutputReadout r = output_neuron(eager.v, x_cur, eager.v_prev, params);
    const ad::Value rt = taped_readout(tape, cell, taped, tape.constant(Tensor({1, 3}, x_cur)));
    for (std::size_t j = 0; j < 8; ++j) CHECK(tape.val(rt)[j] == doctest::Approx(r.value[j]).epsilon(1e-12));
}

TEST_CASE("sine model eager step matches its taped graph") {
    SineModelConfig cfg;
    cfg.hidden_dim = 12;
    cfg.num_layers = 2;
    SineForecastModel model = build_sine_model(cfg, 31);
    std::vector<ASLSTMState> states = model.initial_states();
    ad::Tape tape(false);
    std::vector<TapedCell> cells;
    std::vector<TapedCellState> tstates;
    for (auto& c : model.cells) {
        cells.push_back(lift_cell(tape, c, false));
        tstates.push_back(taped_cell_init(tape, 1, cfg.hidden_dim));
    }
    const ad::Value head_w = tape.leaf(model.head_w, false);
    const ad::Value head_b = tape.leaf(model.head_b, false);
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int k = 0; k < 30; ++k) {
        const double x = dist(rng);
        const double eager_pred = model.step(states, x);
        ad::Value cur = tape.constant(Tensor({1, 1}, {x}));
        ad::Value x_last = cur;
        for (std::size_t layer = 0; layer < cells.size(); ++layer) {
            if (layer + 1 == cells.size()) x_last = cur;
            tstates[layer] = taped_cell_step(tape, cells[layer], tstates[layer], cur);
            cur = tstates[layer].h;
        }
        const ad::Value r = taped_readout(tape, cells.back(), tstates.back(), x_last);
        const double taped_pred = tape.val(tape.affine(r, head_w, head_b))[0];
        CHECK(taped_pred == doctest::Approx(eager_pred).epsilon(1e-12));
    }
}

TEST_CASE("checkpoints round trip with checksum and config echo") {
    const WindowSpec w = tiny_window();
    NeuroVEModel model = build_model(tiny_extractor(), tiny_estimator(), w, 8);
    const auto path = temp_file("model.nvck");
    save_neurove_model(model, path);

    NeuroVEModel loaded = load_neurove_model(path);
    CHECK(loaded.param_count() == model.param_count());
    const SpikeTensor spikes = random_spikes(w, 2, 13, 0.2);
    // float32 serialization: forward agreement to f32 precision
    const Tensor p1 = estimate_velocity(model, feature_extract(model, spikes));
    const Tensor p2 = estimate_velocity(loaded, feature_extract(loaded, spikes));
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-5));

    // corruption fails loudly
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(40);
        char byte;
        f.seekg(40);
        f.read(&byte, 1);
        byte = static_cast<char>(byte ^ 0x5A);
        f.seekp(40);
        f.write(&byte, 1);
    }
    CHECK_THROWS_WITH_AS(static_cast<void>(load_neurove_model(path)),
                         doctest::Contains("checksum"), std::runtime_error);
}

TEST_CASE("sine checkpoints restore the exact forward behavior at f32 precision") {
    SineModelConfig cfg;
    cfg.hidden_dim = 10;
    SineForecastModel model = build_sine_model(cfg, 77);
    const auto path = temp_file("sine.nvck");
    save_sine_model(model, path);
    SineForecastModel loaded = load_sine_model(path);

    auto s1 = model.initial_states();
    auto s2 = loaded.initial_states();
    for (int k = 0; k < 20; ++k) {
        const double x = std::sin(0.1 * k);
        CHECK(model.step(s1, x) == doctest::Approx(loaded.step(s2, x)).epsilon(1e-5));
    }

    // a sine checkpoint is not a neurove model
    CHECK_THROWS(static_cast<void>(load_neurove_model(path)));
}
