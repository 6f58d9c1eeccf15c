#include "neurove/network.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "neurove/rng.hpp"

namespace neurove {

namespace {

std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    const std::ptrdiff_t num = static_cast<std::ptrdiff_t>(in + 2 * pad) - static_cast<std::ptrdiff_t>(k);
    if (num < 0) return 0;
    return static_cast<std::size_t>(num) / stride + 1;
}

Tensor uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& x : t.vec()) x = dist(rng);
    return t;
}

double value_mean(const Tensor& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i];
    return t.size() ? s / static_cast<double>(t.size()) : 0.0;
}

}  // namespace

// --- configs ------------------------------------------------------------------

FeatureExtractorConfig FeatureExtractorConfig::defaults() {
    FeatureExtractorConfig cfg;
    for (std::size_t ch : {16u, 32u, 64u, 128u}) cfg.blocks.push_back(ConvBlockConfig{ch, 3, 2, 1});
    return cfg;
}

void FeatureExtractorConfig::validate() const {
    if (blocks.empty()) throw std::invalid_argument("FeatureExtractorConfig: need >= 1 block");
    for (const ConvBlockConfig& b : blocks) {
        if (b.out_channels == 0 || b.kernel == 0 || b.stride == 0)
            throw std::invalid_argument("FeatureExtractorConfig: kernel/stride/channels must be positive");
    }
    if (!(bn_epsilon > 0.0)) throw std::invalid_argument("FeatureExtractorConfig: bn_epsilon must be > 0");
    if (!(lif_alpha > 0.0 && lif_alpha < 1.0)) throw std::invalid_argument("FeatureExtractorConfig: lif_alpha");
    if (!(lif_v_th > 0.0)) throw std::invalid_argument("FeatureExtractorConfig: lif_v_th");
    surrogate.validate();
}

void EstimatorConfig::validate() const {
    if (num_layers == 0 || hidden_dim == 0) throw std::invalid_argument("EstimatorConfig: zero dimension");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("EstimatorConfig: alpha");
    if (!(v_th > 0.0)) throw std::invalid_argument("EstimatorConfig: v_th");
    if (!(diffusion_d >= 0.0)) throw std::invalid_argument("EstimatorConfig: diffusion_d");
    if (!(kappa > 0.0 && kappa < 1.0)) throw std::invalid_argument("EstimatorConfig: kappa");
    surrogate.validate();
}

void SineModelConfig::validate() const {
    if (num_layers == 0 || hidden_dim == 0) throw std::invalid_argument("SineModelConfig: zero dimension");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("SineModelConfig: alpha");
    if (!(v_th > 0.0)) throw std::invalid_argument("SineModelConfig: v_th");
    if (!(diffusion_d >= 0.0)) throw std::invalid_argument("SineModelConfig: diffusion_d");
    if (!(kappa > 0.0 && kappa < 1.0)) throw std::invalid_argument("SineModelConfig: kappa");
    surrogate.validate();
}

// --- model construction -----------------------------------------------------------

namespace {

void apply_estimator_cfg(ASLSTMParams& cell, const EstimatorConfig& cfg) {
    cell.alpha = cfg.alpha;
    cell.v_th = cfg.v_th;
    cell.diffusion_d = cfg.diffusion_d;
    cell.kappa = cfg.kappa;
    cell.use_bias = cfg.use_bias;
    cell.recurrence = cfg.recurrence;
    cell.surrogate = cfg.surrogate;
}

}  // namespace

NeuroVEModel build_model(const FeatureExtractorConfig& extractor_cfg, const EstimatorConfig& estimator_cfg,
                         const WindowSpec& window, std::uint64_t seed) {
    extractor_cfg.validate();
    estimator_cfg.validate();
    window.validate();

    NeuroVEModel model;
    model.extractor_cfg = extractor_cfg;
    model.estimator_cfg = estimator_cfg;
    model.window = window;

    std::size_t c = window.channels(), h = window.sensor_h, w = window.sensor_w;
    auto rng = make_rng(derive_seed(seed, 10));
    for (const ConvBlockConfig& bc : extractor_cfg.blocks) {
        const std::size_t ho = conv_out_dim(h, bc.kernel, bc.stride, bc.padding);
        const std::size_t wo = conv_out_dim(w, bc.kernel, bc.stride, bc.padding);
        if (ho == 0 || wo == 0)
            throw std::invalid_argument("build_model: block spatially exhausts the feature map (" +
                                        std::to_string(h) + "x" + std::to_string(w) + ", k=" +
                                        std::to_string(bc.kernel) + ")");
        ConvBlock blk;
        blk.cfg = bc;
        blk.w = uniform_init({bc.out_channels, c, bc.kernel, bc.kernel}, c * bc.kernel * bc.kernel, rng);
        blk.b = Tensor::zeros({bc.out_channels});
        blk.bn_gamma = Tensor::full({bc.out_channels}, 1.0);
        blk.bn_beta = Tensor::zeros({bc.out_channels});
        blk.bn_mean = Tensor::zeros({bc.out_channels});
        blk.bn_var = Tensor::full({bc.out_channels}, 1.0);
        model.blocks.push_back(std::move(blk));
        c = bc.out_channels;
        h = ho;
        w = wo;
    }
    model.feature_dim = c * h * w;

    std::size_t in_dim = model.feature_dim;
    for (std::size_t layer = 0; layer < estimator_cfg.num_layers; ++layer) {
        ASLSTMParams cell = ASLSTMParams::init(in_dim, estimator_cfg.hidden_dim, derive_seed(seed, 20 + layer));
        apply_estimator_cfg(cell, estimator_cfg);
        model.cells.push_back(std::move(cell));
        in_dim = estimator_cfg.hidden_dim;
    }

    const std::size_t out_dim = window.n_bins * 6;
    model.head_w = uniform_init({estimator_cfg.hidden_dim, out_dim}, estimator_cfg.hidden_dim, rng);
    model.head_b = Tensor::zeros({out_dim});
    return model;
}

namespace {

void cell_params(std::vector<ParamRef>& out, const std::string& prefix, ASLSTMParams& c) {
    out.push_back({prefix + ".w_i", &c.w_i});
    out.push_back({prefix + ".w_f", &c.w_f});
    out.push_back({prefix + ".w_g", &c.w_g});
    out.push_back({prefix + ".w_o", &c.w_o});
    out.push_back({prefix + ".u_i", &c.u_i});
    out.push_back({prefix + ".u_f", &c.u_f});
    out.push_back({prefix + ".u_g", &c.u_g});
    out.push_back({prefix + ".u_o", &c.u_o});
    out.push_back({prefix + ".w_v", &c.w_v});
    out.push_back({prefix + ".w_r", &c.w_r});
    if (c.use_bias) {
        out.push_back({prefix + ".b_i", &c.b_i});
        out.push_back({prefix + ".b_f", &c.b_f});
        out.push_back({prefix + ".b_g", &c.b_g});
        out.push_back({prefix + ".b_o", &c.b_o});
    }
}

}  // namespace

std::vector<ParamRef> NeuroVEModel::parameters() {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i);
        out.push_back({p + ".conv_w", &blocks[i].w});
        out.push_back({p + ".conv_b", &blocks[i].b});
        out.push_back({p + ".bn_gamma", &blocks[i].bn_gamma});
        out.push_back({p + ".bn_beta", &blocks[i].bn_beta});
    }
    for (std::size_t i = 0; i < cells.size(); ++i) cell_params(out, "cell" + std::to_string(i), cells[i]);
    out.push_back({"head.w", &head_w});
    out.push_back({"head.b", &head_b});
    return out;
}

std::vector<ParamRef> NeuroVEModel::buffers() {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i);
        out.push_back({p + ".bn_mean", &blocks[i].bn_mean});
        out.push_back({p + ".bn_var", &blocks[i].bn_var});
    }
    return out;
}

std::size_t NeuroVEModel::param_count() {
    std::size_t n = 0;
    for (const ParamRef& p : parameters()) n += p.tensor->size();
    return n;
}

// --- taped building blocks -----------------------------------------------------------

TapedCell lift_cell(ad::Tape& tape, ASLSTMParams& params, bool requires_grad) {
    params.validate();
    TapedCell c;
    c.params = &params;
    c.w_i = tape.leaf(params.w_i, requires_grad);
    c.w_f = tape.leaf(params.w_f, requires_grad);
    c.w_g = tape.leaf(params.w_g, requires_grad);
    c.w_o = tape.leaf(params.w_o, requires_grad);
    c.u_i = tape.leaf(params.u_i, requires_grad);
    c.u_f = tape.leaf(params.u_f, requires_grad);
    c.u_g = tape.leaf(params.u_g, requires_grad);
    c.u_o = tape.leaf(params.u_o, requires_grad);
    c.w_v = tape.leaf(params.w_v, requires_grad);
    c.w_r = tape.leaf(params.w_r, requires_grad);
    if (params.use_bias) {
        c.b_i = tape.leaf(params.b_i, requires_grad);
        c.b_f = tape.leaf(params.b_f, requires_grad);
        c.b_g = tape.leaf(params.b_g, requires_grad);
        c.b_o = tape.leaf(params.b_o, requires_grad);
    }
    return c;
}

TapedCellState taped_cell_init(ad::Tape& tape, std::size_t batch, std::size_t hidden_dim) {
    TapedCellState st;
    const Tensor z = Tensor::zeros({batch, hidden_dim});
    st.c = tape.constant(z);
    st.h = tape.constant(z);
    st.v = tape.constant(z);
    st.s = tape.constant(z);
    st.v_prev = tape.constant(z);
    return st;
}

TapedCellState taped_cell_step(ad::Tape& tape, const TapedCell& cell, const TapedCellState& state, ad::Value x) {
    const ASLSTMParams& p = *cell.params;
    const ad::Value r = p.recurrence == RecurrenceMode::membrane ? state.v : state.s;

    const ad::Value pre_i = tape.add(tape.affine(x, cell.w_i, cell.b_i), tape.matmul(r, cell.u_i));
    const ad::Value pre_f = tape.add(tape.affine(x, cell.w_f, cell.b_f), tape.matmul(r, cell.u_f));
    const ad::Value pre_g = tape.add(tape.affine(x, cell.w_g, cell.b_g), tape.matmul(r, cell.u_g));
    const ad::Value pre_o = tape.add(tape.affine(x, cell.w_o, cell.b_o), tape.matmul(r, cell.u_o));

    TapedCellState next;
    next.c = tape.add(tape.mul(tape.sigmoid(pre_f), state.c), tape.mul(tape.sigmoid(pre_i), tape.tanh_act(pre_g)));
    next.h = tape.mul(tape.sigmoid(pre_o), tape.tanh_act(next.c));

    const ad::Value current = tape.add_scaled(tape.affine(x, cell.w_v), state.v, p.diffusion_d);
    next.v = tape.membrane_update(next.h, current, state.s, p.alpha);
    next.s = tape.spike(next.v, p.v_th, p.surrogate);
    next.v_prev = state.v;
    return next;
}

ad::Value taped_readout(ad::Tape& tape, const TapedCell& cell, const TapedCellState& state, ad::Value x_tf) {
    const ASLSTMParams& p = *cell.params;
    const ad::Value leak = tape.scale(state.v, p.kappa);
    const ad::Value mapped = tape.affine(x_tf, cell.w_r);
    return tape.add_scaled(tape.add(leak, mapped), state.v_prev, p.diffusion_d);
}

// --- velocity graph -----------------------------------------------------------------

namespace {

struct ExtractorOut {
    std::vector<ad::Value> features;  // per t, [B, F]
    std::vector<double> firing_rates;
};

ExtractorOut build_extractor_graph(ad::Tape& tape, NeuroVEModel& model, const Tensor& spikes, bool training,
                                   std::vector<std::pair<std::string, ad::Value>>* params,
                                   const ScheduleHook& hook) {
    if (spikes.rank() != 5)
        throw std::invalid_argument("feature_extract: expected [T,B,C,H,W], got " + shape_str(spikes.shape()));
    const std::size_t t_steps = spikes.dim(0), batch = spikes.dim(1);
    if (spikes.dim(2) != model.window.channels())
        throw std::invalid_argument("feature_extract: channel count != 2*n_bins");
    if (spikes.dim(3) != model.window.sensor_h || spikes.dim(4) != model.window.sensor_w)
        throw std::invalid_argument("feature_extract: sensor dims mismatch");

    const bool req = tape.grad_enabled();
    ExtractorOut out;
    ad::Value x = tape.constant(spikes.reshaped({t_steps * batch, spikes.dim(2), spikes.dim(3), spikes.dim(4)}));

    for (std::size_t i = 0; i < model.blocks.size(); ++i) {
        ConvBlock& blk = model.blocks[i];
        const std::string prefix = "block" + std::to_string(i);
        const ad::Value cw = tape.leaf(blk.w, req);
        const ad::Value cb = tape.leaf(blk.b, req);
        const ad::Value gamma = tape.leaf(blk.bn_gamma, req);
        const ad::Value beta = tape.leaf(blk.bn_beta, req);
        if (params) {
            params->push_back({prefix + ".conv_w", cw});
            params->push_back({prefix + ".conv_b", cb});
            params->push_back({prefix + ".bn_gamma", gamma});
            params->push_back({prefix + ".bn_beta", beta});
        }

        ad::Value y = tape.conv2d(x, cw, cb, blk.cfg.stride, blk.cfg.padding);
        y = tape.batchnorm(y, gamma, beta, blk.bn_mean, blk.bn_var, training, model.extractor_cfg.bn_epsilon,
                           model.extractor_cfg.bn_momentum);

        const Shape ysh = tape.val(y).shape();  // [T*B, O, Ho, Wo]
        const std::size_t feat = ysh[1] * ysh[2] * ysh[3];
        ad::Value per_t = tape.reshape(y, {t_steps, batch * feat});
        ad::Value v = tape.constant(Tensor::zeros({batch * feat}));
        ad::Value s = tape.constant(Tensor::zeros({batch * feat}));
        std::vector<ad::Value> spikes_t;
        double rate = 0.0;
        for (std::size_t t = 0; t < t_steps; ++t) {
            const ad::Value cur = tape.slice0(per_t, t);
            v = tape.membrane_update(v, cur, s, model.extractor_cfg.lif_alpha);
            s = tape.spike(v, model.extractor_cfg.lif_v_th, model.extractor_cfg.surrogate);
            spikes_t.push_back(s);
            rate += value_mean(tape.val(s));
            if (hook) hook(i, t);
        }
        out.firing_rates.push_back(rate / static_cast<double>(t_steps));
        x = tape.reshape(tape.stack0(spikes_t), {t_steps * batch, ysh[1], ysh[2], ysh[3]});
    }

    ad::Value flat = tape.reshape(x, {t_steps, batch * model.feature_dim});
    for (std::size_t t = 0; t < t_steps; ++t)
        out.features.push_back(tape.reshape(tape.slice0(flat, t), {batch, model.feature_dim}));
    return out;
}

}  // namespace

VelocityGraph build_velocity_graph(ad::Tape& tape, NeuroVEModel& model, const Tensor& spikes, bool training,
                                   const ScheduleHook& hook) {
    VelocityGraph g;
    const bool req = tape.grad_enabled();
    ExtractorOut ext = build_extractor_graph(tape, model, spikes, training, &g.params, hook);
    g.features = ext.features;
    g.telemetry.block_firing_rates = ext.firing_rates;

    const std::size_t t_steps = spikes.dim(0), batch = spikes.dim(1);
    std::vector<ad::Value> inputs = ext.features;
    TapedCellState last_state;
    TapedCell last_cell;
    ad::Value x_tf;
    for (std::size_t layer = 0; layer < model.cells.size(); ++layer) {
        TapedCell cell = lift_cell(tape, model.cells[layer], req);
        const std::string prefix = "cell" + std::to_string(layer);
        g.params.push_back({prefix + ".w_i", cell.w_i});
        g.params.push_back({prefix + ".w_f", cell.w_f});
        g.params.push_back({prefix + ".w_g", cell.w_g});
        g.params.push_back({prefix + ".w_o", cell.w_o});
        g.params.push_back({prefix + ".u_i", cell.u_i});
        g.params.push_back({prefix + ".u_f", cell.u_f});
        g.params.push_back({prefix + ".u_g", cell.u_g});
        g.params.push_back({prefix + ".u_o", cell.u_o});
        g.params.push_back({prefix + ".w_v", cell.w_v});
        g.params.push_back({prefix + ".w_r", cell.w_r});
        if (model.cells[layer].use_bias) {
            g.params.push_back({prefix + ".b_i", *cell.b_i});
            g.params.push_back({prefix + ".b_f", *cell.b_f});
            g.params.push_back({prefix + ".b_g", *cell.b_g});
            g.params.push_back({prefix + ".b_o", *cell.b_o});
        }

        TapedCellState st = taped_cell_init(tape, batch, model.estimator_cfg.hidden_dim);
        std::vector<ad::Value> h_out;
        double rate = 0.0;
        for (std::size_t t = 0; t < t_steps; ++t) {
            st = taped_cell_step(tape, cell, st, inputs[t]);
            h_out.push_back(st.h);
            rate += value_mean(tape.val(st.s));
            if (hook) hook(model.blocks.size() + layer, t);
        }
        g.telemetry.cell_firing_rates.push_back(rate / static_cast<double>(t_steps));
        if (layer + 1 == model.cells.size()) {
            last_state = st;
            last_cell = cell;
            x_tf = inputs[t_steps - 1];
        }
        inputs = h_out;
    }
    g.readout = taped_readout(tape, last_cell, last_state, x_tf);

    const ad::Value head_w = tape.leaf(model.head_w, req);
    const ad::Value head_b = tape.leaf(model.head_b, req);
    g.params.push_back({"head.w", head_w});
    g.params.push_back({"head.b", head_b});
    const ad::Value flat = tape.affine(g.readout, head_w, head_b);
    g.pred = tape.reshape(flat, {batch, model.window.n_bins, 6});
    return g;
}

// --- inference ------------------------------------------------------------------------

Tensor feature_extract(NeuroVEModel& model, const SpikeTensor& spikes) {
    ad::Tape tape(false);
    const Tensor in = spikes.to_tensor();
    ExtractorOut ext = build_extractor_graph(tape, model, in, false, nullptr, {});
    Tensor out({spikes.t_steps, spikes.batch, model.feature_dim});
    for (std::size_t t = 0; t < spikes.t_steps; ++t) {
        const Tensor& f = tape.val(ext.features[t]);
        std::memcpy(out.data() + t * f.size(), f.data(), f.size() * sizeof(double));
    }
    return out;
}

Tensor estimate_velocity(NeuroVEModel& model, const Tensor& features) {
    if (features.rank() != 3 || features.dim(2) != model.feature_dim)
        throw std::invalid_argument("estimate_velocity: expected [T,B,F] features");
    const std::size_t t_steps = features.dim(0), batch = features.dim(1);

    ad::Tape tape(false);
    std::vector<ad::Value> inputs;
    for (std::size_t t = 0; t < t_steps; ++t) {
        Tensor f({batch, model.feature_dim});
        std::memcpy(f.data(), features.data() + t * f.size(), f.size() * sizeof(double));
        inputs.push_back(tape.constant(std::move(f)));
    }

    TapedCellState last_state;
    ad::Value x_tf;
    for (std::size_t layer = 0; layer < model.cells.size(); ++layer) {
        TapedCell cell = lift_cell(tape, model.cells[layer], false);
        TapedCellState st = taped_cell_init(tape, batch, model.estimator_cfg.hidden_dim);
        std::vector<ad::Value> h_out;
        for (std::size_t t = 0; t < t_steps; ++t) {
            st = taped_cell_step(tape, cell, st, inputs[t]);
            h_out.push_back(st.h);
        }
        if (layer + 1 == model.cells.size()) {
            last_state = st;
            x_tf = inputs[t_steps - 1];
        }
        inputs = h_out;
    }
    TapedCell last_cell = lift_cell(tape, model.cells.back(), false);
    const ad::Value readout = taped_readout(tape, last_cell, last_state, x_tf);
    const ad::Value head_w = tape.leaf(model.head_w, false);
    const ad::Value head_b = tape.leaf(model.head_b, false);
    const ad::Value pred = tape.affine(readout, head_w, head_b);
    return tape.val(pred).reshaped({batch, model.window.n_bins, 6});
}

std::vector<std::vector<VelocityRecord>> forward(NeuroVEModel& model, const SpikeTensor& spikes,
                                                 ModelTelemetry* telemetry) {
    if (spikes.batch == 0) {
        if (telemetry) *telemetry = ModelTelemetry{};
        return {};
    }
    ad::Tape tape(false);
    VelocityGraph g = build_velocity_graph(tape, model, spikes.to_tensor(), false);
    if (telemetry) *telemetry = g.telemetry;
    const Tensor& pred = tape.val(g.pred);
    std::vector<std::vector<VelocityRecord>> out(spikes.batch);
    for (std::size_t b = 0; b < spikes.batch; ++b) {
        out[b].resize(model.window.n_bins);
        for (std::size_t r = 0; r < model.window.n_bins; ++r) {
            VelocityRecord& rec = out[b][r];
            rec.bin_index = r;
            for (std::size_t i = 0; i < 3; ++i) {
                rec.linear[i] = pred[(b * model.window.n_bins + r) * 6 + i];
                rec.angular_deg[i] = pred[(b * model.window.n_bins + r) * 6 + 3 + i];
            }
        }
    }
    return out;
}

// --- sine model ----------------------------------------------------------------------------

SineForecastModel build_sine_model(const SineModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SineForecastModel model;
    model.cfg = cfg;
    std::size_t in_dim = 1;
    for (std::size_t layer = 0; layer < cfg.num_layers; ++layer) {
        ASLSTMParams cell = ASLSTMParams::init(in_dim, cfg.hidden_dim, derive_seed(seed, 30 + layer));
        cell.alpha = cfg.alpha;
        cell.v_th = cfg.v_th;
        cell.diffusion_d = cfg.diffusion_d;
        cell.kappa = cfg.kappa;
        cell.use_bias = cfg.use_bias;
        cell.recurrence = cfg.recurrence;
        cell.surrogate = cfg.surrogate;
        model.cells.push_back(std::move(cell));
        in_dim = cfg.hidden_dim;
    }
    auto rng = make_rng(derive_seed(seed, 40));
    model.head_w = uniform_init({cfg.hidden_dim, 1}, cfg.hidden_dim, rng);
    model.head_b = Tensor::zeros({1});
    return model;
}

std::vector<ParamRef> SineForecastModel::parameters() {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < cells.size(); ++i) cell_params(out, "cell" + std::to_string(i), cells[i]);
    out.push_back({"head.w", &head_w});
    out.push_back({"head.b", &head_b});
    return out;
}

std::size_t SineForecastModel::param_count() {
    std::size_t n = 0;
    for (const ParamRef& p : parameters()) n += p.tensor->size();
    return n;
}

std::vector<ASLSTMState> SineForecastModel::initial_states() const {
    std::vector<ASLSTMState> st;
    for (std::size_t i = 0; i < cells.size(); ++i) st.push_back(ASLSTMState::zeros(cfg.hidden_dim));
    return st;
}

double SineForecastModel::step(std::vector<ASLSTMState>& states, double x) const {
    std::vector<double> cur{x};
    std::vector<double> x_last;
    for (std::size_t layer = 0; layer < cells.size(); ++layer) {
        if (layer + 1 == cells.size()) x_last = cur;
        states[layer] = aslstm_step(states[layer], cur, cells[layer]);
        cur = states[layer].h;
    }
    const OutputReadout r = output_neuron(states.back().v, x_last, states.back().v_prev, cells.back());
    double y = head_b[0];
    for (std::size_t j = 0; j < r.value.size(); ++j) y += head_w[j] * r.value[j];
    return y;
}

// --- checkpoints ------------------------------------------------------------------------------

namespace {

std::uint32_t crc32_bytes(const unsigned char* data, std::size_t n) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xFF));
    buf.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
public:
    ByteReader(const std::string& buf) : buf_(buf) {}
    std::uint16_t u16() { return static_cast<std::uint16_t>(u8() | (u8() << 8)); }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    std::uint32_t u8() {
        need(1);
        return static_cast<unsigned char>(buf_[pos_++]);
    }
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw std::runtime_error("checkpoint: truncated file");
    }
    const std::string& buf_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& config_json,
                     const std::vector<ParamRef>& tensors) {
    std::string buf;
    buf.append("NVCK", 4);
    put_u32(buf, kCheckpointVersion);
    put_u64(buf, config_json.size());
    buf += config_json;
    put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
    for (const ParamRef& p : tensors) {
        if (p.name.size() > 0xFFFF) throw std::invalid_argument("checkpoint: tensor name too long");
        put_u16(buf, static_cast<std::uint16_t>(p.name.size()));
        buf += p.name;
        buf.push_back(0);  // dtype: float32
        put_u32(buf, static_cast<std::uint32_t>(p.tensor->rank()));
        for (std::size_t d : p.tensor->shape()) put_u64(buf, d);
        for (std::size_t i = 0; i < p.tensor->size(); ++i) {
            const float f = static_cast<float>((*p.tensor)[i]);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(buf, bits);
        }
    }
    put_u32(buf, crc32_bytes(reinterpret_cast<const unsigned char*>(buf.data()), buf.size()));

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("checkpoint: cannot open " + tmp.string());
        os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!os) throw std::runtime_error("checkpoint: write failed " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() < 16 || buf.compare(0, 4, "NVCK") != 0)
        throw std::runtime_error("checkpoint: missing NVCK magic in " + path.string());
    const std::uint32_t computed_crc =
        crc32_bytes(reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 4);
    std::uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i)
        stored_crc |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[buf.size() - 4 + i])) << (8 * i);
    if (computed_crc != stored_crc) throw std::runtime_error("checkpoint: checksum mismatch in " + path.string());

    ByteReader r(buf);
    r.bytes(4);  // magic
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: container version " + std::to_string(version) + " != " +
                                 std::to_string(kCheckpointVersion));
    Checkpoint ck;
    ck.config_json = r.bytes(r.u64());
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.bytes(r.u16());
        const std::string dtype = r.bytes(1);
        if (dtype[0] != 0) throw std::runtime_error("checkpoint: unknown dtype for " + name);
        const std::uint32_t ndim = r.u32();
        Shape shape;
        for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(r.u64());
        Tensor t(shape);
        for (std::size_t j = 0; j < t.size(); ++j) {
            const std::uint32_t bits = r.u32();
            float f;
            std::memcpy(&f, &bits, 4);
            t[j] = static_cast<double>(f);
        }
        ck.tensors.emplace(name, std::move(t));
    }
    return ck;
}

// --- model (de)serialization ---------------------------------------------------------------------

namespace {

constexpr const char* kModelSchema = "neurove-model/1";

nlohmann::json surrogate_to_json(const SurrogateSpec& s) {
    return {{"kind", s.kind == SurrogateKind::rectangular ? "rectangular" : "arctan"}, {"width", s.width}};
}

SurrogateSpec surrogate_from_json(const nlohmann::json& j) {
    SurrogateSpec s;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "rectangular")
        s.kind = SurrogateKind::rectangular;
    else if (kind == "arctan")
        s.kind = SurrogateKind::arctan;
    else
        throw std::runtime_error("surrogate kind: " + kind);
    s.width = j.at("width").get<double>();
    return s;
}

nlohmann::json estimator_to_json(const EstimatorConfig& c) {
    return {{"num_layers", c.num_layers},
            {"hidden_dim", c.hidden_dim},
            {"alpha", c.alpha},
            {"v_th", c.v_th},
            {"diffusion_d", c.diffusion_d},
            {"kappa", c.kappa},
            {"use_bias", c.use_bias},
            {"recurrence", c.recurrence == RecurrenceMode::membrane ? "membrane" : "spike"},
            {"surrogate", surrogate_to_json(c.surrogate)}};
}

EstimatorConfig estimator_from_json(const nlohmann::json& j) {
    EstimatorConfig c;
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.alpha = j.at("alpha").get<double>();
    c.v_th = j.at("v_th").get<double>();
    c.diffusion_d = j.at("diffusion_d").get<double>();
    c.kappa = j.at("kappa").get<double>();
    c.use_bias = j.at("use_bias").get<bool>();
    c.recurrence = j.at("recurrence").get<std::string>() == "spike" ? RecurrenceMode::spike : RecurrenceMode::membrane;
    c.surrogate = surrogate_from_json(j.at("surrogate"));
    return c;
}

void fill_from_checkpoint(const Checkpoint& ck, std::vector<ParamRef> refs) {
    std::size_t used = 0;
    for (ParamRef& p : refs) {
        auto it = ck.tensors.find(p.name);
        if (it == ck.tensors.end()) throw std::runtime_error("checkpoint: missing tensor " + p.name);
        if (it->second.shape() != p.tensor->shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
        *p.tensor = it->second;
        ++used;
    }
    if (used != ck.tensors.size()) throw std::runtime_error("checkpoint: unexpected extra tensors");
}

}  // namespace

void save_neurove_model(NeuroVEModel& model, const std::filesystem::path& path) {
    NeuroVEModel& m = model;
    nlohmann::json cfg;
    cfg["schema"] = kModelSchema;
    cfg["kind"] = "neurove";
    cfg["extractor"] = nlohmann::json::object();
    cfg["extractor"]["bn_epsilon"] = model.extractor_cfg.bn_epsilon;
    cfg["extractor"]["bn_momentum"] = model.extractor_cfg.bn_momentum;
    cfg["extractor"]["lif_alpha"] = model.extractor_cfg.lif_alpha;
    cfg["extractor"]["lif_v_th"] = model.extractor_cfg.lif_v_th;
    cfg["extractor"]["surrogate"] = surrogate_to_json(model.extractor_cfg.surrogate);
    cfg["extractor"]["blocks"] = nlohmann::json::array();
    for (const ConvBlock& b : model.blocks)
        cfg["extractor"]["blocks"].push_back(
            {{"out_channels", b.cfg.out_channels}, {"kernel", b.cfg.kernel}, {"stride", b.cfg.stride},
             {"padding", b.cfg.padding}});
    cfg["estimator"] = estimator_to_json(model.estimator_cfg);
    cfg["window"] = {{"window_duration", model.window.window_duration},
                     {"n_bins", model.window.n_bins},
                     {"t_steps", model.window.t_steps},
                     {"sensor_h", model.window.sensor_h},
                     {"sensor_w", model.window.sensor_w}};

    std::vector<ParamRef> tensors = m.parameters();
    for (const ParamRef& b : m.buffers()) tensors.push_back(b);
    save_checkpoint(path, cfg.dump(), tensors);
}

NeuroVEModel load_neurove_model(const std::filesystem::path& path) {
    const Checkpoint ck = load_checkpoint(path);
    nlohmann::json cfg = nlohmann::json::parse(ck.config_json);
    if (cfg.at("schema").get<std::string>() != kModelSchema)
        throw std::runtime_error("checkpoint: config schema mismatch: " + cfg.at("schema").get<std::string>());
    if (cfg.at("kind").get<std::string>() != "neurove")
        throw std::runtime_error("checkpoint: not a neurove model");

    FeatureExtractorConfig ext;
    ext.bn_epsilon = cfg.at("extractor").at("bn_epsilon").get<double>();
    ext.bn_momentum = cfg.at("extractor").at("bn_momentum").get<double>();
    ext.lif_alpha = cfg.at("extractor").at("lif_alpha").get<double>();
    ext.lif_v_th = cfg.at("extractor").at("lif_v_th").get<double>();
    ext.surrogate = surrogate_from_json(cfg.at("extractor").at("surrogate"));
    for (const auto& b : cfg.at("extractor").at("blocks"))
        ext.blocks.push_back(ConvBlockConfig{b.at("out_channels").get<std::size_t>(),
                                             b.at("kernel").get<std::size_t>(), b.at("stride").get<std::size_t>(),
                                             b.at("padding").get<std::size_t>()});
    const EstimatorConfig est = estimator_from_json(cfg.at("estimator"));
    WindowSpec window;
    window.window_duration = cfg.at("window").at("window_duration").get<double>();
    window.n_bins = cfg.at("window").at("n_bins").get<std::size_t>();
    window.t_steps = cfg.at("window").at("t_steps").get<std::size_t>();
    window.sensor_h = cfg.at("window").at("sensor_h").get<std::size_t>();
    window.sensor_w = cfg.at("window").at("sensor_w").get<std::size_t>();

    NeuroVEModel model = build_model(ext, est, window, 0);
    std::vector<ParamRef> refs = model.parameters();
    for (const ParamRef& b : model.buffers()) refs.push_back(b);
    fill_from_checkpoint(ck, refs);
    return model;
}

void save_sine_model(SineForecastModel& model, const std::filesystem::path& path) {
    SineForecastModel& m = model;
    nlohmann::json cfg;
    cfg["schema"] = kModelSchema;
    cfg["kind"] = "sine";
    cfg["model"] = {{"num_layers", model.cfg.num_layers},
                    {"hidden_dim", model.cfg.hidden_dim},
                    {"alpha", model.cfg.alpha},
                    {"v_th", model.cfg.v_th},
                    {"diffusion_d", model.cfg.diffusion_d},
                    {"kappa", model.cfg.kappa},
                    {"use_bias", model.cfg.use_bias},
                    {"recurrence", model.cfg.recurrence == RecurrenceMode::membrane ? "membrane" : "spike"},
                    {"surrogate", surrogate_to_json(model.cfg.surrogate)}};
    save_checkpoint(path, cfg.dump(), m.parameters());
}

SineForecastModel load_sine_model(const std::filesystem::path& path) {
    const Checkpoint ck = load_checkpoint(path);
    nlohmann::json cfg = nlohmann::json::parse(ck.config_json);
    if (cfg.at("schema").get<std::string>() != kModelSchema)
        throw std::runtime_error("checkpoint: config schema mismatch: " + cfg.at("schema").get<std::string>());
    if (cfg.at("kind").get<std::string>() != "sine")
        throw std::runtime_error("checkpoint: not a sine model");
    const auto& j = cfg.at("model");
    SineModelConfig mc;
    mc.num_layers = j.at("num_layers").get<std::size_t>();
    mc.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    mc.alpha = j.at("alpha").get<double>();
    mc.v_th = j.at("v_th").get<double>();
    mc.diffusion_d = j.at("diffusion_d").get<double>();
    mc.kappa = j.at("kappa").get<double>();
    mc.use_bias = j.at("use_bias").get<bool>();
    mc.recurrence = j.at("recurrence").get<std::string>() == "spike" ? RecurrenceMode::spike : RecurrenceMode::membrane;
    mc.surrogate = surrogate_from_json(j.at("surrogate"));
    SineForecastModel model = build_sine_model(mc, 0);
    fill_from_checkpoint(ck, model.parameters());
    return model;
}

}  // namespace neurove
