#include "neurove/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "neurove/metrics.hpp"
#include "neurove/rng.hpp"

namespace neurove {

// --- dynamic loss scaling ------------------------------------------------------

LossScaleState update_loss_scales(const LossScaleState& state, double grad_a_norm, double grad_l_norm) {
    if (!(grad_a_norm >= 0.0) || !(grad_l_norm >= 0.0) || !std::isfinite(grad_a_norm) || !std::isfinite(grad_l_norm))
        throw std::invalid_argument("update_loss_scales: norms must be finite and >= 0");
    LossScaleState s = state;
    if (grad_a_norm == 0.0 && grad_l_norm == 0.0) return s;  // nothing observed, scales unchanged
    if (!s.initialized) {
        s.ema_angular = grad_a_norm;
        s.ema_linear = grad_l_norm;
        s.initialized = true;
    } else {
        s.ema_angular = s.decay * s.ema_angular + (1.0 - s.decay) * grad_a_norm;
        s.ema_linear = s.decay * s.ema_linear + (1.0 - s.decay) * grad_l_norm;
    }
    constexpr double kTiny = 1e-12;
    if (s.ema_angular > kTiny && s.ema_linear > kTiny) {
        const double mean = std::sqrt(s.ema_angular * s.ema_linear);
        s.scale_a = std::clamp(mean / s.ema_angular, 1e-3, 1e3);
        s.scale_l = std::clamp(mean / s.ema_linear, 1e-3, 1e3);
    }
    return s;
}

VelocityLossParts velocity_loss(const Tensor& pred, const Tensor& gt, const LossScaleState& scale) {
    ad::Tape tape(false);
    VelocityLossParts parts;
    tape.velocity_loss(tape.constant(pred), gt, scale.scale_a, scale.scale_l, &parts);
    return parts;
}

// --- Adam ------------------------------------------------------------------------

void AdamConfig::validate() const {
    if (!(lr > 0.0) && lr != 0.0) throw std::invalid_argument("AdamConfig: lr must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("AdamConfig: need 0 <= beta < 1");
    if (!(epsilon > 0.0)) throw std::invalid_argument("AdamConfig: epsilon must be > 0");
}

Adam::Adam(AdamConfig cfg) : cfg_(cfg) { cfg_.validate(); }

bool Adam::step(std::span<const ParamRef> params, std::span<const Tensor> grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("Adam::step: params/grads size mismatch");
    if (m_.empty()) {
        for (const ParamRef& p : params) {
            m_.push_back(Tensor::zeros(p.tensor->shape()));
            v_.push_back(Tensor::zeros(p.tensor->shape()));
        }
    }
    if (m_.size() != params.size()) throw std::invalid_argument("Adam::step: parameter set changed");

    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].tensor->same_shape(grads[i]))
            throw std::invalid_argument("Adam::step: grad shape mismatch for " + params[i].name);
        for (std::size_t j = 0; j < grads[i].size(); ++j)
            if (!std::isfinite(grads[i][j])) {
                ++skipped_;
                return false;
            }
    }

    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i].tensor;
        const Tensor& g = grads[i];
        for (std::size_t j = 0; j < g.size(); ++j) {
            m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
            v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m_[i][j] / c1;
            const double vhat = v_[i][j] / c2;
            p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
        }
    }
    return true;
}

double clip_global_norm(std::span<Tensor> grads, double max_norm) {
    double sq = 0.0;
    for (const Tensor& g : grads)
        for (std::size_t j = 0; j < g.size(); ++j) sq += g[j] * g[j];
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double f = max_norm / norm;
        for (Tensor& g : grads)
            for (std::size_t j = 0; j < g.size(); ++j) g[j] *= f;
    }
    return norm;
}

void apply_params(std::span<const ParamRef> refs, std::span<const Tensor> values) {
    if (refs.size() != values.size()) throw std::invalid_argument("apply_params: size mismatch");
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (!refs[i].tensor->same_shape(values[i]))
            throw std::invalid_argument("apply_params: shape mismatch for " + refs[i].name);
        *refs[i].tensor = values[i];
    }
}

namespace {

std::vector<Tensor> snapshot_params(std::span<const ParamRef> refs) {
    std::vector<Tensor> out;
    for (const ParamRef& p : refs) out.push_back(*p.tensor);
    return out;
}

std::string json_line(const nlohmann::json& j) { return j.dump(); }

}  // namespace

// --- sine task -------------------------------------------------------------------------

std::string SineEpochLog::to_ndjson() const {
    return json_line({{"epoch", epoch},
                      {"phase", phase},
                      {"train_loss", train_loss},
                      {"val_fit_rmse", val_fit_rmse},
                      {"val_forecast_rmse", val_forecast_rmse}});
}

SineTrace trace_sine(const SineForecastModel& model, const SineSequence& seq, std::size_t fit_steps) {
    const std::size_t total = seq.y.size();
    if (fit_steps < 2 || fit_steps > total) throw std::invalid_argument("trace_sine: bad fit_steps");
    SineTrace tr;
    tr.gt = seq.y;
    tr.pred.assign(total, 0.0);
    tr.phase.assign(total, "fit");
    std::vector<ASLSTMState> states = model.initial_states();
    double x = seq.y[0];
    for (std::size_t k = 1; k < total; ++k) {
        const double p = model.step(states, x);
        tr.pred[k] = p;
        tr.phase[k] = k < fit_steps ? "fit" : "forecast";
        x = k < fit_steps ? seq.y[k] : p;
    }
    tr.phase[0] = "fit";
    return tr;
}

SineEval eval_sine(const SineForecastModel& model, const SineDataset& ds, std::span<const std::size_t> indices) {
    SineEval ev;
    const std::size_t fit_steps = ds.spec.steps;
    for (std::size_t idx : indices) {
        const SineTrace tr = trace_sine(model, ds.sequences.at(idx), fit_steps);
        std::vector<double> fit_pred(tr.pred.begin() + 1, tr.pred.begin() + static_cast<std::ptrdiff_t>(fit_steps));
        std::vector<double> fit_gt(tr.gt.begin() + 1, tr.gt.begin() + static_cast<std::ptrdiff_t>(fit_steps));
        ev.fit_rmse.push_back(rmse_scalar(fit_pred, fit_gt));
        std::vector<double> fc_pred(tr.pred.begin() + static_cast<std::ptrdiff_t>(fit_steps), tr.pred.end());
        std::vector<double> fc_gt(tr.gt.begin() + static_cast<std::ptrdiff_t>(fit_steps), tr.gt.end());
        ev.forecast_rmse.push_back(rmse_scalar(fc_pred, fc_gt));
    }
    for (double v : ev.fit_rmse) ev.fit_rmse_mean += v;
    for (double v : ev.forecast_rmse) ev.forecast_rmse_mean += v;
    if (!ev.fit_rmse.empty()) {
        ev.fit_rmse_mean /= static_cast<double>(ev.fit_rmse.size());
        ev.forecast_rmse_mean /= static_cast<double>(ev.forecast_rmse.size());
    }
    return ev;
}

namespace {

struct SineTapedNet {
    std::vector<TapedCell> cells;
    std::vector<TapedCellState> states;
    ad::Value head_w, head_b;
    std::vector<std::pair<std::string, ad::Value>> params;  // parameters() order
};

SineTapedNet lift_sine(ad::Tape& tape, SineForecastModel& model, std::size_t batch, bool requires_grad) {
    SineTapedNet net;
    for (std::size_t i = 0; i < model.cells.size(); ++i) {
        TapedCell cell = lift_cell(tape, model.cells[i], requires_grad);
        const std::string prefix = "cell" + std::to_string(i);
        net.params.push_back({prefix + ".w_i", cell.w_i});
        net.params.push_back({prefix + ".w_f", cell.w_f});
        net.params.push_back({prefix + ".w_g", cell.w_g});
        net.params.push_back({prefix + ".w_o", cell.w_o});
        net.params.push_back({prefix + ".u_i", cell.u_i});
        net.params.push_back({prefix + ".u_f", cell.u_f});
        net.params.push_back({prefix + ".u_g", cell.u_g});
        net.params.push_back({prefix + ".u_o", cell.u_o});
        net.params.push_back({prefix + ".w_v", cell.w_v});
        net.params.push_back({prefix + ".w_r", cell.w_r});
        if (model.cells[i].use_bias) {
            net.params.push_back({prefix + ".b_i", *cell.b_i});
            net.params.push_back({prefix + ".b_f", *cell.b_f});
            net.params.push_back({prefix + ".b_g", *cell.b_g});
            net.params.push_back({prefix + ".b_o", *cell.b_o});
        }
        net.cells.push_back(cell);
        net.states.push_back(taped_cell_init(tape, batch, model.cfg.hidden_dim));
    }
    net.head_w = tape.leaf(model.head_w, requires_grad);
    net.head_b = tape.leaf(model.head_b, requires_grad);
    net.params.push_back({"head.w", net.head_w});
    net.params.push_back({"head.b", net.head_b});
    return net;
}

void seed_states(ad::Tape& tape, SineTapedNet& net, const std::vector<std::array<Tensor, 5>>& carried) {
    for (std::size_t layer = 0; layer < net.states.size(); ++layer) {
        net.states[layer].c = tape.constant(carried[layer][0]);
        net.states[layer].h = tape.constant(carried[layer][1]);
        net.states[layer].v = tape.constant(carried[layer][2]);
        net.states[layer].s = tape.constant(carried[layer][3]);
        net.states[layer].v_prev = tape.constant(carried[layer][4]);
    }
}

std::vector<std::array<Tensor, 5>> harvest_states(const ad::Tape& tape, const SineTapedNet& net) {
    std::vector<std::array<Tensor, 5>> out;
    for (const TapedCellState& st : net.states)
        out.push_back({tape.val(st.c), tape.val(st.h), tape.val(st.v), tape.val(st.s), tape.val(st.v_prev)});
    return out;
}

/// Advances all layers one step and returns the [B,1] readout-head output.
ad::Value sine_taped_step(ad::Tape& tape, SineTapedNet& net, ad::Value x) {
    ad::Value cur = x;
    ad::Value x_last = x;
    for (std::size_t layer = 0; layer < net.cells.size(); ++layer) {
        if (layer + 1 == net.cells.size()) x_last = cur;
        net.states[layer] = taped_cell_step(tape, net.cells[layer], net.states[layer], cur);
        cur = net.states[layer].h;
    }
    const ad::Value r = taped_readout(tape, net.cells.back(), net.states.back(), x_last);
    return tape.affine(r, net.head_w, net.head_b);
}

Tensor column_tensor(const std::vector<const SineSequence*>& batch, std::size_t k) {
    Tensor t({batch.size(), 1});
    for (std::size_t b = 0; b < batch.size(); ++b) t[b] = batch[b]->y[k];
    return t;
}

}  // namespace

TrainOutcome train_sine(SineForecastModel& model, const SineDataset& ds, const SineTrainConfig& cfg,
                        const SineEpochCallback& cb) {
    cfg.adam.validate();
    if (ds.train_indices.empty()) throw std::invalid_argument("train_sine: empty training split");
    if (cfg.tbptt < 2) throw std::invalid_argument("train_sine: tbptt window must be >= 2");

    std::vector<ParamRef> registry = model.parameters();
    Adam adam(cfg.adam);
    TrainOutcome outcome;
    outcome.best_val_metric = std::numeric_limits<double>::infinity();
    outcome.best_params = snapshot_params(registry);
    std::size_t since_best = 0;
    std::size_t updates = 0;
    const std::size_t fit_inputs = ds.spec.steps - 1;  // inputs y[0..steps-2], targets y[1..steps-1]

    auto run_eval = [&](std::size_t epoch, const char* phase, double train_loss) {
        const SineEval ev = eval_sine(model, ds, ds.val_indices);
        SineEpochLog log;
        log.epoch = epoch;
        log.phase = phase;
        log.train_loss = train_loss;
        log.val_fit_rmse = ev.fit_rmse_mean;
        log.val_forecast_rmse = ev.forecast_rmse_mean;
        if (cb) cb(log);
        const double metric = ev.fit_rmse_mean + ev.forecast_rmse_mean;
        if (metric < outcome.best_val_metric) {
            outcome.best_val_metric = metric;
            outcome.best_epoch = epoch;
            outcome.best_params = snapshot_params(registry);
            since_best = 0;
        } else {
            ++since_best;
        }
    };

    std::size_t epoch = 0;
    bool budget_exhausted = false;
    const double base_lr = cfg.adam.lr;
    for (std::size_t e = 0; e < cfg.epochs && !budget_exhausted; ++e) {
        ++epoch;
        if (cfg.cosine_lr && cfg.epochs > 1) {
            const double progress = static_cast<double>(e) / static_cast<double>(cfg.epochs - 1);
            const double factor =
                cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
            adam.set_lr(base_lr * factor);
        }
        auto rng = make_rng(derive_seed(cfg.seed, 1000 + epoch));
        std::vector<std::size_t> order = ds.train_indices;
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        std::size_t loss_steps = 0;
        for (std::size_t start = 0; start < order.size() && !budget_exhausted; start += cfg.batch) {
            const std::size_t bsz = std::min(cfg.batch, order.size() - start);
            std::vector<const SineSequence*> batch;
            for (std::size_t b = 0; b < bsz; ++b) batch.push_back(&ds.sequences[order[start + b]]);

            std::vector<std::array<Tensor, 5>> carried(model.cells.size());
            for (auto& layer : carried)
                for (auto& t : layer) t = Tensor::zeros({bsz, model.cfg.hidden_dim});

            for (std::size_t w0 = 0; w0 < fit_inputs && !budget_exhausted; w0 += cfg.tbptt) {
                const std::size_t w1 = std::min(w0 + cfg.tbptt, fit_inputs);
                ad::Tape tape;
                SineTapedNet net = lift_sine(tape, model, bsz, true);
                seed_states(tape, net, carried);

                ad::Value loss_acc;
                for (std::size_t k = w0; k < w1; ++k) {
                    const ad::Value x = tape.constant(column_tensor(batch, k));
                    const ad::Value target = tape.constant(column_tensor(batch, k + 1));
                    const ad::Value pred = sine_taped_step(tape, net, x);
                    const ad::Value term = tape.mse(pred, target);
                    loss_acc = loss_acc.valid() ? tape.add(loss_acc, term) : term;
                }
                const ad::Value loss = tape.scale(loss_acc, 1.0 / static_cast<double>(w1 - w0));
                const double loss_val = tape.val(loss)[0];
                loss_sum += loss_val * static_cast<double>(w1 - w0);
                loss_steps += w1 - w0;
                outcome.recent_losses.push_back(loss_val);
                if (outcome.recent_losses.size() > 16)
                    outcome.recent_losses.erase(outcome.recent_losses.begin());

                tape.backward(loss);
                std::vector<Tensor> grads;
                for (const auto& [name, value] : net.params) grads.push_back(tape.grad_or_zeros(value));
                clip_global_norm(grads, cfg.clip_norm);
                adam.step(registry, grads);
                ++updates;
                if (cfg.max_updates && updates >= cfg.max_updates) budget_exhausted = true;
                carried = harvest_states(tape, net);
            }
        }
        const double train_loss = loss_steps ? loss_sum / static_cast<double>(loss_steps) : 0.0;
        if (!std::isfinite(train_loss)) {
            outcome.diverged = true;
            return outcome;
        }
        run_eval(epoch, "fit", train_loss);
        if (cfg.early_stop_patience && since_best >= cfg.early_stop_patience) break;
    }

    // Closed-loop fine-tuning: teacher-forced warmup to a random anchor,
    // then a rollout that feeds its own predictions back, trained against
    // the true continuation. Anchors sit in the warmed-up half of the fit
    // region, matching the forecast protocol's fully warmed handoff.
    adam.set_lr(base_lr * (cfg.cosine_lr ? cfg.lr_floor : 1.0) * cfg.closed_loop_lr_scale);
    for (std::size_t e = 0; e < cfg.closed_loop_epochs && !budget_exhausted; ++e) {
        ++epoch;
        auto rng = make_rng(derive_seed(cfg.seed, 3000 + epoch));
        std::vector<std::size_t> order = ds.train_indices;
        std::shuffle(order.begin(), order.end(), rng);
        const std::size_t rollout = std::min(cfg.closed_loop_rollout, ds.spec.steps / 2);
        std::uniform_int_distribution<std::size_t> anchor_dist(ds.spec.steps / 2, ds.spec.steps - rollout - 1);

        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t start = 0; start < order.size() && !budget_exhausted; start += cfg.batch) {
            const std::size_t bsz = std::min(cfg.batch, order.size() - start);
            std::vector<const SineSequence*> batch;
            for (std::size_t b = 0; b < bsz; ++b) batch.push_back(&ds.sequences[order[start + b]]);
            const std::size_t anchor = anchor_dist(rng);

            // no-grad warmup in chunks so values don't accumulate
            std::vector<std::array<Tensor, 5>> carried(model.cells.size());
            for (auto& layer : carried)
                for (auto& t : layer) t = Tensor::zeros({bsz, model.cfg.hidden_dim});
            for (std::size_t w0 = 0; w0 < anchor; w0 += 256) {
                const std::size_t w1 = std::min(w0 + 256, anchor);
                ad::Tape warm(false);
                SineTapedNet net = lift_sine(warm, model, bsz, false);
                seed_states(warm, net, carried);
                for (std::size_t k = w0; k < w1; ++k)
                    sine_taped_step(warm, net, warm.constant(column_tensor(batch, k)));
                carried = harvest_states(warm, net);
            }

            ad::Tape tape;
            SineTapedNet net = lift_sine(tape, model, bsz, true);
            seed_states(tape, net, carried);
            ad::Value x = tape.constant(column_tensor(batch, anchor));
            ad::Value loss_acc;
            for (std::size_t r = 0; r < rollout; ++r) {
                const ad::Value pred = sine_taped_step(tape, net, x);
                const ad::Value target = tape.constant(column_tensor(batch, anchor + 1 + r));
                const ad::Value term = tape.mse(pred, target);
                loss_acc = loss_acc.valid() ? tape.add(loss_acc, term) : term;
                x = pred;  // feedback: the prediction becomes the next input
            }
            const ad::Value loss = tape.scale(loss_acc, 1.0 / static_cast<double>(rollout));
            const double loss_val = tape.val(loss)[0];
            loss_sum += loss_val;
            ++loss_count;
            outcome.recent_losses.push_back(loss_val);
            if (outcome.recent_losses.size() > 16) outcome.recent_losses.erase(outcome.recent_losses.begin());

            tape.backward(loss);
            std::vector<Tensor> grads;
            for (const auto& [name, value] : net.params) grads.push_back(tape.grad_or_zeros(value));
            clip_global_norm(grads, cfg.clip_norm);
            adam.step(registry, grads);
            ++updates;
            if (cfg.max_updates && updates >= cfg.max_updates) budget_exhausted = true;
        }
        const double train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
        if (!std::isfinite(train_loss)) {
            outcome.diverged = true;
            return outcome;
        }
        run_eval(epoch, "closed_loop", train_loss);
        if (cfg.early_stop_patience && since_best >= cfg.early_stop_patience) break;
    }
    return outcome;
}

// --- velocity task ------------------------------------------------------------------------

std::string VelocityEpochLog::to_ndjson() const {
    return json_line({{"epoch", epoch},
                      {"train_loss", train_loss},
                      {"scale_a", scale_a},
                      {"scale_l", scale_l},
                      {"val_rmse_linear", val_rmse_linear},
                      {"val_rmse_angular", val_rmse_angular},
                      {"val_re_linear", val_re_linear},
                      {"block_firing_rates", block_firing_rates},
                      {"cell_firing_rates", cell_firing_rates}});
}

Tensor velocity_rows_at_bins(std::span<const TimedVelocity> track, const WindowSpec& window) {
    if (track.size() < 2) throw std::invalid_argument("velocity_rows_at_bins: need >= 2 track rows");
    Tensor out({window.n_bins, 6});
    const double base = static_cast<double>(window.t_steps - 1) * window.window_duration;
    for (std::size_t bin = 0; bin < window.n_bins; ++bin) {
        const double tc = base + (static_cast<double>(bin) + 0.5) * window.bin_duration();
        // clamped linear interpolation
        std::size_t hi = 0;
        while (hi + 1 < track.size() && track[hi].t < tc) ++hi;
        const std::size_t lo = hi == 0 ? 0 : hi - 1;
        double f = 0.0;
        if (track[hi].t > track[lo].t) f = std::clamp((tc - track[lo].t) / (track[hi].t - track[lo].t), 0.0, 1.0);
        for (std::size_t i = 0; i < 3; ++i) {
            out[bin * 6 + i] = (1.0 - f) * track[lo].linear[i] + f * track[hi].linear[i];
            out[bin * 6 + 3 + i] = (1.0 - f) * track[lo].angular_deg[i] + f * track[hi].angular_deg[i];
        }
    }
    return out;
}

EncodedVelocitySample prepare_velocity_sample(const VelocityDatasetIndex& index, std::size_t clip) {
    const VelocityClip& meta = index.clips.at(clip);
    const WindowSpec& window = index.spec.window;
    const std::vector<Event> events =
        load_events(index.base_dir / meta.events_file, EventFileFormat::binary,
                    std::make_pair(window.sensor_w, window.sensor_h));
    const std::vector<PoseSample> poses = load_poses_csv(index.base_dir / meta.poses_file);

    EncodedVelocitySample sample;
    sample.clip_id = meta.id;
    sample.spikes = encode_polarity(bin_events(events, window, 0), window);
    const std::vector<TimedVelocity> track = poses_to_velocity(poses);
    sample.gt = velocity_rows_at_bins(track, window);
    return sample;
}

namespace {

struct ValRows {
    std::vector<std::vector<double>> pred_linear, gt_linear, pred_angular, gt_angular;
};

ValRows collect_rows(const Tensor& pred, std::span<const EncodedVelocitySample> samples, std::size_t n_bins) {
    ValRows rows;
    for (std::size_t b = 0; b < samples.size(); ++b)
        for (std::size_t r = 0; r < n_bins; ++r) {
            const double* p = pred.data() + (b * n_bins + r) * 6;
            const double* g = samples[b].gt.data() + r * 6;
            rows.pred_linear.push_back({p[0], p[1], p[2]});
            rows.gt_linear.push_back({g[0], g[1], g[2]});
            rows.pred_angular.push_back({p[3], p[4], p[5]});
            rows.gt_angular.push_back({g[3], g[4], g[5]});
        }
    return rows;
}

Tensor stack_gt(std::span<const EncodedVelocitySample> batch, std::size_t n_bins) {
    Tensor gt({batch.size(), n_bins, 6});
    for (std::size_t b = 0; b < batch.size(); ++b)
        for (std::size_t j = 0; j < n_bins * 6; ++j) gt[b * n_bins * 6 + j] = batch[b].gt[j];
    return gt;
}

SpikeTensor stack_spikes(std::span<const EncodedVelocitySample> batch) {
    std::vector<SpikeTensor> parts;
    for (const EncodedVelocitySample& s : batch) parts.push_back(s.spikes);
    return batch_samples(parts);
}

// Gradient norms of the unscaled loss parts w.r.t. the shared readout: the
// two parts only meet at the readout boundary, so this is where imbalance
// is measured.
void part_grad_norms(const Tensor& pred, const Tensor& gt, const Tensor& head_w, std::size_t hidden,
                     double* grad_a, double* grad_l) {
    const std::size_t rows = pred.size() / 6;
    const std::size_t batch = pred.dim(0);
    const std::size_t per_sample = rows / batch;
    const std::size_t out_dim = per_sample * 6;
    std::vector<double> ga(batch * hidden, 0.0), gl(batch * hidden, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t b = r / per_sample;
        const std::size_t local = r % per_sample;
        double el = 0.0, ea = 0.0;
        for (std::size_t i = 0; i < 3; ++i) {
            const double dl = gt[r * 6 + i] - pred[r * 6 + i];
            const double da = gt[r * 6 + 3 + i] - pred[r * 6 + 3 + i];
            el += dl * dl;
            ea += da * da;
        }
        el = std::sqrt(el);
        ea = std::sqrt(ea);
        for (std::size_t i = 0; i < 3; ++i) {
            const std::size_t col_l = local * 6 + i;
            const std::size_t col_a = local * 6 + 3 + i;
            const double rl = el > 0.0 ? (pred[r * 6 + i] - gt[r * 6 + i]) / (2.0 * el * static_cast<double>(rows)) : 0.0;
            const double ra =
                ea > 0.0 ? (pred[r * 6 + 3 + i] - gt[r * 6 + 3 + i]) / (2.0 * ea * static_cast<double>(rows)) : 0.0;
            for (std::size_t h = 0; h < hidden; ++h) {
                gl[b * hidden + h] += rl * head_w[h * out_dim + col_l];
                ga[b * hidden + h] += ra * head_w[h * out_dim + col_a];
            }
        }
    }
    double sa = 0.0, sl = 0.0;
    for (double x : ga) sa += x * x;
    for (double x : gl) sl += x * x;
    *grad_a = std::sqrt(sa);
    *grad_l = std::sqrt(sl);
}

}  // namespace

Tensor predict_velocity(NeuroVEModel& model, std::span<const EncodedVelocitySample> samples) {
    const std::size_t n_bins = model.window.n_bins;
    Tensor out({samples.size(), n_bins, 6});
    const std::size_t chunk = 8;
    for (std::size_t start = 0; start < samples.size(); start += chunk) {
        const std::size_t bsz = std::min(chunk, samples.size() - start);
        const SpikeTensor spikes = stack_spikes(samples.subspan(start, bsz));
        ad::Tape tape(false);
        VelocityGraph g = build_velocity_graph(tape, model, spikes.to_tensor(), false);
        const Tensor& pred = tape.val(g.pred);
        for (std::size_t j = 0; j < pred.size(); ++j) out[start * n_bins * 6 + j] = pred[j];
    }
    return out;
}

TrainOutcome train_velocity(NeuroVEModel& model, std::span<const EncodedVelocitySample> train_set,
                            std::span<const EncodedVelocitySample> val_set, const VelocityTrainConfig& cfg,
                            const VelocityEpochCallback& cb) {
    cfg.adam.validate();
    if (train_set.empty()) throw std::invalid_argument("train_velocity: empty training set");

    std::vector<ParamRef> registry = model.parameters();
    Adam adam(cfg.adam);
    LossScaleState scale;
    scale.decay = cfg.scale_decay;

    TrainOutcome outcome;
    outcome.best_val_metric = std::numeric_limits<double>::infinity();
    outcome.best_params = snapshot_params(registry);
    std::size_t since_best = 0;
    bool checked_registry = false;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto rng = make_rng(derive_seed(cfg.seed, 2000 + epoch));
        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        ModelTelemetry telemetry;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t bsz = std::min(cfg.batch, order.size() - start);
            std::vector<EncodedVelocitySample> batch;
            for (std::size_t b = 0; b < bsz; ++b) batch.push_back(train_set[order[start + b]]);

            const SpikeTensor spikes = stack_spikes(batch);
            const Tensor gt = stack_gt(batch, model.window.n_bins);

            ad::Tape tape;
            VelocityGraph g = build_velocity_graph(tape, model, spikes.to_tensor(), true);
            if (!checked_registry) {
                if (g.params.size() != registry.size())
                    throw std::logic_error("train_velocity: graph/registry parameter count mismatch");
                for (std::size_t i = 0; i < registry.size(); ++i)
                    if (g.params[i].first != registry[i].name)
                        throw std::logic_error("train_velocity: parameter order mismatch at " + registry[i].name);
                checked_registry = true;
            }
            VelocityLossParts parts;
            const ad::Value loss = tape.velocity_loss(g.pred, gt, scale.scale_a, scale.scale_l, &parts);
            loss_sum += parts.total;
            ++batches;
            outcome.recent_losses.push_back(parts.total);
            if (outcome.recent_losses.size() > 16) outcome.recent_losses.erase(outcome.recent_losses.begin());
            telemetry = g.telemetry;

            double ga = 0.0, gl = 0.0;
            part_grad_norms(tape.val(g.pred), gt, model.head_w, model.estimator_cfg.hidden_dim, &ga, &gl);

            tape.backward(loss);
            std::vector<Tensor> grads;
            for (const auto& [name, value] : g.params) grads.push_back(tape.grad_or_zeros(value));
            clip_global_norm(grads, cfg.clip_norm);
            adam.step(registry, grads);
            scale = update_loss_scales(scale, ga, gl);
        }

        const double train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        if (!std::isfinite(train_loss)) {
            outcome.diverged = true;
            return outcome;
        }

        VelocityEpochLog log;
        log.epoch = epoch;
        log.train_loss = train_loss;
        log.scale_a = scale.scale_a;
        log.scale_l = scale.scale_l;
        log.block_firing_rates = telemetry.block_firing_rates;
        log.cell_firing_rates = telemetry.cell_firing_rates;
        if (!val_set.empty()) {
            const Tensor pred = predict_velocity(model, val_set);
            const ValRows rows = collect_rows(pred, val_set, model.window.n_bins);
            log.val_rmse_linear = rmse(rows.pred_linear, rows.gt_linear);
            log.val_rmse_angular = rmse(rows.pred_angular, rows.gt_angular);
            log.val_re_linear = relative_error(rows.pred_linear, rows.gt_linear);
        }
        if (cb) cb(log);

        const double metric = val_set.empty() ? train_loss : log.val_rmse_linear;
        if (metric < outcome.best_val_metric) {
            outcome.best_val_metric = metric;
            outcome.best_epoch = epoch;
            outcome.best_params = snapshot_params(registry);
            since_best = 0;
        } else if (++since_best >= cfg.early_stop_patience && cfg.early_stop_patience) {
            break;
        }
    }
    return outcome;
}

}  // namespace neurove
