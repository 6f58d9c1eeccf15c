#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neurove/datasets.hpp"
#include "neurove/network.hpp"
#include "neurove/tape.hpp"

namespace neurove {

// --- dynamic loss scaling ---------------------------------------------------

/// EMA trackers of the two loss parts' gradient magnitudes plus the current
/// multipliers. Scales start at 1 and are set so the scaled EMA magnitudes
/// meet at their geometric mean, clamped to [1e-3, 1e3].
struct LossScaleState {
    double ema_angular = 0.0;
    double ema_linear = 0.0;
    double decay = 0.99;
    double scale_a = 1.0;
    double scale_l = 1.0;
    bool initialized = false;
};

LossScaleState update_loss_scales(const LossScaleState& state, double grad_a_norm, double grad_l_norm);

// --- losses -------------------------------------------------------------------

using VelocityLossParts = ad::VelocityLossParts;

/// Eager twin of Tape::velocity_loss for evaluation and tests.
VelocityLossParts velocity_loss(const Tensor& pred, const Tensor& gt, const LossScaleState& scale);

// --- Adam ------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {});

    /// Bias-corrected Adam update in place. A non-finite gradient skips the
    /// whole step and returns false.
    bool step(std::span<const ParamRef> params, std::span<const Tensor> grads);
    std::size_t step_count() const { return t_; }
    std::size_t skipped_steps() const { return skipped_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }

private:
    AdamConfig cfg_;
    std::size_t t_ = 0;
    std::size_t skipped_ = 0;
    std::vector<Tensor> m_, v_;
};

/// Scales gradients in place so their global L2 norm is at most max_norm;
/// returns the pre-clip norm.
double clip_global_norm(std::span<Tensor> grads, double max_norm);

// --- sine task -----------------------------------------------------------------------

struct SineTrainConfig {
    SineModelConfig model{};
    std::uint64_t seed = 7;
    AdamConfig adam{};
    std::size_t epochs = 40;
    std::size_t batch = 16;
    std::size_t tbptt = 250;
    double clip_norm = 5.0;
    bool cosine_lr = false;               // cosine decay over the fit epochs
    double lr_floor = 0.02;               // final lr fraction under cosine decay
    bool baseline_slstm = false;
    std::size_t closed_loop_epochs = 0;
    std::size_t closed_loop_rollout = 64;
    double closed_loop_lr_scale = 0.1;
    std::size_t early_stop_patience = 0;  // epochs without val improvement; 0 = off
    std::size_t max_updates = 0;          // optimizer-step budget; 0 = unlimited
};

struct SineEpochLog {
    std::size_t epoch = 0;
    std::string phase;  // "fit" | "closed_loop"
    double train_loss = 0.0;
    double val_fit_rmse = 0.0;
    double val_forecast_rmse = 0.0;

    std::string to_ndjson() const;
};

struct SineEval {
    std::vector<double> fit_rmse;       // per validation sequence
    std::vector<double> forecast_rmse;  // per validation sequence
    double fit_rmse_mean = 0.0;
    double forecast_rmse_mean = 0.0;
};

/// Teacher-forced fit over [0, steps) and closed-loop forecast over
/// [steps, steps+forecast_steps), evaluated on the given sequences.
SineEval eval_sine(const SineForecastModel& model, const SineDataset& ds, std::span<const std::size_t> indices);

/// Per-sequence prediction trace: fit-phase one-step-ahead predictions, then
/// the closed-loop continuation; `phase[k]` is "fit" or "forecast".
struct SineTrace {
    std::vector<double> gt;
    std::vector<double> pred;
    std::vector<std::string> phase;
};
SineTrace trace_sine(const SineForecastModel& model, const SineSequence& seq, std::size_t fit_steps);

struct TrainOutcome {
    bool diverged = false;
    std::size_t best_epoch = 0;
    double best_val_metric = 0.0;
    std::vector<Tensor> best_params;  // parameters() order
    std::vector<double> recent_losses;
};

using SineEpochCallback = std::function<void(const SineEpochLog&)>;

/// MSE one-step-ahead training with TBPTT, optional closed-loop fine-tuning
/// epochs, deterministic given cfg.seed. The model is left at its final
/// state; best_params holds the best-validation snapshot.
TrainOutcome train_sine(SineForecastModel& model, const SineDataset& ds, const SineTrainConfig& cfg,
                        const SineEpochCallback& cb = {});

void apply_params(std::span<const ParamRef> refs, std::span<const Tensor> values);

// --- velocity task ----------------------------------------------------------------------

struct EncodedVelocitySample {
    SpikeTensor spikes;  // [T,1,C,H,W]
    Tensor gt;           // [n,6] rows: linear m/s then Euler rates deg/s
    std::string clip_id;
};

/// Ground-truth rows at the bin centers of the final window, interpolated
/// from the pose-derived velocity track.
Tensor velocity_rows_at_bins(std::span<const TimedVelocity> track, const WindowSpec& window);

/// Loads events + poses of one clip and encodes them (t0 = 0 clock).
EncodedVelocitySample prepare_velocity_sample(const VelocityDatasetIndex& index, std::size_t clip);

struct VelocityTrainConfig {
    FeatureExtractorConfig extractor = FeatureExtractorConfig::defaults();
    EstimatorConfig estimator{};
    std::uint64_t seed = 7;
    AdamConfig adam{};
    std::size_t epochs = 30;
    std::size_t batch = 8;
    double clip_norm = 5.0;
    double scale_decay = 0.99;
    bool baseline_slstm = false;
    std::size_t early_stop_patience = 0;
};

struct VelocityEpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double scale_a = 1.0;
    double scale_l = 1.0;
    double val_rmse_linear = 0.0;
    double val_rmse_angular = 0.0;
    double val_re_linear = 0.0;
    std::vector<double> block_firing_rates;
    std::vector<double> cell_firing_rates;

    std::string to_ndjson() const;
};

using VelocityEpochCallback = std::function<void(const VelocityEpochLog&)>;

TrainOutcome train_velocity(NeuroVEModel& model, std::span<const EncodedVelocitySample> train_set,
                            std::span<const EncodedVelocitySample> val_set, const VelocityTrainConfig& cfg,
                            const VelocityEpochCallback& cb = {});

/// Eval-mode predictions [B,n,6] for a set of samples (BN frozen).
Tensor predict_velocity(NeuroVEModel& model, std::span<const EncodedVelocitySample> samples);

}  // namespace neurove
