#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "neurove/encoding.hpp"
#include "neurove/recurrent.hpp"
#include "neurove/tape.hpp"
#include "neurove/tensor.hpp"

namespace neurove {

/// Named handle onto a model tensor; the registry order is the canonical
/// order for optimizers and checkpoints.
struct ParamRef {
    std::string name;
    Tensor* tensor;
};

// --- configs -----------------------------------------------------------------

struct ConvBlockConfig {
    std::size_t out_channels = 16;
    std::size_t kernel = 3;
    std::size_t stride = 2;
    std::size_t padding = 1;
};

struct FeatureExtractorConfig {
    std::vector<ConvBlockConfig> blocks;
    double bn_epsilon = 1e-5;
    double bn_momentum = 0.1;
    double lif_alpha = 0.9;
    double lif_v_th = 1.0;
    SurrogateSpec surrogate{};

    static FeatureExtractorConfig defaults();  // 4 blocks (16,32,64,128), k3 s2 p1
    void validate() const;
};

struct EstimatorConfig {
    std::size_t num_layers = 2;
    std::size_t hidden_dim = 64;
    double alpha = 0.9;
    double v_th = 1.0;
    double diffusion_d = 0.5;
    double kappa = 0.5;
    bool use_bias = false;
    RecurrenceMode recurrence = RecurrenceMode::membrane;
    SurrogateSpec surrogate{};

    void validate() const;
};

/// Prediction row: camera-frame linear velocity (m/s) and ZYX Euler-angle
/// rates (deg/s) for one chronological bin.
struct VelocityRecord {
    std::array<double, 3> linear{};
    std::array<double, 3> angular_deg{};
    std::size_t bin_index = 0;
};

struct ModelTelemetry {
    std::vector<double> block_firing_rates;
    std::vector<double> cell_firing_rates;
};

// --- NeuroVE model -------------------------------------------------------------

struct ConvBlock {
    ConvBlockConfig cfg;
    Tensor w;         // [O, C, k, k]
    Tensor b;         // [O]
    Tensor bn_gamma;  // [O]
    Tensor bn_beta;   // [O]
    Tensor bn_mean;   // running, buffer
    Tensor bn_var;    // running, buffer
};

/// Spiking feature extractor (conv + BN + LIF blocks) feeding the ASLSTM
/// velocity estimator with an affine head onto [B, n, 6].
struct NeuroVEModel {
    FeatureExtractorConfig extractor_cfg;
    EstimatorConfig estimator_cfg;
    WindowSpec window;

    std::vector<ConvBlock> blocks;
    std::vector<ASLSTMParams> cells;
    Tensor head_w;  // [hidden, n*6]
    Tensor head_b;  // [n*6]

    std::size_t feature_dim = 0;

    std::vector<ParamRef> parameters();
    std::vector<ParamRef> buffers();
    std::size_t param_count();
};

/// Deterministic init from seed; throws when a block spatially exhausts the
/// feature map.
NeuroVEModel build_model(const FeatureExtractorConfig& extractor_cfg, const EstimatorConfig& estimator_cfg,
                         const WindowSpec& window, std::uint64_t seed);

// --- taped building blocks --------------------------------------------------------

struct TapedCell {
    ad::Value w_i, w_f, w_g, w_o, u_i, u_f, u_g, u_o, w_v, w_r;
    std::optional<ad::Value> b_i, b_f, b_g, b_o;
    const ASLSTMParams* params = nullptr;
};

struct TapedCellState {
    ad::Value c, h, v, s;
    ad::Value v_prev;  // donor for the readout's J(t-1, t)
};

TapedCell lift_cell(ad::Tape& tape, ASLSTMParams& params, bool requires_grad);
TapedCellState taped_cell_init(ad::Tape& tape, std::size_t batch, std::size_t hidden_dim);
TapedCellState taped_cell_step(ad::Tape& tape, const TapedCell& cell, const TapedCellState& state, ad::Value x);
/// kappa*v_tf + w_r'*x_tf + d*v_prev (continuous readout).
ad::Value taped_readout(ad::Tape& tape, const TapedCell& cell, const TapedCellState& state, ad::Value x_tf);

/// Instrumentation hook for the temporal-priority schedule: called once per
/// (layer, time-step) completion, extractor blocks first, then cells.
using ScheduleHook = std::function<void(std::size_t layer, std::size_t t)>;

struct VelocityGraph {
    std::vector<std::pair<std::string, ad::Value>> params;  // registry order
    std::vector<ad::Value> features;                        // per t, [B, F]
    ad::Value readout;                                      // [B, hidden]
    ad::Value pred;                                         // [B, n, 6]
    ModelTelemetry telemetry;
};

/// Builds the full forward graph on the tape. `training` selects BN batch
/// statistics (and updates the running buffers).
VelocityGraph build_velocity_graph(ad::Tape& tape, NeuroVEModel& model, const Tensor& spikes, bool training,
                                   const ScheduleHook& hook = {});

// --- inference entry points ----------------------------------------------------------

/// [T,B,2n,H,W] spikes -> [T,B,F] binary features (frozen BN statistics).
Tensor feature_extract(NeuroVEModel& model, const SpikeTensor& spikes);
/// [T,B,F] features -> [B,n,6] velocities.
Tensor estimate_velocity(NeuroVEModel& model, const Tensor& features);
/// Composition with per-layer firing-rate telemetry.
std::vector<std::vector<VelocityRecord>> forward(NeuroVEModel& model, const SpikeTensor& spikes,
                                                 ModelTelemetry* telemetry = nullptr);

// --- sine regression / forecast model ---------------------------------------------------

struct SineModelConfig {
    std::size_t num_layers = 2;
    std::size_t hidden_dim = 64;
    double alpha = 0.9;
    double v_th = 1.0;
    double diffusion_d = 0.5;
    double kappa = 0.5;
    bool use_bias = false;
    RecurrenceMode recurrence = RecurrenceMode::membrane;
    SurrogateSpec surrogate{};

    void validate() const;
};

/// Stacked ASLSTM cells over a scalar series with a per-step continuous
/// readout; predicts the next series value.
struct SineForecastModel {
    SineModelConfig cfg;
    std::vector<ASLSTMParams> cells;
    Tensor head_w;  // [hidden, 1]
    Tensor head_b;  // [1]

    std::vector<ParamRef> parameters();
    std::size_t param_count();

    /// Eager single-sample step: advances all layers one step and returns
    /// the readout-head prediction.
    double step(std::vector<ASLSTMState>& states, double x) const;
    std::vector<ASLSTMState> initial_states() const;
};

SineForecastModel build_sine_model(const SineModelConfig& cfg, std::uint64_t seed);

// --- checkpoints -----------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Versioned binary container: magic "NVCK", u32 version, JSON config echo,
/// named float32 little-endian tensors, trailing CRC32. Loading verifies the
/// checksum and the config echo.
void save_checkpoint(const std::filesystem::path& path, const std::string& config_json,
                     const std::vector<ParamRef>& tensors);

struct Checkpoint {
    std::string config_json;
    std::map<std::string, Tensor> tensors;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

void save_neurove_model(NeuroVEModel& model, const std::filesystem::path& path);
NeuroVEModel load_neurove_model(const std::filesystem::path& path);
void save_sine_model(SineForecastModel& model, const std::filesystem::path& path);
SineForecastModel load_sine_model(const std::filesystem::path& path);

}  // namespace neurove
