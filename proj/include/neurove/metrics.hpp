#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "neurove/neuron.hpp"

namespace neurove {

/// RMSE(x) = sqrt(mean of squared norms of per-sample error vectors).
double rmse(std::span<const std::vector<double>> pred, std::span<const std::vector<double>> gt);
double rmse_scalar(std::span<const double> pred, std::span<const double> gt);

/// RE(x) = mean of ||gt - pred|| / max(||gt||, eps).
double relative_error(std::span<const std::vector<double>> pred, std::span<const std::vector<double>> gt,
                      double eps = 1e-6);
double relative_error_scalar(std::span<const double> pred, std::span<const double> gt, double eps = 1e-6);

/// Table conventions: RMSE-dagger = RMSE x 1e3 (sine tables), RMSE-star =
/// angular RMSE x 100 (velocity tables).
struct MetricReport {
    double rmse_linear = 0.0;
    double rmse_angular = 0.0;
    double re_linear = 0.0;
    double re_angular = 0.0;
    double rmse_dagger_linear = 0.0;
    double rmse_dagger_angular = 0.0;
    double rmse_star_angular = 0.0;
    std::size_t n_samples = 0;

    std::string to_json() const;
};

MetricReport make_velocity_report(std::span<const std::vector<double>> pred_linear,
                                  std::span<const std::vector<double>> gt_linear,
                                  std::span<const std::vector<double>> pred_angular,
                                  std::span<const std::vector<double>> gt_angular, double eps = 1e-6);

// --- firing-frequency analysis -------------------------------------------

enum class NeuronKind { lif, alif };

struct FiringProfile {
    NeuronKind kind = NeuronKind::lif;
    std::vector<std::uint8_t> spikes;  // per step, single neuron
    std::size_t spike_count = 0;
    double mean_rate = 0.0;                    // spikes per step, in [0,1]
    std::vector<std::size_t> isi_histogram;    // index = inter-spike interval
};

/// Simulates one neuron of the chosen kind on a shared input-current trace.
/// The standalone ALIF donor is the neuron's own previous-step potential.
FiringProfile firing_profile(NeuronKind kind, const NeuronParams& params, std::span<const double> current);

}  // namespace neurove
