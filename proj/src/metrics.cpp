#include "neurove/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <stdexcept>

namespace neurove {

namespace {

double vec_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void check_lengths(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string(what) + ": length mismatch");
    if (a == 0) throw std::invalid_argument(std::string(what) + ": empty input");
}

}  // namespace

double rmse(std::span<const std::vector<double>> pred, std::span<const std::vector<double>> gt) {
    check_lengths(pred.size(), gt.size(), "rmse");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i].size() != gt[i].size()) throw std::invalid_argument("rmse: sample dimension mismatch");
        for (std::size_t j = 0; j < pred[i].size(); ++j) {
            const double d = gt[i][j] - pred[i][j];
            acc += d * d;
        }
    }
    return std::sqrt(acc / static_cast<double>(pred.size()));
}

double rmse_scalar(std::span<const double> pred, std::span<const double> gt) {
    check_lengths(pred.size(), gt.size(), "rmse");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = gt[i] - pred[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(pred.size()));
}

double relative_error(std::span<const std::vector<double>> pred, std::span<const std::vector<double>> gt,
                      double eps) {
    check_lengths(pred.size(), gt.size(), "relative_error");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i].size() != gt[i].size())
            throw std::invalid_argument("relative_error: sample dimension mismatch");
        std::vector<double> e(pred[i].size());
        for (std::size_t j = 0; j < e.size(); ++j) e[j] = gt[i][j] - pred[i][j];
        acc += vec_norm(e) / std::max(vec_norm(gt[i]), eps);
    }
    return acc / static_cast<double>(pred.size());
}

double relative_error_scalar(std::span<const double> pred, std::span<const double> gt, double eps) {
    check_lengths(pred.size(), gt.size(), "relative_error");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        acc += std::abs(gt[i] - pred[i]) / std::max(std::abs(gt[i]), eps);
    return acc / static_cast<double>(pred.size());
}

std::string MetricReport::to_json() const {
    nlohmann::json j{{"rmse", {{"linear", rmse_linear}, {"angular", rmse_angular}}},
                     {"re", {{"linear", re_linear}, {"angular", re_angular}}},
                     {"rmse_dagger", {{"linear", rmse_dagger_linear}, {"angular", rmse_dagger_angular}}},
                     {"rmse_star_angular", rmse_star_angular},
                     {"n_samples", n_samples}};
    return j.dump(2);
}

MetricReport make_velocity_report(std::span<const std::vector<double>> pred_linear,
                                  std::span<const std::vector<double>> gt_linear,
                                  std::span<const std::vector<double>> pred_angular,
                                  std::span<const std::vector<double>> gt_angular, double eps) {
    MetricReport r;
    r.rmse_linear = rmse(pred_linear, gt_linear);
    r.rmse_angular = rmse(pred_angular, gt_angular);
    r.re_linear = relative_error(pred_linear, gt_linear, eps);
    r.re_angular = relative_error(pred_angular, gt_angular, eps);
    r.rmse_dagger_linear = 1000.0 * r.rmse_linear;
    r.rmse_dagger_angular = 1000.0 * r.rmse_angular;
    r.rmse_star_angular = 100.0 * r.rmse_angular;
    r.n_samples = pred_linear.size();
    return r;
}

FiringProfile firing_profile(NeuronKind kind, const NeuronParams& params, std::span<const double> current) {
    params.validate();
    for (double x : current)
        if (!std::isfinite(x)) throw std::invalid_argument("firing_profile: non-finite current");

    FiringProfile prof;
    prof.kind = kind;
    prof.spikes.reserve(current.size());

    NeuronState state = NeuronState::zeros(1);
    std::ptrdiff_t last_spike = -1;
    for (std::size_t k = 0; k < current.size(); ++k) {
        const double in[1] = {current[k]};
        if (kind == NeuronKind::alif) {
            state.v_final_prev_layer[0] = state.v[0];  // own previous potential as donor
            state = alif_step(state, in, params);
        } else {
            state = lif_step(state, in, params);
        }
        const bool fired = state.s[0] != 0.0;
        prof.spikes.push_back(fired ? 1 : 0);
        if (fired) {
            ++prof.spike_count;
            const std::ptrdiff_t isi = static_cast<std::ptrdiff_t>(k) - last_spike;
            if (last_spike >= 0) {
                if (prof.isi_histogram.size() <= static_cast<std::size_t>(isi))
                    prof.isi_histogram.resize(static_cast<std::size_t>(isi) + 1, 0);
                ++prof.isi_histogram[static_cast<std::size_t>(isi)];
            }
            last_spike = static_cast<std::ptrdiff_t>(k);
        }
    }
    prof.mean_rate = current.empty() ? 0.0 : static_cast<double>(prof.spike_count) / static_cast<double>(current.size());
    return prof;
}

}  // namespace neurove
