#include "neurove/neuron.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace neurove {

void SurrogateSpec::validate() const {
    if (!(width > 0.0)) throw std::invalid_argument("SurrogateSpec: width must be > 0");
}

void NeuronParams::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("NeuronParams: need 0 < alpha < 1");
    if (!(beta > 0.0)) throw std::invalid_argument("NeuronParams: need beta > 0");
    if (!(v_th > 0.0)) throw std::invalid_argument("NeuronParams: need v_th > 0");
    if (v_rest != 0.0) throw std::invalid_argument("NeuronParams: v_rest is fixed at 0");
    if (!(diffusion_d >= 0.0)) throw std::invalid_argument("NeuronParams: need diffusion_d >= 0");
}

NeuronState NeuronState::zeros(std::size_t n) {
    NeuronState st;
    st.v.assign(n, 0.0);
    st.s.assign(n, 0.0);
    st.v_final_prev_layer.assign(n, 0.0);
    return st;
}

void NeuronState::validate() const {
    if (s.size() != v.size() || v_final_prev_layer.size() != v.size())
        throw std::invalid_argument("NeuronState: v, s, v_final_prev_layer must share one length");
    for (double x : s)
        if (x != 0.0 && x != 1.0) throw std::invalid_argument("NeuronState: spikes must be binary");
}

double diffusion_term(double v_i, double v_j, double d) { return d * (v_i - v_j); }

double heaviside(double v, double v_th) { return v >= v_th ? 1.0 : 0.0; }

double surrogate_grad(double v, double v_th, const SurrogateSpec& spec) {
    const double u = v - v_th;
    switch (spec.kind) {
        case SurrogateKind::rectangular:
            return std::abs(u) <= spec.width * 0.5 ? 1.0 / spec.width : 0.0;
        case SurrogateKind::arctan: {
            const double a = std::numbers::pi * spec.width * u * 0.5;
            return spec.width / (2.0 * (1.0 + a * a));
        }
    }
    return 0.0;
}

double surrogate_smooth(double v, double v_th, const SurrogateSpec& spec) {
    const double u = v - v_th;
    switch (spec.kind) {
        case SurrogateKind::rectangular: {
            const double y = u / spec.width + 0.5;
            return y < 0.0 ? 0.0 : (y > 1.0 ? 1.0 : y);
        }
        case SurrogateKind::arctan:
            return std::atan(std::numbers::pi * spec.width * u * 0.5) / std::numbers::pi + 0.5;
    }
    return 0.0;
}

namespace {

void check_lengths(const NeuronState& state, std::span<const double> input) {
    state.validate();
    if (input.size() != state.v.size())
        throw std::invalid_argument("neuron step: input length " + std::to_string(input.size()) +
                                    " != state length " + std::to_string(state.v.size()));
}

}  // namespace

NeuronState lif_step(const NeuronState& state, std::span<const double> input, const NeuronParams& params) {
    params.validate();
    check_lengths(state, input);
    NeuronState next = state;
    for (std::size_t j = 0; j < state.v.size(); ++j) {
        const double v = (1.0 - state.s[j]) * params.alpha * state.v[j] + input[j];
        next.v[j] = v;
        next.s[j] = heaviside(v, params.v_th);
    }
    return next;
}

NeuronState alif_step(const NeuronState& state, std::span<const double> input, const NeuronParams& params) {
    params.validate();
    check_lengths(state, input);
    NeuronState next = state;
    for (std::size_t j = 0; j < state.v.size(); ++j) {
        const double current = input[j] + params.diffusion_d * state.v_final_prev_layer[j];
        const double v = (1.0 - state.s[j]) * params.alpha * state.v[j] + current;
        next.v[j] = v;
        next.s[j] = heaviside(v, params.v_th);
    }
    return next;
}

}  // namespace neurove
