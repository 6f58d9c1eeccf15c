#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace neurove {

enum class SurrogateKind { rectangular, arctan };

/// Smooth stand-in derivative used for the firing nonlinearity during
/// training. `width` is the support of the rectangular window, or the
/// steepness parameter of the arctan variant.
struct SurrogateSpec {
    SurrogateKind kind = SurrogateKind::rectangular;
    double width = 1.0;

    void validate() const;
};

/// Discrete-time LIF/ALIF parameters. alpha = 1 - dt/tau (decay),
/// beta = dt/tau (kept for reference; the synaptic operator absorbs it).
/// The resting potential is fixed at 0 by the iterative formulation.
struct NeuronParams {
    double alpha = 0.9;
    double beta = 0.1;
    double v_th = 1.0;
    double v_rest = 0.0;
    double diffusion_d = 0.5;

    void validate() const;
};

/// Per-population state. `s` holds the previous step's binary spikes and
/// doubles as the step output. `v_final_prev_layer` is the donor membrane
/// potential vector V_i^{t_f} read by the astrocyte diffusion term; all
/// three vectors share one length.
struct NeuronState {
    std::vector<double> v;
    std::vector<double> s;
    std::vector<double> v_final_prev_layer;

    static NeuronState zeros(std::size_t n);
    std::size_t size() const { return v.size(); }
    void validate() const;
};

/// Fick's-law diffusion J = d * (v_i - v_j).
double diffusion_term(double v_i, double v_j, double d);

/// Firing rule: 1 iff v >= v_th (equality fires).
double heaviside(double v, double v_th);

/// Value of the surrogate derivative at membrane potential v.
double surrogate_grad(double v, double v_th, const SurrogateSpec& spec);

/// Antiderivative of the surrogate (a smooth spike). Used by gradient
/// oracles; rectangular -> clamp((v-v_th)/w + 1/2, 0, 1).
double surrogate_smooth(double v, double v_th, const SurrogateSpec& spec);

/// One Euler step of the LIF population:
///   v' = (1 - s) * alpha * v + input,   s' = H(v' - v_th).
/// `input` is the synaptic operator's output (f already applied). The hard
/// reset is carried by the (1 - s) factor at the next step.
NeuronState lif_step(const NeuronState& state, std::span<const double> input, const NeuronParams& params);

/// One Euler step of the ALIF population:
///   v'_j = (1 - s_j) * alpha * v_j + input_j + D * v_final_prev_layer_j.
/// Donor potentials are read, never mutated.
NeuronState alif_step(const NeuronState& state, std::span<const double> input, const NeuronParams& params);

}  // namespace neurove
