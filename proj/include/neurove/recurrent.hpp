#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "neurove/neuron.hpp"
#include "neurove/tensor.hpp"

namespace neurove {

/// What drives the gate recurrence: the membrane potential v^{t-1}
/// (ASLSTM) or the binary spikes s^{t-1} (SLSTM baseline).
enum class RecurrenceMode : std::uint8_t { membrane, spike };

/// ASLSTM cell parameters. Gates use W (input->hidden) and U
/// (hidden->hidden); the recurrent drive is the membrane potential, not h.
/// w_v realizes the state-update operator f (input->hidden) and w_r the
/// output neuron's f; both are identity-shaped candidates but independent
/// maps. Gate biases exist but default off.
struct ASLSTMParams {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;

    Tensor w_i, w_f, w_g, w_o;  // [input_dim, hidden_dim]
    Tensor u_i, u_f, u_g, u_o;  // [hidden_dim, hidden_dim]
    Tensor w_v;                 // [input_dim, hidden_dim], Eq-9 state-update map
    Tensor w_r;                 // [input_dim, hidden_dim], output-neuron map

    bool use_bias = false;
    Tensor b_i, b_f, b_g, b_o;  // [hidden_dim], only when use_bias

    double alpha = 0.9;
    double v_th = 1.0;
    double diffusion_d = 0.5;
    double kappa = 0.5;
    RecurrenceMode recurrence = RecurrenceMode::membrane;
    SurrogateSpec surrogate{};

    /// Uniform +-1/sqrt(fan_in) init of every weight matrix.
    static ASLSTMParams init(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed);
    void validate() const;
};

/// One cell layer's state. v_prev holds v^{t-1} after a step (the donor of
/// the temporal diffusion J(t-1,t) for the readout at t_f).
struct ASLSTMState {
    std::vector<double> c, h, v, s, v_prev;

    static ASLSTMState zeros(std::size_t hidden_dim);
    std::size_t size() const { return v.size(); }
    void validate() const;
};

/// Continuous (never thresholded) readout of the output neuron.
struct OutputReadout {
    std::vector<double> value;
    double kappa = 0.0;
};

/// Eq-9 state update with x already mapped into hidden space (f = identity
/// on its argument): alpha*(1-s_prev)*h + x_h + d*v_prev.
std::vector<double> alif_state_update(std::span<const double> h, std::span<const double> x_h,
                                      std::span<const double> v_prev, std::span<const double> s_prev, double alpha,
                                      double d);

/// One ASLSTM step: gates from (x, v^{t-1} or s^{t-1}), LSTM memory update,
/// then the ALIF membrane update and Heaviside firing.
ASLSTMState aslstm_step(const ASLSTMState& state, std::span<const double> x, const ASLSTMParams& params);

/// SLSTM baseline: aslstm_step with diffusion off and spike-based gate
/// recurrence.
ASLSTMState slstm_step(const ASLSTMState& state, std::span<const double> x, const ASLSTMParams& params);

/// Output neuron at the final step: kappa*v_tf + w_r'*x_tf + d*v_prev.
/// The membrane value is the regression output; no threshold, no reset.
OutputReadout output_neuron(std::span<const double> v_tf, std::span<const double> x_tf,
                            std::span<const double> v_prev, const ASLSTMParams& params);

}  // namespace neurove
