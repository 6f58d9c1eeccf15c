#include "neurove/recurrent.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>

#include "neurove/rng.hpp"

namespace neurove {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMatMap = Eigen::Map<const EMat>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

Tensor uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& x : t.vec()) x = dist(rng);
    return t;
}

// y = x' * W  (+ y preserved as accumulator)
void matvec_acc(const Tensor& w, std::span<const double> x, std::vector<double>& y) {
    CMatMap wm(w.data(), w.dim(0), w.dim(1));
    VecMap(y.data(), static_cast<Eigen::Index>(y.size())).noalias() +=
        wm.transpose() * CVecMap(x.data(), static_cast<Eigen::Index>(x.size()));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

ASLSTMParams ASLSTMParams::init(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed) {
    if (input_dim == 0 || hidden_dim == 0) throw std::invalid_argument("ASLSTMParams: zero dimension");
    ASLSTMParams p;
    p.input_dim = input_dim;
    p.hidden_dim = hidden_dim;
    auto rng = make_rng(seed);
    const Shape ws{input_dim, hidden_dim};
    const Shape us{hidden_dim, hidden_dim};
    p.w_i = uniform_init(ws, input_dim, rng);
    p.w_f = uniform_init(ws, input_dim, rng);
    p.w_g = uniform_init(ws, input_dim, rng);
    p.w_o = uniform_init(ws, input_dim, rng);
    p.u_i = uniform_init(us, hidden_dim, rng);
    p.u_f = uniform_init(us, hidden_dim, rng);
    p.u_g = uniform_init(us, hidden_dim, rng);
    p.u_o = uniform_init(us, hidden_dim, rng);
    p.w_v = uniform_init(ws, input_dim, rng);
    p.w_r = uniform_init(ws, input_dim, rng);
    p.b_i = Tensor::zeros({hidden_dim});
    p.b_f = Tensor::zeros({hidden_dim});
    p.b_g = Tensor::zeros({hidden_dim});
    p.b_o = Tensor::zeros({hidden_dim});
    return p;
}

void ASLSTMParams::validate() const {
    const Shape ws{input_dim, hidden_dim};
    const Shape us{hidden_dim, hidden_dim};
    for (const Tensor* t : {&w_i, &w_f, &w_g, &w_o, &w_v, &w_r})
        if (t->shape() != ws) throw std::invalid_argument("ASLSTMParams: W matrices must be [input,hidden]");
    for (const Tensor* t : {&u_i, &u_f, &u_g, &u_o})
        if (t->shape() != us) throw std::invalid_argument("ASLSTMParams: U matrices must be [hidden,hidden]");
    if (!(kappa > 0.0 && kappa < 1.0)) throw std::invalid_argument("ASLSTMParams: need 0 < kappa < 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("ASLSTMParams: need 0 < alpha < 1");
    if (!(v_th > 0.0)) throw std::invalid_argument("ASLSTMParams: need v_th > 0");
    if (!(diffusion_d >= 0.0)) throw std::invalid_argument("ASLSTMParams: need diffusion_d >= 0");
    surrogate.validate();
}

ASLSTMState ASLSTMState::zeros(std::size_t hidden_dim) {
    ASLSTMState st;
    st.c.assign(hidden_dim, 0.0);
    st.h.assign(hidden_dim, 0.0);
    st.v.assign(hidden_dim, 0.0);
    st.s.assign(hidden_dim, 0.0);
    st.v_prev.assign(hidden_dim, 0.0);
    return st;
}

void ASLSTMState::validate() const {
    const std::size_t n = v.size();
    if (c.size() != n || h.size() != n || s.size() != n || v_prev.size() != n)
        throw std::invalid_argument("ASLSTMState: all vectors must share hidden_dim");
    for (double x : s)
        if (x != 0.0 && x != 1.0) throw std::invalid_argument("ASLSTMState: spikes must be binary");
}

std::vector<double> alif_state_update(std::span<const double> h, std::span<const double> x_h,
                                      std::span<const double> v_prev, std::span<const double> s_prev, double alpha,
                                      double d) {
    const std::size_t n = h.size();
    if (x_h.size() != n || v_prev.size() != n || s_prev.size() != n)
        throw std::invalid_argument("alif_state_update: dimension mismatch");
    std::vector<double> v(n);
    for (std::size_t j = 0; j < n; ++j) v[j] = alpha * (1.0 - s_prev[j]) * h[j] + x_h[j] + d * v_prev[j];
    return v;
}

ASLSTMState aslstm_step(const ASLSTMState& state, std::span<const double> x, const ASLSTMParams& params) {
    params.validate();
    state.validate();
    if (x.size() != params.input_dim)
        throw std::invalid_argument("aslstm_step: input length " + std::to_string(x.size()) + " != input_dim " +
                                    std::to_string(params.input_dim));
    if (state.size() != params.hidden_dim) throw std::invalid_argument("aslstm_step: state/hidden_dim mismatch");

    const std::size_t n = params.hidden_dim;
    const std::vector<double>& r = params.recurrence == RecurrenceMode::membrane ? state.v : state.s;

    std::vector<double> gi(n, 0.0), gf(n, 0.0), gg(n, 0.0), go(n, 0.0);
    if (params.use_bias) {
        for (std::size_t j = 0; j < n; ++j) {
            gi[j] = params.b_i[j];
            gf[j] = params.b_f[j];
            gg[j] = params.b_g[j];
            go[j] = params.b_o[j];
        }
    }
    matvec_acc(params.w_i, x, gi);
    matvec_acc(params.w_f, x, gf);
    matvec_acc(params.w_g, x, gg);
    matvec_acc(params.w_o, x, go);
    matvec_acc(params.u_i, r, gi);
    matvec_acc(params.u_f, r, gf);
    matvec_acc(params.u_g, r, gg);
    matvec_acc(params.u_o, r, go);

    ASLSTMState next = ASLSTMState::zeros(n);
    for (std::size_t j = 0; j < n; ++j) {
        next.c[j] = sigmoid(gf[j]) * state.c[j] + sigmoid(gi[j]) * std::tanh(gg[j]);
        next.h[j] = sigmoid(go[j]) * std::tanh(next.c[j]);
    }

    std::vector<double> x_h(n, 0.0);
    matvec_acc(params.w_v, x, x_h);
    next.v = alif_state_update(next.h, x_h, state.v, state.s, params.alpha, params.diffusion_d);
    for (std::size_t j = 0; j < n; ++j) next.s[j] = heaviside(next.v[j], params.v_th);
    next.v_prev = state.v;
    return next;
}

ASLSTMState slstm_step(const ASLSTMState& state, std::span<const double> x, const ASLSTMParams& params) {
    ASLSTMParams baseline = params;
    baseline.diffusion_d = 0.0;
    baseline.recurrence = RecurrenceMode::spike;
    return aslstm_step(state, x, baseline);
}

OutputReadout output_neuron(std::span<const double> v_tf, std::span<const double> x_tf,
                            std::span<const double> v_prev, const ASLSTMParams& params) {
    params.validate();
    if (v_tf.size() != params.hidden_dim || v_prev.size() != params.hidden_dim)
        throw std::invalid_argument("output_neuron: membrane vectors must be hidden_dim");
    if (x_tf.size() != params.input_dim) throw std::invalid_argument("output_neuron: input must be input_dim");
    OutputReadout out;
    out.kappa = params.kappa;
    out.value.assign(params.hidden_dim, 0.0);
    matvec_acc(params.w_r, x_tf, out.value);
    for (std::size_t j = 0; j < params.hidden_dim; ++j)
        out.value[j] += params.kappa * v_tf[j] + params.diffusion_d * v_prev[j];
    return out;
}

}  // namespace neurove
