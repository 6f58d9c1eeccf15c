#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "neurove/neuron.hpp"
#include "neurove/tensor.hpp"

namespace neurove::ad {

class Tape;

/// Handle into a Tape. Cheap to copy; only meaningful together with the
/// tape that produced it.
class Value {
public:
    Value() = default;
    std::int32_t id() const { return id_; }
    bool valid() const { return id_ >= 0; }

private:
    friend class Tape;
    explicit Value(std::int32_t id) : id_(id) {}
    std::int32_t id_ = -1;
};

struct VelocityLossParts {
    double total = 0.0;
    double angular = 0.0;  // unscaled mean of 0.5*||e_a||
    double linear = 0.0;   // unscaled mean of 0.5*||e_l||
};

/// Reverse-mode computation record over tensor-level primitives. Operations
/// append nodes in execution order, which is also a topological order, so a
/// single reverse sweep visits each node exactly once. A tape can be
/// consumed by backward() at most once.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Value leaf(Tensor v, bool requires_grad = false);
    Value constant(Tensor v) { return leaf(std::move(v), false); }

    const Tensor& val(Value v) const;
    /// Gradient of the backward root w.r.t. this node; empty if the node
    /// was not reached (gradient is exactly zero).
    const Tensor& grad(Value v) const;
    Tensor grad_or_zeros(Value v) const;

    // elementwise
    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    Value scale(Value a, double c);
    Value add_scaled(Value a, Value b, double c);  // a + c*b
    Value sigmoid(Value a);
    Value tanh_act(Value a);

    // linear maps
    Value matmul(Value a, Value b);                                  // [M,K]x[K,N]
    Value affine(Value x, Value w, std::optional<Value> bias = {});  // [B,I]*[I,O]+b

    // spiking primitives
    /// Heaviside forward (or its surrogate antiderivative when smooth-spike
    /// mode is on); surrogate derivative on the backward path.
    Value spike(Value v, double v_th, const SurrogateSpec& spec);
    /// out = (1 - s_prev) * alpha * v_prev + current. The reset factor is a
    /// constant during backprop (straight-through): no gradient reaches
    /// s_prev through this node, while the v_prev path keeps flowing.
    Value membrane_update(Value v_prev, Value current, Value s_prev, double alpha);

    // structured ops
    Value conv2d(Value x, Value kernel, std::optional<Value> bias, std::size_t stride, std::size_t pad);
    Value batchnorm(Value x, Value gamma, Value beta, Tensor& running_mean, Tensor& running_var,
                    bool training, double eps, double momentum);
    Value reshape(Value a, Shape shape);
    Value slice0(Value a, std::size_t index);         // drop leading axis at index
    Value stack0(const std::vector<Value>& parts);    // new leading axis

    // reductions / losses
    Value sum_all(Value a);
    Value mean_all(Value a);
    Value mse(Value pred, Value target);
    /// Two-part velocity loss: rows are 6-vectors (3 linear, 3 angular);
    /// per row L_i = 0.5*sqrt(e_i' e_i); total = scale_a*mean(L_a) +
    /// scale_l*mean(L_l). Throws on non-finite inputs.
    Value velocity_loss(Value pred, const Tensor& gt, double scale_a, double scale_l,
                        VelocityLossParts* parts = nullptr);

    void backward(Value root);

    bool grad_enabled() const { return grad_enabled_; }
    bool consumed() const { return consumed_; }
    std::size_t node_count() const { return nodes_.size(); }

    /// When on, spike() computes the surrogate antiderivative instead of
    /// the hard Heaviside so that the recorded gradient is the exact
    /// derivative of the recorded forward. Gradient-oracle use only.
    void set_smooth_spikes(bool on) { smooth_spikes_ = on; }
    bool smooth_spikes() const { return smooth_spikes_; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(Tape&)> backprop;
        bool requires_grad = false;
    };

    Node& node(Value v) { return nodes_.at(static_cast<std::size_t>(v.id())); }
    const Node& node(Value v) const { return nodes_.at(static_cast<std::size_t>(v.id())); }
    Value push(Tensor value, bool requires_grad, std::function<void(Tape&)> backprop);
    /// Stores the closure only when the node participates in backprop, so
    /// no-grad tapes never pin saved activations.
    void set_backprop(Value v, std::function<void(Tape&)> fn) {
        Node& n = node(v);
        if (n.requires_grad) n.backprop = std::move(fn);
    }
    void ensure_grad(std::int32_t id);
    void accumulate(std::int32_t id, const double* g, std::size_t n);
    bool needs(Value v) const { return grad_enabled_ && node(v).requires_grad; }

    std::vector<Node> nodes_;
    bool grad_enabled_ = true;
    bool smooth_spikes_ = false;
    bool consumed_ = false;
};

}  // namespace neurove::ad
