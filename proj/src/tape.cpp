#include "neurove/tape.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace neurove::ad {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EMat>;
using CMatMap = Eigen::Map<const EMat>;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    const std::ptrdiff_t num = static_cast<std::ptrdiff_t>(in + 2 * pad) - static_cast<std::ptrdiff_t>(k);
    if (num < 0) return 0;
    return static_cast<std::size_t>(num) / stride + 1;
}

// Gathers conv patches of one image [C,H,W] into cols [C*k*k, Ho*Wo].
void im2col(const double* x, std::size_t c_in, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, double* cols) {
    const std::size_t patch = c_in * k * k;
    for (std::size_t p = 0; p < patch; ++p) {
        const std::size_t c = p / (k * k);
        const std::size_t ky = (p / k) % k;
        const std::size_t kx = p % k;
        double* row = cols + p * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
            for (std::size_t ox = 0; ox < wo; ++ox) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                double v = 0.0;
                if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) && ix >= 0 && ix < static_cast<std::ptrdiff_t>(w))
                    v = x[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
                row[oy * wo + ox] = v;
            }
        }
    }
}

// Scatter-adds cols [C*k*k, Ho*Wo] back into an image gradient [C,H,W].
void col2im_add(const double* cols, std::size_t c_in, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
                std::size_t pad, std::size_t ho, std::size_t wo, double* gx) {
    const std::size_t patch = c_in * k * k;
    for (std::size_t p = 0; p < patch; ++p) {
        const std::size_t c = p / (k * k);
        const std::size_t ky = (p / k) % k;
        const std::size_t kx = p % k;
        const double* row = cols + p * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                gx[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += row[oy * wo + ox];
            }
        }
    }
}

}  // namespace

Value Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> backprop) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = grad_enabled_ && requires_grad;
    if (n.requires_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Value(static_cast<std::int32_t>(nodes_.size() - 1));
}

Value Tape::leaf(Tensor v, bool requires_grad) { return push(std::move(v), requires_grad, {}); }

const Tensor& Tape::val(Value v) const { return node(v).value; }

const Tensor& Tape::grad(Value v) const { return node(v).grad; }

Tensor Tape::grad_or_zeros(Value v) const {
    const Node& n = node(v);
    if (!n.grad.empty()) return n.grad;
    return Tensor::zeros(n.value.shape());
}

void Tape::ensure_grad(std::int32_t id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
}

void Tape::accumulate(std::int32_t id, const double* g, std::size_t n) {
    ensure_grad(id);
    double* dst = nodes_[static_cast<std::size_t>(id)].grad.data();
    for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
}

void Tape::backward(Value root) {
    if (consumed_) throw std::runtime_error("Tape::backward: tape already replayed");
    if (!grad_enabled_) throw std::runtime_error("Tape::backward: gradients disabled on this tape");
    consumed_ = true;
    if (node(root).value.size() != 1) throw std::invalid_argument("Tape::backward: root must be a scalar");
    ensure_grad(root.id());
    node(root).grad[0] = 1.0;
    for (std::int32_t i = root.id(); i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.backprop || n.grad.empty()) continue;
        n.backprop(*this);
    }
}

// --- elementwise -----------------------------------------------------------

Value Tape::add(Value a, Value b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "add");
    Tensor t = ta;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += tb[i];
    Value out = push(std::move(t), needs(a) || needs(b), {});
    set_backprop(out, [out, a, b](Tape& tp) {
        const Tensor& g = tp.node(out).grad;
        if (tp.needs(a)) tp.accumulate(a.id(), g.data(), g.size());
        if (tp.needs(b)) tp.accumulate(b.id(), g.data(), g.size());
    });
    return out;
}

Value Tape::sub(Value a, Value b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "sub");
    Tensor t = ta;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] -= tb[i];
    Value out = push(std::move(t), needs(a) || needs(b), {});
    set_backprop(out, [out, a, b](Tape& tp) {
        const Tensor& g = tp.node(out).grad;
        if (tp.needs(a)) tp.accumulate(a.id(), g.data(), g.size());
        if (tp.needs(b)) {
            tp.ensure_grad(b.id());
            double* dst = tp.node(b).grad.data();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
        }
    });
    return out;
}

Value Tape::mul(Value a, Value b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "mul");
    Tensor t = ta;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] *= tb[i];
    Value out = push(std::move(t), needs(a) || needs(b), {});
    set_backprop(out, [out, a, b](Tape& tp) {
        const Tensor& g = tp.node(out).grad;
        const Tensor& ta = tp.val(a);
        const Tensor& tb = tp.val(b);
        if (tp.needs(a)) {
            tp.ensure_grad(a.id());
            double* dst = tp.node(a).grad.data();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * tb[i];
        }
        if (tp.needs(b)) {
            tp.ensure_grad(b.id());
            double* dst = tp.node(b).grad.data();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * ta[i];
        }
    });
    return out;
}

Value Tape::scale(Value a, double c) {
    Tensor t = val(a);
    for (double& x : t.vec()) x *= c;
    Value out = push(std::move(t), needs(a), {});
    set_backprop(out, [out, a, c](Tape& tp) {
        const Tensor& g = tp.node(out).grad;
        if (!tp.needs(a)) return;
        tp.ensure_grad(a.id());
        double* dst = tp.node(a).grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += c * g[i];
    });
    return out;
}

Value Tape::add_scaled(Value a, Value b, double c) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "add_scaled");
    Tensor t = ta;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += c * tb[i];
    Value out = push(std::move(t), needs(a) || needs(b), {});
    set_backprop(out, [out, a, b, c](Tape& tp) {
        const Tensor& g = tp.node(out).grad;
        if (tp.needs(a)) tp.accumulate(a.id(), g.data(), g.size());
        if (tp.needs(b)) {
            tp.ensure_grad(b.id());
            double* dst = tp.node(b).grad.data();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += c * g[i];
        }
    });
    return out;
}

Value Tape::sigmoid(Value a) {
    Tensor t = val(a);
    for (double& x : t.vec()) x = 1.0 / (1.0 + std::exp(-x));
    Value out = push(std::move(t), needs(a), {});
    set_backprop(out, [out, a](Tape& tp) {
        if (!tp.needs(a)) return;
        const Tensor& g = tp.node(out).grad;
        const Tensor& y = tp.node(out).value;
        tp.ensure_grad(a.id());
        double* dst = tp.node(a).grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * y[i] * (1.0 - y[i]);
    });
    return out;
}

Value Tape::tanh_act(Value a) {
    Tensor t = val(a);
    for (double& x : t.vec()) x = std::tanh(x);
    Value out = push(std::move(t), needs(a), {});
    set_backprop(out, [out, a](Tape& tp) {
        if (!tp.needs(a)) return;
        const Tensor& g = tp.node(out).grad;
        const Tensor& y = tp.node(out).value;
        tp.ensure_grad(a.id());
        double* dst = tp.node(a).grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * (1.0 - y[i] * y[i]);
    });
    return out;
}

// --- linear maps ------------------------------------------------------------

Value Tape::matmul(Value a, Value b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(ta.shape()) + " x " +
                                    shape_str(tb.shape()));
    const std::size_t m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
    Tensor t({m, n});
    MatMap(t.data(), m, n).noalias() =
        CMatMap(ta.data(), m, k) * CMatMap(tb.data(), k, n);
    Value out = push(std::move(t), needs(a) || needs(b), {});
    set_backprop(out, [out, a, b, m, k, n](Tape& tp) {
        const Tensor& g = tp.node(out).grad;
        CMatMap gm(g.data(), m, n);
        if (tp.needs(a)) {
            tp.ensure_grad(a.id());
            MatMap(tp.node(a).grad.data(), m, k).noalias() += gm * CMatMap(tp.val(b).data(), k, n).transpose();
        }
        if (tp.needs(b)) {
            tp.ensure_grad(b.id());
            MatMap(tp.node(b).grad.data(), k, n).noalias() += CMatMap(tp.val(a).data(), m, k).transpose() * gm;
        }
    });
    return out;
}

Value Tape::affine(Value x, Value w, std::optional<Value> bias) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    if (tx.rank() != 2 || tw.rank() != 2 || tx.dim(1) != tw.dim(0))
        throw std::invalid_argument("affine: incompatible shapes " + shape_str(tx.shape()) + " x " +
                                    shape_str(tw.shape()));
    const std::size_t rows = tx.dim(0), in = tx.dim(1), outd = tw.dim(1);
    if (bias && (val(*bias).rank() != 1 || val(*bias).dim(0) != outd))
        throw std::invalid_argument("affine: bias shape mismatch");
    Tensor t({rows, outd});
    MatMap y(t.data(), rows, outd);
    y.noalias() = CMatMap(tx.data(), rows, in) * CMatMap(tw.data(), in, outd);
    if (bias) {
        const Tensor& tb = val(*bias);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < outd; ++c) t[r * outd + c] += tb[c];
    }
    bool req = needs(x) || needs(w) || (bias && needs(*bias));
    Value out = push(std::move(t), req, {});
    set_backprop(out, [out, x, w, bias, rows, in, outd](Tape& tp) {
        const Tensor& g = tp.node(out).grad;
        CMatMap gm(g.data(), rows, outd);
        if (tp.needs(x)) {
            tp.ensure_grad(x.id());
            MatMap(tp.node(x).grad.data(), rows, in).noalias() +=
                gm * CMatMap(tp.val(w).data(), in, outd).transpose();
        }
        if (tp.needs(w)) {
            tp.ensure_grad(w.id());
            MatMap(tp.node(w).grad.data(), in, outd).noalias() +=
                CMatMap(tp.val(x).data(), rows, in).transpose() * gm;
        }
        if (bias && tp.needs(*bias)) {
            tp.ensure_grad(bias->id());
            double* dst = tp.node(*bias).grad.data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < outd; ++c) dst[c] += g[r * outd + c];
        }
    });
    return out;
}

// --- spiking primitives ------------------------------------------------------

Value Tape::spike(Value v, double v_th, const SurrogateSpec& spec) {
    spec.validate();
    const Tensor& tv = val(v);
    Tensor t(tv.shape());
    if (smooth_spikes_) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = surrogate_smooth(tv[i], v_th, spec);
    } else {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = heaviside(tv[i], v_th);
    }
    Value out = push(std::move(t), needs(v), {});
    set_backprop(out, [out, v, v_th, spec](Tape& tp) {
        if (!tp.needs(v)) return;
        const Tensor& g = tp.node(out).grad;
        const Tensor& tv = tp.val(v);
        tp.ensure_grad(v.id());
        double* dst = tp.node(v).grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * surrogate_grad(tv[i], v_th, spec);
    });
    return out;
}

Value Tape::membrane_update(Value v_prev, Value current, Value s_prev, double alpha) {
    const Tensor& tv = val(v_prev);
    const Tensor& tc = val(current);
    const Tensor& ts = val(s_prev);
    check_same_shape(tv, tc, "membrane_update");
    check_same_shape(tv, ts, "membrane_update");
    Tensor t(tv.shape());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = (1.0 - ts[i]) * alpha * tv[i] + tc[i];
    Value out = push(std::move(t), needs(v_prev) || needs(current), {});
    set_backprop(out, [out, v_prev, current, s_prev, alpha](Tape& tp) {
        const Tensor& g = tp.node(out).grad;
        if (tp.needs(v_prev)) {
            const Tensor& ts = tp.val(s_prev);
            tp.ensure_grad(v_prev.id());
            double* dst = tp.node(v_prev).grad.data();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * (1.0 - ts[i]) * alpha;
        }
        if (tp.needs(current)) tp.accumulate(current.id(), g.data(), g.size());
        // s_prev: reset is straight-through, no gradient.
    });
    return out;
}

// --- structured ops ----------------------------------------------------------

Value Tape::conv2d(Value x, Value kernel, std::optional<Value> bias, std::size_t stride, std::size_t pad) {
    const Tensor& tx = val(x);
    const Tensor& tk = val(kernel);
    if (tx.rank() != 4 || tk.rank() != 4)
        throw std::invalid_argument("conv2d: expected x [B,C,H,W] and kernel [O,C,k,k]");
    if (tk.dim(2) != tk.dim(3)) throw std::invalid_argument("conv2d: only square kernels supported");
    if (tx.dim(1) != tk.dim(1))
        throw std::invalid_argument("conv2d: channel mismatch " + shape_str(tx.shape()) + " vs " +
                                    shape_str(tk.shape()));
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
    const std::size_t b = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
    const std::size_t o = tk.dim(0), k = tk.dim(2);
    const std::size_t ho = conv_out_dim(h, k, stride, pad), wo = conv_out_dim(w, k, stride, pad);
    if (ho == 0 || wo == 0)
        throw std::invalid_argument("conv2d: spatially exhausted output (" + shape_str(tx.shape()) + ", k=" +
                                    std::to_string(k) + ", stride=" + std::to_string(stride) + ", pad=" +
                                    std::to_string(pad) + ")");
    if (bias && val(*bias).size() != o) throw std::invalid_argument("conv2d: bias size mismatch");

    const std::size_t patch = c * k * k;
    auto cols = std::make_shared<Tensor>(Shape{b, patch, ho * wo});
    Tensor t({b, o, ho, wo});
    CMatMap km(tk.data(), o, patch);
    for (std::size_t ib = 0; ib < b; ++ib) {
        double* colb = cols->data() + ib * patch * ho * wo;
        im2col(tx.data() + ib * c * h * w, c, h, w, k, stride, pad, ho, wo, colb);
        MatMap(t.data() + ib * o * ho * wo, o, ho * wo).noalias() = km * CMatMap(colb, patch, ho * wo);
    }
    if (bias) {
        const Tensor& tb = val(*bias);
        for (std::size_t ib = 0; ib < b; ++ib)
            for (std::size_t io = 0; io < o; ++io) {
                double* plane = t.data() + (ib * o + io) * ho * wo;
                for (std::size_t i = 0; i < ho * wo; ++i) plane[i] += tb[io];
            }
    }
    bool req = needs(x) || needs(kernel) || (bias && needs(*bias));
    Value out = push(std::move(t), req, {});
    set_backprop(out, [out, x, kernel, bias, cols, b, c, h, w, o, k, ho, wo, stride, pad, patch](Tape& tp) {
        const Tensor& g = tp.node(out).grad;
        if (tp.needs(kernel)) tp.ensure_grad(kernel.id());
        if (tp.needs(x)) tp.ensure_grad(x.id());
        for (std::size_t ib = 0; ib < b; ++ib) {
            CMatMap gm(g.data() + ib * o * ho * wo, o, ho * wo);
            const double* colb = cols->data() + ib * patch * ho * wo;
            if (tp.needs(kernel)) {
                MatMap(tp.node(kernel).grad.data(), o, patch).noalias() +=
                    gm * CMatMap(colb, patch, ho * wo).transpose();
            }
            if (tp.needs(x)) {
                EMat dcols = CMatMap(tp.val(kernel).data(), o, patch).transpose() * gm;
                col2im_add(dcols.data(), c, h, w, k, stride, pad, ho, wo,
                           tp.node(x).grad.data() + ib * c * h * w);
            }
        }
        if (bias && tp.needs(*bias)) {
            tp.ensure_grad(bias->id());
            double* dst = tp.node(*bias).grad.data();
            for (std::size_t ib = 0; ib < b; ++ib)
                for (std::size_t io = 0; io < o; ++io) {
                    const double* plane = g.data() + (ib * o + io) * ho * wo;
                    for (std::size_t i = 0; i < ho * wo; ++i) dst[io] += plane[i];
                }
        }
    });
    return out;
}

Value Tape::batchnorm(Value x, Value gamma, Value beta, Tensor& running_mean, Tensor& running_var, bool training,
                      double eps, double momentum) {
    const Tensor& tx = val(x);
    if (tx.rank() < 2) throw std::invalid_argument("batchnorm: expected rank >= 2 with channel axis 1");
    const std::size_t n0 = tx.dim(0), cdim = tx.dim(1);
    std::size_t inner = 1;
    for (std::size_t i = 2; i < tx.rank(); ++i) inner *= tx.dim(i);
    const std::size_t reduce_n = n0 * inner;
    if (val(gamma).size() != cdim || val(beta).size() != cdim || running_mean.size() != cdim ||
        running_var.size() != cdim)
        throw std::invalid_argument("batchnorm: per-channel parameter size mismatch");

    auto xhat = std::make_shared<Tensor>(tx.shape());
    auto mean = std::make_shared<Tensor>(Shape{cdim});
    auto invstd = std::make_shared<Tensor>(Shape{cdim});

    if (training) {
        for (std::size_t ch = 0; ch < cdim; ++ch) {
            double m = 0.0;
            for (std::size_t i0 = 0; i0 < n0; ++i0) {
                const double* p = tx.data() + (i0 * cdim + ch) * inner;
                for (std::size_t i = 0; i < inner; ++i) m += p[i];
            }
            m /= static_cast<double>(reduce_n);
            double var = 0.0;
            for (std::size_t i0 = 0; i0 < n0; ++i0) {
                const double* p = tx.data() + (i0 * cdim + ch) * inner;
                for (std::size_t i = 0; i < inner; ++i) var += (p[i] - m) * (p[i] - m);
            }
            var /= static_cast<double>(reduce_n);
            (*mean)[ch] = m;
            (*invstd)[ch] = 1.0 / std::sqrt(var + eps);
            running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * m;
            running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * var;
        }
    } else {
        for (std::size_t ch = 0; ch < cdim; ++ch) {
            (*mean)[ch] = running_mean[ch];
            (*invstd)[ch] = 1.0 / std::sqrt(running_var[ch] + eps);
        }
    }

    const Tensor& tg = val(gamma);
    const Tensor& tb = val(beta);
    Tensor t(tx.shape());
    for (std::size_t i0 = 0; i0 < n0; ++i0)
        for (std::size_t ch = 0; ch < cdim; ++ch) {
            const double* p = tx.data() + (i0 * cdim + ch) * inner;
            double* xh = xhat->data() + (i0 * cdim + ch) * inner;
            double* y = t.data() + (i0 * cdim + ch) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                xh[i] = (p[i] - (*mean)[ch]) * (*invstd)[ch];
                y[i] = tg[ch] * xh[i] + tb[ch];
            }
        }

    bool req = needs(x) || needs(gamma) || needs(beta);
    Value out = push(std::move(t), req, {});
    set_backprop(out, [out, x, gamma, beta, xhat, invstd, n0, cdim, inner, reduce_n, training](Tape& tp) {
        const Tensor& g = tp.node(out).grad;
        const Tensor& tg = tp.val(gamma);
        // per-channel sums of dy and dy*xhat
        std::vector<double> sum_dy(cdim, 0.0), sum_dyxh(cdim, 0.0);
        for (std::size_t i0 = 0; i0 < n0; ++i0)
            for (std::size_t ch = 0; ch < cdim; ++ch) {
                const double* gp = g.data() + (i0 * cdim + ch) * inner;
                const double* xh = xhat->data() + (i0 * cdim + ch) * inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    sum_dy[ch] += gp[i];
                    sum_dyxh[ch] += gp[i] * xh[i];
                }
            }
        if (tp.needs(gamma)) {
            tp.ensure_grad(gamma.id());
            double* dst = tp.node(gamma).grad.data();
            for (std::size_t ch = 0; ch < cdim; ++ch) dst[ch] += sum_dyxh[ch];
        }
        if (tp.needs(beta)) {
            tp.ensure_grad(beta.id());
            double* dst = tp.node(beta).grad.data();
            for (std::size_t ch = 0; ch < cdim; ++ch) dst[ch] += sum_dy[ch];
        }
        if (tp.needs(x)) {
            tp.ensure_grad(x.id());
            const double nn = static_cast<double>(reduce_n);
            for (std::size_t i0 = 0; i0 < n0; ++i0)
                for (std::size_t ch = 0; ch < cdim; ++ch) {
                    const double* gp = g.data() + (i0 * cdim + ch) * inner;
                    const double* xh = xhat->data() + (i0 * cdim + ch) * inner;
                    double* dst = tp.node(x).grad.data() + (i0 * cdim + ch) * inner;
                    const double scale = tg[ch] * (*invstd)[ch];
                    if (training) {
                        for (std::size_t i = 0; i < inner; ++i)
                            dst[i] += scale * (gp[i] - sum_dy[ch] / nn - xh[i] * sum_dyxh[ch] / nn);
                    } else {
                        for (std::size_t i = 0; i < inner; ++i) dst[i] += scale * gp[i];
                    }
                }
        }
    });
    return out;
}

Value Tape::reshape(Value a, Shape shape) {
    Tensor t = val(a).reshaped(std::move(shape));
    Value out = push(std::move(t), needs(a), {});
    set_backprop(out, [out, a](Tape& tp) {
        if (!tp.needs(a)) return;
        const Tensor& g = tp.node(out).grad;
        tp.accumulate(a.id(), g.data(), g.size());
    });
    return out;
}

Value Tape::slice0(Value a, std::size_t index) {
    const Tensor& ta = val(a);
    if (ta.rank() < 2) throw std::invalid_argument("slice0: expected rank >= 2");
    if (index >= ta.dim(0)) throw std::invalid_argument("slice0: index out of range");
    Shape s(ta.shape().begin() + 1, ta.shape().end());
    const std::size_t chunk = shape_numel(s);
    Tensor t(s);
    const double* src = ta.data() + index * chunk;
    for (std::size_t i = 0; i < chunk; ++i) t[i] = src[i];
    Value out = push(std::move(t), needs(a), {});
    set_backprop(out, [out, a, index, chunk](Tape& tp) {
        if (!tp.needs(a)) return;
        const Tensor& g = tp.node(out).grad;
        tp.ensure_grad(a.id());
        double* dst = tp.node(a).grad.data() + index * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[i];
    });
    return out;
}

Value Tape::stack0(const std::vector<Value>& parts) {
    if (parts.empty()) throw std::invalid_argument("stack0: empty part list");
    const Tensor& first = val(parts.front());
    for (Value v : parts) check_same_shape(val(v), first, "stack0");
    Shape s;
    s.push_back(parts.size());
    for (std::size_t d : first.shape()) s.push_back(d);
    const std::size_t chunk = first.size();
    Tensor t(s);
    bool req = false;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const Tensor& p = val(parts[i]);
        for (std::size_t j = 0; j < chunk; ++j) t[i * chunk + j] = p[j];
        req = req || needs(parts[i]);
    }
    Value out = push(std::move(t), req, {});
    set_backprop(out, [out, parts, chunk](Tape& tp) {
        const Tensor& g = tp.node(out).grad;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            if (!tp.needs(parts[i])) continue;
            tp.accumulate(parts[i].id(), g.data() + i * chunk, chunk);
        }
    });
    return out;
}

// --- reductions / losses -------------------------------------------------------

Value Tape::sum_all(Value a) {
    const Tensor& ta = val(a);
    double s = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i) s += ta[i];
    Value out = push(Tensor::scalar(s), needs(a), {});
    set_backprop(out, [out, a](Tape& tp) {
        if (!tp.needs(a)) return;
        const double g = tp.node(out).grad[0];
        tp.ensure_grad(a.id());
        for (double& x : tp.node(a).grad.vec()) x += g;
    });
    return out;
}

Value Tape::mean_all(Value a) { return scale(sum_all(a), 1.0 / static_cast<double>(val(a).size())); }

Value Tape::mse(Value pred, Value target) {
    const Tensor& tp_ = val(pred);
    const Tensor& tt = val(target);
    check_same_shape(tp_, tt, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < tp_.size(); ++i) {
        const double d = tp_[i] - tt[i];
        s += d * d;
    }
    const std::size_t n = tp_.size();
    Value out = push(Tensor::scalar(s / static_cast<double>(n)), needs(pred) || needs(target), {});
    set_backprop(out, [out, pred, target, n](Tape& tp) {
        const double g = tp.node(out).grad[0];
        const Tensor& a = tp.val(pred);
        const Tensor& b = tp.val(target);
        const double c = 2.0 * g / static_cast<double>(n);
        if (tp.needs(pred)) {
            tp.ensure_grad(pred.id());
            double* dst = tp.node(pred).grad.data();
            for (std::size_t i = 0; i < n; ++i) dst[i] += c * (a[i] - b[i]);
        }
        if (tp.needs(target)) {
            tp.ensure_grad(target.id());
            double* dst = tp.node(target).grad.data();
            for (std::size_t i = 0; i < n; ++i) dst[i] -= c * (a[i] - b[i]);
        }
    });
    return out;
}

Value Tape::velocity_loss(Value pred, const Tensor& gt, double scale_a, double scale_l, VelocityLossParts* parts) {
    const Tensor& tp_ = val(pred);
    check_same_shape(tp_, gt, "velocity_loss");
    if (tp_.size() % 6 != 0 || tp_.dim(tp_.rank() - 1) != 6)
        throw std::invalid_argument("velocity_loss: rows must be 6-vectors (3 linear + 3 angular)");
    const std::size_t rows = tp_.size() / 6;
    for (std::size_t i = 0; i < tp_.size(); ++i)
        if (!std::isfinite(tp_[i]) || !std::isfinite(gt[i]))
            throw std::invalid_argument("velocity_loss: non-finite input");

    double sum_l = 0.0, sum_a = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        double el = 0.0, ea = 0.0;
        for (std::size_t i = 0; i < 3; ++i) {
            const double dl = gt[r * 6 + i] - tp_[r * 6 + i];
            const double da = gt[r * 6 + 3 + i] - tp_[r * 6 + 3 + i];
            el += dl * dl;
            ea += da * da;
        }
        sum_l += 0.5 * std::sqrt(el);
        sum_a += 0.5 * std::sqrt(ea);
    }
    const double mean_l = sum_l / static_cast<double>(rows);
    const double mean_a = sum_a / static_cast<double>(rows);
    const double total = scale_a * mean_a + scale_l * mean_l;
    if (parts) *parts = VelocityLossParts{total, mean_a, mean_l};

    auto gt_copy = std::make_shared<Tensor>(gt);
    Value out = push(Tensor::scalar(total), needs(pred), {});
    set_backprop(out, [out, pred, gt_copy, scale_a, scale_l, rows](Tape& tp) {
        if (!tp.needs(pred)) return;
        const double g = tp.node(out).grad[0];
        const Tensor& p = tp.val(pred);
        tp.ensure_grad(pred.id());
        double* dst = tp.node(pred).grad.data();
        const double cl = g * scale_l / (2.0 * static_cast<double>(rows));
        const double ca = g * scale_a / (2.0 * static_cast<double>(rows));
        for (std::size_t r = 0; r < rows; ++r) {
            double el = 0.0, ea = 0.0;
            for (std::size_t i = 0; i < 3; ++i) {
                const double dl = (*gt_copy)[r * 6 + i] - p[r * 6 + i];
                const double da = (*gt_copy)[r * 6 + 3 + i] - p[r * 6 + 3 + i];
                el += dl * dl;
                ea += da * da;
            }
            el = std::sqrt(el);
            ea = std::sqrt(ea);
            // d(0.5*||e||)/dpred = -e / (2*||e||); subgradient 0 at e = 0
            for (std::size_t i = 0; i < 3; ++i) {
                if (el > 0.0) dst[r * 6 + i] += cl * (p[r * 6 + i] - (*gt_copy)[r * 6 + i]) / el;
                if (ea > 0.0) dst[r * 6 + 3 + i] += ca * (p[r * 6 + 3 + i] - (*gt_copy)[r * 6 + 3 + i]) / ea;
            }
        }
    });
    return out;
}

}  // namespace neurove::ad
