#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mostdsa/kernels.hpp"
#include "mostdsa/param_store.hpp"

// Reverse-mode differentiation as a tape over the closed kernel set. Forward
// model code is written once against a generic context; Tape<T> records and
// differentiates, EvalContext<T> executes the kernels directly with no
// retention (inference path).

namespace mostdsa {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

template <typename T>
class Tape {
public:
    using Value = Var;
    using Scalar = T;

    explicit Tape(ParamStore<T>* store = nullptr) : store_(store) {}

    Var constant(Tensor<T> v) { return push(std::move(v), false); }

    Var input(Tensor<T> v, bool needs_grad = false) { return push(std::move(v), needs_grad); }

    Var param(const std::string& name) {
        if (!store_) throw UsageError("tape has no parameter store attached");
        auto it = param_cache_.find(name);
        if (it != param_cache_.end()) return Var{it->second};
        Var v = push(store_->at(name).value, true);
        param_leaves_.emplace_back(v.id, name);
        param_cache_[name] = v.id;
        return v;
    }

    const Tensor<T>& value(Var v) const { return nodes_[check(v)].value; }
    Shape shape(Var v) const { return nodes_[check(v)].value.shape(); }

    // Gradient of the last backward() w.r.t. an input/constant node.
    const Tensor<T>& grad(Var v) const {
        const Node& n = nodes_[check(v)];
        if (n.grad.empty()) throw UsageError("no gradient recorded for this node");
        return n.grad;
    }

    std::size_t node_count() const { return nodes_.size(); }

    // -- ops ------------------------------------------------------------

    Var conv2d(Var x, Var w, Var bias, const kernels::ConvSpec& s) {
        Tensor<T> out = kernels::conv2d(value(x), value(w), tensor_or_empty(bias), s);
        const bool need = needs(x) || needs(w) || needs(bias);
        Var o = push(std::move(out), need);
        if (need)
            nodes_[o.id].back = [x, w, bias, s, o](Tape& t) {
                kernels::conv2d_backward(t.value(x), t.value(w), s, t.node_grad(o),
                                         t.grad_slot(x), t.grad_slot(w), t.grad_slot(bias));
            };
        return o;
    }

    Var prelu(Var x, Var slope) {
        Var o = push(kernels::prelu(value(x), value(slope)), needs(x) || needs(slope));
        if (needs(o))
            nodes_[o.id].back = [x, slope, o](Tape& t) {
                kernels::prelu_backward(t.value(x), t.value(slope), t.node_grad(o),
                                        t.grad_slot(x), t.grad_slot(slope));
            };
        return o;
    }

    Var softmax(Var x, int axis) {
        Var o = push(kernels::softmax(value(x), axis), needs(x));
        if (needs(o))
            nodes_[o.id].back = [x, axis, o](Tape& t) {
                kernels::softmax_backward(t.value(o), axis, t.node_grad(o), t.grad_slot(x));
            };
        return o;
    }

    Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
        Var o = push(kernels::matmul(value(a), value(b), ta, tb), needs(a) || needs(b));
        if (needs(o))
            nodes_[o.id].back = [a, b, ta, tb, o](Tape& t) {
                kernels::matmul_backward(t.value(a), t.value(b), ta, tb, t.node_grad(o),
                                         t.grad_slot(a), t.grad_slot(b));
            };
        return o;
    }

    Var add(Var a, Var b) {
        Var o = push(kernels::add(value(a), value(b)), needs(a) || needs(b));
        if (needs(o))
            nodes_[o.id].back = [a, b, o](Tape& t) {
                const Tensor<T>& g = t.node_grad(o);
                if (auto* da = t.grad_slot(a)) accumulate(da, g);
                if (auto* db = t.grad_slot(b)) accumulate(db, g);
            };
        return o;
    }

    Var mul(Var a, Var b) {
        Var o = push(kernels::mul(value(a), value(b)), needs(a) || needs(b));
        if (needs(o))
            nodes_[o.id].back = [a, b, o](Tape& t) {
                const Tensor<T>& g = t.node_grad(o);
                if (auto* da = t.grad_slot(a)) accumulate(da, kernels::mul(g, t.value(b)));
                if (auto* db = t.grad_slot(b)) accumulate(db, kernels::mul(g, t.value(a)));
            };
        return o;
    }

    Var affine(Var x, double scale, double shift) {
        Var o = push(kernels::affine(value(x), scale, shift), needs(x));
        if (needs(o))
            nodes_[o.id].back = [x, scale, o](Tape& t) {
                if (auto* dx = t.grad_slot(x))
                    accumulate(dx, kernels::affine(t.node_grad(o), scale, 0.0));
            };
        return o;
    }

    Var abs_val(Var x) {
        Var o = push(kernels::abs_val(value(x)), needs(x));
        if (needs(o))
            nodes_[o.id].back = [x, o](Tape& t) {
                if (auto* dx = t.grad_slot(x)) {
                    const Tensor<T>& xin = t.value(x);
                    const Tensor<T>& g = t.node_grad(o);
                    T* d = dx->data();
                    for (std::int64_t i = 0; i < g.numel(); ++i) {
                        const T xv = xin.data()[i];
                        d[i] += xv > T(0) ? g.data()[i] : (xv < T(0) ? -g.data()[i] : T(0));
                    }
                }
            };
        return o;
    }

    Var sigmoid(Var x) {
        Var o = push(kernels::sigmoid(value(x)), needs(x));
        if (needs(o))
            nodes_[o.id].back = [x, o](Tape& t) {
                if (auto* dx = t.grad_slot(x)) {
                    const Tensor<T>& y = t.value(o);
                    const Tensor<T>& g = t.node_grad(o);
                    T* d = dx->data();
                    for (std::int64_t i = 0; i < g.numel(); ++i) {
                        const T yv = y.data()[i];
                        d[i] += g.data()[i] * yv * (T(1) - yv);
                    }
                }
            };
        return o;
    }

    Var clamp_range(Var x, double lo, double hi) {
        Var o = push(kernels::clamp_range(value(x), lo, hi), needs(x));
        if (needs(o))
            nodes_[o.id].back = [x, lo, hi, o](Tape& t) {
                if (auto* dx = t.grad_slot(x)) {
                    const Tensor<T>& xin = t.value(x);
                    const Tensor<T>& g = t.node_grad(o);
                    const T l = static_cast<T>(lo), h = static_cast<T>(hi);
                    T* d = dx->data();
                    for (std::int64_t i = 0; i < g.numel(); ++i)
                        if (xin.data()[i] >= l && xin.data()[i] <= h) d[i] += g.data()[i];
                }
            };
        return o;
    }

    Var clamp01(Var x) { return clamp_range(x, 0.0, 1.0); }

    Var concat(const std::vector<Var>& parts, int axis) {
        std::vector<Tensor<T>> vals;
        bool need = false;
        for (Var p : parts) {
            vals.push_back(value(p));
            need = need || needs(p);
        }
        Var o = push(kernels::concat(vals, axis), need);
        if (need)
            nodes_[o.id].back = [parts, axis, o](Tape& t) {
                const Tensor<T>& g = t.node_grad(o);
                int offset = 0;
                for (Var p : parts) {
                    const Shape& ps = t.shape(p);
                    int dims[4] = {ps.n, ps.c, ps.h, ps.w};
                    if (auto* dp = t.grad_slot(p))
                        accumulate(dp, kernels::slice(g, axis, offset, dims[axis]));
                    offset += dims[axis];
                }
            };
        return o;
    }

    Var slice(Var x, int axis, int start, int len) {
        Var o = push(kernels::slice(value(x), axis, start, len), needs(x));
        if (needs(o))
            nodes_[o.id].back = [x, axis, start, o](Tape& t) {
                if (auto* dx = t.grad_slot(x))
                    kernels::slice_backward(t.node_grad(o), axis, start, dx);
            };
        return o;
    }

    Var pad_hw(Var x, int nh, int nw) {
        Var o = push(kernels::pad_hw(value(x), nh, nw), needs(x));
        if (needs(o))
            nodes_[o.id].back = [x, o](Tape& t) {
                if (auto* dx = t.grad_slot(x)) {
                    const Shape s = t.shape(x);
                    Tensor<T> g2 = kernels::slice(t.node_grad(o), 2, 0, s.h);
                    accumulate(dx, kernels::slice(g2, 3, 0, s.w));
                }
            };
        return o;
    }

    Var pixel_shuffle(Var x, int f) {
        Var o = push(kernels::pixel_shuffle(value(x), f), needs(x));
        if (needs(o))
            nodes_[o.id].back = [x, f, o](Tape& t) {
                if (auto* dx = t.grad_slot(x))
                    accumulate(dx, kernels::pixel_unshuffle(t.node_grad(o), f));
            };
        return o;
    }

    Var resample(Var x, int oh, int ow) {
        Var o = push(kernels::resample(value(x), oh, ow), needs(x));
        if (needs(o))
            nodes_[o.id].back = [x, o](Tape& t) {
                if (auto* dx = t.grad_slot(x))
                    kernels::resample_backward(t.shape(x), t.node_grad(o), dx);
            };
        return o;
    }

    Var backwarp(Var src, Var flow) {
        Var o = push(kernels::backwarp(value(src), value(flow)), needs(src) || needs(flow));
        if (needs(o))
            nodes_[o.id].back = [src, flow, o](Tape& t) {
                kernels::backwarp_backward(t.value(src), t.value(flow), t.node_grad(o),
                                           t.grad_slot(src), t.grad_slot(flow));
            };
        return o;
    }

    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6) {
        Var o = push(kernels::layer_norm(value(x), value(gamma), value(beta), eps),
                     needs(x) || needs(gamma) || needs(beta));
        if (needs(o))
            nodes_[o.id].back = [x, gamma, beta, eps, o](Tape& t) {
                kernels::layer_norm_backward(t.value(x), t.value(gamma), t.node_grad(o), eps,
                                             t.grad_slot(x), t.grad_slot(gamma),
                                             t.grad_slot(beta));
            };
        return o;
    }

    Var tokens_to_grid(Var x, int h, int w) {
        Var o = push(kernels::tokens_to_grid(value(x), h, w), needs(x));
        if (needs(o))
            nodes_[o.id].back = [x, o](Tape& t) {
                if (auto* dx = t.grad_slot(x))
                    accumulate(dx, kernels::grid_to_tokens(t.node_grad(o)));
            };
        return o;
    }

    Var grid_to_tokens(Var x) {
        Var o = push(kernels::grid_to_tokens(value(x)), needs(x));
        if (needs(o))
            nodes_[o.id].back = [x, o](Tape& t) {
                if (auto* dx = t.grad_slot(x)) {
                    const Shape s = t.shape(x);
                    accumulate(dx, kernels::tokens_to_grid(t.node_grad(o), s.h, s.w));
                }
            };
        return o;
    }

    Var split_heads(Var x, int heads) {
        Var o = push(kernels::split_heads(value(x), heads), needs(x));
        if (needs(o))
            nodes_[o.id].back = [x, o](Tape& t) {
                if (auto* dx = t.grad_slot(x))
                    accumulate(dx, kernels::merge_heads(t.node_grad(o)));
            };
        return o;
    }

    Var merge_heads(Var x) {
        Var o = push(kernels::merge_heads(value(x)), needs(x));
        if (needs(o))
            nodes_[o.id].back = [x, o](Tape& t) {
                if (auto* dx = t.grad_slot(x)) {
                    const Shape s = t.shape(x);
                    accumulate(dx, kernels::split_heads(t.node_grad(o), s.c));
                }
            };
        return o;
    }

    Var position_lambda(Var q, Var v, Var e, int grid_h, int grid_w) {
        Var o = push(kernels::position_lambda_apply(value(q), value(v), value(e), grid_h, grid_w),
                     needs(q) || needs(v) || needs(e));
        if (needs(o))
            nodes_[o.id].back = [q, v, e, grid_h, grid_w, o](Tape& t) {
                kernels::position_lambda_backward(t.value(q), t.value(v), t.value(e), grid_h,
                                                  grid_w, t.node_grad(o), t.grad_slot(q),
                                                  t.grad_slot(v), t.grad_slot(e));
            };
        return o;
    }

    Var mean_all(Var x) {
        Var o = push(kernels::mean_all(value(x)), needs(x));
        if (needs(o))
            nodes_[o.id].back = [x, o](Tape& t) {
                if (auto* dx = t.grad_slot(x)) {
                    const T g = t.node_grad(o).data()[0] / static_cast<T>(dx->numel());
                    T* d = dx->data();
                    for (std::int64_t i = 0; i < dx->numel(); ++i) d[i] += g;
                }
            };
        return o;
    }

    Var sum_all(Var x) {
        Var o = push(kernels::sum_all(value(x)), needs(x));
        if (needs(o))
            nodes_[o.id].back = [x, o](Tape& t) {
                if (auto* dx = t.grad_slot(x)) {
                    const T g = t.node_grad(o).data()[0];
                    T* d = dx->data();
                    for (std::int64_t i = 0; i < dx->numel(); ++i) d[i] += g;
                }
            };
        return o;
    }

    // -- backward pass ----------------------------------------------------

    // Seeds the output with gradient 1, sweeps the tape in reverse creation
    // order, then flushes leaf gradients into the parameter store.
    void backward(Var out) {
        Node& on = nodes_[check(out)];
        if (on.value.numel() != 1)
            throw UsageError("backward requires a scalar output, got shape " +
                             on.value.shape().str());
        ensure_grad(out.id);
        on.grad.data()[0] = T(1);
        for (int i = out.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.back && !n.grad.empty()) n.back(*this);
        }
        for (const auto& [id, name] : param_leaves_)
            if (!nodes_[id].grad.empty()) store_->accumulate_grad(name, nodes_[id].grad);
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        std::function<void(Tape&)> back;
    };

    int check(Var v) const {
        if (!v.valid() || v.id >= int(nodes_.size())) throw UsageError("invalid tape variable");
        return v.id;
    }

    bool needs(Var v) const { return v.valid() && nodes_[v.id].requires_grad; }

    Tensor<T> tensor_or_empty(Var v) const { return v.valid() ? value(v) : Tensor<T>(); }

    Var push(Tensor<T> v, bool requires_grad) {
        Node n;
        n.value = std::move(v);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var{int(nodes_.size()) - 1};
    }

    void ensure_grad(int id) {
        if (nodes_[id].grad.empty()) nodes_[id].grad = Tensor<T>(nodes_[id].value.shape());
    }

    const Tensor<T>& node_grad(Var v) { return nodes_[check(v)].grad; }

    // Gradient accumulator of `v`, or nullptr when no gradient is required.
    Tensor<T>* grad_slot(Var v) {
        if (!v.valid() || !nodes_[v.id].requires_grad) return nullptr;
        ensure_grad(v.id);
        return &nodes_[v.id].grad;
    }

    static void accumulate(Tensor<T>* dst, const Tensor<T>& src) {
        T* d = dst->data();
        const T* s = src.data();
        for (std::int64_t i = 0; i < src.numel(); ++i) d[i] += s[i];
    }

    std::vector<Node> nodes_;
    ParamStore<T>* store_;
    std::vector<std::pair<int, std::string>> param_leaves_;
    std::map<std::string, int> param_cache_;
};

// Direct-execution twin of Tape: same surface, no recording. Values are
// plain tensors and temporaries die with their last reference.
template <typename T>
class EvalContext {
public:
    using Value = Tensor<T>;
    using Scalar = T;

    explicit EvalContext(const ParamStore<T>* store = nullptr) : store_(store) {}

    Value constant(Tensor<T> v) { return v; }
    Value input(Tensor<T> v, bool = false) { return v; }
    Value param(const std::string& name) {
        if (!store_) throw UsageError("context has no parameter store attached");
        return store_->at(name).value;
    }

    const Tensor<T>& value(const Value& v) const { return v; }
    Shape shape(const Value& v) const { return v.shape(); }

    Value conv2d(const Value& x, const Value& w, const Value& b, const kernels::ConvSpec& s) {
        return kernels::conv2d(x, w, b, s);
    }
    Value prelu(const Value& x, const Value& a) { return kernels::prelu(x, a); }
    Value softmax(const Value& x, int axis) { return kernels::softmax(x, axis); }
    Value matmul(const Value& a, const Value& b, bool ta = false, bool tb = false) {
        return kernels::matmul(a, b, ta, tb);
    }
    Value add(const Value& a, const Value& b) { return kernels::add(a, b); }
    Value mul(const Value& a, const Value& b) { return kernels::mul(a, b); }
    Value affine(const Value& x, double s, double c) { return kernels::affine(x, s, c); }
    Value abs_val(const Value& x) { return kernels::abs_val(x); }
    Value sigmoid(const Value& x) { return kernels::sigmoid(x); }
    Value clamp_range(const Value& x, double lo, double hi) {
        return kernels::clamp_range(x, lo, hi);
    }
    Value clamp01(const Value& x) { return kernels::clamp01(x); }
    Value concat(const std::vector<Value>& parts, int axis) { return kernels::concat(parts, axis); }
    Value slice(const Value& x, int axis, int start, int len) {
        return kernels::slice(x, axis, start, len);
    }
    Value pad_hw(const Value& x, int nh, int nw) { return kernels::pad_hw(x, nh, nw); }
    Value pixel_shuffle(const Value& x, int f) { return kernels::pixel_shuffle(x, f); }
    Value resample(const Value& x, int oh, int ow) { return kernels::resample(x, oh, ow); }
    Value backwarp(const Value& s, const Value& f) { return kernels::backwarp(s, f); }
    Value layer_norm(const Value& x, const Value& g, const Value& b, double eps = 1e-6) {
        return kernels::layer_norm(x, g, b, eps);
    }
    Value tokens_to_grid(const Value& x, int h, int w) { return kernels::tokens_to_grid(x, h, w); }
    Value grid_to_tokens(const Value& x) { return kernels::grid_to_tokens(x); }
    Value split_heads(const Value& x, int heads) { return kernels::split_heads(x, heads); }
    Value merge_heads(const Value& x) { return kernels::merge_heads(x); }
    Value position_lambda(const Value& q, const Value& v, const Value& e, int h, int w) {
        return kernels::position_lambda_apply(q, v, e, h, w);
    }
    Value mean_all(const Value& x) { return kernels::mean_all(x); }
    Value sum_all(const Value& x) { return kernels::sum_all(x); }

private:
    const ParamStore<T>* store_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    int elements_checked = 0;
    bool passed = false;
    std::string worst_param;
};

namespace detail {

inline double rel_err(double a, double b) {
    const double diff = std::abs(a - b);
    const double scale = std::max(std::abs(a), std::abs(b));
    if (scale < 1e-12) return 0.0;
    return diff / std::max(scale, 1e-6);
}

}  // namespace detail

// Checks d(output)/d(param) for one named parameter (or all when name is
// empty) against central finite differences with step h. The builder must be
// a generic callable usable with both Tape<T> and EvalContext<T>.
template <typename T, typename Build>
GradCheckReport grad_check(ParamStore<T>& store, Build&& build, const std::string& probe,
                           double tolerance, int max_elems_per_param = 16, double h = 1e-4) {
    store.zero_grad();
    Tape<T> tape(&store);
    Var out = build(tape);
    if (tape.value(out).numel() != 1)
        throw UsageError("grad_check requires a scalar-valued graph output");
    tape.backward(out);

    GradCheckReport report;
    report.tolerance = tolerance;

    EvalContext<T> ev(&store);
    auto eval_scalar = [&]() -> double {
        return static_cast<double>(ev.value(build(ev)).data()[0]);
    };

    for (auto& [name, p] : store) {
        if (!probe.empty() && name != probe) continue;
        const std::int64_t n = p.value.numel();
        const std::int64_t step = std::max<std::int64_t>(1, n / max_elems_per_param);
        for (std::int64_t i = 0; i < n; i += step) {
            T* slot = p.value.data() + i;
            const T saved = *slot;
            *slot = saved + static_cast<T>(h);
            const double fp = eval_scalar();
            *slot = saved - static_cast<T>(h);
            const double fm = eval_scalar();
            *slot = saved;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = static_cast<double>(p.grad.data()[i]);
            const double e = detail::rel_err(an, fd);
            if (e > report.max_rel_err) {
                report.max_rel_err = e;
                report.worst_param = name + "[" + std::to_string(i) + "]";
            }
            ++report.elements_checked;
        }
    }
    if (!probe.empty() && report.elements_checked == 0)
        throw UsageError("grad_check: no parameter named '" + probe + "'");
    report.passed = report.max_rel_err <= tolerance;
    return report;
}

}  // namespace mostdsa
