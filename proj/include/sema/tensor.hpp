#pragma once

// Dense n-d tensors with graph-based reverse-mode autodiff.
//
// Every operation returns a new tensor whose node records its parents and a
// backprop closure. backward_collect() walks the graph from a scalar loss and
// returns the per-node gradients of that single pass without mutating the
// graph, so read-only graphs over shared parameter leaves can be
// differentiated from several threads at once. backward() folds a pass into
// the persistent grad accumulators (additive until cleared).
//
// Broadcasting follows the trailing-dimension rule: shapes are right-aligned,
// and each aligned pair of extents must match or one of them must be 1.

#include "sema/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace sema {

template <class Real>
struct TensorNode;

template <class Real>
using NodePtr = std::shared_ptr<TensorNode<Real>>;

// Per-pass gradient buffers keyed by node.
template <class Real>
using GradMap = std::unordered_map<TensorNode<Real>*, std::vector<Real>>;

template <class Real>
struct TensorNode {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad; // persistent accumulator, empty until first backward()
    bool requires_grad = false;
    std::vector<NodePtr<Real>> parents;
    // self is the node being differentiated; gout is dLoss/dself.
    std::function<void(const TensorNode<Real>& self, const std::vector<Real>& gout, GradMap<Real>& gm)>
        backprop;

    std::size_t numel() const { return value.size(); }
};

namespace detail {

template <class Real>
inline std::vector<Real>& grad_buf(GradMap<Real>& gm, const NodePtr<Real>& node) {
    auto it = gm.find(node.get());
    if (it == gm.end()) {
        it = gm.emplace(node.get(), std::vector<Real>(node->numel(), Real(0))).first;
    }
    return it->second;
}

} // namespace detail

template <class Real>
class Tensor {
public:
    Tensor() : node_(nullptr) {}
    explicit Tensor(NodePtr<Real> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape) {
        return constant(std::move(shape), {}, true);
    }
    static Tensor full(Shape shape, Real v) {
        std::size_t n = shape_numel(shape);
        return constant(std::move(shape), std::vector<Real>(n, v));
    }
    static Tensor scalar(Real v) { return constant({1}, {v}); }

    static Tensor constant(Shape shape, std::vector<Real> data, bool zero_fill = false) {
        auto n = std::make_shared<TensorNode<Real>>();
        std::size_t count = shape_numel(shape);
        if (zero_fill) {
            data.assign(count, Real(0));
        } else if (data.size() != count) {
            throw DimensionError("data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        n->shape = std::move(shape);
        n->value = std::move(data);
        return Tensor(std::move(n));
    }

    // Leaf that participates in differentiation.
    static Tensor param(Shape shape, std::vector<Real> data) {
        Tensor t = constant(std::move(shape), std::move(data));
        t.node_->requires_grad = true;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->numel(); }
    std::size_t dim(std::size_t i) const { return node_->shape[i]; }
    std::size_t rank() const { return node_->shape.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<Real>& data() const { return node_->value; }
    std::vector<Real>& data() { return node_->value; }

    Real item() const {
        if (numel() != 1) throw UsageError("item() on tensor with " + std::to_string(numel()) + " elements");
        return node_->value[0];
    }

    // Persistent gradient accumulator; zeros if backward never reached this node.
    std::vector<Real> grad() const {
        if (node_->grad.empty()) return std::vector<Real>(numel(), Real(0));
        return node_->grad;
    }
    bool has_grad() const { return !node_->grad.empty(); }
    void ensure_grad() {
        if (node_->grad.empty()) node_->grad.assign(numel(), Real(0));
    }
    void zero_grad() { node_->grad.assign(numel(), Real(0)); }
    void clear_grad() { node_->grad.clear(); }

    NodePtr<Real> node() const { return node_; }

private:
    NodePtr<Real> node_;
};

// ---------------------------------------------------------------------------
// graph construction helpers

namespace detail {

template <class Real, class Fn>
Tensor<Real> make_op(Shape shape, std::vector<Real> value,
                     std::initializer_list<Tensor<Real>> parents, Fn&& backprop) {
    auto n = std::make_shared<TensorNode<Real>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool req = false;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) {
        req = req || p.requires_grad();
        n->parents.push_back(p.node());
    }
    n->requires_grad = req;
    if (req) n->backprop = std::forward<Fn>(backprop);
    return Tensor<Real>(std::move(n));
}

template <class Real, class Fn>
Tensor<Real> make_op(Shape shape, std::vector<Real> value, const std::vector<Tensor<Real>>& parents,
                     Fn&& backprop) {
    auto n = std::make_shared<TensorNode<Real>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool req = false;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) {
        req = req || p.requires_grad();
        n->parents.push_back(p.node());
    }
    n->requires_grad = req;
    if (req) n->backprop = std::forward<Fn>(backprop);
    return Tensor<Real>(std::move(n));
}

// Right-aligned broadcast of two shapes.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `shape` right-aligned into `out` rank, 0 where broadcast.
inline std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t offset = out.size() - shape.size();
    std::size_t s = 1;
    for (std::size_t i = shape.size(); i-- > 0;) {
        strides[offset + i] = (shape[i] == 1 && out[offset + i] != 1) ? 0 : s;
        s *= shape[i];
    }
    return strides;
}

// Visit every output element of a broadcast op together with the offsets of
// both operands. fn(lin, off_a, off_b).
template <class Fn>
void broadcast_walk(const Shape& oshape, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, Fn&& fn) {
    std::size_t n = shape_numel(oshape);
    std::vector<std::size_t> idx(oshape.size(), 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t lin = 0; lin < n; ++lin) {
        fn(lin, oa, ob);
        for (std::size_t d = oshape.size(); d-- > 0;) {
            idx[d]++;
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < oshape[d]) break;
            idx[d] = 0;
            oa -= sa[d] * oshape[d];
            ob -= sb[d] * oshape[d];
        }
    }
}

// Elementwise binary op with trailing-dim broadcasting.
// fwd(a,b) -> out; da(a,b,g), db(a,b,g) -> contributions to the parents.
template <class Real, class F, class Da, class Db>
Tensor<Real> binary_op(const Tensor<Real>& a, const Tensor<Real>& b, F fwd, Da da, Db db) {
    Shape oshape = broadcast_shape(a.shape(), b.shape());
    std::size_t n = shape_numel(oshape);
    std::vector<Real> val(n);
    const auto& av = a.data();
    const auto& bv = b.data();
    bool same = a.shape() == b.shape();
    if (same) {
        for (std::size_t i = 0; i < n; ++i) val[i] = fwd(av[i], bv[i]);
    } else {
        auto sa = broadcast_strides(a.shape(), oshape);
        auto sb = broadcast_strides(b.shape(), oshape);
        broadcast_walk(oshape, sa, sb,
                       [&](std::size_t lin, std::size_t oa, std::size_t ob) { val[lin] = fwd(av[oa], bv[ob]); });
    }
    return make_op<Real>(
        std::move(oshape), std::move(val), {a, b},
        [same, da, db](const TensorNode<Real>& self, const std::vector<Real>& g, GradMap<Real>& gm) {
            const auto& an = self.parents[0];
            const auto& bn = self.parents[1];
            const auto& av = an->value;
            const auto& bv = bn->value;
            std::vector<Real>* ga = an->requires_grad ? &grad_buf(gm, an) : nullptr;
            std::vector<Real>* gb = bn->requires_grad ? &grad_buf(gm, bn) : nullptr;
            if (same) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (ga) (*ga)[i] += da(av[i], bv[i], g[i]);
                    if (gb) (*gb)[i] += db(av[i], bv[i], g[i]);
                }
            } else {
                auto sa = broadcast_strides(an->shape, self.shape);
                auto sb = broadcast_strides(bn->shape, self.shape);
                broadcast_walk(self.shape, sa, sb, [&](std::size_t lin, std::size_t oa, std::size_t ob) {
                    if (ga) (*ga)[oa] += da(av[oa], bv[ob], g[lin]);
                    if (gb) (*gb)[ob] += db(av[oa], bv[ob], g[lin]);
                });
            }
        });
}

// Elementwise unary op. dfn(x, y, g) -> contribution to parent grad, where y
// is the op's own output (read back from self).
template <class Real, class F, class D>
Tensor<Real> unary_op(const Tensor<Real>& x, F fwd, D dfn) {
    std::size_t n = x.numel();
    std::vector<Real> val(n);
    const auto& xv = x.data();
    for (std::size_t i = 0; i < n; ++i) val[i] = fwd(xv[i]);
    return make_op<Real>(
        x.shape(), std::move(val), {x},
        [dfn](const TensorNode<Real>& self, const std::vector<Real>& g, GradMap<Real>& gm) {
            const auto& xn = self.parents[0];
            if (!xn->requires_grad) return;
            auto& buf = grad_buf(gm, xn);
            const auto& xv = xn->value;
            const auto& yv = self.value;
            for (std::size_t i = 0; i < g.size(); ++i) buf[i] += dfn(xv[i], yv[i], g[i]);
        });
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise kernels

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary_op(
        a, b, [](Real x, Real y) { return x + y; },
        [](Real, Real, Real g) { return g; }, [](Real, Real, Real g) { return g; });
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary_op(
        a, b, [](Real x, Real y) { return x - y; },
        [](Real, Real, Real g) { return g; }, [](Real, Real, Real g) { return -g; });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary_op(
        a, b, [](Real x, Real y) { return x * y; },
        [](Real, Real y, Real g) { return g * y; }, [](Real x, Real, Real g) { return g * x; });
}

template <class Real>
Tensor<Real> div(const Tensor<Real>& a, const Tensor<Real>& b) {
    for (Real v : b.data()) {
        if (v == Real(0)) throw DomainError("division by zero");
    }
    return detail::binary_op(
        a, b, [](Real x, Real y) { return x / y; },
        [](Real, Real y, Real g) { return g / y; },
        [](Real x, Real y, Real g) { return -g * x / (y * y); });
}

template <class Real> Tensor<Real> add(const Tensor<Real>& a, Real c) { return add(a, Tensor<Real>::scalar(c)); }
template <class Real> Tensor<Real> sub(const Tensor<Real>& a, Real c) { return sub(a, Tensor<Real>::scalar(c)); }
template <class Real> Tensor<Real> mul(const Tensor<Real>& a, Real c) { return mul(a, Tensor<Real>::scalar(c)); }
template <class Real> Tensor<Real> div(const Tensor<Real>& a, Real c) { return div(a, Tensor<Real>::scalar(c)); }

template <class Real>
Tensor<Real> neg(const Tensor<Real>& x) {
    return detail::unary_op(
        x, [](Real v) { return -v; }, [](Real, Real, Real g) { return -g; });
}

template <class Real>
Tensor<Real> exp(const Tensor<Real>& x) {
    return detail::unary_op(
        x, [](Real v) { return std::exp(v); }, [](Real, Real y, Real g) { return g * y; });
}

template <class Real>
Tensor<Real> log(const Tensor<Real>& x) {
    for (Real v : x.data()) {
        if (v <= Real(0)) throw DomainError("log of non-positive value");
    }
    return detail::unary_op(
        x, [](Real v) { return std::log(v); }, [](Real v, Real, Real g) { return g / v; });
}

template <class Real>
Tensor<Real> log1p(const Tensor<Real>& x) {
    for (Real v : x.data()) {
        if (v <= Real(-1)) throw DomainError("log1p of value <= -1");
    }
    return detail::unary_op(
        x, [](Real v) { return std::log1p(v); },
        [](Real v, Real, Real g) { return g / (Real(1) + v); });
}

template <class Real>
Tensor<Real> sqrt(const Tensor<Real>& x) {
    for (Real v : x.data()) {
        if (v < Real(0)) throw DomainError("sqrt of negative value");
    }
    return detail::unary_op(
        x, [](Real v) { return std::sqrt(v); },
        [](Real, Real y, Real g) { return y == Real(0) ? Real(0) : g / (Real(2) * y); });
}

template <class Real>
Tensor<Real> tanh(const Tensor<Real>& x) {
    return detail::unary_op(
        x, [](Real v) { return std::tanh(v); },
        [](Real, Real y, Real g) { return g * (Real(1) - y * y); });
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
    return detail::unary_op(
        x, [](Real v) { return Real(1) / (Real(1) + std::exp(-v)); },
        [](Real, Real y, Real g) { return g * y * (Real(1) - y); });
}

// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
template <class Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
    constexpr Real inv_sqrt2 = Real(0.70710678118654752440L);
    constexpr Real inv_sqrt2pi = Real(0.39894228040143267794L);
    return detail::unary_op(
        x,
        [=](Real v) { return Real(0.5) * v * (Real(1) + std::erf(v * inv_sqrt2)); },
        [=](Real v, Real, Real g) {
            Real phi = Real(0.5) * (Real(1) + std::erf(v * inv_sqrt2));
            Real pdf = inv_sqrt2pi * std::exp(Real(-0.5) * v * v);
            return g * (phi + v * pdf);
        });
}

template <class Real>
Tensor<Real> abs(const Tensor<Real>& x) {
    return detail::unary_op(
        x, [](Real v) { return std::abs(v); },
        [](Real v, Real, Real g) { return v > Real(0) ? g : (v < Real(0) ? -g : Real(0)); });
}

template <class Real>
Tensor<Real> clamp_min(const Tensor<Real>& x, Real lo) {
    return detail::unary_op(
        x, [=](Real v) { return v < lo ? lo : v; },
        [=](Real v, Real, Real g) { return v < lo ? Real(0) : g; });
}

// Subgradient passes through inside the interval, zero outside.
template <class Real>
Tensor<Real> clamp(const Tensor<Real>& x, Real lo, Real hi) {
    return detail::unary_op(
        x, [=](Real v) { return v < lo ? lo : (v > hi ? hi : v); },
        [=](Real v, Real, Real g) { return (v < lo || v > hi) ? Real(0) : g; });
}

// ---------------------------------------------------------------------------
// reductions

template <class Real>
Tensor<Real> sum(const Tensor<Real>& x) {
    Real s = 0;
    for (Real v : x.data()) s += v;
    return detail::make_op<Real>(
        {1}, {s}, {x},
        [](const TensorNode<Real>& self, const std::vector<Real>& g, GradMap<Real>& gm) {
            const auto& xn = self.parents[0];
            if (!xn->requires_grad) return;
            auto& buf = detail::grad_buf(gm, xn);
            for (auto& b : buf) b += g[0];
        });
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& x) {
    return mul(sum(x), Real(1) / Real(x.numel()));
}

namespace detail {
inline void axis_split(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& extent,
                       std::size_t& inner) {
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    outer = 1;
    inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
} // namespace detail

template <class Real>
Tensor<Real> sum(const Tensor<Real>& x, std::size_t axis, bool keepdim = false) {
    std::size_t outer, extent, inner;
    detail::axis_split(x.shape(), axis, outer, extent, inner);
    Shape oshape = x.shape();
    if (keepdim) {
        oshape[axis] = 1;
    } else {
        oshape.erase(oshape.begin() + static_cast<std::ptrdiff_t>(axis));
        if (oshape.empty()) oshape = {1};
    }
    std::vector<Real> val(outer * inner, Real(0));
    const auto& xv = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < extent; ++k)
            for (std::size_t i = 0; i < inner; ++i)
                val[o * inner + i] += xv[(o * extent + k) * inner + i];
    return detail::make_op<Real>(
        std::move(oshape), std::move(val), {x},
        [outer, extent, inner](const TensorNode<Real>& self, const std::vector<Real>& g, GradMap<Real>& gm) {
            (void)self;
            const auto& xn = self.parents[0];
            if (!xn->requires_grad) return;
            auto& buf = detail::grad_buf(gm, xn);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t k = 0; k < extent; ++k)
                    for (std::size_t i = 0; i < inner; ++i)
                        buf[(o * extent + k) * inner + i] += g[o * inner + i];
        });
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& x, std::size_t axis, bool keepdim = false) {
    std::size_t extent = x.shape()[axis];
    return mul(sum(x, axis, keepdim), Real(1) / Real(extent));
}

// Numerically stable softmax along `axis` (fused jacobian).
template <class Real>
Tensor<Real> softmax(const Tensor<Real>& x, std::size_t axis) {
    std::size_t outer, extent, inner;
    detail::axis_split(x.shape(), axis, outer, extent, inner);
    std::vector<Real> val(x.numel());
    const auto& xv = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            Real mx = xv[o * extent * inner + i];
            for (std::size_t k = 1; k < extent; ++k)
                mx = std::max(mx, xv[(o * extent + k) * inner + i]);
            Real z = 0;
            for (std::size_t k = 0; k < extent; ++k) {
                Real e = std::exp(xv[(o * extent + k) * inner + i] - mx);
                val[(o * extent + k) * inner + i] = e;
                z += e;
            }
            for (std::size_t k = 0; k < extent; ++k) val[(o * extent + k) * inner + i] /= z;
        }
    }
    return detail::make_op<Real>(
        x.shape(), std::move(val), {x},
        [outer, extent, inner](const TensorNode<Real>& self, const std::vector<Real>& g, GradMap<Real>& gm) {
            const auto& xn = self.parents[0];
            if (!xn->requires_grad) return;
            const auto& y = self.value;
            auto& buf = detail::grad_buf(gm, xn);
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < inner; ++i) {
                    Real dot = 0;
                    for (std::size_t k = 0; k < extent; ++k) {
                        std::size_t at = (o * extent + k) * inner + i;
                        dot += g[at] * y[at];
                    }
                    for (std::size_t k = 0; k < extent; ++k) {
                        std::size_t at = (o * extent + k) * inner + i;
                        buf[at] += y[at] * (g[at] - dot);
                    }
                }
            }
        });
}

// Normalize to zero mean / unit variance along `axis` (no affine; callers add
// their own scale and shift parameters where needed).
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, std::size_t axis, Real eps = Real(1e-5)) {
    std::size_t extent = x.shape()[axis];
    auto mu = mean(x, axis, true);
    auto centered = sub(x, mu);
    auto var = mul(sum(mul(centered, centered), axis, true), Real(1) / Real(extent));
    return div(centered, sqrt(add(var, eps)));
}

// ---------------------------------------------------------------------------
// linear algebra and layout

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("matmul expects rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw DimensionError("matmul inner extents differ: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    std::vector<Real> val(m * n, Real(0));
    const Real* av = a.data().data();
    const Real* bv = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        Real* ci = val.data() + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            Real s = av[i * k + kk];
            const Real* bk = bv + kk * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += s * bk[j];
        }
    }
    return detail::make_op<Real>(
        {m, n}, std::move(val), {a, b},
        [m, k, n](const TensorNode<Real>& self, const std::vector<Real>& g, GradMap<Real>& gm) {
            const auto& an = self.parents[0];
            const auto& bn = self.parents[1];
            if (an->requires_grad) {
                // dA = g @ B^T
                auto& ga = detail::grad_buf(gm, an);
                const Real* bv = bn->value.data();
                for (std::size_t i = 0; i < m; ++i) {
                    Real* gai = ga.data() + i * k;
                    const Real* gi = g.data() + i * n;
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const Real* bk = bv + kk * n;
                        Real s = 0;
                        for (std::size_t j = 0; j < n; ++j) s += gi[j] * bk[j];
                        gai[kk] += s;
                    }
                }
            }
            if (bn->requires_grad) {
                // dB = A^T @ g
                auto& gb = detail::grad_buf(gm, bn);
                const Real* av = an->value.data();
                for (std::size_t i = 0; i < m; ++i) {
                    const Real* gi = g.data() + i * n;
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        Real aik = av[i * k + kk];
                        Real* gbk = gb.data() + kk * n;
                        for (std::size_t j = 0; j < n; ++j) gbk[j] += aik * gi[j];
                    }
                }
            }
        });
}

template <class Real>
Tensor<Real> transpose(const Tensor<Real>& x) {
    if (x.rank() != 2) throw DimensionError("transpose expects rank-2 tensor");
    std::size_t r = x.dim(0), c = x.dim(1);
    std::vector<Real> val(r * c);
    const auto& xv = x.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) val[j * r + i] = xv[i * c + j];
    return detail::make_op<Real>(
        {c, r}, std::move(val), {x},
        [r, c](const TensorNode<Real>& self, const std::vector<Real>& g, GradMap<Real>& gm) {
            const auto& xn = self.parents[0];
            if (!xn->requires_grad) return;
            auto& buf = detail::grad_buf(gm, xn);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) buf[i * c + j] += g[j * r + i];
        });
}

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                             " changes element count");
    }
    return detail::make_op<Real>(
        std::move(shape), std::vector<Real>(x.data()), {x},
        [](const TensorNode<Real>& self, const std::vector<Real>& g, GradMap<Real>& gm) {
            const auto& xn = self.parents[0];
            if (!xn->requires_grad) return;
            auto& buf = detail::grad_buf(gm, xn);
            for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
        });
}

template <class Real>
Tensor<Real> slice_rows(const Tensor<Real>& x, std::size_t r0, std::size_t r1) {
    if (x.rank() != 2 || r0 >= r1 || r1 > x.dim(0)) throw DimensionError("bad row slice");
    std::size_t c = x.dim(1);
    std::vector<Real> val(x.data().begin() + static_cast<std::ptrdiff_t>(r0 * c),
                          x.data().begin() + static_cast<std::ptrdiff_t>(r1 * c));
    return detail::make_op<Real>(
        {r1 - r0, c}, std::move(val), {x},
        [r0, c](const TensorNode<Real>& self, const std::vector<Real>& g, GradMap<Real>& gm) {
            const auto& xn = self.parents[0];
            if (!xn->requires_grad) return;
            auto& buf = detail::grad_buf(gm, xn);
            for (std::size_t i = 0; i < g.size(); ++i) buf[r0 * c + i] += g[i];
        });
}

template <class Real>
Tensor<Real> slice_cols(const Tensor<Real>& x, std::size_t c0, std::size_t c1) {
    if (x.rank() != 2 || c0 >= c1 || c1 > x.dim(1)) throw DimensionError("bad column slice");
    std::size_t r = x.dim(0), c = x.dim(1), w = c1 - c0;
    std::vector<Real> val(r * w);
    const auto& xv = x.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) val[i * w + j] = xv[i * c + c0 + j];
    return detail::make_op<Real>(
        {r, w}, std::move(val), {x},
        [r, c, c0, w](const TensorNode<Real>& self, const std::vector<Real>& g, GradMap<Real>& gm) {
            const auto& xn = self.parents[0];
            if (!xn->requires_grad) return;
            auto& buf = detail::grad_buf(gm, xn);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < w; ++j) buf[i * c + c0 + j] += g[i * w + j];
        });
}

template <class Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
    if (parts.empty()) throw UsageError("concat_rows of empty list");
    std::size_t c = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != c) throw DimensionError("concat_rows column mismatch");
        rows += p.dim(0);
    }
    std::vector<Real> val;
    val.reserve(rows * c);
    for (const auto& p : parts) val.insert(val.end(), p.data().begin(), p.data().end());
    return detail::make_op<Real>(
        {rows, c}, std::move(val), parts,
        [](const TensorNode<Real>& self, const std::vector<Real>& g, GradMap<Real>& gm) {
            std::size_t at = 0;
            for (const auto& pn : self.parents) {
                std::size_t n = pn->numel();
                if (pn->requires_grad) {
                    auto& buf = detail::grad_buf(gm, pn);
                    for (std::size_t i = 0; i < n; ++i) buf[i] += g[at + i];
                }
                at += n;
            }
        });
}

template <class Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
    if (parts.empty()) throw UsageError("concat_cols of empty list");
    std::size_t r = parts[0].dim(0);
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != r) throw DimensionError("concat_cols row mismatch");
        cols += p.dim(1);
    }
    std::vector<Real> val(r * cols);
    std::size_t c_at = 0;
    for (const auto& p : parts) {
        std::size_t w = p.dim(1);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) val[i * cols + c_at + j] = p.data()[i * w + j];
        c_at += w;
    }
    return detail::make_op<Real>(
        {r, cols}, std::move(val), parts,
        [r, cols](const TensorNode<Real>& self, const std::vector<Real>& g, GradMap<Real>& gm) {
            std::size_t c_at = 0;
            for (const auto& pn : self.parents) {
                std::size_t w = pn->shape[1];
                if (pn->requires_grad) {
                    auto& buf = detail::grad_buf(gm, pn);
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < w; ++j) buf[i * w + j] += g[i * cols + c_at + j];
                }
                c_at += w;
            }
        });
}

// Row gather from an embedding table; backward scatters into the table.
template <class Real>
Tensor<Real> embedding(const Tensor<Real>& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw DimensionError("embedding table must be rank-2");
    std::size_t vocab = table.dim(0), w = table.dim(1);
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw InputError("token id " + std::to_string(id) + " outside vocab of " + std::to_string(vocab));
        }
    }
    std::vector<Real> val(ids.size() * w);
    const auto& tv = table.data();
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[i]) * w), w,
                    val.begin() + static_cast<std::ptrdiff_t>(i * w));
    return detail::make_op<Real>(
        {ids.size(), w}, std::move(val), {table},
        [ids, w](const TensorNode<Real>& self, const std::vector<Real>& g, GradMap<Real>& gm) {
            const auto& tn = self.parents[0];
            if (!tn->requires_grad) return;
            auto& buf = detail::grad_buf(gm, tn);
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t j = 0; j < w; ++j)
                    buf[static_cast<std::size_t>(ids[i]) * w + j] += g[i * w + j];
        });
}

// ---------------------------------------------------------------------------
// reverse-mode differentiation

namespace detail {

template <class Real>
std::vector<TensorNode<Real>*> topo_order(TensorNode<Real>* root) {
    std::vector<TensorNode<Real>*> order;
    std::unordered_set<TensorNode<Real>*> visited;
    // iterative post-order DFS; graphs get deep for long sequences
    std::vector<std::pair<TensorNode<Real>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        if (child < node->parents.size()) {
            TensorNode<Real>* p = node->parents[child].get();
            ++child;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order; // parents before children; reversed for backprop
}

} // namespace detail

// One differentiation pass from a scalar loss. Returns per-node gradients of
// this pass without touching any persistent accumulator, so concurrent passes
// over graphs sharing parameter leaves are safe.
template <class Real>
GradMap<Real> backward_collect(const Tensor<Real>& loss) {
    if (loss.numel() != 1) {
        throw UsageError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    GradMap<Real> gm;
    gm[loss.node().get()] = {Real(1)};
    if (!loss.requires_grad()) return gm;
    auto order = detail::topo_order(loss.node().get());
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<Real>* node = *it;
        auto found = gm.find(node);
        if (found == gm.end() || !node->backprop) continue;
        node->backprop(*node, found->second, gm);
    }
    return gm;
}

// Fold a differentiation pass into the persistent grad accumulators of every
// node that requires grad. Accumulates additively across calls until cleared.
template <class Real>
void backward(const Tensor<Real>& loss) {
    GradMap<Real> gm = backward_collect(loss);
    for (auto& [node, g] : gm) {
        if (!node->requires_grad) continue;
        if (node->grad.empty()) node->grad.assign(node->numel(), Real(0));
        for (std::size_t i = 0; i < g.size(); ++i) node->grad[i] += g[i];
    }
}

} // namespace sema
