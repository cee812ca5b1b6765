#pragma once

// Central finite differences: the independent oracle every backward
// implementation in this library is checked against.

#include "sema/tensor.hpp"

#include <functional>

namespace sema {

// Central-difference gradient estimate of a deterministic scalar function.
// f must treat its argument as a constant (no graph reuse between calls).
template <class Real>
Tensor<Real> finite_diff_grad(const std::function<Real(const Tensor<Real>&)>& f,
                              const Tensor<Real>& x, Real h) {
    if (h <= Real(0)) throw UsageError("finite_diff_grad requires h > 0");
    std::vector<Real> g(x.numel());
    std::vector<Real> probe = x.data();
    for (std::size_t i = 0; i < probe.size(); ++i) {
        Real keep = probe[i];
        probe[i] = keep + h;
        Real fp = f(Tensor<Real>::constant(x.shape(), probe));
        probe[i] = keep - h;
        Real fm = f(Tensor<Real>::constant(x.shape(), probe));
        probe[i] = keep;
        g[i] = (fp - fm) / (Real(2) * h);
    }
    return Tensor<Real>::constant(x.shape(), std::move(g));
}

// max_i |a_i - b_i| / max(|b_i|, floor); b is the reference (finite
// differences), the floor keeps near-zero reference entries from exploding
// the ratio beyond what the estimator's own noise supports.
template <class Real>
Real max_rel_error(const std::vector<Real>& a, const std::vector<Real>& b, Real floor = Real(1e-6)) {
    if (a.size() != b.size()) throw DimensionError("max_rel_error size mismatch");
    Real worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        Real denom = std::abs(b[i]);
        if (denom < floor) denom = floor;
        Real err = std::abs(a[i] - b[i]) / denom;
        if (err > worst) worst = err;
    }
    return worst;
}

} // namespace sema
