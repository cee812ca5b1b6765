#pragma once

// 1-D convolution kernels over (batch, channels, time) tensors, plus the
// channel-to-time shuffle the decoder uses to upsample.

#include "sema/tensor.hpp"

namespace sema {

// Cross-correlation with zero padding. x: (B, Cin, T), w: (Cout, Cin/groups, K),
// bias: (Cout). Output time extent = floor((T + 2*pad - K) / stride) + 1.
template <class Real>
Tensor<Real> conv1d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias,
                    std::size_t stride, std::size_t pad, std::size_t groups = 1) {
    if (x.rank() != 3 || w.rank() != 3) throw DimensionError("conv1d expects (B,C,T) input and (O,I,K) kernel");
    std::size_t B = x.dim(0), Cin = x.dim(1), T = x.dim(2);
    std::size_t Cout = w.dim(0), Cw = w.dim(1), K = w.dim(2);
    if (stride < 1) throw DimensionError("conv1d stride must be >= 1");
    if (groups < 1 || Cin % groups != 0 || Cout % groups != 0) {
        throw DimensionError("conv1d groups must divide both channel counts");
    }
    if (Cw != Cin / groups) {
        throw DimensionError("conv1d kernel expects " + std::to_string(Cin / groups) +
                             " input channels per group, got " + std::to_string(Cw));
    }
    if (bias.numel() != Cout) throw DimensionError("conv1d bias size mismatch");
    if (T + 2 * pad < K) throw DimensionError("conv1d kernel wider than padded input");
    std::size_t To = (T + 2 * pad - K) / stride + 1;
    std::size_t in_per_g = Cin / groups, out_per_g = Cout / groups;

    std::vector<Real> val(B * Cout * To);
    const Real* xv = x.data().data();
    const Real* wv = w.data().data();
    const Real* bv = bias.data().data();
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t oc = 0; oc < Cout; ++oc) {
            std::size_t g = oc / out_per_g;
            Real* out = val.data() + (b * Cout + oc) * To;
            for (std::size_t to = 0; to < To; ++to) {
                Real acc = bv[oc];
                std::ptrdiff_t t0 = static_cast<std::ptrdiff_t>(to * stride) - static_cast<std::ptrdiff_t>(pad);
                for (std::size_t ic = 0; ic < in_per_g; ++ic) {
                    const Real* xc = xv + (b * Cin + g * in_per_g + ic) * T;
                    const Real* wc = wv + (oc * in_per_g + ic) * K;
                    for (std::size_t kk = 0; kk < K; ++kk) {
                        std::ptrdiff_t ti = t0 + static_cast<std::ptrdiff_t>(kk);
                        if (ti >= 0 && ti < static_cast<std::ptrdiff_t>(T)) {
                            acc += xc[ti] * wc[kk];
                        }
                    }
                }
                out[to] = acc;
            }
        }
    }
    return detail::make_op<Real>(
        {B, Cout, To}, std::move(val), {x, w, bias},
        [B, Cin, T, Cout, K, To, stride, pad, in_per_g, out_per_g](
            const TensorNode<Real>& self, const std::vector<Real>& g, GradMap<Real>& gm) {
            const auto& xn = self.parents[0];
            const auto& wn = self.parents[1];
            const auto& bn = self.parents[2];
            const Real* xv = xn->value.data();
            const Real* wv = wn->value.data();
            std::vector<Real>* gx = xn->requires_grad ? &detail::grad_buf(gm, xn) : nullptr;
            std::vector<Real>* gw = wn->requires_grad ? &detail::grad_buf(gm, wn) : nullptr;
            std::vector<Real>* gb = bn->requires_grad ? &detail::grad_buf(gm, bn) : nullptr;
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t oc = 0; oc < Cout; ++oc) {
                    std::size_t grp = oc / out_per_g;
                    const Real* go = g.data() + (b * Cout + oc) * To;
                    for (std::size_t to = 0; to < To; ++to) {
                        Real gv = go[to];
                        if (gv == Real(0)) continue;
                        if (gb) (*gb)[oc] += gv;
                        std::ptrdiff_t t0 =
                            static_cast<std::ptrdiff_t>(to * stride) - static_cast<std::ptrdiff_t>(pad);
                        for (std::size_t ic = 0; ic < in_per_g; ++ic) {
                            std::size_t xci = (b * Cin + grp * in_per_g + ic) * T;
                            std::size_t wci = (oc * in_per_g + ic) * K;
                            for (std::size_t kk = 0; kk < K; ++kk) {
                                std::ptrdiff_t ti = t0 + static_cast<std::ptrdiff_t>(kk);
                                if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(T)) continue;
                                if (gx) (*gx)[xci + static_cast<std::size_t>(ti)] += gv * wv[wci + kk];
                                if (gw) (*gw)[wci + kk] += gv * xv[xci + static_cast<std::size_t>(ti)];
                            }
                        }
                    }
                }
            }
        });
}

// (B, C*s, T) -> (B, C, T*s): channel block j of each frame becomes the j-th
// subsample of the widened time axis. Inverse geometry of a stride-s,
// kernel-s convolution, used by the decoder's upsampling stages.
template <class Real>
Tensor<Real> depth_to_time(const Tensor<Real>& x, std::size_t s) {
    if (x.rank() != 3) throw DimensionError("depth_to_time expects (B,C,T)");
    std::size_t B = x.dim(0), Cs = x.dim(1), T = x.dim(2);
    if (s < 1 || Cs % s != 0) throw DimensionError("depth_to_time factor must divide channels");
    std::size_t C = Cs / s;
    std::vector<Real> val(B * C * T * s);
    const Real* xv = x.data().data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t j = 0; j < s; ++j)
                for (std::size_t t = 0; t < T; ++t)
                    val[(b * C + c) * T * s + t * s + j] = xv[(b * Cs + c * s + j) * T + t];
    return detail::make_op<Real>(
        {B, C, T * s}, std::move(val), {x},
        [B, C, T, s, Cs](const TensorNode<Real>& self, const std::vector<Real>& g, GradMap<Real>& gm) {
            const auto& xn = self.parents[0];
            if (!xn->requires_grad) return;
            auto& buf = detail::grad_buf(gm, xn);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t j = 0; j < s; ++j)
                        for (std::size_t t = 0; t < T; ++t)
                            buf[(b * Cs + c * s + j) * T + t] += g[(b * C + c) * T * s + t * s + j];
        });
}

} // namespace sema
