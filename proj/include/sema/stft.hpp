#pragma once

// Differentiable STFT magnitude. The forward pass windows each frame and runs
// an FFT; the backward pass routes dL/d|X| through the Hermitian-extended
// spectrum with an unscaled inverse FFT. Both paths are validated against a
// naive DFT and finite differences in the test suite.

#include "sema/fft.hpp"
#include "sema/tensor.hpp"

#include <memory>

namespace sema {

struct StftConfig {
    std::size_t n_fft = 1024;
    std::size_t hop = 256;
};

namespace detail {

inline std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = 0.5 * (1.0 - std::cos(2.0 * 3.14159265358979323846 * static_cast<double>(i) /
                                     static_cast<double>(n)));
    }
    return w;
}

} // namespace detail

// Frame count for a waveform of `samples` length: floor((samples - n_fft)/hop) + 1.
// No center padding is applied; the caller is expected to hand in the padded
// waveform it wants analyzed.
inline std::size_t stft_frames(std::size_t samples, const StftConfig& cfg) {
    if (cfg.n_fft > samples) {
        throw InputError("n_fft " + std::to_string(cfg.n_fft) + " exceeds sample count " +
                         std::to_string(samples));
    }
    return (samples - cfg.n_fft) / cfg.hop + 1;
}

// |STFT| of a 1-d waveform tensor with a periodic Hann window.
// Output shape: (frames, n_fft/2 + 1).
template <class Real>
Tensor<Real> stft_mag(const Tensor<Real>& x, const StftConfig& cfg) {
    if (x.rank() != 1) throw DimensionError("stft_mag expects a rank-1 waveform tensor");
    std::size_t T = x.numel();
    std::size_t F = stft_frames(T, cfg);
    std::size_t N = cfg.n_fft;
    std::size_t bins = N / 2 + 1;
    auto plan = std::make_shared<FftPlan>(N);
    auto window = std::make_shared<std::vector<double>>(detail::hann_window(N));

    std::vector<Real> val(F * bins);
    {
        std::vector<double> re(N), im(N);
        const auto& xv = x.data();
        for (std::size_t f = 0; f < F; ++f) {
            std::size_t at = f * cfg.hop;
            for (std::size_t i = 0; i < N; ++i) {
                re[i] = static_cast<double>(xv[at + i]) * (*window)[i];
                im[i] = 0.0;
            }
            plan->run(re.data(), im.data(), false);
            for (std::size_t b = 0; b < bins; ++b) {
                // tiny epsilon keeps the magnitude differentiable at silence
                val[f * bins + b] = static_cast<Real>(std::sqrt(re[b] * re[b] + im[b] * im[b] + 1e-24));
            }
        }
    }
    std::size_t hop = cfg.hop;
    return detail::make_op<Real>(
        {F, bins}, std::move(val), {x},
        [plan, window, F, N, bins, hop](const TensorNode<Real>& self, const std::vector<Real>& g,
                                        GradMap<Real>& gm) {
            const auto& xn = self.parents[0];
            if (!xn->requires_grad) return;
            auto& gx = detail::grad_buf(gm, xn);
            const auto& mag = self.value;
            const auto& xv = xn->value;
            std::vector<double> re(N), im(N), hr(N), hi(N);
            for (std::size_t f = 0; f < F; ++f) {
                std::size_t at = f * hop;
                for (std::size_t i = 0; i < N; ++i) {
                    re[i] = static_cast<double>(xv[at + i]) * (*window)[i];
                    im[i] = 0.0;
                }
                plan->run(re.data(), im.data(), false);
                // dL/dRe_b, dL/dIm_b through the magnitude, halved on the
                // interior bins so the Hermitian extension counts them once
                std::fill(hr.begin(), hr.end(), 0.0);
                std::fill(hi.begin(), hi.end(), 0.0);
                for (std::size_t b = 0; b < bins; ++b) {
                    double m = static_cast<double>(mag[f * bins + b]);
                    double gb = static_cast<double>(g[f * bins + b]) / m;
                    double dre = gb * re[b];
                    double dim = gb * im[b];
                    double scale = (b == 0 || b == N / 2) ? 1.0 : 0.5;
                    hr[b] = dre * scale;
                    hi[b] = dim * scale;
                    if (b != 0 && b != N / 2) {
                        hr[N - b] = hr[b];
                        hi[N - b] = -hi[b];
                    }
                }
                plan->run(hr.data(), hi.data(), true); // unscaled e^{+i...}
                for (std::size_t i = 0; i < N; ++i) {
                    gx[at + i] += static_cast<Real>(hr[i] * (*window)[i]);
                }
            }
        });
}

} // namespace sema
