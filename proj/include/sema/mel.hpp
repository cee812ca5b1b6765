#pragma once

// Log-mel spectrogram features and the multi-resolution reconstruction loss.

#include "sema/stft.hpp"
#include "sema/wav.hpp"

#include <array>
#include <memory>

namespace sema {

struct MelConfig {
    std::size_t n_fft = 1024;
    std::size_t hop = 256;
    std::size_t n_mels = 64;
    double sample_rate = 8000.0;
};

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular filterbank, (n_mels x bins), peak weight 1, spanning 0..sr/2.
inline std::vector<double> mel_filterbank(const MelConfig& cfg) {
    std::size_t bins = cfg.n_fft / 2 + 1;
    std::vector<double> fb(cfg.n_mels * bins, 0.0);
    double mel_max = hz_to_mel(cfg.sample_rate / 2.0);
    std::vector<double> centers(cfg.n_mels + 2);
    for (std::size_t i = 0; i < centers.size(); ++i) {
        centers[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
    }
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
        double lo = centers[m], mid = centers[m + 1], hi = centers[m + 2];
        for (std::size_t b = 0; b < bins; ++b) {
            double f = static_cast<double>(b) * cfg.sample_rate / static_cast<double>(cfg.n_fft);
            double w = 0.0;
            if (f > lo && f < mid) {
                w = (f - lo) / (mid - lo);
            } else if (f >= mid && f < hi) {
                w = (hi - f) / (hi - mid);
            }
            fb[m * bins + b] = w;
        }
    }
    return fb;
}

// log(1 + mel) features of a 1-d waveform tensor; (frames x n_mels),
// differentiable through the STFT.
template <class Real>
Tensor<Real> mel_spectrogram(const Tensor<Real>& samples, const MelConfig& cfg) {
    StftConfig sc{cfg.n_fft, cfg.hop};
    auto mag = stft_mag(samples, sc); // (F, bins)
    std::size_t bins = cfg.n_fft / 2 + 1;
    auto fb = mel_filterbank(cfg);
    // transpose to (bins, n_mels) for the matmul
    std::vector<Real> fbt(bins * cfg.n_mels);
    for (std::size_t m = 0; m < cfg.n_mels; ++m)
        for (std::size_t b = 0; b < bins; ++b) fbt[b * cfg.n_mels + m] = static_cast<Real>(fb[m * bins + b]);
    auto fb_t = Tensor<Real>::constant({bins, cfg.n_mels}, std::move(fbt));
    return log1p(matmul(mag, fb_t));
}

template <class Real>
Tensor<Real> mel_spectrogram(const Waveform& w, const MelConfig& cfg) {
    std::vector<Real> s(w.samples.begin(), w.samples.end());
    return mel_spectrogram(Tensor<Real>::constant({w.samples.size()}, std::move(s)), cfg);
}

// Default resolution triple as (n_fft, hop, n_mels).
inline std::vector<MelConfig> default_mel_resolutions(double sample_rate) {
    std::vector<MelConfig> r = {
        {512, 128, 40, sample_rate},
        {1024, 256, 64, sample_rate},
        {2048, 512, 80, sample_rate},
    };
    return r;
}

// Mean over resolutions of the mean absolute log-mel difference. Note the
// magnitude spectrum drops sign: loss(x, -x) = 0 by construction.
template <class Real>
Tensor<Real> multi_res_mel_loss(const Tensor<Real>& x, const Tensor<Real>& x_hat,
                                const std::vector<MelConfig>& resolutions) {
    if (x.numel() != x_hat.numel()) {
        throw InputError("multi_res_mel_loss length mismatch: " + std::to_string(x.numel()) + " vs " +
                         std::to_string(x_hat.numel()));
    }
    if (resolutions.empty()) throw ConfigError("multi_res_mel_loss needs at least one resolution");
    Tensor<Real> total = Tensor<Real>::scalar(Real(0));
    for (const auto& cfg : resolutions) {
        auto ma = mel_spectrogram(x, cfg);
        auto mb = mel_spectrogram(x_hat, cfg);
        total = add(total, mean(abs(sub(ma, mb))));
    }
    return mul(total, Real(1) / Real(resolutions.size()));
}

} // namespace sema
