#pragma once

// Frozen semantic reference encoder. A fixed, seed-initialized conv stack
// stands in for a pretrained speech foundation model: it is never trained,
// produces bit-identical features for identical input, and its outputs carry
// no gradient. Its discriminativeness on the synthetic corpus is validated by
// test rather than assumed.

#include "sema/conv.hpp"
#include "sema/rng.hpp"
#include "sema/wav.hpp"

namespace sema {

struct SfmConfig {
    double feature_rate_hz = 50.0;
    std::size_t dim = 48;
    std::size_t dw_kernel = 5;
    std::uint64_t seed = 7;
};

template <class Real>
struct SfmFeatures {
    Tensor<Real> features; // (T_e, d_e), constant
    double feature_rate_hz = 0;

    std::size_t T() const { return features.dim(0); }
    std::size_t d() const { return features.dim(1); }
};

// Strided conv frontend -> tanh -> two depth-wise conv blocks (tanh between).
template <class Real>
class PseudoSfm {
public:
    explicit PseudoSfm(const SfmConfig& cfg, int sample_rate) : cfg_(cfg), sample_rate_(sample_rate) {
        stride_ = static_cast<std::size_t>(std::lround(sample_rate / cfg.feature_rate_hz));
        if (stride_ < 1) throw ConfigError("sfm feature rate exceeds sample rate");
        RngStream rng(cfg.seed, 0x5f3759df);
        front_w_ = frozen(rng, {cfg.dim, 1, stride_});
        front_b_ = Tensor<Real>::zeros({cfg.dim});
        for (int i = 0; i < 2; ++i) {
            dw_w_[i] = frozen(rng, {cfg.dim, 1, cfg.dw_kernel});
            dw_b_[i] = Tensor<Real>::zeros({cfg.dim});
        }
    }

    const SfmConfig& config() const { return cfg_; }
    double actual_feature_rate() const { return static_cast<double>(sample_rate_) / static_cast<double>(stride_); }

    SfmFeatures<Real> encode(const Waveform& x) const {
        std::size_t Te = ceil_div(std::max<std::size_t>(x.samples.size(), 1), stride_);
        std::vector<Real> padded(Te * stride_, Real(0));
        for (std::size_t i = 0; i < x.samples.size(); ++i) padded[i] = static_cast<Real>(x.samples[i]);
        auto in = Tensor<Real>::constant({1, 1, Te * stride_}, std::move(padded));
        auto h = tanh(conv1d(in, front_w_, front_b_, stride_, 0));
        for (int i = 0; i < 2; ++i) {
            h = tanh(conv1d(h, dw_w_[i], dw_b_[i], 1, (cfg_.dw_kernel - 1) / 2, cfg_.dim));
        }
        SfmFeatures<Real> out;
        out.features = transpose(reshape(h, {cfg_.dim, Te}));
        out.feature_rate_hz = actual_feature_rate();
        return out;
    }

private:
    static Tensor<Real> frozen(RngStream& rng, Shape shape) {
        std::size_t fan_in = shape[1] * shape[2];
        double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::vector<Real> v(shape_numel(shape));
        for (auto& x : v) x = static_cast<Real>(rng.normal() * sd);
        return Tensor<Real>::constant(std::move(shape), std::move(v));
    }

    SfmConfig cfg_;
    int sample_rate_;
    std::size_t stride_ = 1;
    Tensor<Real> front_w_, front_b_;
    Tensor<Real> dw_w_[2], dw_b_[2];
};

} // namespace sema
