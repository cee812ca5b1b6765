#pragma once

// Alignment of VAE latents to the frozen reference features: a frame-wise
// cosine term for local consistency, a pair-wise self-similarity term for
// global structure, and a gradient-ratio rule that scales the combined
// alignment loss against the reconstruction loss on a shared parameter set.

#include "sema/optim.hpp"
#include "sema/sfm.hpp"
#include "sema/vae.hpp"

#include <optional>

namespace sema {

template <class Real>
struct ProjectedSemantics {
    Tensor<Real> features; // (T, d), matched to the paired latents
};

struct AlignConfig {
    double alpha = 0.5;          // base scaling coefficient
    double eps_stability = 1e-8; // denominator guard in the weight ratio
    double cosine_eps = 1e-8;    // squared-norm floor in cosine denominators
    std::uint64_t grad_probe_stride = 1;
    double lambda_clamp = 1e3;
    std::string theta_prefix = "enc."; // the shared parameter set

    void validate() const {
        if (alpha <= 0) throw ConfigError("align alpha must be > 0");
        if (eps_stability <= 0) throw ConfigError("align eps must be > 0");
        if (lambda_clamp <= 0) throw ConfigError("align lambda clamp must be > 0");
        if (grad_probe_stride < 1) throw ConfigError("grad probe stride must be >= 1");
    }
};

// Linear interpolation matrix mapping T_src positions onto T_dst, endpoints
// to endpoints.
template <class Real>
Tensor<Real> interp_matrix(std::size_t t_src, std::size_t t_dst) {
    if (t_src < 1 || t_dst < 1) throw InputError("interpolation needs at least one frame on both sides");
    std::vector<Real> w(t_dst * t_src, Real(0));
    for (std::size_t i = 0; i < t_dst; ++i) {
        if (t_src == 1) {
            w[i * t_src] = Real(1);
            continue;
        }
        double pos = t_dst == 1 ? 0.0
                                : static_cast<double>(i) * static_cast<double>(t_src - 1) /
                                      static_cast<double>(t_dst - 1);
        auto lo = static_cast<std::size_t>(pos);
        if (lo >= t_src - 1) {
            w[i * t_src + (t_src - 1)] = Real(1);
        } else {
            double frac = pos - static_cast<double>(lo);
            w[i * t_src + lo] = static_cast<Real>(1.0 - frac);
            w[i * t_src + lo + 1] = static_cast<Real>(frac);
        }
    }
    return Tensor<Real>::constant({t_dst, t_src}, std::move(w));
}

// Project reference features into the latent space (trainable linear map),
// then align temporal resolution by linear interpolation. Projection first,
// interpolation second.
template <class Real>
ProjectedSemantics<Real> project_and_resample(const SfmFeatures<Real>& e, std::size_t target_t,
                                              std::size_t target_d, const Tensor<Real>& proj_w,
                                              const Tensor<Real>& proj_b) {
    if (target_t < 1 || target_d < 1) throw InputError("projection target extents must be >= 1");
    if (proj_w.dim(0) != e.d() || proj_w.dim(1) != target_d) {
        throw DimensionError("projection weight is " + shape_str(proj_w.shape()) + ", expected [" +
                             std::to_string(e.d()) + "," + std::to_string(target_d) + "]");
    }
    auto projected = add(matmul(e.features, proj_w), proj_b); // (T_e, d)
    ProjectedSemantics<Real> out;
    out.features = matmul(interp_matrix<Real>(e.T(), target_t), projected);
    return out;
}

// cos(a, b) with zero-vector guard: each norm is floored at sqrt(cosine_eps).
template <class Real>
Tensor<Real> cosine_sim(const Tensor<Real>& a, const Tensor<Real>& b, double cosine_eps = 1e-8) {
    if (a.numel() != b.numel()) throw DimensionError("cosine_sim dimension mismatch");
    Real floor_v = static_cast<Real>(std::sqrt(cosine_eps));
    auto na = clamp_min(sqrt(sum(mul(a, a))), floor_v);
    auto nb = clamp_min(sqrt(sum(mul(b, b))), floor_v);
    return div(sum(mul(a, b)), mul(na, nb));
}

namespace detail {

// Row-normalize (T, d) with the cosine guard; rows with norm below the floor
// are scaled by the floor instead.
template <class Real>
Tensor<Real> guarded_rows(const Tensor<Real>& m, double cosine_eps) {
    Real floor_v = static_cast<Real>(std::sqrt(cosine_eps));
    auto norms = clamp_min(sqrt(sum(mul(m, m), 1, true)), floor_v); // (T, 1)
    return div(m, norms);
}

} // namespace detail

// (1/T) sum_t (1 - cos(z_t, s_t)); in [0, 2].
template <class Real>
Tensor<Real> frame_align_loss(const Tensor<Real>& z, const Tensor<Real>& s, double cosine_eps = 1e-8) {
    if (z.shape() != s.shape()) {
        throw InputError("frame alignment shape mismatch: " + shape_str(z.shape()) + " vs " +
                         shape_str(s.shape()));
    }
    auto zh = detail::guarded_rows(z, cosine_eps);
    auto sh = detail::guarded_rows(s, cosine_eps);
    auto cos_t = sum(mul(zh, sh), 1); // (T,)
    return sub(Tensor<Real>::scalar(Real(1)), mean(cos_t));
}

// Pair-wise cosine similarity matrix D[i,j] = cos(m_i, m_j).
template <class Real>
Tensor<Real> self_similarity(const Tensor<Real>& m, double cosine_eps = 1e-8) {
    if (m.rank() != 2) throw DimensionError("self_similarity expects (T, d)");
    auto mh = detail::guarded_rows(m, cosine_eps);
    return matmul(mh, transpose(mh));
}

// (1/T^2) sum_ij |D_z - D_s|; in [0, 2].
template <class Real>
Tensor<Real> pair_align_loss(const Tensor<Real>& z, const Tensor<Real>& s, double cosine_eps = 1e-8) {
    if (z.shape() != s.shape()) {
        throw InputError("pair alignment shape mismatch: " + shape_str(z.shape()) + " vs " +
                         shape_str(s.shape()));
    }
    return mean(abs(sub(self_similarity(z, cosine_eps), self_similarity(s, cosine_eps))));
}

template <class Real>
struct AlignLossResult {
    Tensor<Real> total, frame, pair;
};

template <class Real>
AlignLossResult<Real> align_loss(const Tensor<Real>& z, const Tensor<Real>& s, double cosine_eps = 1e-8) {
    AlignLossResult<Real> r;
    r.frame = frame_align_loss(z, s, cosine_eps);
    r.pair = pair_align_loss(z, s, cosine_eps);
    r.total = add(r.frame, r.pair);
    return r;
}

// L2 norm of the gradient of `loss` w.r.t. exactly the named parameters,
// computed in an isolated pass that leaves no residue in the persistent
// accumulators.
template <class Real>
double grad_norm_on(const ParamStore<Real>& store, const std::vector<std::string>& theta,
                    const Tensor<Real>& loss) {
    if (theta.empty()) throw UsageError("grad_norm_on: empty parameter set");
    GradMap<Real> gm = backward_collect(loss);
    double sq = 0;
    bool touched = false;
    for (const auto& name : theta) {
        auto it = gm.find(store.get(name).node().get());
        if (it == gm.end()) continue;
        touched = true;
        for (Real g : it->second) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    if (!touched) throw UsageError("grad_norm_on: loss is disconnected from the parameter set");
    return std::sqrt(sq);
}

// Norm of an already-collected gradient restricted to the named parameters.
template <class Real>
double grad_norm_of(const ParamStore<Real>& store, const std::vector<std::string>& theta,
                    const GradMap<Real>& gm) {
    double sq = 0;
    for (const auto& name : theta) {
        auto it = gm.find(store.get(name).node().get());
        if (it == gm.end()) continue;
        for (Real g : it->second) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(sq);
}

// lambda_align = min(clamp, alpha * g_mel / (g_align + eps)). Treated as a
// constant in the subsequent total-loss backward; the clamp bounds the ratio
// when the alignment gradient vanishes near convergence.
inline double adaptive_weight(double g_mel, double g_align, const AlignConfig& cfg) {
    cfg.validate();
    double lambda = cfg.alpha * g_mel / (g_align + cfg.eps_stability);
    return std::min(cfg.lambda_clamp, lambda);
}

template <class Real>
std::vector<std::string> params_with_prefix(const ParamStore<Real>& store, const std::string& prefix) {
    std::vector<std::string> out;
    for (const auto& n : store.names()) {
        if (n.rfind(prefix, 0) == 0) out.push_back(n);
    }
    return out;
}

// ---------------------------------------------------------------------------
// complete objective: L_VAE + lambda_align * L_align with the weight
// recomputed every grad_probe_stride steps and cached between probes.

struct AdaptiveWeightState {
    double lambda_align = 0;
    std::int64_t last_probe_step = -1;
};

template <class Real>
struct TotalObjectiveResult {
    Tensor<Real> total;
    double mel = 0, kl = 0, frame = 0, pair = 0;
    double lambda_align = 0;
    bool probed = false;
};

template <class Real>
TotalObjectiveResult<Real> total_vae_objective(const Tensor<Real>& x, const Tensor<Real>& x_hat,
                                               const LatentSequence<Real>& mu,
                                               const LatentSequence<Real>& z,
                                               const ProjectedSemantics<Real>& s,
                                               const VaeLossWeights& weights,
                                               const std::vector<MelConfig>& resolutions,
                                               const AlignConfig& align_cfg, const ParamStore<Real>& store,
                                               AdaptiveWeightState& state, std::uint64_t step) {
    align_cfg.validate();
    auto vres = vae_loss(x, x_hat, mu, weights, resolutions);
    auto ares = align_loss(z.frames, s.features, align_cfg.cosine_eps);

    TotalObjectiveResult<Real> r;
    r.mel = vres.mel.item();
    r.kl = vres.kl.item();
    r.frame = ares.frame.item();
    r.pair = ares.pair.item();

    bool probe = state.last_probe_step < 0 || step % align_cfg.grad_probe_stride == 0;
    if (probe) {
        auto theta = params_with_prefix(store, align_cfg.theta_prefix);
        double g_mel = grad_norm_on(store, theta, vres.mel);
        double g_align = grad_norm_on(store, theta, ares.total);
        state.lambda_align = adaptive_weight(g_mel, g_align, align_cfg);
        state.last_probe_step = static_cast<std::int64_t>(step);
        r.probed = true;
    }
    r.lambda_align = state.lambda_align;
    r.total = add(vres.total, mul(ares.total, static_cast<Real>(state.lambda_align)));
    return r;
}

} // namespace sema
