#pragma once

// Waveform VAE with stochastic-variance reparameterization. The encoder is a
// stack of strided downsampling convolutions with depth-wise conv blocks in
// between; the decoder mirrors it with channel-to-time upsampling. The latent
// standard deviation is not predicted: it is drawn per step from N(0, C_sigma),
// which keeps the latent space from collapsing to near-zero variance.

#include "sema/conv.hpp"
#include "sema/mel.hpp"
#include "sema/optim.hpp"
#include "sema/rng.hpp"
#include "sema/wav.hpp"

#include <cstdio>
#include <fstream>
#include <string>

namespace sema {

enum class LatentKind { Mean, Sampled };

template <class Real>
struct LatentSequence {
    Tensor<Real> frames; // (T, d)
    double frame_rate_hz = 0;
    LatentKind kind = LatentKind::Mean;

    std::size_t T() const { return frames.dim(0); }
    std::size_t d() const { return frames.dim(1); }
};

enum class SigmaGranularity { PerElement, PerFrame, PerSequence };

struct SigmaConfig {
    double c_sigma = 1.0; // variance of the distribution sigma is drawn from
    SigmaGranularity granularity = SigmaGranularity::PerSequence;

    void validate() const {
        if (c_sigma < 0) throw ConfigError("c_sigma must be >= 0");
    }
};

struct VaeLossWeights {
    double mel = 15.0;
    double fm = 2.0;
    double adv = 1.0;
    double kl = 0.01;

    void validate() const {
        if (mel < 0 || fm < 0 || adv < 0 || kl < 0) throw ConfigError("loss weights must be nonnegative");
    }
};

struct VaeConfig {
    int sample_rate = 8000;
    double frame_rate_hz = 15.0; // nominal; actual rate is sample_rate / downsample_factor
    std::size_t latent_dim = 32;
    std::vector<std::size_t> stage_widths = {24, 48};
    std::size_t blocks_per_stage = 1;
    std::size_t dw_kernel = 5;
    std::size_t ffn_mult = 2;

    std::size_t downsample_factor() const {
        auto f = static_cast<std::size_t>(std::lround(sample_rate / frame_rate_hz));
        if (f < 1) throw ConfigError("frame rate exceeds sample rate");
        return f;
    }
    double actual_frame_rate() const {
        return static_cast<double>(sample_rate) / static_cast<double>(downsample_factor());
    }
};

// Split a downsampling factor into at most `max_stages` conv strides
// (ascending). Prime factors are merged smallest-first.
inline std::vector<std::size_t> stage_strides(std::size_t factor, std::size_t max_stages = 3) {
    if (factor < 1) throw ConfigError("downsample factor must be >= 1");
    std::vector<std::size_t> primes;
    std::size_t f = factor;
    for (std::size_t p = 2; p * p <= f; ++p) {
        while (f % p == 0) {
            primes.push_back(p);
            f /= p;
        }
    }
    if (f > 1) primes.push_back(f);
    if (primes.empty()) primes.push_back(1);
    while (primes.size() > max_stages) {
        std::sort(primes.begin(), primes.end());
        primes[1] *= primes[0];
        primes.erase(primes.begin());
    }
    std::sort(primes.begin(), primes.end());
    return primes;
}

namespace detail {

template <class Real>
Tensor<Real> conv_init(ParamStore<Real>& store, const std::string& name, Shape shape, RngStream& rng,
                       double scale = 1.0) {
    std::size_t fan_in = shape.size() == 3 ? shape[1] * shape[2] : shape[0];
    double std_dev = scale / std::sqrt(static_cast<double>(fan_in));
    std::vector<Real> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<Real>(rng.normal() * std_dev);
    return store.add(name, Tensor<Real>::param(std::move(shape), std::move(v)));
}

template <class Real>
Tensor<Real> zeros_param(ParamStore<Real>& store, const std::string& name, Shape shape) {
    return store.add(name, Tensor<Real>::param(std::move(shape), std::vector<Real>(shape_numel(shape), 0)));
}

template <class Real>
Tensor<Real> ones_param(ParamStore<Real>& store, const std::string& name, Shape shape) {
    return store.add(name,
                     Tensor<Real>::param(std::move(shape), std::vector<Real>(shape_numel(shape), Real(1))));
}

} // namespace detail

// Pre-norm residual block at one time resolution: depth-wise conv over time,
// then a pointwise feed-forward over channels.
template <class Real>
struct ConvBlock {
    Tensor<Real> ln1_g, ln1_b, dw_w, dw_b;
    Tensor<Real> ln2_g, ln2_b, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    std::size_t kernel = 5;

    static ConvBlock build(ParamStore<Real>& store, const std::string& prefix, std::size_t ch,
                           std::size_t kernel, std::size_t ffn_mult, RngStream& rng) {
        ConvBlock b;
        b.kernel = kernel;
        b.ln1_g = detail::ones_param(store, prefix + ".ln1.g", {ch, 1});
        b.ln1_b = detail::zeros_param(store, prefix + ".ln1.b", {ch, 1});
        b.dw_w = detail::conv_init(store, prefix + ".dw.w", {ch, 1, kernel}, rng);
        b.dw_b = detail::zeros_param(store, prefix + ".dw.b", {ch});
        b.ln2_g = detail::ones_param(store, prefix + ".ln2.g", {ch, 1});
        b.ln2_b = detail::zeros_param(store, prefix + ".ln2.b", {ch, 1});
        b.ffn_w1 = detail::conv_init(store, prefix + ".ffn.w1", {ch * ffn_mult, ch, 1}, rng);
        b.ffn_b1 = detail::zeros_param(store, prefix + ".ffn.b1", {ch * ffn_mult});
        b.ffn_w2 = detail::conv_init(store, prefix + ".ffn.w2", {ch, ch * ffn_mult, 1}, rng);
        b.ffn_b2 = detail::zeros_param(store, prefix + ".ffn.b2", {ch});
        return b;
    }

    // x: (1, C, T)
    Tensor<Real> forward(const Tensor<Real>& x) const {
        std::size_t ch = x.dim(1);
        auto norm1 = add(mul(layer_norm(x, 1), ln1_g), ln1_b);
        auto h = add(x, conv1d(norm1, dw_w, dw_b, 1, (kernel - 1) / 2, ch));
        auto norm2 = add(mul(layer_norm(h, 1), ln2_g), ln2_b);
        auto f = conv1d(gelu(conv1d(norm2, ffn_w1, ffn_b1, 1, 0)), ffn_w2, ffn_b2, 1, 0);
        return add(h, f);
    }
};

template <class Real>
struct VaeModel {
    VaeConfig cfg;
    std::vector<std::size_t> strides;
    std::vector<std::size_t> widths; // width after each encoder stage

    struct Stage {
        Tensor<Real> down_w, down_b;
        std::vector<ConvBlock<Real>> blocks;
    };
    std::vector<Stage> enc_stages;
    Tensor<Real> enc_head_w, enc_head_b;

    Tensor<Real> dec_head_w, dec_head_b;
    struct UpStage {
        std::vector<ConvBlock<Real>> blocks; // run before the upsample projection
        Tensor<Real> up_w, up_b;
        std::size_t stride = 1;
    };
    std::vector<UpStage> dec_stages; // ordered from latent rate outward

    static VaeModel build(ParamStore<Real>& store, const VaeConfig& cfg, RngStream& rng) {
        VaeModel m;
        m.cfg = cfg;
        m.strides = stage_strides(cfg.downsample_factor());
        m.widths = cfg.stage_widths;
        if (m.widths.empty()) throw ConfigError("vae needs at least one stage width");
        while (m.widths.size() < m.strides.size()) m.widths.push_back(m.widths.back());
        m.widths.resize(m.strides.size());

        std::size_t prev = 1;
        for (std::size_t i = 0; i < m.strides.size(); ++i) {
            typename VaeModel::Stage st;
            std::string p = "enc.stage" + std::to_string(i);
            st.down_w = detail::conv_init(store, p + ".down.w", {m.widths[i], prev, m.strides[i]}, rng);
            st.down_b = detail::zeros_param(store, p + ".down.b", {m.widths[i]});
            for (std::size_t j = 0; j < cfg.blocks_per_stage; ++j) {
                st.blocks.push_back(ConvBlock<Real>::build(store, p + ".block" + std::to_string(j),
                                                           m.widths[i], cfg.dw_kernel, cfg.ffn_mult, rng));
            }
            m.enc_stages.push_back(std::move(st));
            prev = m.widths[i];
        }
        m.enc_head_w = detail::conv_init(store, "enc.head.w", {cfg.latent_dim, prev, 1}, rng);
        m.enc_head_b = detail::zeros_param(store, "enc.head.b", {cfg.latent_dim});

        m.dec_head_w = detail::conv_init(store, "dec.head.w", {prev, cfg.latent_dim, 1}, rng);
        m.dec_head_b = detail::zeros_param(store, "dec.head.b", {prev});
        for (std::size_t i = m.strides.size(); i-- > 0;) {
            typename VaeModel::UpStage st;
            st.stride = m.strides[i];
            std::string p = "dec.stage" + std::to_string(i);
            for (std::size_t j = 0; j < cfg.blocks_per_stage; ++j) {
                st.blocks.push_back(ConvBlock<Real>::build(store, p + ".block" + std::to_string(j),
                                                           m.widths[i], cfg.dw_kernel, cfg.ffn_mult, rng));
            }
            std::size_t out_ch = i == 0 ? 1 : m.widths[i - 1];
            // final projection kept small so an untrained decoder emits
            // near-silence instead of saturating the clamp
            double scale = i == 0 ? 0.1 : 1.0;
            st.up_w = detail::conv_init(store, p + ".up.w", {out_ch * m.strides[i], m.widths[i], 1}, rng,
                                        scale);
            st.up_b = detail::zeros_param(store, p + ".up.b", {out_ch * m.strides[i]});
            m.dec_stages.push_back(std::move(st));
        }
        return m;
    }

    // Right-pad to a whole number of frames and wrap as a constant tensor.
    Tensor<Real> padded_input(const Waveform& x) const {
        std::size_t factor = cfg.downsample_factor();
        if (x.samples.size() < factor) {
            throw InputError("waveform shorter than one downsample factor (" + std::to_string(factor) +
                             " samples)");
        }
        std::size_t T = ceil_div(x.samples.size(), factor);
        std::vector<Real> padded(T * factor, Real(0));
        for (std::size_t i = 0; i < x.samples.size(); ++i) padded[i] = static_cast<Real>(x.samples[i]);
        return Tensor<Real>::constant({1, 1, T * factor}, std::move(padded));
    }

    // (1, 1, S) -> (T, d) mean frames.
    Tensor<Real> encode_t(const Tensor<Real>& x) const {
        Tensor<Real> h = x;
        for (const auto& st : enc_stages) {
            std::size_t s = st.down_w.dim(2);
            h = conv1d(h, st.down_w, st.down_b, s, 0);
            for (const auto& b : st.blocks) h = b.forward(h);
        }
        h = conv1d(h, enc_head_w, enc_head_b, 1, 0); // (1, d, T)
        std::size_t d = h.dim(1), T = h.dim(2);
        return transpose(reshape(h, {d, T}));
    }

    LatentSequence<Real> encode(const Waveform& x) const {
        LatentSequence<Real> out;
        out.frames = encode_t(padded_input(x));
        out.frame_rate_hz = cfg.actual_frame_rate();
        out.kind = LatentKind::Mean;
        return out;
    }

    // (T, d) -> (S,) with S = T * downsample_factor, clamped to [-1, 1].
    Tensor<Real> decode_t(const Tensor<Real>& frames) const {
        if (frames.rank() != 2 || frames.dim(1) != cfg.latent_dim) {
            throw InputError("decode expects (T, " + std::to_string(cfg.latent_dim) + ") latents, got " +
                             shape_str(frames.shape()));
        }
        std::size_t T = frames.dim(0), d = cfg.latent_dim;
        Tensor<Real> h = reshape(transpose(frames), {1, d, T});
        h = conv1d(h, dec_head_w, dec_head_b, 1, 0);
        for (const auto& st : dec_stages) {
            for (const auto& b : st.blocks) h = b.forward(h);
            h = depth_to_time(conv1d(h, st.up_w, st.up_b, 1, 0), st.stride);
        }
        return clamp(reshape(h, {h.dim(2)}), Real(-1), Real(1));
    }

    Waveform decode(const LatentSequence<Real>& z) const {
        auto s = decode_t(z.frames);
        Waveform w;
        w.sample_rate = cfg.sample_rate;
        w.samples.assign(s.data().begin(), s.data().end());
        return w;
    }
};

// z = mu + sigma * eps with eps ~ N(0, I) and sigma ~ N(0, C_sigma) at the
// configured granularity. Gradient flows to mu only.
template <class Real>
LatentSequence<Real> sample_latent(const LatentSequence<Real>& mu, const SigmaConfig& cfg, RngStream& rng) {
    if (mu.kind != LatentKind::Mean) throw UsageError("sample_latent expects mean latents");
    cfg.validate();
    std::size_t T = mu.T(), d = mu.d();
    double sd = std::sqrt(cfg.c_sigma);
    std::vector<Real> noise(T * d);
    switch (cfg.granularity) {
        case SigmaGranularity::PerSequence: {
            double sigma = sd * rng.normal();
            for (auto& v : noise) v = static_cast<Real>(sigma * rng.normal());
            break;
        }
        case SigmaGranularity::PerFrame: {
            for (std::size_t t = 0; t < T; ++t) {
                double sigma = sd * rng.normal();
                for (std::size_t j = 0; j < d; ++j) noise[t * d + j] = static_cast<Real>(sigma * rng.normal());
            }
            break;
        }
        case SigmaGranularity::PerElement: {
            for (auto& v : noise) {
                double sigma = sd * rng.normal();
                v = static_cast<Real>(sigma * rng.normal());
            }
            break;
        }
    }
    LatentSequence<Real> z;
    z.frames = add(mu.frames, Tensor<Real>::constant({T, d}, std::move(noise)));
    z.frame_rate_hz = mu.frame_rate_hz;
    z.kind = LatentKind::Sampled;
    return z;
}

// With sigma drawn externally, the KL against a unit normal reduces (up to
// parameter-independent constants) to the mean-square of mu.
template <class Real>
Tensor<Real> kl_loss(const LatentSequence<Real>& mu) {
    if (mu.kind != LatentKind::Mean) throw UsageError("kl_loss expects mean latents");
    return mul(mean(mul(mu.frames, mu.frames)), Real(0.5));
}

// Weighted combination of the VAE terms; adversarial and feature-matching
// enter as caller-supplied scalars (zero when no discriminator is attached).
inline double combine_vae_terms(const VaeLossWeights& w, double mel, double fm, double adv, double kl) {
    w.validate();
    return w.mel * mel + w.fm * fm + w.adv * adv + w.kl * kl;
}

template <class Real>
struct VaeLossResult {
    Tensor<Real> total;
    Tensor<Real> mel; // unweighted terms kept on-graph for gradient probes
    Tensor<Real> kl;
    double adv = 0, fm = 0;
};

template <class Real>
VaeLossResult<Real> vae_loss(const Tensor<Real>& x, const Tensor<Real>& x_hat,
                             const LatentSequence<Real>& mu, const VaeLossWeights& weights,
                             const std::vector<MelConfig>& resolutions, double external_adv = 0,
                             double external_fm = 0) {
    weights.validate();
    VaeLossResult<Real> r;
    r.mel = multi_res_mel_loss(x, x_hat, resolutions);
    r.kl = kl_loss(mu);
    r.adv = external_adv;
    r.fm = external_fm;
    auto fixed = Tensor<Real>::scalar(static_cast<Real>(weights.adv * external_adv + weights.fm * external_fm));
    r.total = add(add(mul(r.mel, static_cast<Real>(weights.mel)), mul(r.kl, static_cast<Real>(weights.kl))),
                  fixed);
    return r;
}

// ---------------------------------------------------------------------------
// latent cache file: "SVLT" | version u16 | frame_rate f64 | T u64 | d u64 |
// T*d little-endian f32

inline constexpr std::uint16_t kLatentFileVersion = 1;

template <class Real>
void write_latent_file(const std::string& path, const LatentSequence<Real>& z) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open '" + path + "' for writing");
    f.write("SVLT", 4);
    std::uint16_t ver = kLatentFileVersion;
    f.write(reinterpret_cast<const char*>(&ver), 2);
    double rate = z.frame_rate_hz;
    f.write(reinterpret_cast<const char*>(&rate), 8);
    std::uint64_t T = z.T(), d = z.d();
    f.write(reinterpret_cast<const char*>(&T), 8);
    f.write(reinterpret_cast<const char*>(&d), 8);
    for (Real v : z.frames.data()) {
        float x = static_cast<float>(v);
        f.write(reinterpret_cast<const char*>(&x), 4);
    }
}

template <class Real>
LatentSequence<Real> read_latent_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open '" + path + "'");
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "SVLT") throw InputError("'" + path + "' is not a latent cache file");
    std::uint16_t ver = 0;
    f.read(reinterpret_cast<char*>(&ver), 2);
    if (ver != kLatentFileVersion) throw InputError("unsupported latent file version");
    double rate = 0;
    std::uint64_t T = 0, d = 0;
    f.read(reinterpret_cast<char*>(&rate), 8);
    f.read(reinterpret_cast<char*>(&T), 8);
    f.read(reinterpret_cast<char*>(&d), 8);
    std::vector<Real> vals(T * d);
    for (auto& v : vals) {
        float x = 0;
        f.read(reinterpret_cast<char*>(&x), 4);
        v = static_cast<Real>(x);
    }
    if (!f) throw InputError("'" + path + "' truncated");
    LatentSequence<Real> z;
    z.frames = Tensor<Real>::constant({static_cast<std::size_t>(T), static_cast<std::size_t>(d)}, std::move(vals));
    z.frame_rate_hz = rate;
    z.kind = LatentKind::Mean;
    return z;
}

} // namespace sema
