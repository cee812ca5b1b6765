#include <catch2/catch_amalgamated.hpp>

#include "sema/gradcheck.hpp"
#include "sema/mel.hpp"
#include "sema/rng.hpp"
#include "sema/stft.hpp"
#include "sema/wav.hpp"

#include <cmath>
#include <cstdio>

using namespace sema;

TEST_CASE("stft magnitude matches a naive DFT oracle", "[signal]") {
    RngStream rng(31, 0);
    const std::size_t N = 64, hop = 16, T = 160;
    std::vector<double> x(T);
    for (auto& v : x) v = rng.normal() * 0.3;
    auto xt = Tensor<double>::constant({T}, x);
    auto mag = stft_mag(xt, StftConfig{N, hop});
    std::size_t F = (T - N) / hop + 1;
    REQUIRE(mag.shape() == Shape{F, N / 2 + 1});
    auto w = detail::hann_window(N);
    for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t b = 0; b <= N / 2; ++b) {
            double re = 0, im = 0;
            for (std::size_t n = 0; n < N; ++n) {
                double ang = -2.0 * M_PI * double(b) * double(n) / double(N);
                double xv = x[f * hop + n] * w[n];
                re += xv * std::cos(ang);
                im += xv * std::sin(ang);
            }
            double ref = std::sqrt(re * re + im * im);
            REQUIRE(mag.data()[f * (N / 2 + 1) + b] == Catch::Approx(ref).margin(1e-10));
        }
    }
}

TEST_CASE("stft gradient matches finite differences", "[signal]") {
    RngStream rng(32, 0);
    const std::size_t N = 32, hop = 8, T = 72;
    std::vector<double> x(T);
    for (auto& v : x) v = rng.normal() * 0.5;
    auto f = [&](const Tensor<double>& t) {
        return mean(mul(stft_mag(t, StftConfig{N, hop}), Tensor<double>::scalar(1.0))).item();
    };
    auto xt = Tensor<double>::param({T}, x);
    auto loss = mean(stft_mag(xt, StftConfig{N, hop}));
    auto gm = backward_collect(loss);
    auto fd = finite_diff_grad<double>(f, Tensor<double>::constant({T}, x), 1e-6);
    REQUIRE(max_rel_error(gm.at(xt.node().get()), fd.data(), 1e-5) < 1e-4);
}

TEST_CASE("mel spectrogram of silence is zero", "[signal]") {
    Waveform w;
    w.sample_rate = 8000;
    w.samples.assign(4000, 0.0);
    MelConfig cfg{512, 128, 40, 8000.0};
    auto m = mel_spectrogram<double>(w, cfg);
    for (double v : m.data()) REQUIRE(std::abs(v) < 1e-9);
}

TEST_CASE("mel frame count follows the documented formula", "[signal]") {
    MelConfig cfg{512, 128, 40, 8000.0};
    Waveform w;
    w.sample_rate = 8000;
    w.samples.assign(2000, 0.0);
    auto m = mel_spectrogram<double>(w, cfg);
    REQUIRE(m.dim(0) == (2000 - 512) / 128 + 1);
    // n_fft larger than the waveform is rejected
    Waveform tiny;
    tiny.sample_rate = 8000;
    tiny.samples.assign(100, 0.0);
    REQUIRE_THROWS_AS(mel_spectrogram<double>(tiny, cfg), InputError);
}

TEST_CASE("pure sine lands in the matching mel band", "[signal]") {
    MelConfig cfg{1024, 256, 64, 8000.0};
    // bin-center frequency
    std::size_t bin = 120;
    double f0 = double(bin) * cfg.sample_rate / double(cfg.n_fft);
    Waveform w;
    w.sample_rate = 8000;
    w.samples.resize(8000);
    for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = 0.7 * std::sin(2.0 * M_PI * f0 * double(i) / 8000.0);
    auto m = mel_spectrogram<double>(w, cfg);
    // expected band: the filter with the largest weight at that bin
    auto fb = mel_filterbank(cfg);
    std::size_t bins = cfg.n_fft / 2 + 1;
    std::size_t expected = 0;
    double best = -1;
    for (std::size_t band = 0; band < cfg.n_mels; ++band) {
        if (fb[band * bins + bin] > best) {
            best = fb[band * bins + bin];
            expected = band;
        }
    }
    // energy-weighted argmax over mel bands, averaged across frames
    std::size_t F = m.dim(0);
    std::vector<double> band_energy(cfg.n_mels, 0.0);
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t band = 0; band < cfg.n_mels; ++band) band_energy[band] += m.data()[f * cfg.n_mels + band];
    std::size_t argmax = 0;
    for (std::size_t band = 1; band < cfg.n_mels; ++band)
        if (band_energy[band] > band_energy[argmax]) argmax = band;
    REQUIRE(argmax == expected);
}

TEST_CASE("multi-res mel loss identities", "[signal]") {
    RngStream rng(33, 0);
    std::vector<double> x(4096);
    for (auto& v : x) v = 0.4 * rng.normal();
    auto xt = Tensor<double>::constant({x.size()}, x);
    auto res = default_mel_resolutions(8000.0);
    REQUIRE(multi_res_mel_loss(xt, xt, res).item() == 0.0);

    std::vector<double> nx(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) nx[i] = -x[i];
    auto nxt = Tensor<double>::constant({x.size()}, nx);
    // magnitude spectra are sign-blind; documented and intentional
    REQUIRE(multi_res_mel_loss(xt, nxt, res).item() == Catch::Approx(0.0).margin(1e-12));

    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = 0.4 * (i % 17 == 0 ? 1.0 : -0.2);
    auto yt = Tensor<double>::constant({y.size()}, y);
    REQUIRE(multi_res_mel_loss(xt, yt, res).item() > 0.0);
    REQUIRE_THROWS_AS(multi_res_mel_loss(xt, Tensor<double>::zeros({16}), res), InputError);
}

TEST_CASE("wav round trip preserves samples to 16-bit precision", "[signal]") {
    RngStream rng(34, 0);
    Waveform w;
    w.sample_rate = 8000;
    w.samples.resize(1234);
    for (auto& s : w.samples) s = std::tanh(rng.normal());
    std::string path = "test_roundtrip.wav";
    write_wav(path, w);
    auto r = read_wav(path);
    REQUIRE(r.sample_rate == 8000);
    REQUIRE(r.samples.size() == w.samples.size());
    for (std::size_t i = 0; i < w.samples.size(); ++i)
        REQUIRE(std::abs(r.samples[i] - w.samples[i]) < 1.0 / 32000.0);
    std::remove(path.c_str());
}

TEST_CASE("wav reader rejects non-PCM16 encodings", "[signal]") {
    // stereo 8-bit float-ish header
    std::string bad = "RIFF";
    bad.append(4, '\0');
    bad += "WAVEfmt ";
    std::string fmt;
    detail::put_u32(fmt, 16);
    detail::put_u16(fmt, 3); // IEEE float
    detail::put_u16(fmt, 1);
    detail::put_u32(fmt, 8000);
    detail::put_u32(fmt, 32000);
    detail::put_u16(fmt, 4);
    detail::put_u16(fmt, 32);
    bad += fmt;
    bad += "data";
    bad.append(4, '\0');
    std::string path = "test_bad.wav";
    {
        std::ofstream f(path, std::ios::binary);
        f.write(bad.data(), static_cast<std::streamsize>(bad.size()));
    }
    REQUIRE_THROWS_AS(read_wav(path), InputError);
    std::remove(path.c_str());
}
