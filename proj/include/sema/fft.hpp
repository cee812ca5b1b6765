#pragma once

// Iterative radix-2 FFT used by the STFT kernel. Always runs in double so the
// spectra (and therefore training losses) do not depend on the tensor
// precision mode.

#include "sema/common.hpp"

#include <cmath>
#include <vector>

namespace sema {

struct FftPlan {
    std::size_t n = 0;
    std::vector<std::size_t> rev;       // bit-reversal permutation
    std::vector<double> cos_tab, sin_tab; // twiddles per stage, packed

    explicit FftPlan(std::size_t size) : n(size) {
        if (n == 0 || (n & (n - 1)) != 0) {
            throw InputError("FFT size must be a power of two, got " + std::to_string(n));
        }
        rev.resize(n);
        std::size_t log2n = 0;
        while ((std::size_t(1) << log2n) < n) ++log2n;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t r = 0;
            for (std::size_t b = 0; b < log2n; ++b)
                if (i & (std::size_t(1) << b)) r |= std::size_t(1) << (log2n - 1 - b);
            rev[i] = r;
        }
        // one twiddle per (stage, butterfly index); packed stage after stage
        cos_tab.reserve(n);
        sin_tab.reserve(n);
        for (std::size_t len = 2; len <= n; len <<= 1) {
            for (std::size_t j = 0; j < len / 2; ++j) {
                double ang = -2.0 * 3.14159265358979323846 * static_cast<double>(j) / static_cast<double>(len);
                cos_tab.push_back(std::cos(ang));
                sin_tab.push_back(std::sin(ang));
            }
        }
    }

    // In-place FFT; conjugate=true applies e^{+i...} twiddles (unscaled inverse).
    void run(double* re, double* im, bool conjugate) const {
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t r = rev[i];
            if (i < r) {
                std::swap(re[i], re[r]);
                std::swap(im[i], im[r]);
            }
        }
        std::size_t tw = 0;
        for (std::size_t len = 2; len <= n; len <<= 1) {
            std::size_t half = len / 2;
            for (std::size_t start = 0; start < n; start += len) {
                for (std::size_t j = 0; j < half; ++j) {
                    double wr = cos_tab[tw + j];
                    double wi = conjugate ? -sin_tab[tw + j] : sin_tab[tw + j];
                    std::size_t a = start + j, b = start + j + half;
                    double xr = re[b] * wr - im[b] * wi;
                    double xi = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - xr;
                    im[b] = im[a] - xi;
                    re[a] += xr;
                    im[a] += xi;
                }
            }
            tw += half;
        }
    }
};

} // namespace sema
