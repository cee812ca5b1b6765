#pragma once

// Counter-based random streams. A draw at counter n is a pure function of
// (seed, stream_id, n), so sequences replay identically across runs and
// platforms, and distinct stream_ids give decorrelated streams that can be
// handed to different subsystems (VAE noise, diffusion noise, CFG dropout)
// without contaminating each other.

#include <cmath>
#include <cstdint>

namespace sema {

class RngStream {
public:
    RngStream() : RngStream(0, 0) {}
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : seed_(seed), stream_id_(stream_id), counter_(0) {
        key_ = mix(seed ^ mix(stream_id ^ 0x6a09e667f3bcc909ULL));
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }
    std::uint64_t counter() const { return counter_; }

    // Independent child stream; the child's id folds in the parent's id.
    RngStream fork(std::uint64_t sub_id) const {
        return RngStream(seed_, mix(stream_id_ ^ mix(sub_id)));
    }

    std::uint64_t next_u64() {
        // splitmix64 over key_ + n*golden; one finalizer call per draw.
        std::uint64_t z = key_ + 0x9e3779b97f4a7c15ULL * ++counter_;
        return mix(z);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi], inclusive.
    std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
        std::uint64_t range = hi - lo + 1;
        return lo + static_cast<std::uint64_t>(
                        (static_cast<unsigned __int128>(next_u64()) * range) >> 64);
    }

    // Standard normal via Box-Muller. Consumes two counters per draw so the
    // stream position stays a pure function of the number of calls.
    double normal() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; // (0, 1]
        double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;       // [0, 1)
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t counter_;
    std::uint64_t key_;
};

} // namespace sema
