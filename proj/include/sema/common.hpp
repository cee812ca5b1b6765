#pragma once

// Shared error types and small utilities used across the library.

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace sema {

// Shape/geometry violations (mismatched extents, bad conv geometry).
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

// Math domain violations (log/sqrt of negative, division by zero).
class DomainError : public std::runtime_error {
public:
    explicit DomainError(const std::string& msg) : std::runtime_error("domain error: " + msg) {}
};

// API misuse (backward on non-scalar, missing grads, empty parameter set).
class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& msg) : std::runtime_error("usage error: " + msg) {}
};

// Invalid configuration values.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

// Invalid runtime inputs (too-short waveforms, bad token ids, malformed files).
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& msg) : std::runtime_error("input error: " + msg) {}
};

// Training loop aborted (non-finite loss); carries the term breakdown dump.
class TrainingDiverged : public std::runtime_error {
public:
    explicit TrainingDiverged(const std::string& msg) : std::runtime_error("training diverged: " + msg) {}
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// FNV-1a, used for config and checkpoint content hashes.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a(s.data(), s.size(), h);
}

} // namespace sema
