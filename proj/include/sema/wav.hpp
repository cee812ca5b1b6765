#pragma once

// Waveform container and PCM16 little-endian mono WAV I/O. The reader rejects
// every other encoding outright rather than guessing.

#include "sema/common.hpp"

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace sema {

struct Waveform {
    std::vector<double> samples; // in [-1, 1]
    int sample_rate = 8000;

    std::size_t size() const { return samples.size(); }
    double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
}

} // namespace detail

inline void write_wav(const std::string& path, const Waveform& w) {
    std::uint32_t data_size = static_cast<std::uint32_t>(w.samples.size() * 2);
    std::string out;
    out.reserve(44 + data_size);
    out += "RIFF";
    detail::put_u32(out, 36 + data_size);
    out += "WAVEfmt ";
    detail::put_u32(out, 16);
    detail::put_u16(out, 1); // PCM
    detail::put_u16(out, 1); // mono
    detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
    detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate * 2));
    detail::put_u16(out, 2);  // block align
    detail::put_u16(out, 16); // bits
    out += "data";
    detail::put_u32(out, data_size);
    for (double s : w.samples) {
        double c = s < -1.0 ? -1.0 : (s > 1.0 ? 1.0 : s);
        auto v = static_cast<std::int16_t>(std::lround(c * 32767.0));
        out.push_back(static_cast<char>(v & 0xff));
        out.push_back(static_cast<char>((v >> 8) & 0xff));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline Waveform read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    auto u16 = [&](std::size_t at) -> std::uint32_t {
        return static_cast<std::uint8_t>(bytes[at]) | (static_cast<std::uint8_t>(bytes[at + 1]) << 8);
    };
    auto u32 = [&](std::size_t at) -> std::uint32_t {
        return u16(at) | (u16(at + 2) << 16);
    };
    if (bytes.size() < 44 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0) {
        throw InputError("'" + path + "' is not a RIFF/WAVE file");
    }
    // walk chunks; fmt must precede data
    std::size_t at = 12;
    int sample_rate = 0;
    bool have_fmt = false;
    while (at + 8 <= bytes.size()) {
        std::string id = bytes.substr(at, 4);
        std::uint32_t sz = u32(at + 4);
        std::size_t body = at + 8;
        if (id == "fmt ") {
            if (sz < 16 || body + 16 > bytes.size()) throw InputError("malformed fmt chunk");
            std::uint32_t format = u16(body);
            std::uint32_t channels = u16(body + 2);
            sample_rate = static_cast<int>(u32(body + 4));
            std::uint32_t bits = u16(body + 14);
            if (format != 1) throw InputError("'" + path + "': only PCM (format 1) is supported");
            if (channels != 1) throw InputError("'" + path + "': only mono is supported");
            if (bits != 16) throw InputError("'" + path + "': only 16-bit samples are supported");
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) throw InputError("'" + path + "': data chunk before fmt");
            if (body + sz > bytes.size()) throw InputError("'" + path + "': truncated data chunk");
            Waveform w;
            w.sample_rate = sample_rate;
            w.samples.resize(sz / 2);
            for (std::size_t i = 0; i < w.samples.size(); ++i) {
                auto v = static_cast<std::int16_t>(u16(body + 2 * i));
                w.samples[i] = static_cast<double>(v) / 32767.0;
            }
            if (w.samples.empty()) throw InputError("'" + path + "': empty data chunk");
            return w;
        }
        at = body + sz + (sz & 1);
    }
    throw InputError("'" + path + "': no data chunk found");
}

} // namespace sema
