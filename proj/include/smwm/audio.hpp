#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace smwm {

struct AudioBuffer {
    std::vector<double> samples;  // amplitude, nominally in [-1, 1]
    int sample_rate = 0;          // Hz

    double duration_seconds() const {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

inline double rms(const std::vector<double>& x) {
    if (x.empty()) return 0.0;
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return std::sqrt(acc / static_cast<double>(x.size()));
}

enum class WavFormat { Pcm16, Float32 };

namespace detail {

inline uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint16_t read_u16(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

inline void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<char*>(b), 4);
}

inline void write_u16(std::ostream& out, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    out.write(reinterpret_cast<char*>(b), 2);
}

}  // namespace detail

// Reads a RIFF/WAVE file. PCM 16-bit and IEEE float 32-bit are supported.
// Stereo input is averaged to mono with a warning on stderr.
inline AudioBuffer read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open wav file: " + path);

    char tag[4];
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "RIFF", 4) != 0) throw std::runtime_error("not a RIFF file: " + path);
    detail::read_u32(in);  // riff size
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "WAVE", 4) != 0) throw std::runtime_error("not a WAVE file: " + path);

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    bool have_fmt = false;
    std::vector<char> data;

    while (in.read(tag, 4)) {
        uint32_t size = detail::read_u32(in);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            format = detail::read_u16(in);
            channels = detail::read_u16(in);
            rate = detail::read_u32(in);
            detail::read_u32(in);  // byte rate
            detail::read_u16(in);  // block align
            bits = detail::read_u16(in);
            if (size > 16) in.seekg(size - 16, std::ios::cur);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            data.resize(size);
            in.read(data.data(), size);
            if (static_cast<uint32_t>(in.gcount()) != size)
                throw std::runtime_error("truncated wav data chunk: " + path);
        } else {
            in.seekg(size + (size & 1), std::ios::cur);
        }
    }
    if (!have_fmt || data.empty()) throw std::runtime_error("wav missing fmt/data chunk: " + path);
    if (channels == 0 || rate == 0) throw std::runtime_error("wav has invalid fmt chunk: " + path);

    const bool pcm16 = (format == 1 && bits == 16);
    const bool f32 = (format == 3 && bits == 32);
    if (!pcm16 && !f32)
        throw std::runtime_error("unsupported wav format (want PCM16 or float32): " + path);

    const size_t bytes_per = pcm16 ? 2 : 4;
    const size_t frames = data.size() / (bytes_per * channels);
    if (channels > 1)
        std::cerr << "warning: " << path << " has " << channels
                  << " channels; averaging to mono\n";

    AudioBuffer out;
    out.sample_rate = static_cast<int>(rate);
    out.samples.resize(frames);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(data.data());
    for (size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (unsigned c = 0; c < channels; ++c) {
            const size_t off = (i * channels + c) * bytes_per;
            if (pcm16) {
                int16_t v = static_cast<int16_t>(p[off] | (p[off + 1] << 8));
                acc += static_cast<double>(v) / 32768.0;
            } else {
                uint32_t u = static_cast<uint32_t>(p[off]) | (static_cast<uint32_t>(p[off + 1]) << 8) |
                             (static_cast<uint32_t>(p[off + 2]) << 16) |
                             (static_cast<uint32_t>(p[off + 3]) << 24);
                float f;
                std::memcpy(&f, &u, 4);
                acc += static_cast<double>(f);
            }
        }
        out.samples[i] = acc / channels;
    }
    return out;
}

inline void write_wav(const std::string& path, const AudioBuffer& audio,
                      WavFormat fmt = WavFormat::Float32) {
    if (audio.sample_rate <= 0) throw std::invalid_argument("write_wav: sample_rate must be positive");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot create wav file: " + path);

    const uint32_t n = static_cast<uint32_t>(audio.samples.size());
    const uint16_t bytes_per = fmt == WavFormat::Pcm16 ? 2 : 4;
    const uint32_t data_size = n * bytes_per;

    out.write("RIFF", 4);
    detail::write_u32(out, 36 + data_size);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    detail::write_u32(out, 16);
    detail::write_u16(out, fmt == WavFormat::Pcm16 ? 1 : 3);
    detail::write_u16(out, 1);  // mono
    detail::write_u32(out, static_cast<uint32_t>(audio.sample_rate));
    detail::write_u32(out, static_cast<uint32_t>(audio.sample_rate) * bytes_per);
    detail::write_u16(out, bytes_per);
    detail::write_u16(out, bytes_per * 8);
    out.write("data", 4);
    detail::write_u32(out, data_size);

    if (fmt == WavFormat::Pcm16) {
        for (uint32_t i = 0; i < n; ++i) {
            double v = std::clamp(audio.samples[i], -1.0, 1.0);
            int32_t q = static_cast<int32_t>(std::lrint(v * 32767.0));
            detail::write_u16(out, static_cast<uint16_t>(static_cast<int16_t>(q)));
        }
    } else {
        for (uint32_t i = 0; i < n; ++i) {
            float f = static_cast<float>(audio.samples[i]);
            uint32_t u;
            std::memcpy(&u, &f, 4);
            detail::write_u32(out, u);
        }
    }
    if (!out) throw std::runtime_error("failed writing wav file: " + path);
}

}  // namespace smwm
