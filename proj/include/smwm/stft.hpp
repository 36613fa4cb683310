#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "smwm/audio.hpp"
#include "smwm/fft.hpp"

namespace smwm {

enum class WindowKind { Hann, Rect };

struct StftConfig {
    int fft_size = 2048;
    int window_length = 2048;
    int hop_length = 1024;
    WindowKind window = WindowKind::Hann;

    void validate() const {
        if (fft_size <= 0 || window_length <= 0 || hop_length <= 0)
            throw std::invalid_argument("stft config fields must be positive");
        if (window_length > fft_size)
            throw std::invalid_argument("window length exceeds fft size");
        if (hop_length > window_length)
            throw std::invalid_argument("hop length exceeds window length");
        if (!is_power_of_two(static_cast<size_t>(fft_size)))
            throw std::invalid_argument("fft size must be a power of two");
    }

    int bins() const { return fft_size / 2 + 1; }

    // Frame count under the no-padding convention (trailing partial frame dropped).
    int frame_count(size_t num_samples) const {
        if (num_samples < static_cast<size_t>(window_length)) return 0;
        return static_cast<int>((num_samples - window_length) / hop_length) + 1;
    }

    static StftConfig profile_16k() { return {2048, 2048, 1024, WindowKind::Hann}; }
    static StftConfig profile_44k() { return {4096, 4096, 2048, WindowKind::Hann}; }
};

inline std::vector<double> make_window(WindowKind kind, int length) {
    std::vector<double> w(length, 1.0);
    if (kind == WindowKind::Hann) {
        // periodic Hann; hop = length/2 sums to exactly 1
        constexpr double kTwoPi = 6.283185307179586476925286766559;
        for (int i = 0; i < length; ++i)
            w[i] = 0.5 - 0.5 * std::cos(kTwoPi * i / length);
    }
    return w;
}

// Magnitude + phase over a (bins x frames) grid, stored row-major with the
// frame axis contiguous.
struct Spectrogram {
    std::vector<double> magnitude;
    std::vector<double> phase;
    int bins = 0;
    int frames = 0;
    StftConfig config;

    double& mag(int f, int t) { return magnitude[static_cast<size_t>(f) * frames + t]; }
    double mag(int f, int t) const { return magnitude[static_cast<size_t>(f) * frames + t]; }
    double& ph(int f, int t) { return phase[static_cast<size_t>(f) * frames + t]; }
    double ph(int f, int t) const { return phase[static_cast<size_t>(f) * frames + t]; }

    // Number of samples the frame grid spans.
    size_t span() const {
        return frames == 0 ? 0
                           : static_cast<size_t>(frames - 1) * config.hop_length + config.window_length;
    }
};

inline Spectrogram stft(const AudioBuffer& audio, const StftConfig& cfg) {
    cfg.validate();
    if (audio.samples.empty() || audio.samples.size() < static_cast<size_t>(cfg.window_length))
        throw std::invalid_argument("input too short");

    const int T = cfg.frame_count(audio.samples.size());
    const int F = cfg.bins();
    Spectrogram spec;
    spec.bins = F;
    spec.frames = T;
    spec.config = cfg;
    spec.magnitude.assign(static_cast<size_t>(F) * T, 0.0);
    spec.phase.assign(static_cast<size_t>(F) * T, 0.0);

    const std::vector<double> window = make_window(cfg.window, cfg.window_length);
    std::vector<double> frame(cfg.fft_size, 0.0);
    for (int t = 0; t < T; ++t) {
        const size_t off = static_cast<size_t>(t) * cfg.hop_length;
        for (int i = 0; i < cfg.window_length; ++i)
            frame[i] = audio.samples[off + i] * window[i];
        for (int i = cfg.window_length; i < cfg.fft_size; ++i) frame[i] = 0.0;
        auto bins = rfft(frame);
        for (int k = 0; k < F; ++k) {
            spec.mag(k, t) = std::abs(bins[k]);
            spec.ph(k, t) = std::arg(bins[k]);  // in (-pi, pi]
        }
    }
    return spec;
}

// Overlap-add reconstruction normalized by the summed analysis window.
// Output covers the frame span; samples the window grid cannot reach
// (window weight ~0 at the very first sample of a periodic Hann) come out 0.
inline AudioBuffer istft(const Spectrogram& spec, int sample_rate) {
    spec.config.validate();
    if (spec.frames <= 0 || spec.bins != spec.config.bins())
        throw std::invalid_argument("malformed spectrogram");

    const StftConfig& cfg = spec.config;
    const size_t span = spec.span();
    std::vector<double> acc(span, 0.0), wsum(span, 0.0);
    const std::vector<double> window = make_window(cfg.window, cfg.window_length);

    std::vector<std::complex<double>> bins(spec.bins);
    for (int t = 0; t < spec.frames; ++t) {
        for (int k = 0; k < spec.bins; ++k)
            bins[k] = std::polar(spec.mag(k, t), spec.ph(k, t));
        auto frame = irfft(bins, cfg.fft_size);
        const size_t off = static_cast<size_t>(t) * cfg.hop_length;
        for (int i = 0; i < cfg.window_length; ++i) {
            acc[off + i] += frame[i];
            wsum[off + i] += window[i];
        }
    }

    AudioBuffer out;
    out.sample_rate = sample_rate;
    out.samples.resize(span);
    for (size_t i = 0; i < span; ++i) {
        if (wsum[i] > 1e-12) {
            out.samples[i] = acc[i] / wsum[i];
        } else if (i == 0 || i + 1 == span) {
            out.samples[i] = 0.0;  // unreachable boundary sample of a tapered window
        } else {
            throw std::runtime_error("zero window-sum inside reconstruction span");
        }
    }
    return out;
}

inline double frobenius_norm(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

// SDR between magnitude spectrograms: 20*log10(||C|| / ||C' - C||).
inline double spectrogram_sdr(const Spectrogram& original, const Spectrogram& modified) {
    if (original.bins != modified.bins || original.frames != modified.frames)
        throw std::invalid_argument("spectrogram shape mismatch");
    double ref = 0.0, err = 0.0;
    for (size_t i = 0; i < original.magnitude.size(); ++i) {
        const double c = original.magnitude[i];
        const double d = modified.magnitude[i] - c;
        ref += c * c;
        err += d * d;
    }
    if (ref == 0.0) throw std::invalid_argument("silent reference");
    if (err == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(ref / err);
}

}  // namespace smwm
