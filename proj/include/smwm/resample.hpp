#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "smwm/audio.hpp"

namespace smwm {

namespace detail {

inline double sinc(double x) {
    if (std::abs(x) < 1e-12) return 1.0;
    const double px = 3.14159265358979323846 * x;
    return std::sin(px) / px;
}

// Blackman window over [-half, half]
inline double taper(double x, double half) {
    const double u = (x / half + 1.0) * 0.5;  // 0..1
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    return 0.42 - 0.5 * std::cos(kTwoPi * u) + 0.08 * std::cos(2.0 * kTwoPi * u);
}

}  // namespace detail

// Band-limited resampling with a 64-tap windowed-sinc kernel.
// Output length = round(len * target / source).
inline AudioBuffer resample(const AudioBuffer& audio, int target_rate) {
    if (target_rate <= 0) throw std::invalid_argument("target rate must be positive");
    if (audio.sample_rate <= 0) throw std::invalid_argument("source rate must be positive");
    if (target_rate == audio.sample_rate) return audio;

    const double ratio = static_cast<double>(target_rate) / audio.sample_rate;
    const size_t in_len = audio.samples.size();
    const size_t out_len = static_cast<size_t>(std::llround(static_cast<double>(in_len) * ratio));

    AudioBuffer out;
    out.sample_rate = target_rate;
    out.samples.assign(out_len, 0.0);
    if (in_len == 0) return out;

    constexpr int kTaps = 64;
    const double cutoff = 0.9 * 0.5 * std::min(1.0, ratio);  // cycles per input sample
    const double half_width = (kTaps / 2) / std::min(1.0, ratio);

    for (size_t m = 0; m < out_len; ++m) {
        const double center = static_cast<double>(m) / ratio;
        const long lo = static_cast<long>(std::ceil(center - half_width));
        const long hi = static_cast<long>(std::floor(center + half_width));
        double acc = 0.0;
        for (long k = std::max(0L, lo); k <= std::min(static_cast<long>(in_len) - 1, hi); ++k) {
            const double d = static_cast<double>(k) - center;
            acc += audio.samples[k] * 2.0 * cutoff * detail::sinc(2.0 * cutoff * d) *
                   detail::taper(d, half_width);
        }
        out.samples[m] = acc;
    }
    return out;
}

}  // namespace smwm
