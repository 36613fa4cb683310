#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "smwm/audio.hpp"
#include "smwm/rng.hpp"

namespace smwm {

// Synthetic clips: a few tones, usually a chirp, and a low-passed noise floor.
// The noise floor keeps every frequency bin alive so the carrier can host a
// watermark anywhere.
inline AudioBuffer synth_clip(Rng& rng, double seconds, int sample_rate) {
    const size_t n = static_cast<size_t>(seconds * sample_rate);
    AudioBuffer out;
    out.sample_rate = sample_rate;
    out.samples.assign(n, 0.0);
    const double nyquist = sample_rate / 2.0;

    const int tones = rng.uniform_int(2, 5);
    for (int k = 0; k < tones; ++k) {
        const double f = rng.uniform(100.0, 0.75 * nyquist);
        const double a = rng.uniform(0.05, 0.3);
        const double ph = rng.uniform(0.0, 6.283185307179586);
        for (size_t i = 0; i < n; ++i)
            out.samples[i] += a * std::sin(6.283185307179586 * f * i / sample_rate + ph);
    }
    if (rng.uniform() < 0.7) {
        const double f0 = rng.uniform(100.0, 0.4 * nyquist);
        const double f1 = rng.uniform(200.0, 0.9 * nyquist);
        const double a = rng.uniform(0.05, 0.2);
        const double dur = static_cast<double>(n) / sample_rate;
        for (size_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) / sample_rate;
            out.samples[i] += a * std::sin(6.283185307179586 * (f0 * t + (f1 - f0) / (2 * dur) * t * t));
        }
    }
    // one-pole low-passed noise floor
    const double cutoff = rng.uniform(0.25 * nyquist, 0.9 * nyquist);
    const double pole = std::exp(-6.283185307179586 * cutoff / sample_rate);
    const double noise_amp = rng.uniform(0.01, 0.05);
    double acc = 0.0, energy = 0.0;
    std::vector<double> noise(n);
    for (size_t i = 0; i < n; ++i) {
        acc = (1.0 - pole) * rng.normal() + pole * acc;
        noise[i] = acc;
        energy += acc * acc;
    }
    const double noise_rms = std::sqrt(energy / n);
    if (noise_rms > 0)
        for (size_t i = 0; i < n; ++i) out.samples[i] += noise_amp * noise[i] / noise_rms;

    double peak = 0.0;
    for (double v : out.samples) peak = std::max(peak, std::abs(v));
    if (peak > 0)
        for (double& v : out.samples) v *= 0.5 / peak;
    return out;
}

// Writes `count` clips as clip_00000.wav ... into dir.
inline std::vector<std::string> write_synth_dataset(const std::string& dir, int count,
                                                    double clip_seconds, int sample_rate,
                                                    uint64_t seed) {
    std::filesystem::create_directories(dir);
    std::vector<std::string> paths;
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "clip_%05d.wav", i);
        const std::string path = dir + "/" + name;
        AudioBuffer clip = synth_clip(rng, clip_seconds, sample_rate);
        write_wav(path, clip, WavFormat::Float32);
        paths.push_back(path);
    }
    return paths;
}

}  // namespace smwm
