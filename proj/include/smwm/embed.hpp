#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "smwm/audio.hpp"
#include "smwm/graph.hpp"
#include "smwm/msgcodec.hpp"
#include "smwm/nets.hpp"
#include "smwm/stft.hpp"
#include "smwm/tensor.hpp"

namespace smwm {

struct EmbedConfig {
    double alpha = 47.0;   // dB, hard lower bound on spectrogram SDR
    bool half_band = true; // confine the message below F/2
    double epsilon = 1e-12;

    void validate() const {
        if (alpha <= 0.0) throw std::invalid_argument("alpha must be positive");
        if (epsilon <= 0.0 || epsilon > 1e-6)
            throw std::invalid_argument("epsilon must be in (0, 1e-6]");
    }
};

struct EmbedResult {
    Spectrogram watermarked_spec;  // C' magnitude with the original phase
    Tensor watermark_term;         // W, non-positive
    double achieved_sdr = 0.0;     // dB
    int64_t clipped_bins = 0;      // bins where the ReLU clamped
};

// zero all bins with index >= floor(F/2); idempotent
inline Tensor half_band_mask(const Tensor& msg) {
    if (msg.rank() != 3 || msg.dim(0) != 1)
        throw std::invalid_argument("half_band_mask: want (1,F,T), got " + msg.shape_str());
    const int64_t F = msg.dim(1), T = msg.dim(2);
    Tensor out = msg;
    for (int64_t f = F / 2; f < F; ++f)
        for (int64_t t = 0; t < T; ++t) out.data[f * T + t] = 0.0;
    return out;
}

inline Tensor half_band_mask_tensor(int64_t F, int64_t T) {
    Tensor m({1, F, T}, 1.0);
    for (int64_t f = F / 2; f < F; ++f)
        for (int64_t t = 0; t < T; ++t) m.data[f * T + t] = 0.0;
    return m;
}

// W = -|raw| * (||C|| * 10^(-alpha/20)) / max(||raw||, eps)
inline Tensor scale_message(const Tensor& raw, const Tensor& carrier, const EmbedConfig& cfg) {
    cfg.validate();
    check_same_shape(raw, carrier, "scale_message");
    const double carrier_norm = carrier.l2_norm();
    if (carrier_norm == 0.0) throw std::invalid_argument("silent carrier cannot host watermark");
    const double target = carrier_norm * std::pow(10.0, -cfg.alpha / 20.0);
    const double raw_norm = raw.l2_norm();
    const double inv = target / std::max(raw_norm, cfg.epsilon);
    Tensor w(raw.shape);
    for (size_t i = 0; i < raw.numel(); ++i) w.data[i] = -std::abs(raw.data[i]) * inv;
    return w;
}

// C' = max(C + W, 0); counts clamped bins
inline std::pair<Tensor, int64_t> apply_watermark(const Tensor& carrier, const Tensor& w) {
    check_same_shape(carrier, w, "apply_watermark");
    for (double v : w.data)
        if (v > 0.0) throw std::invalid_argument("positive watermark violates phase constraint");
    Tensor out(carrier.shape);
    int64_t clipped = 0;
    for (size_t i = 0; i < carrier.numel(); ++i) {
        const double v = carrier.data[i] + w.data[i];
        if (v < 0.0) {
            out.data[i] = 0.0;
            ++clipped;
        } else {
            out.data[i] = v;
        }
    }
    return {std::move(out), clipped};
}

// Graph construction of the same pipeline, used by training. Returns the
// watermarked magnitude C' and the watermark term W as nodes.
struct EmbedNodes {
    graph::NodePtr carrier;      // constant C
    graph::NodePtr watermark;    // W
    graph::NodePtr watermarked;  // C' = relu(C + W)
};

inline EmbedNodes build_embed_graph(const ParamNodes& params, const NetConfig& net_cfg,
                                    const Tensor& carrier, const std::vector<int>& symbols,
                                    const EmbedConfig& cfg) {
    cfg.validate();
    using namespace graph;
    const int64_t F = carrier.dim(1), T = carrier.dim(2);
    NodePtr c = constant(carrier);
    NodePtr logc = log_compress(c, net_cfg.log_kappa);
    NodePtr me = nets::embed_message(params, net_cfg, symbols);
    NodePtr enc = nets::encode_carrier(params, net_cfg, logc);
    NodePtr h = concat({enc, logc, me}, 0);
    NodePtr raw = nets::decode_carrier(params, net_cfg, h);
    NodePtr masked = cfg.half_band ? mask(raw, half_band_mask_tensor(F, T)) : raw;

    const double carrier_norm = carrier.l2_norm();
    if (carrier_norm == 0.0) throw std::invalid_argument("silent carrier cannot host watermark");
    const double target = carrier_norm * std::pow(10.0, -cfg.alpha / 20.0);

    NodePtr mag = abs_op(masked);
    NodePtr norm = l2_norm(mag);
    // max(norm, eps) with subgradient 0 on the flat side
    NodePtr clamped = unary_op(
        "clamp_min", norm,
        [eps = cfg.epsilon](double v) { return v > eps ? v : eps; },
        [eps = cfg.epsilon](double v, double) { return v > eps ? 1.0 : 0.0; });
    NodePtr w = neg(mul(mag, div(constant(Tensor::scalar(target)), clamped)));
    NodePtr cp = relu(add(c, w));
    return {c, w, cp};
}

// Full embedding pipeline: stft -> frame message -> nets -> mask -> scale ->
// relu -> istft with the original phase. Output keeps the input length; the
// trailing samples past the frame grid are passed through unchanged.
inline std::pair<AudioBuffer, EmbedResult> embed(WatermarkModel& model, const AudioBuffer& audio,
                                                 const MessageFrame& message,
                                                 const EmbedConfig& cfg) {
    cfg.validate();
    message.validate();
    const StftConfig& profile = model.stft_profile;
    const int lf = message.frame_length();
    const int T = profile.frame_count(audio.samples.size());
    if (T < lf) {
        const double min_seconds =
            static_cast<double>((lf - 1) * profile.hop_length + profile.window_length) /
            audio.sample_rate;
        throw std::invalid_argument("audio too short: need at least " +
                                    std::to_string(min_seconds) + " s for one repetition");
    }

    Spectrogram spec = stft(audio, profile);
    const std::vector<int> symbols = frame_and_repeat(message, T);

    Tensor carrier({1, static_cast<int64_t>(spec.bins), static_cast<int64_t>(spec.frames)});
    carrier.data = spec.magnitude;

    auto params = make_param_nodes(model, false);
    auto nodes = build_embed_graph(params, model.config, carrier, symbols, cfg);

    EmbedResult result;
    result.watermark_term = nodes.watermark->value;
    auto [cp, clipped] = apply_watermark(carrier, result.watermark_term);
    result.clipped_bins = clipped;

    result.watermarked_spec = spec;
    result.watermarked_spec.magnitude = cp.data;
    result.achieved_sdr = spectrogram_sdr(spec, result.watermarked_spec);

    AudioBuffer reconstructed = istft(result.watermarked_spec, audio.sample_rate);
    AudioBuffer out = audio;
    for (size_t i = 0; i < reconstructed.samples.size(); ++i)
        out.samples[i] = reconstructed.samples[i];
    return {std::move(out), std::move(result)};
}

}  // namespace smwm
