#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "smwm/biquad.hpp"
#include "smwm/graph.hpp"
#include "smwm/stft.hpp"

namespace smwm::graph {

// ---------------------------------------------------------------------------
// Differentiable STFT machinery. The transforms are linear in the magnitude
// (phase held constant), so backward rules are the exact adjoints, computed
// with the same FFT primitive. Verified against finite differences in tests.
// ---------------------------------------------------------------------------

struct StftContext {
    StftConfig cfg;
    Tensor phase;  // (1,F,T), constant
    std::vector<double> window;
    std::vector<double> wsum;  // overlap-added analysis window over the span

    StftContext(const StftConfig& c, Tensor ph) : cfg(c), phase(std::move(ph)) {
        cfg.validate();
        window = make_window(cfg.window, cfg.window_length);
        const int64_t T = phase.dim(2);
        const size_t span = static_cast<size_t>(T - 1) * cfg.hop_length + cfg.window_length;
        wsum.assign(span, 0.0);
        for (int64_t t = 0; t < T; ++t)
            for (int i = 0; i < cfg.window_length; ++i)
                wsum[t * cfg.hop_length + i] += window[i];
    }
};

// magnitude (1,F,T) with fixed phase -> time signal (span,)
inline NodePtr istft_mag(const NodePtr& mag, const std::shared_ptr<StftContext>& ctx) {
    const Tensor& m = mag->value;
    if (m.rank() != 3 || m.dim(0) != 1 || m.dim(1) != ctx->cfg.bins() ||
        !m.same_shape(ctx->phase))
        throw std::invalid_argument("istft_mag: magnitude/phase shape mismatch " + m.shape_str());
    const int64_t F = m.dim(1), T = m.dim(2);
    const int N = ctx->cfg.fft_size;
    const int win = ctx->cfg.window_length;
    const int hop = ctx->cfg.hop_length;
    const size_t span = ctx->wsum.size();

    std::vector<double> acc(span, 0.0);
    std::vector<std::complex<double>> bins(F);
    for (int64_t t = 0; t < T; ++t) {
        for (int64_t k = 0; k < F; ++k)
            bins[k] = std::polar(m.data[k * T + t], ctx->phase.data[k * T + t]);
        auto frame = irfft(bins, N);
        const size_t off = static_cast<size_t>(t) * hop;
        for (int i = 0; i < win; ++i) acc[off + i] += frame[i];
    }
    Tensor out({static_cast<int64_t>(span)});
    for (size_t i = 0; i < span; ++i)
        out.data[i] = ctx->wsum[i] > 1e-12 ? acc[i] / ctx->wsum[i] : 0.0;

    return make_node("istft_mag", std::move(out), {mag}, [ctx, F, T, N, win, hop](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        const size_t span = ctx->wsum.size();
        std::vector<double> ghat(span);
        for (size_t i = 0; i < span; ++i)
            ghat[i] = ctx->wsum[i] > 1e-12 ? n.grad.data[i] / ctx->wsum[i] : 0.0;
        Tensor g({1, F, T});
        std::vector<double> chunk(N, 0.0);
        for (int64_t t = 0; t < T; ++t) {
            const size_t off = static_cast<size_t>(t) * hop;
            for (int i = 0; i < win; ++i) chunk[i] = ghat[off + i];
            for (int i = win; i < N; ++i) chunk[i] = 0.0;
            auto spec = rfft(chunk);
            for (int64_t k = 0; k < F; ++k) {
                const double weight = (k == 0 || k == F - 1) ? 1.0 : 2.0;
                const double phi = ctx->phase.data[k * T + t];
                // sum_n chunk[n] * cos(2*pi*k*n/N + phi) = Re(e^{i phi} conj(rfft))
                const std::complex<double> e(std::cos(phi), std::sin(phi));
                g.data[k * T + t] = weight / N * (e * std::conj(spec[k])).real();
            }
        }
        p.accumulate(g);
    });
}

// time signal -> magnitude spectrogram (1,F,T); no-padding framing
inline NodePtr stft_mag(const NodePtr& x, const StftConfig& cfg) {
    cfg.validate();
    const Tensor& xs = x->value;
    if (xs.rank() != 1) throw std::invalid_argument("stft_mag: rank-1 input required");
    const int T = cfg.frame_count(xs.numel());
    if (T <= 0) throw std::invalid_argument("input too short");
    const int64_t F = cfg.bins();
    const int N = cfg.fft_size;
    const int win = cfg.window_length;
    const int hop = cfg.hop_length;
    const auto window = make_window(cfg.window, win);

    Tensor out({1, F, T});
    // cache complex bins for the magnitude backward
    auto cache = std::make_shared<std::vector<std::complex<double>>>(
        static_cast<size_t>(F) * T);
    std::vector<double> frame(N, 0.0);
    for (int t = 0; t < T; ++t) {
        const size_t off = static_cast<size_t>(t) * hop;
        for (int i = 0; i < win; ++i) frame[i] = xs.data[off + i] * window[i];
        for (int i = win; i < N; ++i) frame[i] = 0.0;
        auto bins = rfft(frame);
        for (int64_t k = 0; k < F; ++k) {
            (*cache)[k * T + t] = bins[k];
            out.data[k * T + t] = std::abs(bins[k]);
        }
    }
    const int64_t len = static_cast<int64_t>(xs.numel());
    return make_node("stft_mag", std::move(out), {x},
                     [cache, window, F, T, N, win, hop, len](Node& n) {
                         Node& p = *n.parents[0];
                         if (!p.requires_grad) return;
                         Tensor g({len});
                         std::vector<std::complex<double>> u(F);
                         for (int t = 0; t < T; ++t) {
                             for (int64_t k = 0; k < F; ++k) {
                                 const std::complex<double> z = (*cache)[k * T + t];
                                 const double m = std::abs(z);
                                 u[k] = m > 0.0 ? n.grad.data[k * T + t] * z / m
                                                : std::complex<double>(0.0, 0.0);
                             }
                             auto chunk = irfft(u, N);  // includes 1/N; undo below
                             const size_t off = static_cast<size_t>(t) * hop;
                             for (int i = 0; i < win; ++i)
                                 g.data[off + i] += window[i] * chunk[i] * N;
                         }
                         p.accumulate(g);
                     });
}

// LTI biquad cascade; adjoint = reverse, filter, reverse (zero initial state)
inline NodePtr iir_filter(const NodePtr& x, const std::vector<Biquad>& cascade) {
    if (x->value.rank() != 1) throw std::invalid_argument("iir_filter: rank-1 input required");
    std::vector<double> y = x->value.data;
    for (const auto& bq : cascade) bq.process(y);
    Tensor out(x->value.shape);
    out.data = std::move(y);
    return make_node("iir_filter", std::move(out), {x}, [cascade](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        std::vector<double> g = n.grad.data;
        std::reverse(g.begin(), g.end());
        for (const auto& bq : cascade) bq.process(g);
        std::reverse(g.begin(), g.end());
        Tensor gt(p.value.shape);
        gt.data = std::move(g);
        p.accumulate(gt);
    });
}

}  // namespace smwm::graph
