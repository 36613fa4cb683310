#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace smwm {

inline bool is_power_of_two(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT. sign = -1 forward, +1 inverse (unscaled).
inline void fft_inplace(std::vector<std::complex<double>>& a, int sign) {
    const size_t n = a.size();
    if (!is_power_of_two(n)) throw std::invalid_argument("fft size must be a power of two");
    // bit-reversal permutation
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * kTwoPi / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k];
                std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// Real-input forward transform: N real samples -> N/2+1 complex bins.
inline std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
    const size_t n = x.size();
    std::vector<std::complex<double>> buf(n);
    for (size_t i = 0; i < n; ++i) buf[i] = {x[i], 0.0};
    fft_inplace(buf, -1);
    buf.resize(n / 2 + 1);
    return buf;
}

// Inverse of rfft: N/2+1 bins -> N real samples (with 1/N scaling).
inline std::vector<double> irfft(const std::vector<std::complex<double>>& spec, size_t n) {
    if (spec.size() != n / 2 + 1) throw std::invalid_argument("irfft: bin count mismatch");
    std::vector<std::complex<double>> buf(n);
    for (size_t k = 0; k <= n / 2; ++k) buf[k] = spec[k];
    for (size_t k = n / 2 + 1; k < n; ++k) buf[k] = std::conj(spec[n - k]);
    fft_inplace(buf, +1);
    std::vector<double> out(n);
    const double inv = 1.0 / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) out[i] = buf[i].real() * inv;
    return out;
}

}  // namespace smwm
