#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "smwm/fft.hpp"
#include "smwm/resample.hpp"
#include "smwm/rng.hpp"
#include "smwm/stft.hpp"

using namespace smwm;

namespace {

AudioBuffer random_audio(size_t n, int rate, uint64_t seed) {
    Rng rng(seed);
    AudioBuffer a;
    a.sample_rate = rate;
    a.samples.resize(n);
    for (double& v : a.samples) v = rng.uniform(-1.0, 1.0);
    return a;
}

AudioBuffer sine(double freq, double seconds, int rate, double amp = 1.0) {
    AudioBuffer a;
    a.sample_rate = rate;
    a.samples.resize(static_cast<size_t>(seconds * rate));
    for (size_t i = 0; i < a.samples.size(); ++i)
        a.samples[i] = amp * std::sin(2.0 * M_PI * freq * i / rate);
    return a;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
    const size_t n = std::min(a.size(), b.size());
    double ab = 0, aa = 0, bb = 0;
    for (size_t i = 0; i < n; ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("rfft/irfft round trip") {
    Rng rng(7);
    std::vector<double> x(1024);
    for (double& v : x) v = rng.uniform(-1, 1);
    auto spec = rfft(x);
    auto back = irfft(spec, x.size());
    for (size_t i = 0; i < x.size(); ++i) REQUIRE(back[i] == Catch::Approx(x[i]).margin(1e-12));
}

TEST_CASE("stft of a bin-centered sine concentrates at that bin") {
    const StftConfig cfg = StftConfig::profile_16k();
    const int k = 100;
    const double freq = static_cast<double>(k) * 16000.0 / cfg.fft_size;
    AudioBuffer a = sine(freq, 1.0, 16000);
    Spectrogram spec = stft(a, cfg);
    for (int t = 0; t < spec.frames; ++t) {
        double total = 0.0, near = 0.0;
        for (int f = 0; f < spec.bins; ++f) {
            const double e = spec.mag(f, t) * spec.mag(f, t);
            total += e;
            if (std::abs(f - k) <= 1) near += e;
        }
        REQUIRE(near / total >= 0.99);
    }
}

TEST_CASE("stft of zeros is zero") {
    const StftConfig cfg = StftConfig::profile_16k();
    AudioBuffer a;
    a.sample_rate = 16000;
    a.samples.assign(cfg.window_length, 0.0);
    Spectrogram spec = stft(a, cfg);
    REQUIRE(spec.frames == 1);
    for (double m : spec.magnitude) REQUIRE(m == 0.0);
}

TEST_CASE("frame count of a 12 s clip matches a direct count of full windows") {
    const StftConfig cfg = StftConfig::profile_16k();
    const size_t len = 192000;
    // independent oracle: count window placements directly
    int oracle = 0;
    for (size_t off = 0; off + cfg.window_length <= len; off += cfg.hop_length) ++oracle;
    AudioBuffer a = random_audio(len, 16000, 3);
    Spectrogram spec = stft(a, cfg);
    REQUIRE(spec.frames == oracle);
    REQUIRE(spec.frames == 186);
    REQUIRE(spec.bins == 1025);
}

TEST_CASE("stft rejects too-short input") {
    const StftConfig cfg = StftConfig::profile_16k();
    AudioBuffer a = random_audio(cfg.window_length - 1, 16000, 4);
    REQUIRE_THROWS_WITH(stft(a, cfg), Catch::Matchers::ContainsSubstring("too short"));
}

TEST_CASE("istft(stft(x)) reconstructs the interior") {
    const StftConfig cfg = StftConfig::profile_16k();
    for (uint64_t seed : {1, 2, 3}) {
        AudioBuffer a = random_audio(cfg.window_length * 6, 16000, seed);
        Spectrogram spec = stft(a, cfg);
        AudioBuffer back = istft(spec, a.sample_rate);
        REQUIRE(back.samples.size() == spec.span());
        double max_err = 0.0;
        for (size_t i = cfg.hop_length; i + cfg.hop_length < back.samples.size(); ++i)
            max_err = std::max(max_err, std::abs(back.samples[i] - a.samples[i]));
        REQUIRE(max_err < 1e-6);
    }
}

TEST_CASE("istft of zero magnitude is silence") {
    const StftConfig cfg = StftConfig::profile_16k();
    AudioBuffer a = random_audio(cfg.window_length * 4, 16000, 9);
    Spectrogram spec = stft(a, cfg);
    for (double& m : spec.magnitude) m = 0.0;
    AudioBuffer out = istft(spec, 16000);
    for (double v : out.samples) REQUIRE(std::abs(v) < 1e-12);
}

TEST_CASE("magnitude of stft(x) with phase of stft(x) reconstructs x") {
    const StftConfig cfg = StftConfig::profile_16k();
    AudioBuffer x = random_audio(cfg.window_length * 4, 16000, 11);
    Spectrogram sx = stft(x, cfg);
    Spectrogram mixed = sx;
    mixed.phase = stft(x, cfg).phase;
    AudioBuffer back = istft(mixed, 16000);
    for (size_t i = cfg.hop_length; i + cfg.hop_length < back.samples.size(); ++i)
        REQUIRE(back.samples[i] == Catch::Approx(x.samples[i]).margin(1e-9));
}

TEST_CASE("parseval consistency per windowed frame") {
    const StftConfig cfg = StftConfig::profile_16k();
    AudioBuffer a = random_audio(cfg.window_length * 5, 16000, 13);
    Spectrogram spec = stft(a, cfg);
    const auto window = make_window(cfg.window, cfg.window_length);
    // spectrogram energy with hermitian weights == N * windowed time energy
    double spec_energy = 0.0;
    for (int t = 0; t < spec.frames; ++t)
        for (int f = 0; f < spec.bins; ++f) {
            const double weight = (f == 0 || f == spec.bins - 1) ? 1.0 : 2.0;
            spec_energy += weight * spec.mag(f, t) * spec.mag(f, t);
        }
    double time_energy = 0.0;
    for (int t = 0; t < spec.frames; ++t)
        for (int i = 0; i < cfg.window_length; ++i) {
            const double v = a.samples[t * cfg.hop_length + i] * window[i];
            time_energy += v * v;
        }
    REQUIRE(spec_energy / (cfg.fft_size * time_energy) == Catch::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("spectrogram_sdr basics") {
    const StftConfig cfg = StftConfig::profile_16k();
    AudioBuffer a = random_audio(cfg.window_length * 4, 16000, 17);
    Spectrogram c = stft(a, cfg);

    SECTION("identical spectrograms give +infinity") {
        REQUIRE(std::isinf(spectrogram_sdr(c, c)));
    }
    SECTION("norm ratio 100:1 gives 40 dB") {
        // construct: reference with norm 100, error with norm 1
        Spectrogram ref = c, mod = c;
        const double n = frobenius_norm(c.magnitude);
        for (double& v : ref.magnitude) v *= 100.0 / n;
        mod.magnitude = ref.magnitude;
        // add a perturbation of norm exactly 1 along one bin
        mod.magnitude[42] += 1.0;
        REQUIRE(spectrogram_sdr(ref, mod) == Catch::Approx(40.0).margin(1e-9));
    }
    SECTION("scale invariance") {
        Spectrogram mod = c;
        for (size_t i = 0; i < mod.magnitude.size(); ++i)
            mod.magnitude[i] = std::max(0.0, mod.magnitude[i] * 0.97 + 1e-4);
        const double base = spectrogram_sdr(c, mod);
        Spectrogram c2 = c, mod2 = mod;
        for (double& v : c2.magnitude) v *= 3.7;
        for (double& v : mod2.magnitude) v *= 3.7;
        REQUIRE(spectrogram_sdr(c2, mod2) == Catch::Approx(base).margin(1e-9));
    }
    SECTION("shape mismatch and silent reference are errors") {
        AudioBuffer b = random_audio(cfg.window_length * 5, 16000, 18);
        Spectrogram other = stft(b, cfg);
        REQUIRE_THROWS_WITH(spectrogram_sdr(c, other),
                            Catch::Matchers::ContainsSubstring("shape"));
        Spectrogram silent = c;
        for (double& v : silent.magnitude) v = 0.0;
        REQUIRE_THROWS_WITH(spectrogram_sdr(silent, c),
                            Catch::Matchers::ContainsSubstring("silent"));
    }
}

TEST_CASE("resample identity at equal rates") {
    AudioBuffer a = sine(1000.0, 0.5, 16000, 0.8);
    AudioBuffer out = resample(a, 16000);
    REQUIRE(out.samples.size() == a.samples.size());
    for (size_t i = 0; i < a.samples.size(); ++i)
        REQUIRE(std::abs(out.samples[i] - a.samples[i]) < 1e-9);
}

TEST_CASE("resample down/up keeps in-band content") {
    AudioBuffer a = sine(1000.0, 1.0, 16000, 0.5);
    AudioBuffer down = resample(a, 8000);
    REQUIRE(down.samples.size() == a.samples.size() / 2);
    AudioBuffer back = resample(down, 16000);
    // ignore filter edges
    std::vector<double> mid_a(a.samples.begin() + 512, a.samples.end() - 512);
    std::vector<double> mid_b(back.samples.begin() + 512,
                              back.samples.begin() + 512 + mid_a.size());
    REQUIRE(correlation(mid_a, mid_b) > 0.999);
}

TEST_CASE("resample removes content above the new nyquist") {
    AudioBuffer a = sine(7000.0, 1.0, 16000, 0.5);
    AudioBuffer back = resample(resample(a, 8000), 16000);
    double e_in = 0, e_out = 0;
    for (size_t i = 512; i + 512 < back.samples.size(); ++i) {
        e_in += a.samples[i] * a.samples[i];
        e_out += back.samples[i] * back.samples[i];
    }
    REQUIRE(10.0 * std::log10(e_in / e_out) > 20.0);
}

TEST_CASE("resample rejects non-positive rates") {
    AudioBuffer a = sine(500.0, 0.1, 16000);
    REQUIRE_THROWS(resample(a, 0));
    REQUIRE_THROWS(resample(a, -8000));
}

TEST_CASE("property: band-limited content survives a resample round trip") {
    Rng rng(23);
    for (int trial = 0; trial < 4; ++trial) {
        const int target = 6000 + trial * 2000;
        const double keep_below = 0.9 * std::min(target, 16000) / 2.0;
        AudioBuffer a = sine(rng.uniform(200.0, keep_below), 1.0, 16000, 0.4);
        AudioBuffer back = resample(resample(a, target), 16000);
        std::vector<double> mid_a(a.samples.begin() + 1024, a.samples.end() - 1024);
        std::vector<double> mid_b(back.samples.begin() + 1024,
                                  back.samples.begin() + 1024 + mid_a.size());
        REQUIRE(correlation(mid_a, mid_b) > 0.99);
    }
}
