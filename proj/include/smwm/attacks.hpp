#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <unistd.h>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "smwm/audio.hpp"
#include "smwm/biquad.hpp"
#include "smwm/graph_dsp.hpp"
#include "smwm/resample.hpp"
#include "smwm/rng.hpp"
#include "smwm/stft.hpp"

namespace smwm {

enum class AttackKind { GaussianNoise, Crop, Eq, Mix, Quantize, TimeJitter, Resample, Codec };

inline const char* attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::GaussianNoise: return "gn";
        case AttackKind::Crop: return "crop";
        case AttackKind::Eq: return "eq";
        case AttackKind::Mix: return "mix";
        case AttackKind::Quantize: return "quantize";
        case AttackKind::TimeJitter: return "jitter";
        case AttackKind::Resample: return "resample";
        case AttackKind::Codec: return "codec";
    }
    return "?";
}

struct AttackSpec {
    AttackKind kind = AttackKind::GaussianNoise;
    double snr_db = 40.0;           // gn
    double fraction = 0.5;          // crop
    double eq_gain_db = 15.0;       // eq
    std::vector<double> eq_centers_hz = {35.0, 200.0, 1000.0, 4000.0};
    std::string mix_path;           // mix interferer
    double mix_level_db = -15.0;
    int quantize_bits = 16;
    double jitter_rate = 1e-3;      // per sample (evaluation) or per frame (training)
    int resample_target_hz = 8000;
    std::string codec_format = "simulated";  // mp3 | ogg | aac | simulated
    int codec_bitrate_kbps = 64;
    uint64_t seed = 1;

    std::string describe() const {
        std::ostringstream os;
        os << attack_kind_name(kind) << ":";
        switch (kind) {
            case AttackKind::GaussianNoise: os << "snr=" << snr_db; break;
            case AttackKind::Crop: os << "fraction=" << fraction; break;
            case AttackKind::Eq: os << "gain=" << eq_gain_db; break;
            case AttackKind::Mix: os << "path=" << mix_path << ",level=" << mix_level_db; break;
            case AttackKind::Quantize: os << "bits=" << quantize_bits; break;
            case AttackKind::TimeJitter: os << "rate=" << jitter_rate; break;
            case AttackKind::Resample: os << "target=" << resample_target_hz; break;
            case AttackKind::Codec:
                os << "format=" << codec_format << ",bitrate=" << codec_bitrate_kbps;
                break;
        }
        os << ",seed=" << seed;
        return os.str();
    }
};

// grammar: kind:key=val,key=val
inline AttackSpec parse_attack_spec(const std::string& text) {
    const auto colon = text.find(':');
    const std::string kind = text.substr(0, colon);
    AttackSpec spec;
    if (kind == "gn")
        spec.kind = AttackKind::GaussianNoise;
    else if (kind == "crop")
        spec.kind = AttackKind::Crop;
    else if (kind == "eq")
        spec.kind = AttackKind::Eq;
    else if (kind == "mix")
        spec.kind = AttackKind::Mix;
    else if (kind == "quantize" || kind == "q")
        spec.kind = AttackKind::Quantize;
    else if (kind == "jitter" || kind == "tj")
        spec.kind = AttackKind::TimeJitter;
    else if (kind == "resample" || kind == "rs")
        spec.kind = AttackKind::Resample;
    else if (kind == "codec")
        spec.kind = AttackKind::Codec;
    else
        throw std::invalid_argument(
            "unknown attack kind '" + kind +
            "' (valid: gn, crop, eq, mix, quantize, jitter, resample, codec)");

    if (colon == std::string::npos) return spec;
    std::istringstream rest(text.substr(colon + 1));
    std::string item;
    while (std::getline(rest, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("bad attack parameter '" + item + "' (want key=val)");
        const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
        if (key == "snr")
            spec.snr_db = std::stod(val);
        else if (key == "fraction")
            spec.fraction = std::stod(val);
        else if (key == "gain")
            spec.eq_gain_db = std::stod(val);
        else if (key == "path")
            spec.mix_path = val;
        else if (key == "level")
            spec.mix_level_db = std::stod(val);
        else if (key == "bits")
            spec.quantize_bits = std::stoi(val);
        else if (key == "rate")
            spec.jitter_rate = std::stod(val);
        else if (key == "target")
            spec.resample_target_hz = std::stoi(val);
        else if (key == "format")
            spec.codec_format = val;
        else if (key == "bitrate")
            spec.codec_bitrate_kbps = std::stoi(val);
        else if (key == "seed")
            spec.seed = std::stoull(val);
        else
            throw std::invalid_argument("unknown attack parameter key '" + key + "'");
    }
    if (spec.kind == AttackKind::Crop && (spec.fraction <= 0.0 || spec.fraction >= 1.0))
        throw std::invalid_argument("crop fraction must be in (0,1)");
    return spec;
}

// ---------------------------------------------------------------------------
// float16 cast used by the Q attack (round-to-nearest-even)
// ---------------------------------------------------------------------------
namespace detail {

inline uint16_t float_to_half(float f) {
    uint32_t x;
    std::memcpy(&x, &f, 4);
    const uint32_t sign = (x >> 16) & 0x8000u;
    int32_t exp = static_cast<int32_t>((x >> 23) & 0xff) - 127 + 15;
    uint32_t mant = x & 0x7fffffu;
    if (exp >= 31) return static_cast<uint16_t>(sign | 0x7c00u);  // overflow -> inf
    if (exp <= 0) {
        if (exp < -10) return static_cast<uint16_t>(sign);  // underflow -> 0
        mant |= 0x800000u;
        const int shift = 14 - exp;
        uint32_t half_mant = mant >> shift;
        const uint32_t rem = mant & ((1u << shift) - 1);
        const uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half_mant & 1))) ++half_mant;
        return static_cast<uint16_t>(sign | half_mant);
    }
    uint32_t half = sign | (static_cast<uint32_t>(exp) << 10) | (mant >> 13);
    const uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (half & 1))) ++half;
    return static_cast<uint16_t>(half);
}

inline float half_to_float(uint16_t h) {
    const uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
    uint32_t exp = (h >> 10) & 0x1f;
    uint32_t mant = h & 0x3ffu;
    uint32_t x;
    if (exp == 0) {
        if (mant == 0) {
            x = sign;
        } else {
            exp = 127 - 15 + 1;
            while ((mant & 0x400u) == 0) {
                mant <<= 1;
                --exp;
            }
            mant &= 0x3ffu;
            x = sign | (exp << 23) | (mant << 13);
        }
    } else if (exp == 31) {
        x = sign | 0x7f800000u | (mant << 13);
    } else {
        x = sign | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    float f;
    std::memcpy(&f, &x, 4);
    return f;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// deterministic in-repo lossy codec: STFT, log-magnitude quantization with a
// step inversely proportional to bitrate, band cutoff growing with bitrate,
// ISTFT with the original phase. Zero delay, length preserving.
// ---------------------------------------------------------------------------
inline double simulated_codec_cutoff_fraction(int bitrate_kbps) {
    return std::min(1.0, 0.4 + bitrate_kbps / 420.0);
}

inline AudioBuffer simulated_codec(const AudioBuffer& audio, int bitrate_kbps) {
    if (bitrate_kbps <= 0) throw std::invalid_argument("bitrate must be positive");
    StftConfig cfg{1024, 1024, 512, WindowKind::Hann};
    const size_t len = audio.samples.size();
    AudioBuffer padded = audio;
    if (padded.samples.size() < static_cast<size_t>(cfg.window_length))
        padded.samples.resize(cfg.window_length, 0.0);
    // extend so the frame grid covers the whole signal
    const int t_need = static_cast<int>(
        (padded.samples.size() - cfg.window_length + cfg.hop_length - 1) / cfg.hop_length) + 1;
    const size_t span = static_cast<size_t>(t_need - 1) * cfg.hop_length + cfg.window_length;
    padded.samples.resize(std::max(padded.samples.size(), span), 0.0);

    Spectrogram spec = stft(padded, cfg);
    const double step_db = 96.0 / bitrate_kbps;
    const int cutoff_bin =
        static_cast<int>(simulated_codec_cutoff_fraction(bitrate_kbps) * spec.bins);
    for (int f = 0; f < spec.bins; ++f)
        for (int t = 0; t < spec.frames; ++t) {
            if (f >= cutoff_bin) {
                spec.mag(f, t) = 0.0;
                continue;
            }
            const double m = spec.mag(f, t);
            if (m <= 1e-12) {
                spec.mag(f, t) = 0.0;
                continue;
            }
            const double db = 20.0 * std::log10(m);
            spec.mag(f, t) = std::pow(10.0, std::round(db / step_db) * step_db / 20.0);
        }
    AudioBuffer out = istft(spec, audio.sample_rate);
    out.samples.resize(len, 0.0);
    return out;
}

// ---------------------------------------------------------------------------
// external codec subprocess client
// ---------------------------------------------------------------------------
struct CodecClient {
    std::string format = "simulated";  // mp3 | ogg | aac | simulated
    int bitrate_kbps = 64;
    std::string encode_template;  // placeholders {in} {out} {bitrate}
    std::string decode_template;
    int timeout_seconds = 60;

    static CodecClient for_format(const std::string& format, int bitrate) {
        CodecClient c;
        c.format = format;
        c.bitrate_kbps = bitrate;
        if (format == "simulated") return c;
        auto env_or = [](const char* name, const std::string& fallback) {
            const char* v = std::getenv(name);
            return v ? std::string(v) : fallback;
        };
        if (format == "mp3") {
            c.encode_template = env_or("SMWM_MP3_ENCODE",
                                       "ffmpeg -y -loglevel error -i {in} -b:a {bitrate}k -f mp3 {out}");
            c.decode_template = env_or("SMWM_MP3_DECODE", "ffmpeg -y -loglevel error -i {in} {out}");
        } else if (format == "ogg") {
            c.encode_template = env_or(
                "SMWM_OGG_ENCODE",
                "ffmpeg -y -loglevel error -i {in} -c:a libvorbis -b:a {bitrate}k -f ogg {out}");
            c.decode_template = env_or("SMWM_OGG_DECODE", "ffmpeg -y -loglevel error -i {in} {out}");
        } else if (format == "aac") {
            c.encode_template = env_or(
                "SMWM_AAC_ENCODE",
                "ffmpeg -y -loglevel error -i {in} -c:a aac -b:a {bitrate}k -f adts {out}");
            c.decode_template = env_or("SMWM_AAC_DECODE", "ffmpeg -y -loglevel error -i {in} {out}");
        } else {
            throw std::invalid_argument("unknown codec format: " + format);
        }
        return c;
    }
};

namespace detail {

inline std::string substitute(std::string tmpl, const std::string& in, const std::string& out,
                              int bitrate) {
    auto replace_all = [&](const std::string& key, const std::string& val) {
        size_t pos = 0;
        while ((pos = tmpl.find(key, pos)) != std::string::npos) {
            tmpl.replace(pos, key.size(), val);
            pos += val.size();
        }
    };
    replace_all("{in}", in);
    replace_all("{out}", out);
    replace_all("{bitrate}", std::to_string(bitrate));
    return tmpl;
}

inline std::string first_token(const std::string& cmd) {
    std::istringstream is(cmd);
    std::string tok;
    is >> tok;
    return tok;
}

inline bool binary_on_path(const std::string& name) {
    if (name.find('/') != std::string::npos) return std::filesystem::exists(name);
    const char* path = std::getenv("PATH");
    if (!path) return false;
    std::istringstream is(path);
    std::string dir;
    while (std::getline(is, dir, ':')) {
        if (!dir.empty() && std::filesystem::exists(dir + "/" + name)) return true;
    }
    return false;
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& suffix) {
        static std::atomic<uint64_t> counter{0};
        path = (std::filesystem::temp_directory_path() /
                ("smwm_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter.fetch_add(1)) + suffix))
                   .string();
    }
    ~TempFile() {
        std::error_code ec;
        std::filesystem::remove(path, ec);
    }
    TempFile(const TempFile&) = delete;
    TempFile& operator=(const TempFile&) = delete;
};

// best cross-correlation lag of y against x over [-max_lag, max_lag]
inline long best_lag(const std::vector<double>& x, const std::vector<double>& y, long max_lag) {
    long best = 0;
    double best_corr = -1.0;
    const long n = static_cast<long>(std::min(x.size(), y.size()));
    for (long lag = -max_lag; lag <= max_lag; ++lag) {
        double acc = 0.0, xx = 0.0, yy = 0.0;
        for (long i = 0; i < n; ++i) {
            const long j = i + lag;
            if (j < 0 || j >= static_cast<long>(y.size())) continue;
            acc += x[i] * y[j];
            xx += x[i] * x[i];
            yy += y[j] * y[j];
        }
        const double denom = std::sqrt(xx * yy);
        const double corr = denom > 0.0 ? acc / denom : 0.0;
        if (corr > best_corr) {
            best_corr = corr;
            best = lag;
        }
    }
    return best;
}

}  // namespace detail

// Round trip through an external encoder/decoder pair (or the simulated
// codec), with codec delay compensated by cross-correlation and the output
// trimmed/padded to the input length.
inline AudioBuffer codec_roundtrip(const AudioBuffer& audio, const CodecClient& client) {
    if (client.format == "simulated") return simulated_codec(audio, client.bitrate_kbps);

    const std::string enc_bin = detail::first_token(client.encode_template);
    const std::string dec_bin = detail::first_token(client.decode_template);
    if (!detail::binary_on_path(enc_bin))
        throw std::runtime_error("codec binary not found: " + enc_bin);
    if (!detail::binary_on_path(dec_bin))
        throw std::runtime_error("codec binary not found: " + dec_bin);

    const std::string ext = client.format == "mp3" ? ".mp3"
                            : client.format == "ogg" ? ".ogg"
                                                     : ".aac";
    detail::TempFile in_wav(".wav"), packed(ext), out_wav(".wav");
    write_wav(in_wav.path, audio, WavFormat::Pcm16);

    const std::string enc_cmd =
        detail::substitute(client.encode_template, in_wav.path, packed.path, client.bitrate_kbps);
    if (std::system(enc_cmd.c_str()) != 0)
        throw std::runtime_error("codec encoder failed: " + enc_cmd);
    const std::string dec_cmd =
        detail::substitute(client.decode_template, packed.path, out_wav.path, client.bitrate_kbps);
    if (std::system(dec_cmd.c_str()) != 0)
        throw std::runtime_error("codec decoder failed: " + dec_cmd);

    AudioBuffer decoded = read_wav(out_wav.path);
    if (decoded.sample_rate != audio.sample_rate)
        decoded = resample(decoded, audio.sample_rate);

    const long max_lag = std::min<long>(audio.sample_rate / 5, 4096);
    const long lag = detail::best_lag(audio.samples, decoded.samples, max_lag);
    AudioBuffer out;
    out.sample_rate = audio.sample_rate;
    out.samples.assign(audio.samples.size(), 0.0);
    for (size_t i = 0; i < out.samples.size(); ++i) {
        const long j = static_cast<long>(i) + lag;
        if (j >= 0 && j < static_cast<long>(decoded.samples.size()))
            out.samples[i] = decoded.samples[j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// evaluation-time attacks on audio buffers
// ---------------------------------------------------------------------------
inline AudioBuffer apply_attack(const AudioBuffer& audio, const AttackSpec& spec) {
    Rng rng(spec.seed);
    switch (spec.kind) {
        case AttackKind::GaussianNoise: {
            AudioBuffer out = audio;
            const double sigma = rms(audio.samples) * std::pow(10.0, -spec.snr_db / 20.0);
            for (double& v : out.samples) v += sigma * rng.normal();
            return out;
        }
        case AttackKind::Crop: {
            const size_t n = audio.samples.size();
            const size_t cut = static_cast<size_t>(std::floor(spec.fraction * n));
            const size_t start = rng.next_below(n - cut + 1);
            AudioBuffer out;
            out.sample_rate = audio.sample_rate;
            out.samples.reserve(n - cut);
            out.samples.insert(out.samples.end(), audio.samples.begin(),
                               audio.samples.begin() + start);
            out.samples.insert(out.samples.end(), audio.samples.begin() + start + cut,
                               audio.samples.end());
            return out;
        }
        case AttackKind::Eq: {
            AudioBuffer out = audio;
            for (double fc : spec.eq_centers_hz) {
                if (fc >= audio.sample_rate / 2.0) continue;
                const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
                peaking_eq(fc, audio.sample_rate, 1.0, sign * spec.eq_gain_db).process(out.samples);
            }
            return out;
        }
        case AttackKind::Mix: {
            AudioBuffer interferer;
            try {
                interferer = read_wav(spec.mix_path);
            } catch (const std::exception& e) {
                throw std::runtime_error(std::string("interferer file unreadable: ") + e.what());
            }
            if (interferer.sample_rate != audio.sample_rate)
                interferer = resample(interferer, audio.sample_rate);
            const double target_rms = rms(audio.samples) * std::pow(10.0, spec.mix_level_db / 20.0);
            const double src_rms = rms(interferer.samples);
            const double gain = src_rms > 0.0 ? target_rms / src_rms : 0.0;
            AudioBuffer out = audio;
            if (!interferer.samples.empty())
                for (size_t i = 0; i < out.samples.size(); ++i)
                    out.samples[i] += gain * interferer.samples[i % interferer.samples.size()];
            return out;
        }
        case AttackKind::Quantize: {
            AudioBuffer out = audio;
            if (spec.quantize_bits == 16) {
                for (double& v : out.samples)
                    v = static_cast<double>(
                        detail::half_to_float(detail::float_to_half(static_cast<float>(v))));
            } else {
                const double scale = std::pow(2.0, spec.quantize_bits - 1);
                for (double& v : out.samples) v = std::round(v * scale) / scale;
            }
            return out;
        }
        case AttackKind::TimeJitter: {
            AudioBuffer out;
            out.sample_rate = audio.sample_rate;
            out.samples.reserve(audio.samples.size() + 16);
            for (double v : audio.samples) {
                const double u = rng.uniform();
                if (u < spec.jitter_rate) continue;  // drop
                out.samples.push_back(v);
                if (u > 1.0 - spec.jitter_rate) out.samples.push_back(v);  // duplicate
            }
            if (out.samples.empty()) out.samples.push_back(0.0);
            return out;
        }
        case AttackKind::Resample: {
            if (spec.resample_target_hz <= 0)
                throw std::invalid_argument("resample target must be positive");
            AudioBuffer down = resample(audio, spec.resample_target_hz);
            AudioBuffer back = resample(down, audio.sample_rate);
            back.samples.resize(audio.samples.size(), 0.0);
            return back;
        }
        case AttackKind::Codec: {
            return codec_roundtrip(audio,
                                   CodecClient::for_format(spec.codec_format, spec.codec_bitrate_kbps));
        }
    }
    throw std::logic_error("unhandled attack kind");
}

// uniform over the four training families per the training recipe
inline AttackSpec sample_training_attack(Rng& rng) {
    AttackSpec spec;
    spec.seed = rng.next_u64();
    switch (rng.uniform_int(0, 4)) {
        case 0:
            spec.kind = AttackKind::GaussianNoise;
            spec.snr_db = 40.0;
            break;
        case 1:
            spec.kind = AttackKind::TimeJitter;
            break;
        case 2:
            spec.kind = AttackKind::Eq;
            break;
        default: {
            spec.kind = AttackKind::Codec;
            const char* formats[3] = {"mp3", "ogg", "aac"};
            spec.codec_format = formats[rng.uniform_int(0, 3)];
            const int bitrates[3] = {64, 128, 256};
            spec.codec_bitrate_kbps = bitrates[rng.uniform_int(0, 3)];
            break;
        }
    }
    return spec;
}

// ---------------------------------------------------------------------------
// training-time attacks expressed on the compute graph
// ---------------------------------------------------------------------------
struct DiffAttackResult {
    graph::NodePtr node;         // attacked magnitude (1,F,T')
    std::vector<int> frame_map;  // identity unless jitter remapped frames
};

inline DiffAttackResult differentiable_attack(const graph::NodePtr& magnitude,
                                              const AttackSpec& spec,
                                              const std::shared_ptr<graph::StftContext>& ctx,
                                              int sample_rate) {
    using namespace graph;
    const int64_t T = magnitude->value.dim(2);
    DiffAttackResult out;
    out.frame_map.resize(T);
    for (int64_t t = 0; t < T; ++t) out.frame_map[t] = static_cast<int>(t);
    Rng rng(spec.seed);

    switch (spec.kind) {
        case AttackKind::GaussianNoise: {
            NodePtr x = istft_mag(magnitude, ctx);
            const double sigma = rms(x->value.data) * std::pow(10.0, -spec.snr_db / 20.0);
            Tensor noise(x->value.shape);
            for (double& v : noise.data) v = sigma * rng.normal();
            NodePtr noisy = add(x, constant(noise));
            out.node = stft_mag(noisy, ctx->cfg);
            return out;
        }
        case AttackKind::Eq: {
            NodePtr x = istft_mag(magnitude, ctx);
            std::vector<Biquad> cascade;
            for (double fc : spec.eq_centers_hz) {
                if (fc >= sample_rate / 2.0) continue;
                const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
                cascade.push_back(peaking_eq(fc, sample_rate, 1.0, sign * spec.eq_gain_db));
            }
            out.node = stft_mag(iir_filter(x, cascade), ctx->cfg);
            return out;
        }
        case AttackKind::TimeJitter: {
            // frame-level drop/duplicate; sample-level jitter is not differentiable
            std::vector<int> map;
            for (int64_t t = 0; t < T; ++t) {
                const double u = rng.uniform();
                if (u < spec.jitter_rate) continue;
                map.push_back(static_cast<int>(t));
                if (u > 1.0 - spec.jitter_rate) map.push_back(static_cast<int>(t));
            }
            if (map.empty()) map.push_back(0);
            out.node = gather_time(magnitude, map);
            out.frame_map = std::move(map);
            return out;
        }
        case AttackKind::Codec: {
            // forward through the codec, backward through the identity
            const StftConfig cfg = ctx->cfg;
            const Tensor phase = ctx->phase;
            const std::string format = spec.codec_format;
            const int bitrate = spec.codec_bitrate_kbps;
            auto transform = [cfg, phase, format, bitrate, sample_rate](const Tensor& m) {
                Spectrogram spec_val;
                spec_val.config = cfg;
                spec_val.bins = static_cast<int>(m.dim(1));
                spec_val.frames = static_cast<int>(m.dim(2));
                spec_val.magnitude = m.data;
                spec_val.phase = phase.data;
                AudioBuffer audio = istft(spec_val, sample_rate);
                AudioBuffer coded = codec_roundtrip(audio, CodecClient::for_format(format, bitrate));
                Spectrogram after = stft(coded, cfg);
                Tensor result({1, static_cast<int64_t>(after.bins),
                               static_cast<int64_t>(after.frames)});
                result.data = after.magnitude;
                return result;
            };
            out.node = straight_through(magnitude, transform);
            return out;
        }
        default:
            throw std::invalid_argument(std::string("attack is evaluation-only: ") +
                                        attack_kind_name(spec.kind));
    }
}

}  // namespace smwm
