#pragma once

#include <atomic>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "smwm/attacks.hpp"
#include "smwm/embed.hpp"
#include "smwm/msgcodec.hpp"
#include "smwm/nets.hpp"

namespace smwm {

// stft -> message decoder -> per-frame argmax -> cyclic alignment
inline DecodeReport decode_audio(WatermarkModel& model, const AudioBuffer& audio,
                                 int payload_bits, double tau) {
    Spectrogram spec = stft(audio, model.stft_profile);
    Tensor mag({1, spec.bins, spec.frames});
    mag.data = spec.magnitude;
    Tensor logits = decode_message(model, mag);
    const int64_t S = logits.dim(0), T = logits.dim(1);
    std::vector<int> preds(T);
    for (int64_t t = 0; t < T; ++t) {
        int arg = 0;
        for (int64_t s = 1; s < S; ++s)
            if (logits.data[s * T + t] > logits.data[arg * T + t]) arg = static_cast<int>(s);
        preds[t] = arg;
    }
    DecodeReport report =
        align_and_decode(preds, payload_bits + 1, model.config.num_symbols);
    detect(report, tau);
    return report;
}

inline double bit_accuracy(const std::vector<int>& decoded, const std::vector<int>& truth) {
    if (decoded.size() != truth.size()) return 0.0;
    int ok = 0;
    for (size_t i = 0; i < truth.size(); ++i)
        if (decoded[i] == truth[i]) ++ok;
    return static_cast<double>(ok) / truth.size();
}

struct EvalRow {
    std::string label;
    double accuracy_percent = 0.0;
    int files = 0;
};

struct EvalOptions {
    double alpha = 47.0;
    bool half_band = true;
    int payload_bits = 32;
    double tau = 0.6;
    uint64_t seed = 1;
    int workers = 2;
    std::string dump_spec_dir;  // when set, per-file |C'-C| csv dumps
};

struct EvalResult {
    std::vector<EvalRow> rows;
    double mean_accuracy_percent = 0.0;
    double mean_sdr_db = 0.0;
};

struct LabeledAttack {
    std::string label;
    std::optional<AttackSpec> spec;  // nullopt = clean pass
};

// Table-style attack matrix: clean, GN, 50C, EQ, MX, Q, TJ, RS, then
// MP3/OGG/AAC at 64/128/256 kbps.
inline std::vector<LabeledAttack> default_attack_matrix(const std::string& mix_path,
                                                        uint64_t seed) {
    std::vector<LabeledAttack> out;
    out.push_back({"No attack", std::nullopt});
    auto mk = [&](const std::string& label, const std::string& text) {
        AttackSpec spec = parse_attack_spec(text);
        spec.seed = seed ^ std::hash<std::string>{}(label);
        out.push_back({label, spec});
    };
    mk("GN", "gn:snr=40");
    mk("50C", "crop:fraction=0.5");
    mk("EQ", "eq:gain=15");
    if (!mix_path.empty()) mk("MX", "mix:path=" + mix_path + ",level=-15");
    mk("Q", "quantize:bits=16");
    mk("TJ", "jitter:rate=0.001");
    mk("RS", "resample:target=8000");
    for (const char* fmt : {"mp3", "ogg", "aac"})
        for (int br : {64, 128, 256})
            mk(std::string(fmt == std::string("mp3") ? "MP3" : fmt == std::string("ogg") ? "OGG" : "AAC") +
                   " " + std::to_string(br),
               std::string("codec:format=") + fmt + ",bitrate=" + std::to_string(br));
    return out;
}

namespace detail {

inline void dump_spectrogram_diff(const std::string& dir, const std::string& stem,
                                  const Spectrogram& before, const Spectrogram& after) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir + "/" + stem + ".csv");
    for (int f = 0; f < before.bins; ++f) {
        for (int t = 0; t < before.frames; ++t)
            out << (t ? "," : "") << after.mag(f, t) - before.mag(f, t);
        out << '\n';
    }
}

}  // namespace detail

// Embeds a per-file payload in every file, applies each attack, decodes and
// averages payload bit accuracy. Per-file work may run on a small worker
// pool; results are slotted per (attack,file) index so output order is
// deterministic regardless of completion order.
inline EvalResult evaluate(WatermarkModel& model, const std::vector<std::string>& files,
                           const std::vector<LabeledAttack>& attacks, const EvalOptions& opt) {
    if (files.empty()) throw std::invalid_argument("empty dataset");
    EvalResult result;
    EmbedConfig embed_cfg;
    embed_cfg.alpha = opt.alpha;
    embed_cfg.half_band = opt.half_band;

    struct FileOutcome {
        std::vector<double> acc;  // per attack, nan on attack error
        double sdr = 0.0;
        bool ok = false;
        std::string error;
    };
    std::vector<FileOutcome> outcomes(files.size());

    const int inner_workers = worker_count();
    worker_count() = 1;  // per-file parallelism only, keep graph kernels serial
    std::atomic<size_t> next{0};
    const int pool = std::max(1, std::min<int>(opt.workers, static_cast<int>(files.size())));
    auto run = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= files.size()) return;
            FileOutcome& slot = outcomes[i];
            try {
                AudioBuffer audio = read_wav(files[i]);
                Rng prng(opt.seed ^ (0xABCDEF12ULL * (i + 1)));
                MessageFrame msg;
                msg.payload.resize(opt.payload_bits);
                for (int& b : msg.payload) b = static_cast<int>(prng.next_below(2));

                auto [watermarked, embed_result] = embed(model, audio, msg, embed_cfg);
                slot.sdr = embed_result.achieved_sdr;
                if (!opt.dump_spec_dir.empty()) {
                    Spectrogram before = stft(audio, model.stft_profile);
                    detail::dump_spectrogram_diff(
                        opt.dump_spec_dir,
                        std::filesystem::path(files[i]).stem().string(), before,
                        embed_result.watermarked_spec);
                }
                slot.acc.resize(attacks.size(), 0.0);
                for (size_t a = 0; a < attacks.size(); ++a) {
                    AudioBuffer attacked = watermarked;
                    if (attacks[a].spec) {
                        AttackSpec spec = *attacks[a].spec;
                        spec.seed ^= 0x9e3779b9ULL * (i + 1);
                        try {
                            attacked = apply_attack(watermarked, spec);
                        } catch (const std::exception&) {
                            slot.acc[a] = std::numeric_limits<double>::quiet_NaN();
                            continue;
                        }
                    }
                    DecodeReport report =
                        decode_audio(model, attacked, opt.payload_bits, opt.tau);
                    slot.acc[a] = bit_accuracy(report.payload, msg.payload);
                }
                slot.ok = true;
            } catch (const std::exception& e) {
                slot.ok = false;
                slot.error = e.what();
            }
        }
    };
    if (pool == 1) {
        run();
    } else {
        std::vector<std::thread> threads;
        for (int w = 0; w < pool; ++w) threads.emplace_back(run);
        for (auto& t : threads) t.join();
    }
    worker_count() = inner_workers;

    double sdr_acc = 0.0;
    int sdr_n = 0;
    for (size_t a = 0; a < attacks.size(); ++a) {
        EvalRow row;
        row.label = attacks[a].label;
        double acc = 0.0;
        int n = 0;
        for (const auto& o : outcomes) {
            if (!o.ok || a >= o.acc.size() || std::isnan(o.acc[a])) continue;
            acc += o.acc[a];
            ++n;
        }
        row.files = n;
        row.accuracy_percent = n > 0 ? 100.0 * acc / n : std::numeric_limits<double>::quiet_NaN();
        result.rows.push_back(row);
    }
    for (const auto& o : outcomes) {
        if (!o.ok) continue;
        sdr_acc += o.sdr;
        ++sdr_n;
    }
    result.mean_sdr_db = sdr_n ? sdr_acc / sdr_n : 0.0;
    double mean = 0.0;
    int mean_n = 0;
    for (const auto& row : result.rows) {
        if (std::isnan(row.accuracy_percent)) continue;
        mean += row.accuracy_percent;
        ++mean_n;
    }
    result.mean_accuracy_percent = mean_n ? mean / mean_n : 0.0;
    return result;
}

inline void write_eval_csv(const EvalResult& result, std::ostream& out) {
    out << "attack,accuracy_percent,files\n";
    for (const auto& row : result.rows) {
        out << row.label << ',';
        if (std::isnan(row.accuracy_percent))
            out << "nan";
        else
            out << std::fixed << std::setprecision(2) << row.accuracy_percent;
        out << ',' << row.files << '\n';
    }
    out << "Mean accuracy," << std::fixed << std::setprecision(2) << result.mean_accuracy_percent
        << ",\n";
    out << "Mean SDR dB," << std::fixed << std::setprecision(2) << result.mean_sdr_db << ",\n";
}

}  // namespace smwm
