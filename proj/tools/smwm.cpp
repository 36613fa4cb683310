// smwm: spectrogram-magnitude watermarking tool
//   encode  embed a payload into a wav file with a hard SDR lower bound
//   decode  recover the payload and detection verdict
//   detect  detection verdict only
//   attack  apply a distortion from the evaluation suite
//   train   train a model on a directory of wav files
//   eval    accuracy table across an attack matrix
//   synth   generate a synthetic dataset

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "smwm/attacks.hpp"
#include "smwm/embed.hpp"
#include "smwm/eval.hpp"
#include "smwm/msgcodec.hpp"
#include "smwm/nets.hpp"
#include "smwm/synth.hpp"
#include "smwm/train.hpp"

using json = nlohmann::json;
using namespace smwm;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitIo = 3;
constexpr int kExitCarrier = 4;
constexpr int kExitNotDetected = 5;

int classify_error(const std::exception& e) {
    const std::string what = e.what();
    if (what.find("too short") != std::string::npos ||
        what.find("silent carrier") != std::string::npos)
        return kExitCarrier;
    if (what.find("cannot open") != std::string::npos ||
        what.find("cannot create") != std::string::npos ||
        what.find("not a RIFF") != std::string::npos ||
        what.find("not a WAVE") != std::string::npos ||
        what.find("not a checkpoint") != std::string::npos ||
        what.find("truncated") != std::string::npos ||
        what.find("unreadable") != std::string::npos)
        return kExitIo;
    return kExitValidation;
}

json decode_report_json(const DecodeReport& report) {
    std::vector<double> ratios;
    for (size_t i = 0; i < report.mode_counts.size(); ++i)
        ratios.push_back(report.position_votes[i] > 0
                             ? static_cast<double>(report.mode_counts[i]) / report.position_votes[i]
                             : 0.0);
    return json{{"payload_hex", payload_to_hex(report.payload)},
                {"detected", report.detected},
                {"offset", report.offset},
                {"per_position_mode_ratio", ratios},
                {"repetitions", report.repetitions}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spectrogram-magnitude audio watermarking"};
    app.require_subcommand(1);

    // ------------------------------------------------------------------ encode
    auto* encode = app.add_subcommand("encode", "embed a payload into a wav file");
    std::string enc_model, enc_in, enc_out, enc_payload;
    double enc_alpha = 47.0;
    bool enc_no_half_band = false, enc_pcm16 = false;
    encode->add_option("--model", enc_model, "model checkpoint")->required();
    encode->add_option("--in", enc_in, "input wav")->required();
    encode->add_option("--out", enc_out, "output wav")->required();
    encode->add_option("--payload", enc_payload, "hex or 0b... binary payload")->required();
    encode->add_option("--alpha", enc_alpha, "SDR lower bound in dB (default 47)");
    encode->add_flag("--no-half-band", enc_no_half_band, "embed across the full band");
    encode->add_flag("--pcm16", enc_pcm16, "write 16-bit PCM instead of float32");

    // ------------------------------------------------------------------ decode/detect
    auto add_decode_opts = [](CLI::App* cmd, std::string& model, std::string& in, double& tau,
                              int& bits) {
        cmd->add_option("--model", model, "model checkpoint")->required();
        cmd->add_option("--in", in, "input wav")->required();
        cmd->add_option("--tau", tau, "detection threshold (default 0.6)");
        cmd->add_option("--payload-bits", bits, "payload length in bits (default 32)");
    };
    auto* decode = app.add_subcommand("decode", "recover a payload");
    std::string dec_model, dec_in;
    double dec_tau = 0.6;
    int dec_bits = 32;
    add_decode_opts(decode, dec_model, dec_in, dec_tau, dec_bits);

    auto* detect_cmd = app.add_subcommand("detect", "watermark presence check");
    std::string det_model, det_in;
    double det_tau = 0.6;
    int det_bits = 32;
    add_decode_opts(detect_cmd, det_model, det_in, det_tau, det_bits);

    // ------------------------------------------------------------------ attack
    auto* attack = app.add_subcommand("attack", "apply a distortion");
    std::string atk_in, atk_out, atk_spec_text;
    uint64_t atk_seed = 0;
    bool atk_have_seed = false;
    attack->add_option("--in", atk_in, "input wav")->required();
    attack->add_option("--out", atk_out, "output wav")->required();
    attack->add_option("--spec", atk_spec_text, "attack spec, kind:key=val,...")->required();
    attack->add_option("--seed", atk_seed, "random seed")->each([&](const std::string&) {
        atk_have_seed = true;
    });

    // ------------------------------------------------------------------ train
    auto* train = app.add_subcommand("train", "train a model");
    std::string train_config_path, train_dataset, train_out, train_resume, train_metrics;
    train->add_option("--config", train_config_path, "key=value config file")->required();
    train->add_option("--dataset", train_dataset, "override dataset_dir");
    train->add_option("--out", train_out, "override checkpoint path");
    train->add_option("--resume", train_resume, "resume from a training checkpoint");
    train->add_option("--metrics", train_metrics, "override metrics csv path");

    // ------------------------------------------------------------------ eval
    auto* eval_cmd = app.add_subcommand("eval", "accuracy table across attacks");
    std::string ev_model, ev_dataset, ev_out_csv, ev_attacks, ev_dump_dir, ev_mix;
    EvalOptions ev_opt;
    eval_cmd->add_option("--model", ev_model, "model checkpoint")->required();
    eval_cmd->add_option("--dataset", ev_dataset, "directory of wav files")->required();
    eval_cmd->add_option("--out", ev_out_csv, "output csv (default stdout)");
    eval_cmd->add_option("--attacks", ev_attacks, "semicolon-separated attack specs");
    eval_cmd->add_option("--alpha", ev_opt.alpha, "embed SDR bound (default 47)");
    eval_cmd->add_option("--payload-bits", ev_opt.payload_bits, "payload bits (default 32)");
    eval_cmd->add_option("--tau", ev_opt.tau, "detection threshold");
    eval_cmd->add_option("--seed", ev_opt.seed, "seed");
    eval_cmd->add_option("--workers", ev_opt.workers, "parallel files (default 2)");
    eval_cmd->add_option("--dump-spec-dir", ev_dump_dir, "write per-file |C'|-|C| csv dumps");
    eval_cmd->add_option("--mix-path", ev_mix, "interferer wav for the MX column");
    bool ev_full_band = false;
    eval_cmd->add_flag("--no-half-band", ev_full_band, "embed across the full band");

    // ------------------------------------------------------------------ synth
    auto* synth = app.add_subcommand("synth", "generate synthetic wav clips");
    std::string sy_dir;
    int sy_count = 100, sy_rate = 16000;
    double sy_clip = 4.0;
    uint64_t sy_seed = 1;
    synth->add_option("--out", sy_dir, "output directory")->required();
    synth->add_option("--count", sy_count, "number of clips (default 100)");
    synth->add_option("--clip-seconds", sy_clip, "clip length (default 4)");
    synth->add_option("--rate", sy_rate, "sample rate (default 16000)");
    synth->add_option("--seed", sy_seed, "seed (default 1)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*encode) {
            std::vector<int> bits;
            try {
                bits = parse_payload(enc_payload);
            } catch (const std::exception& e) {
                std::cerr << "error: " << e.what() << "\n";
                return kExitValidation;
            }
            WatermarkModel model = load_model(enc_model);
            AudioBuffer audio = read_wav(enc_in);
            MessageFrame msg;
            msg.payload = bits;
            EmbedConfig cfg;
            cfg.alpha = enc_alpha;
            cfg.half_band = !enc_no_half_band;
            auto [watermarked, result] = embed(model, audio, msg, cfg);
            write_wav(enc_out, watermarked, enc_pcm16 ? WavFormat::Pcm16 : WavFormat::Float32);
            const int lf = msg.frame_length();
            json report{{"achieved_sdr_db", result.achieved_sdr},
                        {"clipped_bins", result.clipped_bins},
                        {"repetitions", result.watermarked_spec.frames / lf},
                        {"duration_s", audio.duration_seconds()}};
            std::cout << report.dump() << "\n";
            return 0;
        }
        if (*decode || *detect_cmd) {
            const bool is_detect = static_cast<bool>(*detect_cmd);
            const std::string& model_path = is_detect ? det_model : dec_model;
            const std::string& in_path = is_detect ? det_in : dec_in;
            const double tau = is_detect ? det_tau : dec_tau;
            const int bits = is_detect ? det_bits : dec_bits;
            WatermarkModel model = load_model(model_path);
            AudioBuffer audio = read_wav(in_path);
            DecodeReport report = decode_audio(model, audio, bits, tau);
            std::cout << decode_report_json(report).dump() << "\n";
            return report.detected ? 0 : kExitNotDetected;
        }
        if (*attack) {
            AttackSpec spec;
            try {
                spec = parse_attack_spec(atk_spec_text);
            } catch (const std::exception& e) {
                std::cerr << "error: " << e.what() << "\n";
                return kExitValidation;
            }
            if (atk_have_seed) spec.seed = atk_seed;
            AudioBuffer audio = read_wav(atk_in);
            AudioBuffer out = apply_attack(audio, spec);
            write_wav(atk_out, out, WavFormat::Float32);
            std::cout << json{{"applied", spec.describe()}, {"seed", spec.seed}}.dump() << "\n";
            return 0;
        }
        if (*train) {
            TrainConfig cfg = load_train_config(train_config_path);
            if (!train_dataset.empty()) cfg.dataset_dir = train_dataset;
            if (!train_out.empty()) cfg.checkpoint_path = train_out;
            if (!train_metrics.empty()) cfg.metrics_csv = train_metrics;
            cfg.validate();
            if (cfg.dataset_dir.empty()) {
                std::cerr << "error: no dataset_dir configured\n";
                return kExitValidation;
            }
            Dataset dataset = Dataset::from_directory(cfg.dataset_dir, cfg.seed);
            TrainState state =
                train_resume.empty() ? TrainState::fresh(cfg) : restore_train_state(train_resume, cfg);
            MetricsCsv metrics(cfg.metrics_csv);
            std::cerr << "training " << cfg.iterations << " iterations on "
                      << dataset.train_files.size() << " files ("
                      << state.model.param_count() << " parameters)\n";
            while (state.step < cfg.iterations) {
                auto batch = draw_batch(state, dataset);
                StepMetrics m = train_step(state, batch);
                metrics.write(state.step, m);
                if (state.step % 100 == 0)
                    std::cerr << "step " << state.step << " loss " << m.loss << " acc "
                              << m.frame_accuracy << " sdr " << m.sdr_db << " [" << m.attack
                              << "]\n";
                if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 &&
                    !cfg.checkpoint_path.empty())
                    save_train_state(state, cfg.checkpoint_path);
            }
            if (!cfg.checkpoint_path.empty()) {
                save_train_state(state, cfg.checkpoint_path);
                std::cerr << "saved " << cfg.checkpoint_path << "\n";
            }
            return 0;
        }
        if (*eval_cmd) {
            WatermarkModel model = load_model(ev_model);
            std::vector<std::string> files;
            if (std::filesystem::is_directory(ev_dataset)) {
                for (const auto& entry : std::filesystem::directory_iterator(ev_dataset))
                    if (entry.path().extension() == ".wav") files.push_back(entry.path().string());
                std::sort(files.begin(), files.end());
            } else if (std::filesystem::exists(ev_dataset)) {
                files.push_back(ev_dataset);
            }
            if (files.empty()) {
                std::cerr << "error: empty dataset\n";
                return kExitValidation;
            }
            ev_opt.half_band = !ev_full_band;
            ev_opt.dump_spec_dir = ev_dump_dir;
            std::vector<LabeledAttack> attacks;
            if (ev_attacks.empty()) {
                std::string mix = ev_mix.empty() && files.size() > 1 ? files.back() : ev_mix;
                attacks = default_attack_matrix(mix, ev_opt.seed);
            } else {
                attacks.push_back({"No attack", std::nullopt});
                std::istringstream is(ev_attacks);
                std::string item;
                while (std::getline(is, item, ';')) {
                    if (item.empty()) continue;
                    AttackSpec spec = parse_attack_spec(item);
                    attacks.push_back({item, spec});
                }
            }
            EvalResult result = evaluate(model, files, attacks, ev_opt);
            if (ev_out_csv.empty()) {
                write_eval_csv(result, std::cout);
            } else {
                std::ofstream out(ev_out_csv);
                if (!out) throw std::runtime_error("cannot create output csv: " + ev_out_csv);
                write_eval_csv(result, out);
            }
            return 0;
        }
        if (*synth) {
            auto paths = write_synth_dataset(sy_dir, sy_count, sy_clip, sy_rate, sy_seed);
            std::cerr << "wrote " << paths.size() << " clips to " << sy_dir << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return classify_error(e);
    }
    return 0;
}
