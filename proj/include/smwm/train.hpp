#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "smwm/attacks.hpp"
#include "smwm/audio.hpp"
#include "smwm/embed.hpp"
#include "smwm/graph_dsp.hpp"
#include "smwm/msgcodec.hpp"
#include "smwm/nets.hpp"

namespace smwm {

struct TrainConfig {
    double learning_rate = 1e-3;
    int iterations = 2000;
    double clip_seconds = 12.0;
    int batch_size = 4;
    double alpha = 40.0;  // dB, embed bound during training
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    uint64_t seed = 1;
    int payload_bits = 32;
    bool half_band = true;

    // attack sampling
    std::vector<std::string> attack_families = {"gn", "jitter", "eq", "codec"};
    std::vector<std::string> codec_formats = {"mp3", "ogg", "aac"};
    std::vector<int> codec_bitrates = {64, 128, 256};
    double gn_snr_min = 35.0, gn_snr_max = 45.0;
    double frame_jitter_rate = 0.02;
    double eq_gain_db = 15.0;

    // model
    std::string profile = "16k";  // 16k | 44k
    std::vector<int> enc_channels = {16, 32, 64};
    std::vector<int> dec_channels = {64, 32, 16, 1};
    std::vector<int> dm_channels = {16, 32, 64};
    int kernel_f = 5;
    int kernel_t = 5;

    // io
    std::string dataset_dir;
    std::string metrics_csv;
    std::string checkpoint_path;
    int checkpoint_every = 0;  // 0 = only at the end

    StftConfig stft_profile() const {
        if (profile == "16k") return StftConfig::profile_16k();
        if (profile == "44k") return StftConfig::profile_44k();
        throw std::invalid_argument("unknown stft profile: " + profile);
    }

    int sample_rate() const { return profile == "16k" ? 16000 : 44100; }

    void validate() const {
        if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be positive");
        if (iterations <= 0) throw std::invalid_argument("iterations must be positive");
        if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
        if (payload_bits < 8 || payload_bits > 64)
            throw std::invalid_argument("payload_bits must be in [8, 64]");
        const StftConfig profile_cfg = stft_profile();
        const double clip_samples = clip_seconds * sample_rate();
        const double min_samples =
            (payload_bits)*static_cast<double>(profile_cfg.hop_length) + profile_cfg.window_length;
        if (clip_samples < min_samples)
            throw std::invalid_argument("clip_seconds too short for one message repetition");
    }

    NetConfig net_config() const {
        NetConfig cfg;
        cfg.embed_dim = stft_profile().bins();
        cfg.enc_channels = enc_channels;
        cfg.dec_channels = dec_channels;
        cfg.dm_channels = dm_channels;
        cfg.kernel_f = kernel_f;
        cfg.kernel_t = kernel_t;
        cfg.num_symbols = 3;
        return cfg;
    }
};

// key = value lines; '#' starts a comment
inline TrainConfig parse_train_config(std::istream& in) {
    TrainConfig cfg;
    std::string line;
    auto csv_strings = [](const std::string& s) {
        std::vector<std::string> out;
        std::istringstream is(s);
        std::string item;
        while (std::getline(is, item, ',')) {
            if (!item.empty()) out.push_back(item);
        }
        return out;
    };
    auto csv_int = [&](const std::string& s) {
        std::vector<int> out;
        for (const auto& item : csv_strings(s)) out.push_back(std::stoi(item));
        return out;
    };
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            bool blank = true;
            for (char c : line)
                if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
            if (blank) continue;
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "learning_rate") cfg.learning_rate = std::stod(val);
        else if (key == "iterations") cfg.iterations = std::stoi(val);
        else if (key == "clip_seconds") cfg.clip_seconds = std::stod(val);
        else if (key == "batch_size") cfg.batch_size = std::stoi(val);
        else if (key == "alpha") cfg.alpha = std::stod(val);
        else if (key == "beta1") cfg.beta1 = std::stod(val);
        else if (key == "beta2") cfg.beta2 = std::stod(val);
        else if (key == "adam_eps") cfg.adam_eps = std::stod(val);
        else if (key == "seed") cfg.seed = std::stoull(val);
        else if (key == "payload_bits") cfg.payload_bits = std::stoi(val);
        else if (key == "half_band") cfg.half_band = (val == "1" || val == "true");
        else if (key == "attack_families") cfg.attack_families = csv_strings(val);
        else if (key == "codec_formats") cfg.codec_formats = csv_strings(val);
        else if (key == "codec_bitrates") cfg.codec_bitrates = csv_int(val);
        else if (key == "gn_snr_min") cfg.gn_snr_min = std::stod(val);
        else if (key == "gn_snr_max") cfg.gn_snr_max = std::stod(val);
        else if (key == "frame_jitter_rate") cfg.frame_jitter_rate = std::stod(val);
        else if (key == "eq_gain_db") cfg.eq_gain_db = std::stod(val);
        else if (key == "profile") cfg.profile = val;
        else if (key == "enc_channels") cfg.enc_channels = csv_int(val);
        else if (key == "dec_channels") cfg.dec_channels = csv_int(val);
        else if (key == "dm_channels") cfg.dm_channels = csv_int(val);
        else if (key == "kernel_f") cfg.kernel_f = std::stoi(val);
        else if (key == "kernel_t") cfg.kernel_t = std::stoi(val);
        else if (key == "dataset_dir") cfg.dataset_dir = val;
        else if (key == "metrics_csv") cfg.metrics_csv = val;
        else if (key == "checkpoint_path") cfg.checkpoint_path = val;
        else if (key == "checkpoint_every") cfg.checkpoint_every = std::stoi(val);
        else throw std::invalid_argument("unknown config key: " + key);
    }
    return cfg;
}

inline TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    return parse_train_config(in);
}

// mean over frames of -log softmax(logits)[target]
inline double message_loss(const Tensor& logits, const std::vector<int>& targets) {
    auto node = graph::cross_entropy(graph::leaf(logits, false), targets);
    return node->value.data[0];
}

// ---------------------------------------------------------------------------
// dataset: directory of wav files, split by file 0.8 : 0.1 : 0.1
// ---------------------------------------------------------------------------
struct Dataset {
    std::vector<std::string> train_files, val_files, test_files;
    std::unordered_map<std::string, AudioBuffer> cache;

    static Dataset from_directory(const std::string& dir, uint64_t seed) {
        std::vector<std::string> files;
        for (const auto& entry : std::filesystem::directory_iterator(dir)) {
            if (entry.path().extension() == ".wav") files.push_back(entry.path().string());
        }
        if (files.empty()) throw std::runtime_error("no wav files in dataset dir: " + dir);
        std::sort(files.begin(), files.end());
        Rng rng(seed ^ 0x5eedf00dULL);
        for (size_t i = files.size(); i > 1; --i)
            std::swap(files[i - 1], files[rng.next_below(i)]);
        Dataset ds;
        const size_t n = files.size();
        const size_t n_train = std::max<size_t>(1, static_cast<size_t>(n * 0.8));
        const size_t n_val = std::max<size_t>(n > 2 ? 1 : 0, static_cast<size_t>(n * 0.1));
        for (size_t i = 0; i < n; ++i) {
            if (i < n_train)
                ds.train_files.push_back(files[i]);
            else if (i < n_train + n_val)
                ds.val_files.push_back(files[i]);
            else
                ds.test_files.push_back(files[i]);
        }
        if (ds.test_files.empty()) ds.test_files = ds.val_files;
        return ds;
    }

    const AudioBuffer& load(const std::string& path) {
        auto it = cache.find(path);
        if (it != cache.end()) return it->second;
        return cache.emplace(path, read_wav(path)).first->second;
    }

    // random window of clip_samples; shorter files are zero-padded at the end
    AudioBuffer sample_clip(Rng& rng, size_t clip_samples, int expected_rate) {
        const std::string& path = train_files[rng.next_below(train_files.size())];
        const AudioBuffer& full = load(path);
        if (full.sample_rate != expected_rate)
            throw std::runtime_error("dataset file " + path + " has rate " +
                                     std::to_string(full.sample_rate) + ", expected " +
                                     std::to_string(expected_rate));
        AudioBuffer clip;
        clip.sample_rate = full.sample_rate;
        clip.samples.resize(clip_samples, 0.0);
        if (full.samples.size() > clip_samples) {
            const size_t start = rng.next_below(full.samples.size() - clip_samples + 1);
            std::copy_n(full.samples.begin() + start, clip_samples, clip.samples.begin());
        } else {
            std::copy(full.samples.begin(), full.samples.end(), clip.samples.begin());
        }
        return clip;
    }
};

// ---------------------------------------------------------------------------
// training state and the optimizer step
// ---------------------------------------------------------------------------
struct StepMetrics {
    double loss = 0.0;
    double frame_accuracy = 0.0;
    double sdr_db = 0.0;
    std::string attack;
};

struct TrainState {
    WatermarkModel model;
    TrainConfig config;
    std::vector<Tensor> adam_m, adam_v;  // declared parameter order
    int64_t step = 0;
    double running_loss = 0.0;

    static TrainState fresh(const TrainConfig& cfg) {
        cfg.validate();
        TrainState st;
        st.config = cfg;
        Rng rng(cfg.seed);
        st.model = make_model(cfg.net_config(), cfg.stft_profile(), rng);
        st.model.for_each_param([&](const std::string&, Tensor& t) {
            st.adam_m.emplace_back(t.shape);
            st.adam_v.emplace_back(t.shape);
        });
        return st;
    }
};

inline AttackSpec sample_attack_for_training(const TrainConfig& cfg, Rng& rng) {
    AttackSpec spec;
    spec.seed = rng.next_u64();
    const std::string family =
        cfg.attack_families[rng.next_below(cfg.attack_families.size())];
    if (family == "gn") {
        spec.kind = AttackKind::GaussianNoise;
        spec.snr_db = rng.uniform(cfg.gn_snr_min, cfg.gn_snr_max);
    } else if (family == "jitter") {
        spec.kind = AttackKind::TimeJitter;
        spec.jitter_rate = cfg.frame_jitter_rate;
    } else if (family == "eq") {
        spec.kind = AttackKind::Eq;
        spec.eq_gain_db = cfg.eq_gain_db;
    } else if (family == "codec") {
        spec.kind = AttackKind::Codec;
        spec.codec_format = cfg.codec_formats[rng.next_below(cfg.codec_formats.size())];
        spec.codec_bitrate_kbps =
            cfg.codec_bitrates[rng.next_below(cfg.codec_bitrates.size())];
    } else {
        throw std::invalid_argument("unknown attack family in config: " + family);
    }
    return spec;
}

// One optimizer step over a batch of clips. All randomness derives from
// (seed, step), so checkpoint restore reproduces the trajectory bit-exactly.
inline StepMetrics train_step(TrainState& state, const std::vector<AudioBuffer>& batch) {
    const TrainConfig& cfg = state.config;
    if (batch.empty()) throw std::invalid_argument("empty batch");
    Rng rng = Rng::derive(cfg.seed, static_cast<uint64_t>(state.step) * 2 + 1);

    auto params = make_param_nodes(state.model, true);
    StepMetrics metrics;
    EmbedConfig embed_cfg;
    embed_cfg.alpha = cfg.alpha;
    embed_cfg.half_band = cfg.half_band;

    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    for (const AudioBuffer& clip : batch) {
        Spectrogram spec = stft(clip, state.model.stft_profile);

        MessageFrame msg;
        msg.payload.resize(cfg.payload_bits);
        for (int& b : msg.payload) b = static_cast<int>(rng.next_below(2));
        std::vector<int> targets = frame_and_repeat(msg, spec.frames);

        Tensor carrier({1, spec.bins, spec.frames});
        carrier.data = spec.magnitude;
        Tensor phase({1, spec.bins, spec.frames});
        phase.data = spec.phase;

        auto nodes = build_embed_graph(params, state.model.config, carrier, targets, embed_cfg);

        AttackSpec attack = sample_attack_for_training(cfg, rng);
        auto ctx = std::make_shared<graph::StftContext>(state.model.stft_profile, phase);
        auto attacked = differentiable_attack(nodes.watermarked, attack, ctx, clip.sample_rate);
        std::vector<int> attacked_targets;
        attacked_targets.reserve(attacked.frame_map.size());
        for (int t : attacked.frame_map) attacked_targets.push_back(targets[t]);

        auto logits = nets::decode_message(params, state.model.config, attacked.node);
        auto loss = graph::scale(graph::cross_entropy(logits, attacked_targets), inv_batch);

        if (!std::isfinite(loss->value.data[0])) {
            std::ostringstream os;
            os << "NaN loss at step " << state.step << " attack=" << attack.describe()
               << " carrier_norm=" << carrier.l2_norm();
            throw std::runtime_error(os.str());
        }
        graph::backward(loss);

        metrics.loss += loss->value.data[0];
        // per-frame accuracy on the attacked logits
        const Tensor& lv = logits->value;
        const int64_t S = lv.dim(0), T2 = lv.dim(1);
        int correct = 0;
        for (int64_t t = 0; t < T2; ++t) {
            int arg = 0;
            for (int64_t s = 1; s < S; ++s)
                if (lv.data[s * T2 + t] > lv.data[arg * T2 + t]) arg = static_cast<int>(s);
            if (arg == attacked_targets[t]) ++correct;
        }
        metrics.frame_accuracy += static_cast<double>(correct) / T2 * inv_batch;

        Spectrogram wspec = spec;
        wspec.magnitude = nodes.watermarked->value.data;
        metrics.sdr_db += spectrogram_sdr(spec, wspec) * inv_batch;
        metrics.attack = attack_kind_name(attack.kind);
    }

    // Adam with bias correction; parameters and moments stay on the f32 grid
    const int64_t t = state.step + 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    size_t pi = 0;
    state.model.for_each_param([&](const std::string& name, Tensor& p) {
        graph::NodePtr leaf = params.at(name);
        Tensor& m = state.adam_m[pi];
        Tensor& v = state.adam_v[pi];
        ++pi;
        if (leaf->grad.data.empty()) return;  // no gradient path this step
        for (size_t i = 0; i < p.numel(); ++i) {
            const double g = leaf->grad.data[i];
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g;
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
        m.quantize_f32();
        v.quantize_f32();
        p.quantize_f32();
    });

    state.step = t;
    state.running_loss = 0.98 * state.running_loss + 0.02 * metrics.loss;
    return metrics;
}

// draw one batch of clips for a step; randomness again derives from (seed, step)
inline std::vector<AudioBuffer> draw_batch(TrainState& state, Dataset& dataset) {
    const TrainConfig& cfg = state.config;
    Rng rng = Rng::derive(cfg.seed, static_cast<uint64_t>(state.step) * 2);
    const size_t clip_samples =
        static_cast<size_t>(cfg.clip_seconds * cfg.sample_rate());
    std::vector<AudioBuffer> batch;
    for (int b = 0; b < cfg.batch_size; ++b)
        batch.push_back(dataset.sample_clip(rng, clip_samples, cfg.sample_rate()));
    return batch;
}

// ---------------------------------------------------------------------------
// train-state checkpointing (model container + moment blobs + kv)
// ---------------------------------------------------------------------------
inline void save_train_state(TrainState& state, const std::string& path) {
    std::map<std::string, std::string> kv;
    kv["kind"] = "trainstate";
    kv["step"] = std::to_string(state.step);
    kv["seed"] = std::to_string(state.config.seed);
    kv["learning_rate"] = std::to_string(state.config.learning_rate);
    kv["beta1"] = std::to_string(state.config.beta1);
    kv["beta2"] = std::to_string(state.config.beta2);
    kv["adam_eps"] = std::to_string(state.config.adam_eps);
    kv["alpha"] = std::to_string(state.config.alpha);
    std::vector<Tensor> blobs;
    for (const Tensor& m : state.adam_m) blobs.push_back(m);
    for (const Tensor& v : state.adam_v) blobs.push_back(v);
    save_model(state.model, path, kv, &blobs);
}

// Restores model + moments + step. The caller supplies the full TrainConfig
// (dataset paths etc. are not serialized); seed and optimizer scalars are
// cross-checked against the checkpoint.
inline TrainState restore_train_state(const std::string& path, const TrainConfig& cfg) {
    std::map<std::string, std::string> kv;
    std::vector<Tensor> blobs;
    WatermarkModel model = load_model(path, &kv, &blobs);
    if (kv.count("kind") == 0 || kv.at("kind") != "trainstate")
        throw std::runtime_error("checkpoint is not a training state: " + path);
    TrainState st;
    st.config = cfg;
    st.config.seed = std::stoull(kv.at("seed"));
    st.model = std::move(model);
    st.step = std::stoll(kv.at("step"));

    std::vector<std::vector<int64_t>> shapes;
    st.model.for_each_param([&](const std::string&, Tensor& t) { shapes.push_back(t.shape); });
    if (blobs.size() != shapes.size() * 2)
        throw std::runtime_error("checkpoint moment blob count mismatch");
    for (size_t i = 0; i < shapes.size(); ++i) {
        Tensor m(shapes[i]);
        if (m.numel() != blobs[i].numel()) throw std::runtime_error("moment blob shape mismatch");
        m.data = blobs[i].data;
        st.adam_m.push_back(std::move(m));
        Tensor v(shapes[i]);
        if (v.numel() != blobs[shapes.size() + i].numel())
            throw std::runtime_error("moment blob shape mismatch");
        v.data = blobs[shapes.size() + i].data;
        st.adam_v.push_back(std::move(v));
    }
    return st;
}

// append-only metrics sink
class MetricsCsv {
public:
    explicit MetricsCsv(const std::string& path) {
        if (path.empty()) return;
        const bool fresh = !std::filesystem::exists(path);
        out_.open(path, std::ios::app);
        if (!out_) throw std::runtime_error("cannot open metrics csv: " + path);
        if (fresh) out_ << "step,loss,accuracy,attack,sdr\n";
    }
    void write(int64_t step, const StepMetrics& m) {
        if (!out_.is_open()) return;
        out_ << step << ',' << m.loss << ',' << m.frame_accuracy << ',' << m.attack << ','
             << m.sdr_db << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

}  // namespace smwm
