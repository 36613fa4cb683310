#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "smwm/graph.hpp"
#include "smwm/stft.hpp"
#include "smwm/tensor.hpp"

namespace smwm {

struct NetConfig {
    int embed_dim = 1025;                    // frequency bins F
    std::vector<int> enc_channels = {16, 32, 64};   // gated blocks of E
    std::vector<int> dec_channels = {64, 32, 16, 1};  // D_c stack, last must be 1
    std::vector<int> dm_channels = {16, 32, 64};      // D_m stack before the 1x1 head
    int kernel_f = 5;
    int kernel_t = 5;
    int num_symbols = 3;  // {0,1} + end token
    double log_kappa = 1e-4;  // magnitude compression knee for net inputs

    void validate() const {
        if (enc_channels.empty() || dec_channels.empty() || dm_channels.empty())
            throw std::invalid_argument("channel lists must be non-empty");
        if (dec_channels.back() != 1)
            throw std::invalid_argument("carrier decoder must end in one channel");
        if (kernel_f % 2 == 0 || kernel_t % 2 == 0)
            throw std::invalid_argument("kernel dims must be odd for same padding");
        if (num_symbols < 2) throw std::invalid_argument("need at least two symbols");
        if (embed_dim <= 0) throw std::invalid_argument("embed_dim must be positive");
    }
};

struct ConvParam {
    Tensor weight;  // (cout, cin, kf, kt)
    Tensor bias;    // (cout)
};

struct GatedParam {
    ConvParam a, b;
};

// Parameter sets for the four nets. Parameters are kept on the float32 grid
// so checkpoint round trips are bit-exact.
struct WatermarkModel {
    NetConfig config;
    StftConfig stft_profile;
    Tensor embedding;                 // (num_symbols, F)
    std::vector<GatedParam> encoder;  // E
    std::vector<ConvParam> carrier_decoder;  // D_c
    std::vector<ConvParam> message_decoder;  // D_m
    ConvParam head;                   // 1x1 to num_symbols

    template <class Fn>
    void for_each_param(Fn&& fn) {
        fn("L", embedding);
        for (size_t i = 0; i < encoder.size(); ++i) {
            fn("E" + std::to_string(i) + ".a.w", encoder[i].a.weight);
            fn("E" + std::to_string(i) + ".a.b", encoder[i].a.bias);
            fn("E" + std::to_string(i) + ".b.w", encoder[i].b.weight);
            fn("E" + std::to_string(i) + ".b.b", encoder[i].b.bias);
        }
        for (size_t i = 0; i < carrier_decoder.size(); ++i) {
            fn("Dc" + std::to_string(i) + ".w", carrier_decoder[i].weight);
            fn("Dc" + std::to_string(i) + ".b", carrier_decoder[i].bias);
        }
        for (size_t i = 0; i < message_decoder.size(); ++i) {
            fn("Dm" + std::to_string(i) + ".w", message_decoder[i].weight);
            fn("Dm" + std::to_string(i) + ".b", message_decoder[i].bias);
        }
        fn("head.w", head.weight);
        fn("head.b", head.bias);
    }

    size_t param_count() {
        size_t n = 0;
        for_each_param([&](const std::string&, Tensor& t) { n += t.numel(); });
        return n;
    }
};

namespace detail {

inline ConvParam init_conv(int cout, int cin, int kf, int kt, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(cin) * kf * kt);
    ConvParam p;
    p.weight = Tensor::uniform({cout, cin, kf, kt}, rng, -s, s);
    p.bias = Tensor({cout});
    return p;
}

}  // namespace detail

inline WatermarkModel make_model(const NetConfig& cfg, const StftConfig& profile, Rng& rng) {
    cfg.validate();
    profile.validate();
    if (cfg.embed_dim != profile.bins())
        throw std::invalid_argument("embed_dim must equal stft bins");
    WatermarkModel m;
    m.config = cfg;
    m.stft_profile = profile;
    m.embedding = Tensor::uniform({cfg.num_symbols, cfg.embed_dim}, rng, -0.1, 0.1);

    int cin = 1;
    for (int cout : cfg.enc_channels) {
        GatedParam g;
        g.a = detail::init_conv(cout, cin, cfg.kernel_f, cfg.kernel_t, rng);
        g.b = detail::init_conv(cout, cin, cfg.kernel_f, cfg.kernel_t, rng);
        m.encoder.push_back(std::move(g));
        cin = cout;
    }
    cin = cfg.enc_channels.back() + 2;  // E(C) ++ C ++ M_e
    for (int cout : cfg.dec_channels) {
        m.carrier_decoder.push_back(detail::init_conv(cout, cin, cfg.kernel_f, cfg.kernel_t, rng));
        cin = cout;
    }
    cin = 1;
    for (int cout : cfg.dm_channels) {
        m.message_decoder.push_back(detail::init_conv(cout, cin, cfg.kernel_f, cfg.kernel_t, rng));
        cin = cout;
    }
    m.head = detail::init_conv(cfg.num_symbols, cin, 1, 1, rng);
    m.for_each_param([](const std::string&, Tensor& t) { t.quantize_f32(); });
    return m;
}

// ---------------------------------------------------------------------------
// graph builders (shared by inference and training; inference uses
// requires_grad = false leaves)
// ---------------------------------------------------------------------------

struct ParamNodes {
    std::map<std::string, graph::NodePtr> nodes;

    graph::NodePtr at(const std::string& name) const {
        auto it = nodes.find(name);
        if (it == nodes.end()) throw std::logic_error("unknown parameter node: " + name);
        return it->second;
    }
};

inline ParamNodes make_param_nodes(WatermarkModel& model, bool requires_grad) {
    ParamNodes p;
    model.for_each_param([&](const std::string& name, Tensor& t) {
        p.nodes[name] = graph::leaf(t, requires_grad);
    });
    return p;
}

namespace nets {

using graph::NodePtr;

inline NodePtr conv_same(const NodePtr& x, const NodePtr& w, const NodePtr& b, const NetConfig& cfg) {
    return graph::conv2d(x, w, b, 1, 1, cfg.kernel_f / 2, cfg.kernel_t / 2);
}

// message symbols -> (1,F,T) embedding columns
inline NodePtr embed_message(const ParamNodes& p, const NetConfig& cfg,
                             const std::vector<int>& symbols) {
    const int64_t T = static_cast<int64_t>(symbols.size());
    NodePtr rows = graph::gather_rows(p.at("L"), symbols);          // (T,F)
    NodePtr cols = graph::transpose2d(rows);                        // (F,T)
    return graph::reshape(cols, {1, cfg.embed_dim, T});
}

// log-compressed carrier -> feature stack (C_e,F,T)
inline NodePtr encode_carrier(const ParamNodes& p, const NetConfig& cfg, const NodePtr& log_carrier) {
    NodePtr h = log_carrier;
    for (size_t i = 0; i < cfg.enc_channels.size(); ++i) {
        const std::string base = "E" + std::to_string(i);
        NodePtr a = conv_same(h, p.at(base + ".a.w"), p.at(base + ".a.b"), cfg);
        NodePtr b = conv_same(h, p.at(base + ".b.w"), p.at(base + ".b.b"), cfg);
        h = graph::mul(graph::tanh_op(a), graph::sigmoid(b));
    }
    return h;
}

// concatenated features -> raw message spectrogram (1,F,T); final layer linear
inline NodePtr decode_carrier(const ParamNodes& p, const NetConfig& cfg, const NodePtr& H) {
    NodePtr h = H;
    for (size_t i = 0; i < cfg.dec_channels.size(); ++i) {
        h = conv_same(h, p.at("Dc" + std::to_string(i) + ".w"),
                      p.at("Dc" + std::to_string(i) + ".b"), cfg);
        if (i + 1 < cfg.dec_channels.size()) h = graph::tanh_op(h);
    }
    return h;
}

// attacked magnitude (1,F,T) -> per-frame logits (S,T); the head pools over
// the lower-frequency half, where the watermark lives
inline NodePtr decode_message(const ParamNodes& p, const NetConfig& cfg, const NodePtr& magnitude) {
    NodePtr h = graph::log_compress(magnitude, cfg.log_kappa);
    for (size_t i = 0; i < cfg.dm_channels.size(); ++i) {
        h = conv_same(h, p.at("Dm" + std::to_string(i) + ".w"),
                      p.at("Dm" + std::to_string(i) + ".b"), cfg);
        h = graph::relu(h);
    }
    NodePtr z = graph::conv2d(h, p.at("head.w"), p.at("head.b"), 1, 1, 0, 0);  // (S,F,T)
    NodePtr low = graph::slice_freq(z, 0, cfg.embed_dim / 2);
    return graph::mean_freq(low);  // (S,T)
}

}  // namespace nets

// value-level entry points matching the module contracts

inline Tensor embed_message(WatermarkModel& model, const std::vector<int>& symbols) {
    for (int s : symbols)
        if (s < 0 || s >= model.config.num_symbols)
            throw std::invalid_argument("symbol id out of range");
    auto p = make_param_nodes(model, false);
    return nets::embed_message(p, model.config, symbols)->value;
}

inline Tensor encode_carrier(WatermarkModel& model, const Tensor& carrier) {
    if (carrier.rank() != 3 || carrier.dim(0) != 1)
        throw std::invalid_argument("carrier must be (1,F,T), got " + carrier.shape_str());
    for (double v : carrier.data)
        if (v < 0.0) throw std::invalid_argument("carrier magnitude must be non-negative");
    auto p = make_param_nodes(model, false);
    auto logc = graph::log_compress(graph::constant(carrier), model.config.log_kappa);
    return nets::encode_carrier(p, model.config, logc)->value;
}

inline Tensor decode_carrier(WatermarkModel& model, const Tensor& H) {
    const int64_t want = model.config.enc_channels.back() + 2;
    if (H.rank() != 3 || H.dim(0) != want)
        throw std::invalid_argument("H must have " + std::to_string(want) + " channels, got " +
                                    H.shape_str());
    auto p = make_param_nodes(model, false);
    return nets::decode_carrier(p, model.config, graph::constant(H))->value;
}

inline Tensor decode_message(WatermarkModel& model, const Tensor& attacked_magnitude) {
    if (attacked_magnitude.rank() != 3 || attacked_magnitude.dim(0) != 1)
        throw std::invalid_argument("magnitude must be (1,F,T), got " +
                                    attacked_magnitude.shape_str());
    auto p = make_param_nodes(model, false);
    return nets::decode_message(p, model.config, graph::constant(attacked_magnitude))->value;
}

// ---------------------------------------------------------------------------
// checkpoint container: magic "SMWM", version, key-value block, then
// length-prefixed float32 little-endian parameter blobs in declared order.
// ---------------------------------------------------------------------------

namespace ckpt {

constexpr uint32_t kVersion = 1;

inline void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<char*>(b), 4);
}

inline uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("checkpoint truncated");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
    const uint32_t n = read_u32(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw std::runtime_error("checkpoint truncated");
    return s;
}

inline void write_kv(std::ostream& out, const std::map<std::string, std::string>& kv) {
    write_u32(out, static_cast<uint32_t>(kv.size()));
    for (const auto& [k, v] : kv) {
        write_string(out, k);
        write_string(out, v);
    }
}

inline std::map<std::string, std::string> read_kv(std::istream& in) {
    std::map<std::string, std::string> kv;
    const uint32_t n = read_u32(in);
    for (uint32_t i = 0; i < n; ++i) {
        std::string k = read_string(in);
        kv[k] = read_string(in);
    }
    return kv;
}

inline void write_blob(std::ostream& out, const Tensor& t) {
    write_u32(out, static_cast<uint32_t>(t.numel()));
    for (double v : t.data) {
        float f = static_cast<float>(v);
        uint32_t u;
        std::memcpy(&u, &f, 4);
        write_u32(out, u);
    }
}

inline void read_blob(std::istream& in, Tensor& t) {
    const uint32_t n = read_u32(in);
    if (n != t.numel())
        throw std::runtime_error("checkpoint blob length mismatch: expected " +
                                 std::to_string(t.numel()) + ", got " + std::to_string(n));
    for (size_t i = 0; i < t.numel(); ++i) {
        const uint32_t u = read_u32(in);
        float f;
        std::memcpy(&f, &u, 4);
        t.data[i] = static_cast<double>(f);
    }
}

inline std::string ints_csv(const std::vector<int>& v) {
    std::ostringstream os;
    for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

inline std::vector<int> csv_ints(const std::string& s) {
    std::vector<int> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) out.push_back(std::stoi(item));
    return out;
}

inline std::map<std::string, std::string> config_kv(const WatermarkModel& m) {
    std::map<std::string, std::string> kv;
    kv["num_symbols"] = std::to_string(m.config.num_symbols);
    kv["embed_dim"] = std::to_string(m.config.embed_dim);
    kv["enc_channels"] = ints_csv(m.config.enc_channels);
    kv["dec_channels"] = ints_csv(m.config.dec_channels);
    kv["dm_channels"] = ints_csv(m.config.dm_channels);
    kv["kernel_f"] = std::to_string(m.config.kernel_f);
    kv["kernel_t"] = std::to_string(m.config.kernel_t);
    kv["log_kappa"] = std::to_string(m.config.log_kappa);
    kv["fft_size"] = std::to_string(m.stft_profile.fft_size);
    kv["window_length"] = std::to_string(m.stft_profile.window_length);
    kv["hop_length"] = std::to_string(m.stft_profile.hop_length);
    kv["window"] = m.stft_profile.window == WindowKind::Hann ? "hann" : "rect";
    return kv;
}

inline WatermarkModel model_from_kv(const std::map<std::string, std::string>& kv) {
    auto get = [&](const std::string& k) {
        auto it = kv.find(k);
        if (it == kv.end()) throw std::runtime_error("checkpoint missing key: " + k);
        return it->second;
    };
    NetConfig cfg;
    cfg.num_symbols = std::stoi(get("num_symbols"));
    cfg.embed_dim = std::stoi(get("embed_dim"));
    cfg.enc_channels = csv_ints(get("enc_channels"));
    cfg.dec_channels = csv_ints(get("dec_channels"));
    cfg.dm_channels = csv_ints(get("dm_channels"));
    cfg.kernel_f = std::stoi(get("kernel_f"));
    cfg.kernel_t = std::stoi(get("kernel_t"));
    cfg.log_kappa = std::stod(get("log_kappa"));
    StftConfig profile;
    profile.fft_size = std::stoi(get("fft_size"));
    profile.window_length = std::stoi(get("window_length"));
    profile.hop_length = std::stoi(get("hop_length"));
    profile.window = get("window") == "rect" ? WindowKind::Rect : WindowKind::Hann;
    Rng rng(0);
    return make_model(cfg, profile, rng);  // shapes only; blobs overwrite values
}

}  // namespace ckpt

inline void save_model(WatermarkModel& model, const std::string& path,
                       const std::map<std::string, std::string>& extra_kv = {},
                       const std::vector<Tensor>* extra_blobs = nullptr) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot create checkpoint: " + path);
    out.write("SMWM", 4);
    ckpt::write_u32(out, ckpt::kVersion);
    auto kv = ckpt::config_kv(model);
    for (const auto& [k, v] : extra_kv) kv[k] = v;
    ckpt::write_kv(out, kv);
    uint32_t blob_count = 0;
    model.for_each_param([&](const std::string&, Tensor&) { ++blob_count; });
    blob_count += extra_blobs ? static_cast<uint32_t>(extra_blobs->size()) : 0;
    ckpt::write_u32(out, blob_count);
    model.for_each_param([&](const std::string&, Tensor& t) { ckpt::write_blob(out, t); });
    if (extra_blobs)
        for (const Tensor& t : *extra_blobs) ckpt::write_blob(out, t);
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

inline WatermarkModel load_model(const std::string& path,
                                 std::map<std::string, std::string>* kv_out = nullptr,
                                 std::vector<Tensor>* extra_blobs_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SMWM", 4) != 0)
        throw std::runtime_error("not a checkpoint: " + path);
    const uint32_t version = ckpt::read_u32(in);
    if (version != ckpt::kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    auto kv = ckpt::read_kv(in);
    WatermarkModel model = ckpt::model_from_kv(kv);
    uint32_t blob_count = ckpt::read_u32(in);
    model.for_each_param([&](const std::string&, Tensor& t) {
        if (blob_count == 0) throw std::runtime_error("checkpoint has too few blobs");
        ckpt::read_blob(in, t);
        --blob_count;
    });
    if (extra_blobs_out) {
        extra_blobs_out->clear();
        while (blob_count > 0) {
            // moment blobs mirror the parameter layout; caller reshapes
            const uint32_t n = ckpt::read_u32(in);
            Tensor t({static_cast<int64_t>(n)});
            for (uint32_t i = 0; i < n; ++i) {
                const uint32_t u = ckpt::read_u32(in);
                float f;
                std::memcpy(&f, &u, 4);
                t.data[i] = static_cast<double>(f);
            }
            extra_blobs_out->push_back(std::move(t));
            --blob_count;
        }
    }
    if (kv_out) *kv_out = kv;
    return model;
}

}  // namespace smwm
