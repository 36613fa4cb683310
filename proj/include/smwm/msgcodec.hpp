#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace smwm {

// Message framing: binary payload followed by one end-token symbol, tiled
// cyclically along the frame axis. The end token id equals the radix (2).
struct MessageFrame {
    std::vector<int> payload;  // symbols over {0,1}
    int radix = 2;

    int end_token() const { return radix; }
    int frame_length() const { return static_cast<int>(payload.size()) + 1; }

    std::vector<int> frame_symbols() const {
        std::vector<int> fs = payload;
        fs.push_back(end_token());
        return fs;
    }

    void validate() const {
        if (payload.size() < 8 || payload.size() > 64)
            throw std::invalid_argument("payload length must be in [8, 64] bits, got " +
                                        std::to_string(payload.size()));
        for (int s : payload)
            if (s < 0 || s >= radix) throw std::invalid_argument("payload symbol out of radix range");
    }
};

struct DecodeReport {
    std::vector<int> payload;       // decoded symbols, length L_f - 1
    int offset = 0;                 // chosen cyclic phase in [0, L_f)
    std::vector<int> mode_counts;   // per payload position, count of the modal symbol
    std::vector<int> position_votes;  // per payload position, total votes cast
    int repetitions = 0;            // full repetitions observed: floor(T / L_f)
    bool detected = false;
    bool end_structure_ok = false;  // end slot mode is the end token and payload modes are not
};

// payload + end token tiled cyclically to T frames (final repetition may truncate)
inline std::vector<int> frame_and_repeat(const MessageFrame& msg, int frames) {
    msg.validate();
    const int lf = msg.frame_length();
    if (frames < lf) throw std::invalid_argument("carrier too short for one repetition");
    const std::vector<int> fs = msg.frame_symbols();
    std::vector<int> out(frames);
    for (int t = 0; t < frames; ++t) out[t] = fs[t % lf];
    return out;
}

// Brute-force cyclic alignment: for each candidate offset the frame at index i
// is assigned template position (i - offset) mod L_f, position L_f-1 being the
// end-token slot. Payload positions score their modal count; the end slot
// scores the number of end tokens it contains. Ties resolve to the smallest
// offset. Always returns a best-effort report; `detected` governs trust.
inline DecodeReport align_and_decode(const std::vector<int>& predictions, int frame_length,
                                     int num_symbols = 3) {
    const int T = static_cast<int>(predictions.size());
    const int lf = frame_length;
    if (lf < 2) throw std::invalid_argument("frame length must be at least 2");
    if (T < lf) throw std::invalid_argument("fewer predictions than one repetition");
    for (int p : predictions)
        if (p < 0 || p >= num_symbols) throw std::invalid_argument("prediction id out of range");
    const int end_token = num_symbols - 1;

    // histogram per residue class mod L_f; offsets only relabel the classes
    std::vector<std::vector<int>> hist(lf, std::vector<int>(num_symbols, 0));
    std::vector<int> class_size(lf, 0);
    for (int i = 0; i < T; ++i) {
        hist[i % lf][predictions[i]]++;
        class_size[i % lf]++;
    }

    auto modal = [&](int cls) {
        int best_sym = 0, best_count = -1;
        for (int s = 0; s < num_symbols; ++s)
            if (hist[cls][s] > best_count) {
                best_count = hist[cls][s];
                best_sym = s;
            }
        return std::pair<int, int>(best_sym, best_count);
    };

    int best_offset = 0;
    long best_score = -1;
    for (int phi = 0; phi < lf; ++phi) {
        long score = 0;
        for (int j = 0; j < lf - 1; ++j) score += modal((phi + j) % lf).second;
        score += hist[(phi + lf - 1) % lf][end_token];
        if (score > best_score) {
            best_score = score;
            best_offset = phi;
        }
    }

    DecodeReport report;
    report.offset = best_offset;
    report.repetitions = T / lf;
    report.end_structure_ok = true;
    for (int j = 0; j < lf - 1; ++j) {
        const int cls = (best_offset + j) % lf;
        auto [sym, count] = modal(cls);
        report.payload.push_back(sym);
        report.mode_counts.push_back(count);
        report.position_votes.push_back(class_size[cls]);
        if (sym == end_token) report.end_structure_ok = false;
    }
    const int end_cls = (best_offset + lf - 1) % lf;
    if (modal(end_cls).first != end_token) report.end_structure_ok = false;
    return report;
}

// Presence decision: every payload position must reach the modal-ratio
// threshold and the end-token structure must be coherent.
inline bool detect(DecodeReport& report, double tau) {
    if (tau <= 0.0 || tau > 1.0) throw std::invalid_argument("tau must be in (0, 1]");
    bool ok = report.end_structure_ok;
    for (size_t i = 0; ok && i < report.mode_counts.size(); ++i) {
        const int votes = report.position_votes[i];
        if (votes == 0 ||
            static_cast<double>(report.mode_counts[i]) / votes < tau)
            ok = false;
    }
    report.detected = ok;
    return ok;
}

// ---------------------------------------------------------------------------
// payload parsing: hex (optional 0x prefix, MSB-first) or binary "0b1010..."
// ---------------------------------------------------------------------------
inline std::vector<int> parse_payload(const std::string& text) {
    std::string s = text;
    std::vector<int> bits;
    if (s.rfind("0b", 0) == 0 || s.rfind("0B", 0) == 0) {
        for (size_t i = 2; i < s.size(); ++i) {
            if (s[i] == '0')
                bits.push_back(0);
            else if (s[i] == '1')
                bits.push_back(1);
            else
                throw std::invalid_argument("bad binary payload digit: " + std::string(1, s[i]));
        }
    } else {
        if (s.rfind("0x", 0) == 0 || s.rfind("0X", 0) == 0) s = s.substr(2);
        if (s.empty()) throw std::invalid_argument("empty payload");
        for (char c : s) {
            int v;
            if (c >= '0' && c <= '9')
                v = c - '0';
            else if (c >= 'a' && c <= 'f')
                v = c - 'a' + 10;
            else if (c >= 'A' && c <= 'F')
                v = c - 'A' + 10;
            else
                throw std::invalid_argument("bad hex payload digit: " + std::string(1, c));
            for (int b = 3; b >= 0; --b) bits.push_back((v >> b) & 1);
        }
    }
    if (bits.size() < 8 || bits.size() > 64)
        throw std::invalid_argument("payload length must be in [8, 64] bits, got " +
                                    std::to_string(bits.size()));
    return bits;
}

inline std::string payload_to_hex(const std::vector<int>& bits) {
    std::string out;
    const size_t groups = (bits.size() + 3) / 4;
    for (size_t g = 0; g < groups; ++g) {
        int v = 0;
        for (size_t b = 0; b < 4; ++b) {
            const size_t i = g * 4 + b;
            v = (v << 1) | (i < bits.size() ? (bits[i] & 1) : 0);
        }
        out += "0123456789abcdef"[v];
    }
    return out;
}

}  // namespace smwm
