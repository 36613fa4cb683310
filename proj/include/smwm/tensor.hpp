#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "smwm/rng.hpp"

namespace smwm {

// Dense real tensor. Row-major, last dimension contiguous. Double storage so
// finite-difference gradient checks hold at tight tolerances.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s, double fill = 0.0) : shape(std::move(s)) {
        data.assign(numel_of(shape), fill);
    }

    static size_t numel_of(const std::vector<int64_t>& s) {
        size_t n = 1;
        for (int64_t d : s) {
            if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    size_t numel() const { return data.size(); }
    bool is_scalar() const { return numel() == 1; }
    int64_t dim(size_t i) const { return shape.at(i); }
    size_t rank() const { return shape.size(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    static Tensor scalar(double v) {
        Tensor t({1});
        t.data[0] = v;
        return t;
    }

    static Tensor uniform(std::vector<int64_t> s, Rng& rng, double lo, double hi) {
        Tensor t(std::move(s));
        for (double& v : t.data) v = rng.uniform(lo, hi);
        return t;
    }

    static Tensor normal(std::vector<int64_t> s, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(s));
        for (double& v : t.data) v = rng.normal() * stddev;
        return t;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ")";
        return os.str();
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double l2_norm() const {
        double acc = 0.0;
        for (double v : data) acc += v * v;
        return std::sqrt(acc);
    }

    // Round every value to the nearest float32; keeps parameters exactly
    // representable in checkpoint blobs so save/load round trips are bit-exact.
    void quantize_f32() {
        for (double& v : data) v = static_cast<double>(static_cast<float>(v));
    }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

}  // namespace smwm
