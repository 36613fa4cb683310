#pragma once

#include <cmath>
#include <vector>

namespace smwm {

// Direct form I biquad, normalized a0 = 1.
struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0, a1 = 0.0, a2 = 0.0;

    void process(std::vector<double>& x) const {
        double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
        for (double& v : x) {
            const double in = v;
            const double out = b0 * in + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = in;
            y2 = y1;
            y1 = out;
            v = out;
        }
    }
};

// RBJ peaking EQ at fc Hz, quality q, gain in dB.
inline Biquad peaking_eq(double fc, double sample_rate, double q, double gain_db) {
    const double A = std::pow(10.0, gain_db / 40.0);
    const double w0 = 2.0 * 3.14159265358979323846 * fc / sample_rate;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double c = std::cos(w0);
    const double a0 = 1.0 + alpha / A;
    Biquad bq;
    bq.b0 = (1.0 + alpha * A) / a0;
    bq.b1 = (-2.0 * c) / a0;
    bq.b2 = (1.0 - alpha * A) / a0;
    bq.a1 = (-2.0 * c) / a0;
    bq.a2 = (1.0 - alpha / A) / a0;
    return bq;
}

}  // namespace smwm
