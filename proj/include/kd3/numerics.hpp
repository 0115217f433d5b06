#pragma once

// Stable nonlinearities, similarity measures and random sampling kernels.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "kd3/array.hpp"

namespace kd3 {

inline constexpr double kNormEps = 1e-12;

// Softmax along `axis` with max-subtraction.
inline DenseArray softmax(const DenseArray& logits, std::size_t axis) {
    if (axis >= logits.shape.size())
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                    " out of range for rank " +
                                    std::to_string(logits.shape.size()));
    check_finite(logits, "softmax input");

    const std::size_t axis_len = logits.shape[axis];
    std::size_t inner = 1;
    for (std::size_t k = axis + 1; k < logits.shape.size(); ++k)
        inner *= logits.shape[k];
    std::size_t outer = logits.size() / (axis_len * inner);

    DenseArray out = logits;
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * axis_len * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < axis_len; ++a)
                mx = std::max(mx, logits[base + a * inner]);
            double sum = 0.0;
            for (std::size_t a = 0; a < axis_len; ++a) {
                double e = std::exp(logits[base + a * inner] - mx);
                out[base + a * inner] = e;
                sum += e;
            }
            for (std::size_t a = 0; a < axis_len; ++a)
                out[base + a * inner] /= sum;
        }
    }
    return out;
}

inline std::vector<double> softmax_vec(const std::vector<double>& logits) {
    DenseArray a = softmax(DenseArray::vector(logits), 0);
    return a.values;
}

inline double sigmoid(double x) {
    if (!std::isfinite(x)) throw std::invalid_argument("sigmoid: non-finite input");
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Unit vector, or the zero vector when the norm is below kNormEps.
inline DenseArray l2_normalize(const DenseArray& v) {
    if (v.shape.size() != 1)
        throw std::invalid_argument("l2_normalize: expected a vector");
    double n = l2_norm(v.values);
    DenseArray out = v;
    if (n < kNormEps) {
        std::fill(out.values.begin(), out.values.end(), 0.0);
        return out;
    }
    for (double& x : out.values) x /= n;
    return out;
}

// Cosine similarity. Both inputs zero is reported through `degenerate`
// (when given) and defined as 0.
inline double cosine_sim(const DenseArray& u, const DenseArray& v,
                         bool* degenerate = nullptr) {
    if (u.size() != v.size())
        throw std::invalid_argument("cosine_sim: length mismatch " +
                                    std::to_string(u.size()) + " vs " +
                                    std::to_string(v.size()));
    if (degenerate) *degenerate = false;
    double nu = l2_norm(u.values), nv = l2_norm(v.values);
    if (nu < kNormEps && nv < kNormEps) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    if (nu < kNormEps || nv < kNormEps) return 0.0;
    double dot = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * v[i];
    return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

// Gamma(shape, 1) by Marsaglia-Tsang squeeze rejection; shape < 1 is boosted
// through Gamma(shape + 1) * U^{1/shape}.
inline double sample_gamma(double shape, Rng& rng) {
    if (shape <= 0.0) throw std::invalid_argument("sample_gamma: shape must be positive");
    if (shape < 1.0) {
        double g = sample_gamma(shape + 1.0, rng);
        double u = 1.0 - rng.uniform();  // (0, 1]
        return g * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = rng.normal();
        double t = 1.0 + c * x;
        if (t <= 0.0) continue;
        double v = t * t * t;
        double u = 1.0 - rng.uniform();
        double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
        if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
}

// Beta(delta, delta) as a ratio of two gamma variates.
inline double sample_beta(double delta, Rng& rng) {
    if (delta <= 0.0) throw std::invalid_argument("sample_beta: delta must be positive");
    double g1 = sample_gamma(delta, rng);
    double g2 = sample_gamma(delta, rng);
    double s = g1 + g2;
    if (s <= 0.0) return 0.5;  // both underflowed to zero
    return g1 / s;
}

// Uniform random permutation of 0..n-1 by Fisher-Yates.
inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = rng.below(i);
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

}  // namespace kd3
