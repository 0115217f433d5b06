#pragma once

// MixDistribution instance perturbation (statistics mixing) and the
// MixDistribution contrastive losses.
//
// The contrastive denominator ranges over cross-view pairs with j != i and
// excludes the positive pair, matching the printed loss; the standard form
// (positive pair included) is available behind a flag for comparison runs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "kd3/array.hpp"
#include "kd3/numerics.hpp"

namespace kd3 {

enum class MixScope { Instance, Batch };

struct MixParams {
    double delta = 0.5;        // Beta(delta, delta) concentration
    double epsilon_std = 1e-5; // stabilizer for sigma = 0
    MixScope scope = MixScope::Instance;

    void validate() const {
        if (delta <= 0.0) throw std::invalid_argument("MixParams: delta must be positive");
        if (epsilon_std <= 0.0) throw std::invalid_argument("MixParams: epsilon_std must be positive");
    }
};

// mu = mean, sigma = population standard deviation (divide by n).
inline std::pair<double, double> instance_stats(const DenseArray& x) {
    if (x.size() == 0) throw std::invalid_argument("instance_stats: empty input");
    double mu = 0.0;
    for (double v : x.values) mu += v;
    mu /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x.values) var += (v - mu) * (v - mu);
    var /= static_cast<double>(x.size());
    return {mu, std::sqrt(var)};
}

// gamma_mix = lambda*sigma(x) + (1-lambda)*sigma(partner), likewise beta_mix
// with the means.
inline std::pair<double, double> mix_statistics(const DenseArray& x, const DenseArray& partner,
                                                double lambda) {
    auto [mu_x, sigma_x] = instance_stats(x);
    auto [mu_p, sigma_p] = instance_stats(partner);
    double gamma_mix = lambda * sigma_x + (1.0 - lambda) * sigma_p;
    double beta_mix = lambda * mu_x + (1.0 - lambda) * mu_p;
    return {gamma_mix, beta_mix};
}

// x_hat = gamma_mix * (x - mu(x)) / (sigma(x) + epsilon_std) + beta_mix.
inline DenseArray perturb(const DenseArray& x, double gamma_mix, double beta_mix,
                          double epsilon_std) {
    if (epsilon_std <= 0.0) throw std::invalid_argument("perturb: epsilon_std must be positive");
    auto [mu, sigma] = instance_stats(x);
    DenseArray out = x;
    const double denom = sigma + epsilon_std;
    for (double& v : out.values) v = gamma_mix * (v - mu) / denom + beta_mix;
    return out;
}

struct PerturbedPair {
    DenseArray original;
    DenseArray perturbed;
    double lambda = 0.0;
    std::size_t partner_index = 0;
    double gamma_mix = 0.0;
    double beta_mix = 0.0;
};

// One permutation per batch, one lambda ~ Beta(delta, delta) per instance.
// Batch scope mixes with whole-batch statistics instead of the permuted
// partner's.
inline std::vector<PerturbedPair> perturb_batch(const std::vector<DenseArray>& batch,
                                                const MixParams& params, Rng& rng) {
    if (batch.empty()) throw std::invalid_argument("perturb_batch: empty batch");
    params.validate();
    std::vector<std::size_t> perm = permutation(batch.size(), rng);

    double mu_all = 0.0, sigma_all = 0.0;
    if (params.scope == MixScope::Batch) {
        std::vector<double> flat;
        for (const auto& x : batch) flat.insert(flat.end(), x.values.begin(), x.values.end());
        auto [m, s] = instance_stats(DenseArray::vector(std::move(flat)));
        mu_all = m;
        sigma_all = s;
    }

    std::vector<PerturbedPair> out;
    out.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        PerturbedPair pair;
        pair.original = batch[i];
        pair.lambda = sample_beta(params.delta, rng);
        pair.partner_index = perm[i];
        if (params.scope == MixScope::Instance) {
            auto [g, b] = mix_statistics(batch[i], batch[perm[i]], pair.lambda);
            pair.gamma_mix = g;
            pair.beta_mix = b;
        } else {
            auto [mu_i, sigma_i] = instance_stats(batch[i]);
            pair.gamma_mix = pair.lambda * sigma_i + (1.0 - pair.lambda) * sigma_all;
            pair.beta_mix = pair.lambda * mu_i + (1.0 - pair.lambda) * mu_all;
        }
        pair.perturbed = perturb(batch[i], pair.gamma_mix, pair.beta_mix, params.epsilon_std);
        out.push_back(std::move(pair));
    }
    return out;
}

// ---------------------------------------------------------------------------
// MDCL loss

struct MdclResult {
    double loss = 0.0;
    // dL/d(z_bar_i), dL/d(z_hat_j); embeddings are treated as the loss inputs.
    std::vector<std::vector<double>> grad_z_bar;
    std::vector<std::vector<double>> grad_z_hat;
};

// loss = -sum_i log( exp(s_ii/tau) / sum_{j != i} exp(s_ij/tau) ) with
// s_ij = sim(z_bar_i, z_hat_j). Unit-norm embeddings make sim a dot product;
// non-unit inputs go through full cosine similarity gradients are for unit
// inputs (callers pass normalized embeddings).
inline MdclResult mdcl_loss_one_side(const std::vector<DenseArray>& z_bar,
                                     const std::vector<DenseArray>& z_hat, double tau,
                                     bool include_positive_in_denominator = false) {
    const std::size_t n = z_bar.size();
    if (z_hat.size() != n) throw std::invalid_argument("mdcl: view size mismatch");
    if (n < 2) throw std::invalid_argument("mdcl: need at least 2 instances");
    if (tau <= 0.0) throw std::invalid_argument("mdcl: tau must be positive");
    const std::size_t d = z_bar[0].size();

    // s_ij = z_bar_i . z_hat_j (unit-norm embeddings)
    std::vector<double> sim(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += z_bar[i][k] * z_hat[j][k];
            sim[i * n + j] = dot;
        }

    MdclResult res;
    res.grad_z_bar.assign(n, std::vector<double>(d, 0.0));
    res.grad_z_hat.assign(n, std::vector<double>(d, 0.0));
    std::vector<double> dsim(n * n, 0.0);

    for (std::size_t i = 0; i < n; ++i) {
        // log-sum-exp over the denominator terms with max subtraction
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (!include_positive_in_denominator && j == i) continue;
            mx = std::max(mx, sim[i * n + j] / tau);
        }
        double Z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (!include_positive_in_denominator && j == i) continue;
            Z += std::exp(sim[i * n + j] / tau - mx);
        }
        res.loss += -(sim[i * n + i] / tau) + mx + std::log(Z);
        dsim[i * n + i] += -1.0 / tau;
        for (std::size_t j = 0; j < n; ++j) {
            if (!include_positive_in_denominator && j == i) continue;
            dsim[i * n + j] += std::exp(sim[i * n + j] / tau - mx) / Z / tau;
        }
    }

    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double g = dsim[i * n + j];
            if (g == 0.0) continue;
            for (std::size_t k = 0; k < d; ++k) {
                res.grad_z_bar[i][k] += g * z_hat[j][k];
                res.grad_z_hat[j][k] += g * z_bar[i][k];
            }
        }
    return res;
}

struct MdclCombinedResult {
    double loss = 0.0;
    MdclResult teacher;
    MdclResult student;
};

// L_mdcl = L^S + L^T over the two embedding sets. Gradient routing (student
// side into extractor + head, teacher side into the teacher head only) is
// the trainer's job; this returns embedding-level gradients for both sides.
inline MdclCombinedResult mdcl_combined(const std::vector<DenseArray>& teacher_z_bar,
                                        const std::vector<DenseArray>& teacher_z_hat,
                                        const std::vector<DenseArray>& student_z_bar,
                                        const std::vector<DenseArray>& student_z_hat, double tau,
                                        bool include_positive_in_denominator = false) {
    MdclCombinedResult res;
    res.teacher = mdcl_loss_one_side(teacher_z_bar, teacher_z_hat, tau,
                                     include_positive_in_denominator);
    res.student = mdcl_loss_one_side(student_z_bar, student_z_hat, tau,
                                     include_positive_in_denominator);
    res.loss = res.teacher.loss + res.student.loss;
    return res;
}

}  // namespace kd3
