#pragma once

// Weighted feature alignment: per-instance weights from teacher-student
// prediction agreement, and the weighted MSE loss over student features.
// Weights are stop-gradient constants; the teacher side is constant too.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "kd3/array.hpp"
#include "kd3/numerics.hpp"

namespace kd3 {

// w = 1 - sigmoid(||p_S - p_T||_1); in (0, 0.5] for probability vectors.
inline double alignment_weight(const DenseArray& p_student, const DenseArray& p_teacher) {
    if (p_student.size() != p_teacher.size())
        throw std::invalid_argument("alignment_weight: length mismatch");
    double l1 = 0.0;
    for (std::size_t k = 0; k < p_student.size(); ++k)
        l1 += std::abs(p_student[k] - p_teacher[k]);
    return 1.0 - sigmoid(l1);
}

struct AlignmentBatch {
    std::vector<DenseArray> teacher_features;
    std::vector<DenseArray> student_features;
    std::vector<double> weights;

    std::size_t size() const { return student_features.size(); }
};

struct WfaResult {
    double loss = 0.0;
    bool empty = false;
    // dL/d(student feature) per instance.
    std::vector<std::vector<double>> feature_grads;
};

// loss = (1/B) sum_i w_i * mean_k (phiS_ik - phiT_ik)^2; the MSE averages
// over the d_f feature dimensions.
inline WfaResult wfa_loss(const AlignmentBatch& batch) {
    WfaResult res;
    const std::size_t B = batch.size();
    if (B == 0) {
        res.empty = true;
        return res;
    }
    if (batch.teacher_features.size() != B || batch.weights.size() != B)
        throw std::invalid_argument("wfa_loss: batch field size mismatch");
    const std::size_t d_f = batch.student_features[0].size();
    res.feature_grads.resize(B);
    for (std::size_t i = 0; i < B; ++i) {
        const DenseArray& fs = batch.student_features[i];
        const DenseArray& ft = batch.teacher_features[i];
        if (fs.size() != d_f || ft.size() != d_f)
            throw std::invalid_argument("wfa_loss: feature length mismatch");
        double mse = 0.0;
        res.feature_grads[i].resize(d_f);
        const double w = batch.weights[i];
        for (std::size_t k = 0; k < d_f; ++k) {
            double diff = fs[k] - ft[k];
            mse += diff * diff;
            res.feature_grads[i][k] =
                w * 2.0 * diff / (static_cast<double>(d_f) * static_cast<double>(B));
        }
        res.loss += w * mse / static_cast<double>(d_f);
    }
    res.loss /= static_cast<double>(B);
    return res;
}

}  // namespace kd3
