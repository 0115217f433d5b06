#pragma once

// Teacher-student dynamic instance selection: time-dependent prediction
// combination, per-class adaptive thresholds and the selection operator.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kd3/array.hpp"
#include "kd3/datagen.hpp"
#include "kd3/model.hpp"
#include "kd3/util.hpp"

namespace kd3 {

struct ScheduleState {
    std::size_t epoch = 0;         // t, 0-based
    std::size_t total_epochs = 1;  // I

    void validate() const {
        if (total_epochs < 1) throw std::invalid_argument("ScheduleState: total epochs must be >= 1");
    }
};

// exp(-5*(t/(I/2) - 1)^2) for t <= I/2, else 1.
inline double alpha_schedule(const ScheduleState& state) {
    state.validate();
    double t = static_cast<double>(state.epoch);
    double half = static_cast<double>(state.total_epochs) / 2.0;
    if (t > half) return 1.0;
    double r = t / half - 1.0;
    return std::exp(-5.0 * r * r);
}

inline DenseArray combine_predictions(const DenseArray& p_teacher, const DenseArray& p_student,
                                      double alpha_t) {
    if (p_teacher.size() != p_student.size())
        throw std::invalid_argument("combine_predictions: length mismatch");
    DenseArray out = p_teacher;
    for (std::size_t k = 0; k < out.size(); ++k)
        out[k] = (1.0 - alpha_t) * p_teacher[k] + alpha_t * p_student[k];
    return out;
}

// Argmax with lowest-index tie-break; confidence is the winning probability.
inline std::pair<int, double> predict_and_confidence(const DenseArray& combined) {
    std::size_t arg = 0;
    for (std::size_t k = 1; k < combined.size(); ++k)
        if (combined[k] > combined[arg]) arg = k;
    return {static_cast<int>(arg), combined[arg]};
}

// T_k = (n_k / max_j n_j) * V_th.
inline std::vector<double> class_thresholds(const std::vector<std::size_t>& class_counts,
                                            double v_th) {
    if (v_th <= 0.0 || v_th > 1.0)
        throw std::invalid_argument("class_thresholds: V_th must be in (0, 1]");
    std::size_t mx = 0;
    for (std::size_t n : class_counts) mx = std::max(mx, n);
    if (mx == 0) throw std::invalid_argument("class_thresholds: all class counts are zero");
    std::vector<double> t(class_counts.size());
    for (std::size_t k = 0; k < class_counts.size(); ++k)
        t[k] = (static_cast<double>(class_counts[k]) / static_cast<double>(mx)) * v_th;
    return t;
}

struct SelectionOutcome {
    std::vector<int> predicted_labels;
    std::vector<double> confidences;
    std::vector<std::size_t> class_counts;  // K entries
    std::vector<double> thresholds;         // K entries
    std::vector<std::size_t> selected;      // pool indices, ascending
};

inline SelectionOutcome select_instances(const LabeledSet& pool, const Network& teacher,
                                         const Network& student, const ScheduleState& state,
                                         double v_th) {
    if (pool.size() == 0) throw std::invalid_argument("select_instances: empty pool");
    const double alpha_t = alpha_schedule(state);
    const std::size_t K = static_cast<std::size_t>(teacher.classifier->K());

    SelectionOutcome out;
    out.class_counts.assign(K, 0);
    out.predicted_labels.reserve(pool.size());
    out.confidences.reserve(pool.size());
    for (const auto& x : pool.instances) {
        DenseArray p_t = predict_probs(teacher, x);
        DenseArray p_s = predict_probs(student, x);
        DenseArray combined = combine_predictions(p_t, p_s, alpha_t);
        auto [label, conf] = predict_and_confidence(combined);
        out.predicted_labels.push_back(label);
        out.confidences.push_back(conf);
        ++out.class_counts[static_cast<std::size_t>(label)];
    }
    out.thresholds = class_thresholds(out.class_counts, v_th);
    for (std::size_t i = 0; i < pool.size(); ++i)
        if (out.confidences[i] > out.thresholds[static_cast<std::size_t>(out.predicted_labels[i])])
            out.selected.push_back(i);
    return out;
}

struct SelectionQuality {
    double precision = 0.0;  // selected instances tagged InDistribution / selected
    double recall = 0.0;     // selected InDistribution / all InDistribution
    bool empty_selection = false;
    std::vector<std::size_t> per_class_selected;  // indexed by predicted label
};

inline SelectionQuality selection_quality(const SelectionOutcome& outcome,
                                          const LabeledSet& pool) {
    if (!pool.provenance)
        throw std::invalid_argument("selection_quality: pool has no provenance tags");
    SelectionQuality q;
    q.per_class_selected.assign(outcome.class_counts.size(), 0);
    std::size_t in_total = 0, in_selected = 0;
    for (Provenance p : *pool.provenance)
        if (p == Provenance::InDistribution) ++in_total;
    for (std::size_t idx : outcome.selected) {
        ++q.per_class_selected[static_cast<std::size_t>(outcome.predicted_labels[idx])];
        if ((*pool.provenance)[idx] == Provenance::InDistribution) ++in_selected;
    }
    if (outcome.selected.empty()) {
        q.empty_selection = true;
        q.precision = 0.0;
    } else {
        q.precision = static_cast<double>(in_selected) / static_cast<double>(outcome.selected.size());
    }
    q.recall = in_total == 0 ? 0.0 : static_cast<double>(in_selected) / static_cast<double>(in_total);
    return q;
}

// CSV: index, y_pred, confidence, threshold, selected, provenance.
inline void export_selection_csv(const SelectionOutcome& outcome, const LabeledSet& pool,
                                 const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "index,y_pred,confidence,threshold,selected,provenance\n";
    std::vector<bool> sel(pool.size(), false);
    for (std::size_t idx : outcome.selected) sel[idx] = true;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const char* prov = "";
        if (pool.provenance) {
            switch ((*pool.provenance)[i]) {
                case Provenance::InDistribution: prov = "in_distribution"; break;
                case Provenance::StyleShifted: prov = "style_shifted"; break;
                case Provenance::OpenSet: prov = "open_set"; break;
            }
        }
        out << i << ',' << outcome.predicted_labels[i] << ',' << fmt_double(outcome.confidences[i])
            << ','
            << fmt_double(outcome.thresholds[static_cast<std::size_t>(outcome.predicted_labels[i])])
            << ',' << (sel[i] ? 1 : 0) << ',' << prov << '\n';
    }
}

}  // namespace kd3
