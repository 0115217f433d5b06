#pragma once

// SGD with momentum / Adam over flat parameter spans.
//
// SGD update (decoupled from the loss, weight decay folded into the
// gradient): v = momentum*v + g + wd*theta; theta -= lr*v.

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kd3 {

enum class OptimizerKind { SgdMomentum, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::SgdMomentum;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    // Adam
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        if (learning_rate < 0.0) throw std::invalid_argument("optimizer: learning rate must be >= 0");
    }
};

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
    if (s == "sgd") return OptimizerKind::SgdMomentum;
    if (s == "adam") return OptimizerKind::Adam;
    throw std::invalid_argument("unknown optimizer '" + s + "' (expected sgd or adam)");
}

class Optimizer {
  public:
    Optimizer(OptimizerConfig cfg, const std::vector<std::span<double>>& params) : cfg_(cfg) {
        cfg_.validate();
        state1_.reserve(params.size());
        state2_.reserve(params.size());
        for (const auto& p : params) {
            state1_.emplace_back(p.size(), 0.0);
            state2_.emplace_back(p.size(), 0.0);
        }
    }

    // lr_scale applies the schedule multiplier for the current epoch.
    void step(const std::vector<std::span<double>>& params,
              const std::vector<std::span<double>>& grads, double lr_scale = 1.0) {
        if (params.size() != state1_.size() || grads.size() != params.size())
            throw std::invalid_argument("optimizer: parameter/gradient group mismatch");
        const double lr = cfg_.learning_rate * lr_scale;
        ++t_;
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto p = params[k];
            auto g = grads[k];
            auto& m = state1_[k];
            auto& v = state2_[k];
            if (cfg_.kind == OptimizerKind::SgdMomentum) {
                for (std::size_t i = 0; i < p.size(); ++i) {
                    double grad = g[i] + cfg_.weight_decay * p[i];
                    m[i] = cfg_.momentum * m[i] + grad;
                    p[i] -= lr * m[i];
                }
            } else {
                const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
                const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
                for (std::size_t i = 0; i < p.size(); ++i) {
                    double grad = g[i] + cfg_.weight_decay * p[i];
                    m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grad;
                    v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grad * grad;
                    double mh = m[i] / bc1;
                    double vh = v[i] / bc2;
                    p[i] -= lr * mh / (std::sqrt(vh) + cfg_.adam_eps);
                }
            }
        }
    }

  private:
    OptimizerConfig cfg_;
    long t_ = 0;
    std::vector<std::vector<double>> state1_;  // momentum / first moment
    std::vector<std::vector<double>> state2_;  // second moment (Adam)
};

// Step decay: divided by ten at 62.5%, 75% and 87.5% of total epochs.
inline double lr_schedule_scale(std::size_t epoch, std::size_t total_epochs) {
    double frac = total_epochs == 0 ? 0.0
                                    : static_cast<double>(epoch) / static_cast<double>(total_epochs);
    double scale = 1.0;
    if (frac >= 0.625) scale *= 0.1;
    if (frac >= 0.75) scale *= 0.1;
    if (frac >= 0.875) scale *= 0.1;
    return scale;
}

}  // namespace kd3
