#pragma once

// Teacher/student networks: ReLU MLP feature extractor, shared linear
// classifier (frozen after teacher pretraining) and an affine projection
// head whose output is L2-normalized into the embedding space.
//
// Gradients are analytic throughout; forward passes cache activations for
// the backward passes used by the trainer.

#include <cmath>
#include <fstream>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "kd3/array.hpp"
#include "kd3/datagen.hpp"
#include "kd3/numerics.hpp"
#include "kd3/optim.hpp"

namespace kd3 {

struct AffineLayer {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::vector<double> W;  // out_dim x in_dim, row-major
    std::vector<double> b;  // out_dim

    void affine(const double* x, double* y) const {
        for (std::size_t o = 0; o < out_dim; ++o) {
            double s = b[o];
            const double* w = &W[o * in_dim];
            for (std::size_t i = 0; i < in_dim; ++i) s += w[i] * x[i];
            y[o] = s;
        }
    }
};

// Glorot-uniform weights, zero biases.
inline AffineLayer init_affine(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
    AffineLayer l;
    l.in_dim = in_dim;
    l.out_dim = out_dim;
    l.W.resize(in_dim * out_dim);
    l.b.assign(out_dim, 0.0);
    double bound = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
    for (double& w : l.W) w = bound * (2.0 * rng.uniform() - 1.0);
    return l;
}

struct FeatureExtractor {
    std::vector<AffineLayer> layers;  // ReLU between layers, none after the last

    std::size_t input_dim() const { return layers.front().in_dim; }
    std::size_t feature_dim() const { return layers.back().out_dim; }
};

struct SharedClassifier {
    AffineLayer linear;  // K x d_f
    bool frozen = false;
    int K() const { return static_cast<int>(linear.out_dim); }
};

struct ProjectionHead {
    AffineLayer linear;  // d_e x d_f
    std::size_t embed_dim() const { return linear.out_dim; }
};

enum class Role { Teacher, Student };

struct Network {
    FeatureExtractor extractor;
    std::shared_ptr<SharedClassifier> classifier;  // aliased between T and S when sharing
    ProjectionHead head;
    Role role = Role::Teacher;
};

struct ArchConfig {
    std::size_t input_dim = 16;
    std::vector<std::size_t> hidden = {64, 64};
    std::size_t feature_dim = 32;
    int classes = 4;
    std::size_t embed_dim = 32;
};

inline Network make_network(const ArchConfig& arch, Role role, Rng& rng) {
    Network net;
    net.role = role;
    std::size_t prev = arch.input_dim;
    for (std::size_t h : arch.hidden) {
        net.extractor.layers.push_back(init_affine(prev, h, rng));
        prev = h;
    }
    net.extractor.layers.push_back(init_affine(prev, arch.feature_dim, rng));
    net.classifier = std::make_shared<SharedClassifier>();
    net.classifier->linear = init_affine(arch.feature_dim, static_cast<std::size_t>(arch.classes), rng);
    net.head.linear = init_affine(arch.feature_dim, arch.embed_dim, rng);
    return net;
}

// ---------------------------------------------------------------------------
// Forward passes

struct ForwardCache {
    std::vector<std::vector<double>> pre;   // per layer, pre-activation
    std::vector<std::vector<double>> post;  // per layer, post-ReLU (last = feature)
    std::vector<double> input;
};

inline DenseArray forward_features(const Network& net, const DenseArray& x,
                                   ForwardCache* cache = nullptr) {
    if (x.size() != net.extractor.input_dim())
        throw std::invalid_argument("forward_features: input length " + std::to_string(x.size()) +
                                    " does not match extractor input " +
                                    std::to_string(net.extractor.input_dim()));
    std::vector<double> cur = x.values;
    if (cache) {
        cache->pre.clear();
        cache->post.clear();
        cache->input = cur;
    }
    const std::size_t L = net.extractor.layers.size();
    for (std::size_t li = 0; li < L; ++li) {
        const AffineLayer& layer = net.extractor.layers[li];
        std::vector<double> out(layer.out_dim);
        layer.affine(cur.data(), out.data());
        if (cache) cache->pre.push_back(out);
        if (li + 1 < L)
            for (double& v : out) v = std::max(0.0, v);  // ReLU on hidden layers
        if (cache) cache->post.push_back(out);
        cur = std::move(out);
    }
    return DenseArray::vector(std::move(cur));
}

inline DenseArray classifier_logits(const Network& net, const DenseArray& feature) {
    const AffineLayer& l = net.classifier->linear;
    if (feature.size() != l.in_dim)
        throw std::invalid_argument("classifier: feature length mismatch");
    DenseArray out = DenseArray::zeros({l.out_dim});
    l.affine(feature.values.data(), out.values.data());
    return out;
}

inline DenseArray predict_probs(const Network& net, const DenseArray& x) {
    return softmax(classifier_logits(net, forward_features(net, x)), 0);
}

// Projection-and-normalize; returns the unit embedding (or zero vector for a
// degenerate pre-normalization vector).
inline DenseArray project(const Network& net, const DenseArray& feature,
                          std::vector<double>* pre_norm = nullptr) {
    const AffineLayer& l = net.head.linear;
    if (feature.size() != l.in_dim)
        throw std::invalid_argument("project: feature length mismatch");
    DenseArray u = DenseArray::zeros({l.out_dim});
    l.affine(feature.values.data(), u.values.data());
    if (pre_norm) *pre_norm = u.values;
    return l2_normalize(u);
}

// ---------------------------------------------------------------------------
// Gradients

struct AffineGrads {
    std::vector<double> dW;
    std::vector<double> db;
    void init(const AffineLayer& l) {
        dW.assign(l.W.size(), 0.0);
        db.assign(l.b.size(), 0.0);
    }
};

struct NetworkGrads {
    std::vector<AffineGrads> extractor;
    AffineGrads classifier;  // used only when the classifier is trainable
    AffineGrads head;

    void init(const Network& net) {
        extractor.resize(net.extractor.layers.size());
        for (std::size_t i = 0; i < extractor.size(); ++i)
            extractor[i].init(net.extractor.layers[i]);
        classifier.init(net.classifier->linear);
        head.init(net.head.linear);
    }
    void zero() {
        for (auto& g : extractor) {
            std::fill(g.dW.begin(), g.dW.end(), 0.0);
            std::fill(g.db.begin(), g.db.end(), 0.0);
        }
        std::fill(classifier.dW.begin(), classifier.dW.end(), 0.0);
        std::fill(classifier.db.begin(), classifier.db.end(), 0.0);
        std::fill(head.dW.begin(), head.dW.end(), 0.0);
        std::fill(head.db.begin(), head.db.end(), 0.0);
    }
};

// Accumulates dL/d(W,b) of one affine layer; returns dL/d(input).
inline std::vector<double> affine_backward(const AffineLayer& l, const double* x,
                                           const double* dy, AffineGrads& g) {
    std::vector<double> dx(l.in_dim, 0.0);
    for (std::size_t o = 0; o < l.out_dim; ++o) {
        g.db[o] += dy[o];
        const double go = dy[o];
        double* gw = &g.dW[o * l.in_dim];
        const double* w = &l.W[o * l.in_dim];
        for (std::size_t i = 0; i < l.in_dim; ++i) {
            gw[i] += go * x[i];
            dx[i] += go * w[i];
        }
    }
    return dx;
}

// Backprop dL/d(feature) through the extractor, accumulating into grads.
inline void extractor_backward(const Network& net, const ForwardCache& cache,
                               const std::vector<double>& dfeature,
                               std::vector<AffineGrads>& grads) {
    const std::size_t L = net.extractor.layers.size();
    std::vector<double> d = dfeature;
    for (std::size_t li = L; li-- > 0;) {
        const double* input = (li == 0) ? cache.input.data() : cache.post[li - 1].data();
        d = affine_backward(net.extractor.layers[li], input, d.data(), grads[li]);
        if (li > 0) {
            const std::vector<double>& pre = cache.pre[li - 1];
            for (std::size_t i = 0; i < d.size(); ++i)
                if (pre[i] <= 0.0) d[i] = 0.0;
        }
    }
}

// Backprop through z = u / ||u|| (zero output below kNormEps has zero gradient).
inline std::vector<double> normalize_backward(const std::vector<double>& pre_norm,
                                              const std::vector<double>& dz) {
    double n = l2_norm(pre_norm);
    std::vector<double> du(pre_norm.size(), 0.0);
    if (n < kNormEps) return du;
    double zdotg = 0.0;
    for (std::size_t i = 0; i < pre_norm.size(); ++i) zdotg += (pre_norm[i] / n) * dz[i];
    for (std::size_t i = 0; i < pre_norm.size(); ++i)
        du[i] = (dz[i] - (pre_norm[i] / n) * zdotg) / n;
    return du;
}

// ---------------------------------------------------------------------------
// Parameter traversal (optimizers, finite differences, bit-compare)

inline std::vector<std::span<double>> trainable_params(Network& net, bool include_classifier) {
    std::vector<std::span<double>> out;
    for (auto& l : net.extractor.layers) {
        out.emplace_back(l.W);
        out.emplace_back(l.b);
    }
    if (include_classifier && !net.classifier->frozen) {
        out.emplace_back(net.classifier->linear.W);
        out.emplace_back(net.classifier->linear.b);
    }
    out.emplace_back(net.head.linear.W);
    out.emplace_back(net.head.linear.b);
    return out;
}

inline std::vector<std::span<double>> grad_spans(NetworkGrads& g, bool include_classifier,
                                                 const Network& net) {
    std::vector<std::span<double>> out;
    for (auto& l : g.extractor) {
        out.emplace_back(l.dW);
        out.emplace_back(l.db);
    }
    if (include_classifier && !net.classifier->frozen) {
        out.emplace_back(g.classifier.dW);
        out.emplace_back(g.classifier.db);
    }
    out.emplace_back(g.head.dW);
    out.emplace_back(g.head.db);
    return out;
}

// ---------------------------------------------------------------------------
// Teacher pretraining (plain cross-entropy on labeled data)

struct PretrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    OptimizerConfig opt;
};

struct PretrainResult {
    Network teacher;
    double final_train_accuracy = 0.0;
};

// Cross-entropy of one instance through extractor + classifier; accumulates
// gradients (classifier included unless frozen). Returns the loss value.
inline double cross_entropy_backward(Network& net, const DenseArray& x, int label,
                                     double scale, NetworkGrads& grads) {
    ForwardCache cache;
    DenseArray feat = forward_features(net, x, &cache);
    DenseArray logits = classifier_logits(net, feat);
    DenseArray probs = softmax(logits, 0);
    double loss = -std::log(std::max(probs[static_cast<std::size_t>(label)], 1e-300));

    std::vector<double> dlogits(probs.size());
    for (std::size_t k = 0; k < probs.size(); ++k)
        dlogits[k] = scale * (probs[k] - (static_cast<int>(k) == label ? 1.0 : 0.0));
    std::vector<double> dfeat;
    if (net.classifier->frozen) {
        AffineGrads scratch;
        scratch.init(net.classifier->linear);
        dfeat = affine_backward(net.classifier->linear, feat.values.data(), dlogits.data(), scratch);
    } else {
        dfeat = affine_backward(net.classifier->linear, feat.values.data(), dlogits.data(),
                                grads.classifier);
    }
    extractor_backward(net, cache, dfeat, grads.extractor);
    return loss;
}

inline PretrainResult pretrain_teacher(const LabeledSet& data, const ArchConfig& arch,
                                       const PretrainConfig& cfg, Rng& rng) {
    if (!data.labels) throw std::invalid_argument("pretrain_teacher: data must be labeled");
    if (data.K != arch.classes)
        throw std::invalid_argument("pretrain_teacher: class count mismatch (data K=" +
                                    std::to_string(data.K) + ", arch K=" +
                                    std::to_string(arch.classes) + ")");
    data.validate();

    Rng init_rng = rng.split(11);
    Rng shuffle_rng = rng.split(12);
    PretrainResult res;
    res.teacher = make_network(arch, Role::Teacher, init_rng);
    Network& net = res.teacher;

    auto params = trainable_params(net, /*include_classifier=*/true);
    Optimizer opt(cfg.opt, params);
    NetworkGrads grads;
    grads.init(net);

    const std::size_t n = data.size();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = permutation(n, shuffle_rng);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            std::size_t end = std::min(n, start + cfg.batch_size);
            grads.zero();
            double inv = 1.0 / static_cast<double>(end - start);
            for (std::size_t i = start; i < end; ++i) {
                std::size_t idx = order[i];
                cross_entropy_backward(net, data.instances[idx], (*data.labels)[idx], inv, grads);
            }
            auto gs = grad_spans(grads, /*include_classifier=*/true, net);
            opt.step(params, gs, lr_schedule_scale(epoch, cfg.epochs));
        }
    }

    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        DenseArray p = predict_probs(net, data.instances[i]);
        std::size_t arg = 0;
        for (std::size_t k = 1; k < p.size(); ++k)
            if (p[k] > p[arg]) arg = k;
        if (static_cast<int>(arg) == (*data.labels)[i]) ++correct;
    }
    res.final_train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    net.classifier->frozen = true;  // frozen for all downstream use
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoints (versioned JSON, decimal float arrays)

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json layer_to_json(const AffineLayer& l) {
    return {{"in_dim", l.in_dim}, {"out_dim", l.out_dim}, {"W", l.W}, {"b", l.b}};
}

inline AffineLayer layer_from_json(const nlohmann::json& j, const std::string& section) {
    for (const char* key : {"in_dim", "out_dim", "W", "b"})
        if (!j.contains(key))
            throw std::runtime_error("checkpoint: missing field '" + std::string(key) +
                                     "' in section " + section);
    AffineLayer l;
    l.in_dim = j.at("in_dim").get<std::size_t>();
    l.out_dim = j.at("out_dim").get<std::size_t>();
    l.W = j.at("W").get<std::vector<double>>();
    l.b = j.at("b").get<std::vector<double>>();
    if (l.W.size() != l.in_dim * l.out_dim || l.b.size() != l.out_dim)
        throw std::runtime_error("checkpoint: inconsistent dimensions in section " + section);
    return l;
}

}  // namespace detail

inline void save_checkpoint(const Network& net, const std::string& path) {
    nlohmann::json j;
    j["format_version"] = kCheckpointVersion;
    j["role"] = net.role == Role::Teacher ? "teacher" : "student";
    j["extractor"] = nlohmann::json::array();
    for (const auto& l : net.extractor.layers) j["extractor"].push_back(detail::layer_to_json(l));
    j["classifier"] = detail::layer_to_json(net.classifier->linear);
    j["classifier_frozen"] = net.classifier->frozen;
    j["head"] = detail::layer_to_json(net.head.linear);
    j["embed_dim"] = net.head.linear.out_dim;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

inline Network load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint " + path + ": parse error: " + e.what());
    }
    for (const char* key :
         {"format_version", "role", "extractor", "classifier", "classifier_frozen", "head"})
        if (!j.contains(key))
            throw std::runtime_error("checkpoint " + path + ": missing section '" + key + "'");
    if (j.at("format_version").get<int>() != kCheckpointVersion)
        throw std::runtime_error("checkpoint " + path + ": unsupported format_version");
    Network net;
    net.role = j.at("role").get<std::string>() == "teacher" ? Role::Teacher : Role::Student;
    for (std::size_t i = 0; i < j.at("extractor").size(); ++i)
        net.extractor.layers.push_back(
            detail::layer_from_json(j.at("extractor").at(i), "extractor[" + std::to_string(i) + "]"));
    net.classifier = std::make_shared<SharedClassifier>();
    net.classifier->linear = detail::layer_from_json(j.at("classifier"), "classifier");
    net.classifier->frozen = j.at("classifier_frozen").get<bool>();
    net.head.linear = detail::layer_from_json(j.at("head"), "head");
    return net;
}

}  // namespace kd3
