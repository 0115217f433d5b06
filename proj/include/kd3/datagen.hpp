#pragma once

// Synthetic distribution-shift benchmark and IDX (MNIST-format) ingestion.
//
// The benchmark draws K isotropic Gaussian blobs for the original data and
// builds a web pool from three strata: fresh in-distribution draws,
// style-shifted draws (affine perturbation of instance statistics) and
// open-set draws from extra classes at distant means. Pool labels and
// provenance exist for evaluation only; the training path never reads them.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <type_traits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kd3/array.hpp"
#include "kd3/numerics.hpp"

namespace kd3 {

enum class Provenance : std::uint8_t { InDistribution = 0, StyleShifted = 1, OpenSet = 2 };

struct LabeledSet {
    std::vector<DenseArray> instances;
    std::optional<std::vector<int>> labels;
    int K = 0;
    std::optional<std::vector<Provenance>> provenance;

    std::size_t size() const { return instances.size(); }
    std::size_t dim() const { return instances.empty() ? 0 : instances[0].size(); }

    void validate() const {
        for (const auto& x : instances)
            if (!x.same_shape(instances[0]))
                throw std::invalid_argument("LabeledSet: instances differ in shape");
        if (labels) {
            if (labels->size() != instances.size())
                throw std::invalid_argument("LabeledSet: label count mismatch");
            for (int y : *labels)
                if (y < 0 || y >= K)
                    throw std::invalid_argument("LabeledSet: label " + std::to_string(y) +
                                                " outside [0, " + std::to_string(K) + ")");
        }
        if (provenance && provenance->size() != instances.size())
            throw std::invalid_argument("LabeledSet: provenance count mismatch");
    }
};

struct ShiftBenchmarkConfig {
    std::size_t dimension = 16;
    int classes = 4;
    double mean_separation = 4.0;   // class k mean = mean_separation * e_k
    double within_std = 1.0;
    std::size_t n_teacher_train = 2000;
    std::size_t n_test = 1000;
    std::size_t n_pool_in = 3000;
    std::size_t n_pool_style = 2000;
    std::size_t n_pool_open = 2000;
    double style_lo = 0.5;
    double style_hi = 2.0;
    double style_offset = 1.5;
    int open_set_classes = 2;
    std::uint64_t seed = 1;

    void validate() const {
        if (dimension < 2) throw std::invalid_argument("benchmark: dimension must be >= 2");
        if (classes < 2) throw std::invalid_argument("benchmark: classes must be >= 2");
        if (style_lo > style_hi) throw std::invalid_argument("benchmark: style_lo > style_hi");
        if (style_lo <= 0.0) throw std::invalid_argument("benchmark: style_lo must be positive");
        if (n_pool_in + n_pool_style + n_pool_open == 0)
            throw std::invalid_argument("benchmark: total pool size is zero");
        if (n_pool_open > 0 && open_set_classes < 1)
            throw std::invalid_argument("benchmark: open-set draws need open_set_classes >= 1");
        if (dimension < static_cast<std::size_t>(classes + open_set_classes))
            throw std::invalid_argument("benchmark: dimension too small for class means");
    }
};

// Average Bayes max-probability per pool stratum, checked at generation time.
struct BenchmarkDiagnostics {
    double avg_maxprob_in_distribution = 0.0;
    double avg_maxprob_open_set = 0.0;
    bool ordering_holds = false;  // in-distribution average exceeds open-set average
};

struct ShiftBenchmark {
    LabeledSet original_train;
    LabeledSet web_pool;
    LabeledSet test;
    BenchmarkDiagnostics diagnostics;
};

// out = a*x + b elementwise; shifts instance statistics to mu' = a*mu + b,
// sigma' = a*sigma.
inline DenseArray style_shift(const DenseArray& x, double a, double b) {
    if (a <= 0.0) throw std::invalid_argument("style_shift: scale must be positive");
    DenseArray out = x;
    for (double& v : out.values) v = a * v + b;
    return out;
}

namespace detail {

inline DenseArray draw_blob(std::size_t d, int cls, double sep, double sd, Rng& rng) {
    DenseArray x = DenseArray::zeros({d});
    for (std::size_t j = 0; j < d; ++j) x[j] = sd * rng.normal();
    x[static_cast<std::size_t>(cls)] += sep;
    return x;
}

// Posterior max-probability of the Bayes classifier over the K original blobs.
inline double bayes_maxprob(const DenseArray& x, const ShiftBenchmarkConfig& cfg) {
    std::vector<double> logp(static_cast<std::size_t>(cfg.classes));
    const double inv2s2 = 1.0 / (2.0 * cfg.within_std * cfg.within_std);
    for (int k = 0; k < cfg.classes; ++k) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < cfg.dimension; ++j) {
            double mu = (j == static_cast<std::size_t>(k)) ? cfg.mean_separation : 0.0;
            double diff = x[j] - mu;
            d2 += diff * diff;
        }
        logp[static_cast<std::size_t>(k)] = -d2 * inv2s2;
    }
    std::vector<double> p = softmax_vec(logp);
    return *std::max_element(p.begin(), p.end());
}

}  // namespace detail

inline ShiftBenchmark gen_shift_benchmark(const ShiftBenchmarkConfig& cfg) {
    cfg.validate();
    Rng base(cfg.seed);
    Rng rng_train = base.split(1);
    Rng rng_test = base.split(2);
    Rng rng_in = base.split(3);
    Rng rng_style = base.split(4);
    Rng rng_open = base.split(5);

    ShiftBenchmark out;
    auto fill_labeled = [&](LabeledSet& set, std::size_t n, Rng& rng) {
        set.K = cfg.classes;
        set.labels.emplace();
        for (std::size_t i = 0; i < n; ++i) {
            int cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.classes)));
            set.instances.push_back(
                detail::draw_blob(cfg.dimension, cls, cfg.mean_separation, cfg.within_std, rng));
            set.labels->push_back(cls);
        }
    };
    fill_labeled(out.original_train, cfg.n_teacher_train, rng_train);
    fill_labeled(out.test, cfg.n_test, rng_test);

    // Pool label space covers the open-set classes too, so ground-truth labels
    // stay in range; training never reads them.
    LabeledSet& pool = out.web_pool;
    pool.K = cfg.classes + cfg.open_set_classes;
    pool.labels.emplace();
    pool.provenance.emplace();
    for (std::size_t i = 0; i < cfg.n_pool_in; ++i) {
        int cls = static_cast<int>(rng_in.below(static_cast<std::uint64_t>(cfg.classes)));
        pool.instances.push_back(
            detail::draw_blob(cfg.dimension, cls, cfg.mean_separation, cfg.within_std, rng_in));
        pool.labels->push_back(cls);
        pool.provenance->push_back(Provenance::InDistribution);
    }
    for (std::size_t i = 0; i < cfg.n_pool_style; ++i) {
        int cls = static_cast<int>(rng_style.below(static_cast<std::uint64_t>(cfg.classes)));
        DenseArray x =
            detail::draw_blob(cfg.dimension, cls, cfg.mean_separation, cfg.within_std, rng_style);
        double a = cfg.style_lo + (cfg.style_hi - cfg.style_lo) * rng_style.uniform();
        pool.instances.push_back(style_shift(x, a, cfg.style_offset));
        pool.labels->push_back(cls);
        pool.provenance->push_back(Provenance::StyleShifted);
    }
    for (std::size_t i = 0; i < cfg.n_pool_open; ++i) {
        int extra = static_cast<int>(rng_open.below(static_cast<std::uint64_t>(cfg.open_set_classes)));
        int cls = cfg.classes + extra;  // means at mean_separation * e_{K+extra}
        pool.instances.push_back(
            detail::draw_blob(cfg.dimension, cls, cfg.mean_separation, cfg.within_std, rng_open));
        pool.labels->push_back(cls);
        pool.provenance->push_back(Provenance::OpenSet);
    }

    // Generation-time check: Bayes max-probability separates the strata.
    double sum_in = 0.0, sum_open = 0.0;
    std::size_t n_in = 0, n_open = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        double p = detail::bayes_maxprob(pool.instances[i], cfg);
        if ((*pool.provenance)[i] == Provenance::InDistribution) { sum_in += p; ++n_in; }
        if ((*pool.provenance)[i] == Provenance::OpenSet) { sum_open += p; ++n_open; }
    }
    out.diagnostics.avg_maxprob_in_distribution = n_in ? sum_in / static_cast<double>(n_in) : 0.0;
    out.diagnostics.avg_maxprob_open_set = n_open ? sum_open / static_cast<double>(n_open) : 0.0;
    out.diagnostics.ordering_holds =
        n_open == 0 || out.diagnostics.avg_maxprob_in_distribution >
                           out.diagnostics.avg_maxprob_open_set;

    out.original_train.validate();
    out.web_pool.validate();
    out.test.validate();
    return out;
}

// ---------------------------------------------------------------------------
// IDX format (big-endian magic 0x00000801 labels / 0x00000803 images).

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in)
        throw std::runtime_error("IDX: " + path + ": truncated at byte offset " +
                                 std::to_string(offset));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

// Loads IDX images (scaled to [0,1], flattened to rows*cols) and optional labels.
inline LabeledSet load_idx(const std::string& images_path,
                           const std::optional<std::string>& labels_path = std::nullopt) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("IDX: cannot open " + images_path);
    std::uint32_t magic = detail::read_be32(img, images_path, 0);
    if (magic != 0x00000803u)
        throw std::runtime_error("IDX: " + images_path + ": bad image magic 0x" +
                                 [&] { char buf[16]; std::snprintf(buf, sizeof buf, "%08x", magic); return std::string(buf); }() +
                                 " at byte offset 0");
    std::uint32_t n = detail::read_be32(img, images_path, 4);
    std::uint32_t rows = detail::read_be32(img, images_path, 8);
    std::uint32_t cols = detail::read_be32(img, images_path, 12);
    const std::size_t px = std::size_t(rows) * cols;

    LabeledSet out;
    out.instances.reserve(n);
    std::vector<unsigned char> buf(px);
    for (std::uint32_t i = 0; i < n; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(px));
        if (!img)
            throw std::runtime_error("IDX: " + images_path + ": truncated payload at byte offset " +
                                     std::to_string(16 + std::size_t(i) * px));
        DenseArray x = DenseArray::zeros({px});
        for (std::size_t j = 0; j < px; ++j) x[j] = buf[j] / 255.0;
        out.instances.push_back(std::move(x));
    }

    if (labels_path) {
        std::ifstream lab(*labels_path, std::ios::binary);
        if (!lab) throw std::runtime_error("IDX: cannot open " + *labels_path);
        std::uint32_t lmagic = detail::read_be32(lab, *labels_path, 0);
        if (lmagic != 0x00000801u)
            throw std::runtime_error("IDX: " + *labels_path + ": bad label magic at byte offset 0");
        std::uint32_t ln = detail::read_be32(lab, *labels_path, 4);
        if (ln != n)
            throw std::runtime_error("IDX: label count " + std::to_string(ln) +
                                     " differs from image count " + std::to_string(n));
        out.labels.emplace();
        out.labels->reserve(ln);
        int maxlab = 0;
        for (std::uint32_t i = 0; i < ln; ++i) {
            char c;
            lab.read(&c, 1);
            if (!lab)
                throw std::runtime_error("IDX: " + *labels_path + ": truncated at byte offset " +
                                         std::to_string(8 + i));
            int y = static_cast<unsigned char>(c);
            maxlab = std::max(maxlab, y);
            out.labels->push_back(y);
        }
        out.K = maxlab + 1;
    }
    return out;
}

// Channel-major [3, ...] to single channel by averaging.
inline DenseArray grayscale_merge(const DenseArray& rgb) {
    if (rgb.shape.empty() || rgb.shape[0] != 3)
        throw std::invalid_argument("grayscale_merge: expected leading channel dimension 3");
    std::size_t per = rgb.size() / 3;
    std::vector<std::size_t> out_shape(rgb.shape.begin() + 1, rgb.shape.end());
    if (out_shape.empty()) out_shape = {1};
    DenseArray out = DenseArray::zeros(out_shape);
    for (std::size_t j = 0; j < per; ++j)
        out[j] = (rgb[j] + rgb[per + j] + rgb[2 * per + j]) / 3.0;
    return out;
}

// ---------------------------------------------------------------------------
// Dataset container file: "KD3D" magic, version, counts, little-endian f64
// payload, then label and provenance byte arrays when present.

namespace detail {

template <typename T>
void write_le(std::ostream& out, T v) {
    unsigned char b[sizeof(T)];
    std::uint64_t u;
    if constexpr (sizeof(T) == 8 && std::is_floating_point_v<T>) {
        std::memcpy(&u, &v, 8);
    } else {
        u = static_cast<std::uint64_t>(v);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    out.write(reinterpret_cast<char*>(b), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& path) {
    unsigned char b[sizeof(T)];
    in.read(reinterpret_cast<char*>(b), sizeof(T));
    if (!in) throw std::runtime_error("dataset file " + path + ": truncated header/payload");
    std::uint64_t u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= std::uint64_t(b[i]) << (8 * i);
    if constexpr (sizeof(T) == 8 && std::is_floating_point_v<T>) {
        T v;
        std::memcpy(&v, &u, 8);
        return v;
    } else {
        return static_cast<T>(u);
    }
}

}  // namespace detail

inline constexpr std::uint32_t kDatasetMagic = 0x4B443344u;  // "KD3D"
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const LabeledSet& set, const std::string& path) {
    set.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    detail::write_le<std::uint32_t>(out, kDatasetMagic);
    detail::write_le<std::uint32_t>(out, kDatasetVersion);
    detail::write_le<std::uint64_t>(out, set.size());
    detail::write_le<std::uint64_t>(out, set.dim());
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.K));
    std::uint32_t flags = (set.labels ? 1u : 0u) | (set.provenance ? 2u : 0u);
    detail::write_le<std::uint32_t>(out, flags);
    for (const auto& x : set.instances)
        for (double v : x.values) detail::write_le<double>(out, v);
    if (set.labels)
        for (int y : *set.labels) out.put(static_cast<char>(y));
    if (set.provenance)
        for (Provenance p : *set.provenance) out.put(static_cast<char>(p));
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline LabeledSet load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::uint32_t magic = detail::read_le<std::uint32_t>(in, path);
    if (magic != kDatasetMagic)
        throw std::runtime_error("dataset file " + path + ": bad magic");
    std::uint32_t version = detail::read_le<std::uint32_t>(in, path);
    if (version != kDatasetVersion)
        throw std::runtime_error("dataset file " + path + ": unsupported version " +
                                 std::to_string(version));
    std::uint64_t n = detail::read_le<std::uint64_t>(in, path);
    std::uint64_t d = detail::read_le<std::uint64_t>(in, path);
    std::uint32_t K = detail::read_le<std::uint32_t>(in, path);
    std::uint32_t flags = detail::read_le<std::uint32_t>(in, path);
    LabeledSet set;
    set.K = static_cast<int>(K);
    set.instances.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        DenseArray x = DenseArray::zeros({static_cast<std::size_t>(d)});
        for (std::uint64_t j = 0; j < d; ++j) x[j] = detail::read_le<double>(in, path);
        set.instances.push_back(std::move(x));
    }
    if (flags & 1u) {
        set.labels.emplace();
        for (std::uint64_t i = 0; i < n; ++i) {
            char c;
            in.read(&c, 1);
            if (!in) throw std::runtime_error("dataset file " + path + ": truncated labels");
            set.labels->push_back(static_cast<unsigned char>(c));
        }
    }
    if (flags & 2u) {
        set.provenance.emplace();
        for (std::uint64_t i = 0; i < n; ++i) {
            char c;
            in.read(&c, 1);
            if (!in) throw std::runtime_error("dataset file " + path + ": truncated provenance");
            set.provenance->push_back(static_cast<Provenance>(c));
        }
    }
    set.validate();
    return set;
}

}  // namespace kd3
