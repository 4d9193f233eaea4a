#pragma once

// Class-imbalanced synthetic streams: Gaussian-mixture inputs with additive
// noise augmentation, label-oracle embedding fixtures, and CSV embedding
// stream I/O.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "duel/kernel.hpp"

namespace duel {

struct DominantImbalance {
    double rho_max = 0.75;
};

struct LongTailImbalance {
    double ratio = 1.0;
};

using Imbalance = std::variant<DominantImbalance, LongTailImbalance>;

struct StreamConfig {
    std::size_t num_classes = 10;
    std::size_t input_dim = 32;
    double separation = 1.0;
    double within_sigma = 0.2;
    double augment_sigma = 0.2;
    Imbalance imbalance = DominantImbalance{};
    std::uint64_t seed = 0;
};

/// rho_min = (1 - rho_max) / (|C| - 1).
inline double dominant_rho_min(std::size_t num_classes, double rho_max) {
    if (num_classes < 2) throw std::invalid_argument("dominant profile needs at least two classes");
    return (1.0 - rho_max) / static_cast<double>(num_classes - 1);
}

/// Geometric long-tail profile rho_c ~ R^(-c/(|C|-1)); max/min = R.
inline std::vector<double> longtail_probs(std::size_t num_classes, double ratio) {
    if (!(ratio >= 1.0) || !std::isfinite(ratio))
        throw std::invalid_argument("long-tail ratio must be >= 1");
    if (num_classes == 0) throw std::invalid_argument("long-tail profile needs a class");
    if (num_classes == 1) return {1.0};
    std::vector<double> p(num_classes);
    const double span = static_cast<double>(num_classes - 1);
    for (std::size_t c = 0; c < num_classes; ++c)
        p[c] = std::pow(ratio, -static_cast<double>(c) / span);
    const double total = detail::pairwise_sum(p);
    for (double& x : p) x /= total;
    // Pin the endpoints so max/min equals the ratio to rounding.
    p.back() = p.front() / ratio;
    return p;
}

inline void validate(const StreamConfig& cfg) {
    if (cfg.num_classes < 2) throw std::invalid_argument("stream: need at least two classes");
    if (cfg.input_dim == 0) throw std::invalid_argument("stream: input_dim must be positive");
    if (!(cfg.within_sigma >= 0.0) || !(cfg.augment_sigma >= 0.0))
        throw std::invalid_argument("stream: noise scales must be nonnegative");
    if (!(cfg.separation > 0.0)) throw std::invalid_argument("stream: separation must be positive");
    if (const auto* d = std::get_if<DominantImbalance>(&cfg.imbalance)) {
        const double lo = 1.0 / static_cast<double>(cfg.num_classes);
        if (!(d->rho_max >= lo) || !(d->rho_max < 1.0))
            throw std::invalid_argument("stream: rho_max must lie in [1/|C|, 1)");
    } else {
        const auto& lt = std::get<LongTailImbalance>(cfg.imbalance);
        if (!(lt.ratio >= 1.0)) throw std::invalid_argument("stream: long-tail ratio must be >= 1");
    }
}

/// Class probabilities; class 0 is the dominant / head class.
inline std::vector<double> class_probabilities(const StreamConfig& cfg) {
    if (const auto* d = std::get_if<DominantImbalance>(&cfg.imbalance)) {
        std::vector<double> p(cfg.num_classes, dominant_rho_min(cfg.num_classes, d->rho_max));
        p[0] = d->rho_max;
        return p;
    }
    return longtail_probs(cfg.num_classes, std::get<LongTailImbalance>(cfg.imbalance).ratio);
}

inline int sample_class(const std::vector<double>& probs, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double r = u(rng);
    for (std::size_t c = 0; c + 1 < probs.size(); ++c) {
        if (r < probs[c]) return static_cast<int>(c);
        r -= probs[c];
    }
    return static_cast<int>(probs.size() - 1);
}

inline int sample_class(const StreamConfig& cfg, std::mt19937_64& rng) {
    return sample_class(class_probabilities(cfg), rng);
}

/// Class means: orthonormal directions (Gram-Schmidt) when input_dim >= |C|,
/// random unit directions otherwise, scaled by the separation.
inline std::vector<std::vector<double>> make_class_means(const StreamConfig& cfg) {
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<std::vector<double>> means;
    const bool orthogonal = cfg.input_dim >= cfg.num_classes;
    while (means.size() < cfg.num_classes) {
        std::vector<double> v(cfg.input_dim);
        for (double& x : v) x = g(rng);
        if (orthogonal) {
            for (const auto& m : means) {
                const double proj = detail::dot(v, m);
                for (std::size_t i = 0; i < v.size(); ++i) v[i] -= proj * m[i];
            }
        }
        const double norm = std::sqrt(detail::dot(v, v));
        if (norm < 1e-8) continue;
        for (double& x : v) x /= norm;
        means.push_back(std::move(v));
    }
    for (auto& m : means)
        for (double& x : m) x *= cfg.separation;
    return means;
}

struct Pair {
    std::vector<double> x;
    std::vector<double> x_pos;
    int label = 0;
};

/// Two-step generator: class sampling, then data sampling around the class mean.
class StreamGenerator {
public:
    explicit StreamGenerator(StreamConfig cfg)
        : cfg_(std::move(cfg)), probs_(), means_(), rng_(cfg_.seed) {
        validate(cfg_);
        probs_ = class_probabilities(cfg_);
        means_ = make_class_means(cfg_);
    }

    const StreamConfig& config() const noexcept { return cfg_; }
    const std::vector<double>& probabilities() const noexcept { return probs_; }
    const std::vector<std::vector<double>>& means() const noexcept { return means_; }
    std::mt19937_64& rng() noexcept { return rng_; }

    int sample_class() { return duel::sample_class(probs_, rng_); }

    std::vector<double> sample_input(int label) { return sample_input(label, rng_); }

    std::vector<double> sample_input(int label, std::mt19937_64& rng) const {
        std::normal_distribution<double> g(0.0, 1.0);
        std::vector<double> x(means_.at(static_cast<std::size_t>(label)));
        if (cfg_.within_sigma > 0.0)
            for (double& v : x) v += cfg_.within_sigma * g(rng);
        return x;
    }

    std::vector<double> augment(const std::vector<double>& x, std::mt19937_64& rng) const {
        std::vector<double> out(x);
        if (cfg_.augment_sigma > 0.0) {
            std::normal_distribution<double> g(0.0, 1.0);
            for (double& v : out) v += cfg_.augment_sigma * g(rng);
        }
        return out;
    }

    Pair sample_pair() {
        Pair p;
        p.label = sample_class();
        p.x = sample_input(p.label, rng_);
        p.x_pos = augment(p.x, rng_);
        return p;
    }

    std::vector<Pair> sample_batch(std::size_t n) {
        std::vector<Pair> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) out.push_back(sample_pair());
        return out;
    }

    /// `per_class` inputs of every class, ignoring the imbalance profile.
    std::vector<std::pair<std::vector<double>, int>> balanced_set(std::size_t per_class,
                                                                  std::mt19937_64& rng) const {
        std::vector<std::pair<std::vector<double>, int>> out;
        out.reserve(per_class * cfg_.num_classes);
        for (std::size_t c = 0; c < cfg_.num_classes; ++c)
            for (std::size_t i = 0; i < per_class; ++i)
                out.emplace_back(sample_input(static_cast<int>(c), rng), static_cast<int>(c));
        return out;
    }

private:
    StreamConfig cfg_;
    std::vector<double> probs_;
    std::vector<std::vector<double>> means_;
    std::mt19937_64 rng_;
};

struct LabeledEmbedding {
    std::string id;
    std::optional<int> label;
    Embedding embedding;
};

/// Emits standard basis vectors e_c per sampled class: the perfectly
/// clustered extractor, used with the label-oracle kernel.
class OracleEmbeddingStream {
public:
    OracleEmbeddingStream(std::size_t num_classes, std::size_t dim, std::vector<double> probs,
                          std::uint64_t seed)
        : num_classes_(num_classes), dim_(dim), probs_(std::move(probs)), rng_(seed) {
        if (num_classes_ < 2) throw std::invalid_argument("oracle stream: need at least two classes");
        if (num_classes_ > dim_) throw std::invalid_argument("oracle stream: more classes than dimensions");
        if (probs_.size() != num_classes_) throw std::invalid_argument("oracle stream: probability size");
    }

    std::pair<Embedding, int> next() {
        const int c = sample_class(probs_, rng_);
        return {Embedding::basis(dim_, static_cast<std::size_t>(c)), c};
    }

private:
    std::size_t num_classes_;
    std::size_t dim_;
    std::vector<double> probs_;
    std::mt19937_64 rng_;
};

class StreamFormatError : public std::runtime_error {
public:
    StreamFormatError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

inline constexpr double kStreamNormTolerance = 1e-6;

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s, std::size_t line) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw StreamFormatError(line, "malformed number '" + s + "'");
    }
    if (pos != s.size()) throw StreamFormatError(line, "malformed number '" + s + "'");
    if (!std::isfinite(v)) throw StreamFormatError(line, "non-finite value");
    return v;
}

}  // namespace detail

/// Reads `id,label,v_0,...,v_{Z-1}`. Rows whose norm deviates from 1 by more
/// than 1e-6 are renormalized and reported through `warnings`.
inline std::vector<LabeledEmbedding> read_embedding_stream(std::istream& in,
                                                           std::vector<std::string>* warnings = nullptr) {
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line)) throw StreamFormatError(1, "missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = detail::split_csv(line);
    if (header.size() < 2 || header[0] != "id" || header[1] != "label")
        throw StreamFormatError(1, "header must start with id,label");
    const std::size_t dim = header.size() - 2;
    for (std::size_t i = 0; i < dim; ++i)
        if (header[i + 2] != "v_" + std::to_string(i))
            throw StreamFormatError(1, "unexpected column '" + header[i + 2] + "'");

    std::vector<LabeledEmbedding> rows;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = detail::split_csv(line);
        if (cells.size() != dim + 2)
            throw StreamFormatError(lineno, "expected " + std::to_string(dim) + " values, got " +
                                                std::to_string(cells.size() < 2 ? 0 : cells.size() - 2));
        LabeledEmbedding row;
        row.id = cells[0];
        if (!cells[1].empty()) {
            std::size_t pos = 0;
            try {
                row.label = std::stoi(cells[1], &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (pos != cells[1].size()) throw StreamFormatError(lineno, "malformed label '" + cells[1] + "'");
        }
        std::vector<double> v(dim);
        double sq = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            v[i] = detail::parse_double(cells[i + 2], lineno);
            sq += v[i] * v[i];
        }
        const double norm = std::sqrt(sq);
        if (!(norm > 0.0)) throw StreamFormatError(lineno, "zero vector");
        if (std::abs(norm - 1.0) > kStreamNormTolerance && warnings)
            warnings->push_back("line " + std::to_string(lineno) + ": renormalized vector with norm " +
                                std::to_string(norm));
        row.embedding = Embedding::normalize(std::move(v));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<LabeledEmbedding> load_embedding_stream(const std::string& path,
                                                           std::vector<std::string>* warnings = nullptr) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open embedding stream '" + path + "'");
    return read_embedding_stream(in, warnings);
}

inline void write_embedding_stream(std::ostream& os, std::size_t dim,
                                   const std::vector<LabeledEmbedding>& rows) {
    os << "id,label";
    for (std::size_t i = 0; i < dim; ++i) os << ",v_" << i;
    os << '\n';
    const auto old = os.precision(17);
    for (const auto& r : rows) {
        if (r.embedding.dim() != dim) throw std::invalid_argument("embedding stream: dimension mismatch");
        os << r.id << ',';
        if (r.label) os << *r.label;
        for (double v : r.embedding.values()) os << ',' << v;
        os << '\n';
    }
    os.precision(old);
}

}  // namespace duel
