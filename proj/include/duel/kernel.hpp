#pragma once

// Similarity kernels, mutual duplication probability and the exact
// information measures (Hebbian, distinctiveness, HML, memory-integrated
// HML bound) evaluated over explicit finite distributions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "duel/detail/summation.hpp"

namespace duel {

inline constexpr double kUnitNormTolerance = 1e-9;

/// Unit-norm embedding on the hypersphere. All constructors either
/// normalize or validate, so every live instance satisfies |v| = 1.
class Embedding {
public:
    Embedding() = default;

    /// Scales `v` to unit length. Throws on zero norm or non-finite entries.
    static Embedding normalize(std::vector<double> v) {
        double sq = 0.0;
        for (double x : v) {
            if (!std::isfinite(x)) throw std::invalid_argument("embedding has non-finite entry");
            sq += x * x;
        }
        const double norm = std::sqrt(sq);
        if (!(norm > 0.0)) throw std::invalid_argument("embedding has zero norm");
        for (double& x : v) x /= norm;
        return Embedding(std::move(v));
    }

    /// Accepts `v` as-is if it is already unit norm within `tolerance`.
    static Embedding from_unit(std::vector<double> v, double tolerance = kUnitNormTolerance) {
        double sq = 0.0;
        for (double x : v) {
            if (!std::isfinite(x)) throw std::invalid_argument("embedding has non-finite entry");
            sq += x * x;
        }
        if (std::abs(std::sqrt(sq) - 1.0) > tolerance)
            throw std::invalid_argument("embedding is not unit norm");
        return Embedding(std::move(v));
    }

    static Embedding basis(std::size_t dim, std::size_t axis) {
        if (axis >= dim) throw std::invalid_argument("basis axis out of range");
        std::vector<double> v(dim, 0.0);
        v[axis] = 1.0;
        return Embedding(std::move(v));
    }

    std::size_t dim() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }

    Embedding operator-() const {
        std::vector<double> v(values_);
        for (double& x : v) x = -x;
        return Embedding(std::move(v));
    }

    friend bool operator==(const Embedding&, const Embedding&) = default;

private:
    explicit Embedding(std::vector<double> v) : values_(std::move(v)) {}
    std::vector<double> values_;
};

inline double cosine(const Embedding& a, const Embedding& b) {
    if (a.dim() != b.dim()) throw std::invalid_argument("cosine: dimension mismatch");
    return std::clamp(detail::dot(a.values(), b.values()), -1.0, 1.0);
}

enum class KernelForm { ExponentialTemp, AffineCosine, LabelOracle };

/// Map from cosine similarity to a duplication probability in [0, 1].
class SimilarityKernel {
public:
    static SimilarityKernel exponential(double temperature) {
        if (!(temperature > 0.0) || !std::isfinite(temperature))
            throw std::invalid_argument("exponential kernel: temperature must be positive");
        return SimilarityKernel(KernelForm::ExponentialTemp, temperature);
    }
    static SimilarityKernel affine_cosine() { return SimilarityKernel(KernelForm::AffineCosine, 0.0); }
    static SimilarityKernel label_oracle() { return SimilarityKernel(KernelForm::LabelOracle, 0.0); }

    KernelForm form() const noexcept { return form_; }
    double temperature() const noexcept { return temperature_; }
    bool needs_labels() const noexcept { return form_ == KernelForm::LabelOracle; }

    /// q(s) for the cosine-based forms.
    double from_cosine(double s) const {
        switch (form_) {
        case KernelForm::ExponentialTemp: return std::exp((s - 1.0) / temperature_);
        case KernelForm::AffineCosine: return std::clamp(0.5 * (1.0 + s), 0.0, 1.0);
        case KernelForm::LabelOracle: break;
        }
        throw std::logic_error("label-oracle kernel is not a function of cosine");
    }

    static double from_labels(int a, int b) noexcept { return a == b ? 1.0 : 0.0; }

    std::string name() const {
        switch (form_) {
        case KernelForm::ExponentialTemp: return "exponential";
        case KernelForm::AffineCosine: return "affine_cosine";
        case KernelForm::LabelOracle: return "label_oracle";
        }
        return "unknown";
    }

    friend bool operator==(const SimilarityKernel&, const SimilarityKernel&) = default;

private:
    SimilarityKernel(KernelForm form, double temperature) : form_(form), temperature_(temperature) {}
    KernelForm form_;
    double temperature_;
};

struct LabelPair {
    int first;
    int second;
};

/// Mutual duplication probability q(a, b).
inline double mdp(const Embedding& a, const Embedding& b, const SimilarityKernel& kernel,
                  std::optional<LabelPair> labels = std::nullopt) {
    if (kernel.needs_labels()) {
        if (!labels) throw std::invalid_argument("mdp: label-oracle kernel requires labels");
        if (a.dim() != b.dim()) throw std::invalid_argument("mdp: dimension mismatch");
        return SimilarityKernel::from_labels(labels->first, labels->second);
    }
    return kernel.from_cosine(cosine(a, b));
}

/// An information value in nats. `infinite` marks -log 0.
struct InfoValue {
    double value = 0.0;
    bool infinite = false;

    static InfoValue finite(double v) { return {v, false}; }
    static InfoValue infinity() { return {std::numeric_limits<double>::infinity(), true}; }
};

struct LabeledPoint {
    Embedding embedding;
    int label = 0;
    double weight = 1.0;
};

/// Weighted labeled point set with exact expectations.
class FiniteDistribution {
public:
    static constexpr double kWeightTolerance = 1e-12;

    explicit FiniteDistribution(std::vector<LabeledPoint> points) : points_(std::move(points)) {
        if (points_.empty()) throw std::invalid_argument("finite distribution: no points");
        std::vector<double> w;
        w.reserve(points_.size());
        const std::size_t dim = points_.front().embedding.dim();
        for (const auto& p : points_) {
            if (!(p.weight >= 0.0) || !std::isfinite(p.weight))
                throw std::invalid_argument("finite distribution: weights must be nonnegative");
            if (p.embedding.dim() != dim)
                throw std::invalid_argument("finite distribution: dimension mismatch");
            w.push_back(p.weight);
            classes_.insert(p.label);
        }
        if (std::abs(detail::pairwise_sum(w) - 1.0) > kWeightTolerance)
            throw std::invalid_argument("finite distribution: weights must sum to 1");
    }

    /// Equal weight on every point.
    static FiniteDistribution uniform(std::vector<std::pair<Embedding, int>> items) {
        std::vector<LabeledPoint> pts;
        const double w = 1.0 / static_cast<double>(items.size());
        for (auto& [e, c] : items) pts.push_back({std::move(e), c, w});
        return FiniteDistribution(std::move(pts));
    }

    /// Uniform within each class, with class masses `class_weights[c]`.
    static FiniteDistribution with_class_weights(std::vector<std::pair<Embedding, int>> items,
                                                 const std::map<int, double>& class_weights) {
        std::map<int, std::size_t> counts;
        for (const auto& it : items) ++counts[it.second];
        std::vector<LabeledPoint> pts;
        for (auto& [e, c] : items) {
            const auto cw = class_weights.find(c);
            if (cw == class_weights.end()) throw std::invalid_argument("class weight missing");
            pts.push_back({std::move(e), c, cw->second / static_cast<double>(counts[c])});
        }
        return FiniteDistribution(std::move(pts));
    }

    std::span<const LabeledPoint> points() const noexcept { return points_; }
    const std::set<int>& classes() const noexcept { return classes_; }
    std::size_t size() const noexcept { return points_.size(); }

    double class_weight(int c) const {
        std::vector<double> w;
        for (const auto& p : points_)
            if (p.label == c) w.push_back(p.weight);
        return detail::pairwise_sum(w);
    }

    /// Same-class points (anchor included), weights renormalized over the class.
    std::vector<LabeledPoint> positives_of(std::size_t i) const {
        const int c = points_.at(i).label;
        std::vector<LabeledPoint> out;
        for (const auto& p : points_)
            if (p.label == c) out.push_back(p);
        renormalize(out);
        return out;
    }

    static void renormalize(std::vector<LabeledPoint>& pts) {
        std::vector<double> w;
        for (const auto& p : pts) w.push_back(p.weight);
        const double total = detail::pairwise_sum(w);
        if (!(total > 0.0)) {
            for (auto& p : pts) p.weight = 1.0 / static_cast<double>(pts.size());
            return;
        }
        for (auto& p : pts) p.weight /= total;
    }

private:
    std::vector<LabeledPoint> points_;
    std::set<int> classes_;
};

namespace detail {

inline double q_between(const Embedding& a, int la, const Embedding& b, int lb,
                        const SimilarityKernel& k) {
    return mdp(a, b, k, LabelPair{la, lb});
}

inline double total_weight(std::span<const LabeledPoint> pts) {
    std::vector<double> w;
    w.reserve(pts.size());
    for (const auto& p : pts) w.push_back(p.weight);
    return pairwise_sum(w);
}

}  // namespace detail

/// Weighted mean of -log q(anchor, x_j) over the positives.
inline InfoValue hebbian_info(const Embedding& anchor, int anchor_label,
                              std::span<const LabeledPoint> positives,
                              const SimilarityKernel& kernel) {
    if (positives.empty()) throw std::invalid_argument("hebbian_info: no positives");
    const double total = detail::total_weight(positives);
    if (!(total > 0.0)) throw std::invalid_argument("hebbian_info: positives carry no weight");
    std::vector<double> terms;
    terms.reserve(positives.size());
    for (const auto& p : positives) {
        if (p.weight == 0.0) continue;
        const double q = detail::q_between(anchor, anchor_label, p.embedding, p.label, kernel);
        if (q <= 0.0) return InfoValue::infinity();
        terms.push_back((p.weight / total) * -std::log(q));
    }
    return InfoValue::finite(detail::pairwise_sum(terms));
}

/// -log of the weighted mean q(anchor, x_j) over the reference points.
inline InfoValue distinctiveness_info(const Embedding& anchor, int anchor_label,
                                      std::span<const LabeledPoint> reference,
                                      const SimilarityKernel& kernel) {
    if (reference.empty()) throw std::invalid_argument("distinctiveness_info: empty reference");
    const double total = detail::total_weight(reference);
    if (!(total > 0.0)) throw std::invalid_argument("distinctiveness_info: reference carries no weight");
    std::vector<double> terms;
    terms.reserve(reference.size());
    for (const auto& p : reference)
        terms.push_back(p.weight *
                        detail::q_between(anchor, anchor_label, p.embedding, p.label, kernel));
    const double mean = detail::pairwise_sum(terms) / total;
    if (mean <= 0.0) return InfoValue::infinity();
    return InfoValue::finite(-std::log(mean));
}

/// Distinctiveness against memory contents, weighted uniformly.
/// `labels` may be empty unless the kernel is the label oracle.
inline InfoValue distinctiveness_info(const Embedding& anchor, int anchor_label,
                                      std::span<const Embedding> memory,
                                      std::span<const int> labels,
                                      const SimilarityKernel& kernel) {
    if (memory.empty()) throw std::invalid_argument("distinctiveness_info: empty memory");
    if (kernel.needs_labels() && labels.size() != memory.size())
        throw std::invalid_argument("distinctiveness_info: label-oracle kernel requires labels");
    std::vector<double> q(memory.size());
    for (std::size_t j = 0; j < memory.size(); ++j)
        q[j] = kernel.needs_labels() ? SimilarityKernel::from_labels(anchor_label, labels[j])
                                     : kernel.from_cosine(cosine(anchor, memory[j]));
    const double mean = detail::pairwise_sum(q) / static_cast<double>(memory.size());
    if (mean <= 0.0) return InfoValue::infinity();
    return InfoValue::finite(-std::log(mean));
}

/// Components of the HML objective for a distribution.
struct HmlTerms {
    InfoValue hebbian;          // E_i[I_h(x_i)]
    InfoValue distinctiveness;  // E_i[I_d(x_i; D)]
    InfoValue loss;             // hebbian - distinctiveness
};

inline HmlTerms hml_terms(const FiniteDistribution& dist, const SimilarityKernel& kernel) {
    const auto pts = dist.points();
    std::vector<double> h_terms, d_terms;
    bool h_inf = false, d_inf = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (pts[i].weight == 0.0) continue;
        const auto positives = dist.positives_of(i);
        const InfoValue h = hebbian_info(pts[i].embedding, pts[i].label, positives, kernel);
        const InfoValue d = distinctiveness_info(pts[i].embedding, pts[i].label, pts, kernel);
        h_inf = h_inf || h.infinite;
        d_inf = d_inf || d.infinite;
        if (!h.infinite) h_terms.push_back(pts[i].weight * h.value);
        if (!d.infinite) d_terms.push_back(pts[i].weight * d.value);
    }
    HmlTerms out;
    out.hebbian = h_inf ? InfoValue::infinity() : InfoValue::finite(detail::pairwise_sum(h_terms));
    out.distinctiveness =
        d_inf ? InfoValue::infinity() : InfoValue::finite(detail::pairwise_sum(d_terms));
    if (h_inf || d_inf) {
        out.loss = {h_inf && !d_inf ? std::numeric_limits<double>::infinity()
                                    : std::numeric_limits<double>::quiet_NaN(),
                    true};
    } else {
        out.loss = InfoValue::finite(out.hebbian.value - out.distinctiveness.value);
    }
    return out;
}

/// Exact E_i[I_h(x_i) - I_d(x_i)] over the distribution.
inline InfoValue hml_loss(const FiniteDistribution& dist, const SimilarityKernel& kernel) {
    return hml_terms(dist, kernel).loss;
}

/// E_{x ~ dist}[I_d(x; memory)] with memory weighted uniformly.
inline InfoValue expected_distinctiveness(const FiniteDistribution& dist,
                                          std::span<const LabeledPoint> memory,
                                          const SimilarityKernel& kernel) {
    std::vector<LabeledPoint> uniform(memory.begin(), memory.end());
    for (auto& p : uniform) p.weight = 1.0 / static_cast<double>(uniform.size());
    std::vector<double> terms;
    for (const auto& p : dist.points()) {
        if (p.weight == 0.0) continue;
        const InfoValue d = distinctiveness_info(p.embedding, p.label, uniform, kernel);
        if (d.infinite) return InfoValue::infinity();
        terms.push_back(p.weight * d.value);
    }
    return InfoValue::finite(detail::pairwise_sum(terms));
}

/// Class-imbalance correction factor 1 / (|C| * rho_min).
inline double mhml_lambda(std::size_t num_classes, double rho_min) {
    if (!(rho_min > 0.0)) throw std::invalid_argument("mhml: rho_min must be positive");
    if (num_classes == 0) throw std::invalid_argument("mhml: need at least one class");
    return 1.0 / (static_cast<double>(num_classes) * rho_min);
}

/// Memory-integrated upper bound on the HML loss of the oracle distribution:
///   lambda * I_h(D') - I_d(D', M) + |I_d(D', M) - I_d(D)|
inline InfoValue mhml_bound(const FiniteDistribution& empirical, std::span<const LabeledPoint> memory,
                            const FiniteDistribution& oracle, const SimilarityKernel& kernel,
                            double rho_min, std::size_t num_classes) {
    const double lambda = mhml_lambda(num_classes, rho_min);
    const HmlTerms emp = hml_terms(empirical, kernel);
    const InfoValue id_mem = expected_distinctiveness(empirical, memory, kernel);
    const InfoValue id_oracle = hml_terms(oracle, kernel).distinctiveness;
    if (emp.hebbian.infinite) return InfoValue::infinity();
    if (id_mem.infinite || id_oracle.infinite) {
        // -I_d(D',M) + |I_d(D',M) - I_d(D)| stays finite only when both are
        // finite; an infinite memory term cancels, an infinite oracle term does not.
        if (id_oracle.infinite) return InfoValue::infinity();
        return {lambda * emp.hebbian.value - id_oracle.value, true};
    }
    return InfoValue::finite(lambda * emp.hebbian.value - id_mem.value +
                             std::abs(id_mem.value - id_oracle.value));
}

}  // namespace duel
