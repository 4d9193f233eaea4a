#pragma once

// Memory and representation diagnostics: class entropy, class centroids,
// intra-class variance, inter-class similarity, class-frequency histograms
// and linear probing on frozen features.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "duel/detail/summation.hpp"
#include "duel/kernel.hpp"

namespace duel {

/// Shannon entropy (nats) of the empirical label distribution; 0 log 0 := 0.
inline double class_entropy(std::span<const int> labels) {
    if (labels.empty()) throw std::invalid_argument("class_entropy: no labels");
    std::map<int, std::size_t> counts;
    for (int l : labels) ++counts[l];
    const double n = static_cast<double>(labels.size());
    std::vector<double> terms;
    for (const auto& [_, c] : counts) {
        const double p = static_cast<double>(c) / n;
        terms.push_back(-p * std::log(p));
    }
    return std::max(0.0, detail::pairwise_sum(terms));
}

/// Per-class counts sorted in descending order.
inline std::vector<std::pair<int, std::size_t>> class_frequency_histogram(std::span<const int> labels) {
    std::map<int, std::size_t> counts;
    for (int l : labels) ++counts[l];
    std::vector<std::pair<int, std::size_t>> out(counts.begin(), counts.end());
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return out;
}

inline double dominant_fraction(std::span<const int> labels) {
    if (labels.empty()) return 0.0;
    const auto h = class_frequency_histogram(labels);
    return static_cast<double>(h.front().second) / static_cast<double>(labels.size());
}

inline double class_fraction(std::span<const int> labels, int c) {
    if (labels.empty()) return 0.0;
    return static_cast<double>(std::count(labels.begin(), labels.end(), c)) /
           static_cast<double>(labels.size());
}

/// Normalized mean of the embeddings. Throws if the mean vanishes.
inline Embedding class_centroid(std::span<const Embedding> samples) {
    if (samples.empty()) throw std::invalid_argument("class_centroid: no samples");
    std::vector<double> mean(samples.front().dim(), 0.0);
    for (const auto& e : samples) {
        if (e.dim() != mean.size()) throw std::invalid_argument("class_centroid: dimension mismatch");
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += e[i];
    }
    double sq = 0.0;
    for (double& v : mean) {
        v /= static_cast<double>(samples.size());
        sq += v * v;
    }
    if (std::sqrt(sq) < 1e-12) throw std::domain_error("class_centroid: zero mean embedding");
    return Embedding::normalize(std::move(mean));
}

struct LabeledSet {
    std::vector<Embedding> embeddings;
    std::vector<int> labels;
};

inline std::map<int, std::vector<Embedding>> group_by_class(const LabeledSet& set) {
    if (set.embeddings.size() != set.labels.size()) throw std::invalid_argument("labeled set size mismatch");
    std::map<int, std::vector<Embedding>> groups;
    for (std::size_t i = 0; i < set.labels.size(); ++i) groups[set.labels[i]].push_back(set.embeddings[i]);
    return groups;
}

/// (1/|C|) sum_c mean_{x in c} (rbar_c . f(x) - 1)^2
inline double intra_class_variance(const LabeledSet& set) {
    const auto groups = group_by_class(set);
    if (groups.empty()) throw std::invalid_argument("intra_class_variance: empty set");
    std::vector<double> per_class;
    for (const auto& [_, members] : groups) {
        const Embedding centroid = class_centroid(members);
        std::vector<double> terms;
        for (const auto& e : members) {
            const double d = detail::dot(centroid.values(), e.values()) - 1.0;
            terms.push_back(d * d);
        }
        per_class.push_back(detail::pairwise_sum(terms) / static_cast<double>(members.size()));
    }
    return detail::pairwise_sum(per_class) / static_cast<double>(per_class.size());
}

/// Mean centroid cosine over ordered pairs of distinct classes.
inline double inter_class_similarity(const LabeledSet& set) {
    const auto groups = group_by_class(set);
    if (groups.size() < 2) throw std::invalid_argument("inter_class_similarity: need two classes");
    std::vector<Embedding> centroids;
    for (const auto& [_, members] : groups) centroids.push_back(class_centroid(members));
    std::vector<double> terms;
    for (std::size_t a = 0; a < centroids.size(); ++a)
        for (std::size_t b = 0; b < centroids.size(); ++b)
            if (a != b) terms.push_back(detail::dot(centroids[a].values(), centroids[b].values()));
    const double c = static_cast<double>(centroids.size());
    return std::clamp(detail::pairwise_sum(terms) / (c * (c - 1.0)), -1.0, 1.0);
}

struct ProbeConfig {
    std::size_t steps = 200;
    double learning_rate = 0.05;
    double weight_decay = 1e-6;
};

/// Multinomial logistic regression on frozen features, trained by full-batch
/// Adam; returns top-1 accuracy on the held-out set.
inline double linear_probe(const LabeledSet& train, const LabeledSet& test, const ProbeConfig& cfg = {}) {
    if (train.embeddings.empty() || test.embeddings.empty())
        throw std::invalid_argument("linear_probe: empty split");
    if (train.embeddings.size() != train.labels.size() || test.embeddings.size() != test.labels.size())
        throw std::invalid_argument("linear_probe: label size mismatch");
    std::map<int, int> class_index;
    for (int l : train.labels) class_index.emplace(l, 0);
    if (class_index.size() < 2) throw std::invalid_argument("linear_probe: single-class training set");
    int next = 0;
    for (auto& [_, idx] : class_index) idx = next++;

    const std::size_t C = class_index.size();
    const std::size_t D = train.embeddings.front().dim();
    const std::size_t P = C * (D + 1);
    std::vector<double> w(P, 0.0), g(P), m(P, 0.0), v(P, 0.0);
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double n = static_cast<double>(train.embeddings.size());

    std::vector<double> logits(C);
    auto score = [&](const Embedding& x, std::vector<double>& out) {
        for (std::size_t c = 0; c < C; ++c) {
            const double* row = &w[c * (D + 1)];
            double s = row[D];
            for (std::size_t i = 0; i < D; ++i) s += row[i] * x[i];
            out[c] = s;
        }
    };

    for (std::size_t t = 1; t <= cfg.steps; ++t) {
        std::fill(g.begin(), g.end(), 0.0);
        for (std::size_t s = 0; s < train.embeddings.size(); ++s) {
            const auto& x = train.embeddings[s];
            score(x, logits);
            const double mx = *std::max_element(logits.begin(), logits.end());
            double z = 0.0;
            for (double& l : logits) z += (l = std::exp(l - mx));
            const std::size_t y = static_cast<std::size_t>(class_index.at(train.labels[s]));
            for (std::size_t c = 0; c < C; ++c) {
                const double d = (logits[c] / z - (c == y ? 1.0 : 0.0)) / n;
                double* gr = &g[c * (D + 1)];
                for (std::size_t i = 0; i < D; ++i) gr[i] += d * x[i];
                gr[D] += d;
            }
        }
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
        for (std::size_t i = 0; i < P; ++i) {
            const double gi = g[i] + cfg.weight_decay * w[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            w[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }

    std::vector<int> index_to_label(C);
    for (const auto& [label, idx] : class_index) index_to_label[static_cast<std::size_t>(idx)] = label;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < test.embeddings.size(); ++s) {
        score(test.embeddings[s], logits);
        const auto best = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        correct += index_to_label[best] == test.labels[s] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(test.embeddings.size());
}

struct MetricsReport {
    std::uint64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double class_entropy = 0.0;
    double v_intra = 0.0;
    double s_inter = 0.0;
    double mean_memory_distinctiveness = 0.0;
    double dominant_class_fraction = 0.0;
    std::optional<double> probe_accuracy;
};

inline void write_metrics_header(std::ostream& os) {
    os << "step,loss,lr,class_entropy,v_intra,s_inter,mean_mem_distinct,dominant_frac,probe_acc\n";
}

inline void write_metrics_row(std::ostream& os, const MetricsReport& r) {
    const auto old = os.precision(17);
    os << r.step << ',' << r.loss << ',' << r.lr << ',' << r.class_entropy << ',' << r.v_intra << ','
       << r.s_inter << ',' << r.mean_memory_distinctiveness << ',' << r.dominant_class_fraction << ',';
    if (r.probe_accuracy) os << *r.probe_accuracy;
    os << '\n';
    os.precision(old);
}

}  // namespace duel
