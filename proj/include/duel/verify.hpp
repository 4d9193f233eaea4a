#pragma once

// Property suite behind `duel verify`. Every check draws its own random
// instances from a fixed seed and reports the first counterexample found.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "duel/harness.hpp"
#include "duel/kernel.hpp"
#include "duel/memory.hpp"
#include "duel/metrics.hpp"
#include "duel/streams.hpp"
#include "duel/trainer.hpp"

namespace duel::verify {

struct Options {
    bool quick = false;
    IncrementalFault fault;
    std::uint64_t seed = 7;
};

struct CheckResult {
    std::string name;
    bool passed = true;
    std::string detail;
    double seconds = 0.0;
};

// Empty string means the check held.
using CheckFn = std::function<std::string(const Options&, std::mt19937_64&)>;

namespace detail {

inline Embedding random_unit(std::size_t dim, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(dim);
    for (double& x : v) x = g(rng);
    return Embedding::normalize(std::move(v));
}

// Points clustered around per-class directions so that both loose and tight
// geometries get exercised.
inline Embedding clustered_unit(const Embedding& center, double spread, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, spread);
    std::vector<double> v(center.values().begin(), center.values().end());
    for (double& x : v) x += g(rng);
    return Embedding::normalize(std::move(v));
}

inline SimilarityKernel random_kernel(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pick(0, 2);
    std::uniform_real_distribution<double> tau(0.05, 2.0);
    switch (pick(rng)) {
    case 0: return SimilarityKernel::affine_cosine();
    case 1: return SimilarityKernel::exponential(0.5);
    default: return SimilarityKernel::exponential(tau(rng));
    }
}

inline std::vector<MemoryEntry> random_entries(std::size_t n, std::size_t dim, int classes, double spread,
                                               std::uint64_t first_id, std::mt19937_64& rng) {
    std::vector<Embedding> centers;
    for (int c = 0; c < classes; ++c) centers.push_back(random_unit(dim, rng));
    std::uniform_int_distribution<int> cls(0, classes - 1);
    std::vector<MemoryEntry> out;
    for (std::size_t i = 0; i < n; ++i) {
        const int c = cls(rng);
        out.push_back({clustered_unit(centers[static_cast<std::size_t>(c)], spread, rng), c, 0, first_id + i});
    }
    return out;
}

inline ActiveMemory filled_memory(std::size_t k, const SimilarityKernel& kernel, std::vector<MemoryEntry> entries,
                                  EvictionPolicy policy = EvictionPolicy::DuelIncremental, std::uint64_t seed = 0) {
    ActiveMemory mem(k, kernel, policy, seed);
    for (auto& e : entries) mem.append(std::move(e));
    return mem;
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    return os.str();
}

inline std::size_t scaled(const Options& o, std::size_t full, std::size_t quick) { return o.quick ? quick : full; }

inline double max_cache_error(const ActiveMemory& mem) {
    const auto fresh = mem.recompute_scores();
    const auto cached = mem.cached_scores();
    double worst = 0.0;
    for (std::size_t j = 0; j < fresh.size(); ++j) worst = std::max(worst, std::abs(fresh[j] - cached[j]));
    return worst;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// kernel

inline std::string check_kernel_range(const Options& o, std::mt19937_64& rng) {
    for (std::size_t t = 0; t < detail::scaled(o, 2000, 300); ++t) {
        const std::size_t dim = 2 + t % 30;
        const auto k = detail::random_kernel(rng);
        const auto a = detail::random_unit(dim, rng);
        const auto b = t % 7 == 0 ? -a : detail::random_unit(dim, rng);
        const double ab = mdp(a, b, k), ba = mdp(b, a, k);
        if (ab != ba) return "q not symmetric for " + std::string(k.name());
        if (!(ab >= 0.0 && ab <= 1.0)) return "q out of [0,1]: " + detail::fmt(ab);
        if (std::abs(mdp(a, a, k) - 1.0) > 1e-12) return "q(a,a) != 1 for " + std::string(k.name());
    }
    return {};
}

inline std::string check_info_nonnegative_and_jensen(const Options& o, std::mt19937_64& rng) {
    for (std::size_t t = 0; t < detail::scaled(o, 500, 100); ++t) {
        const auto k = detail::random_kernel(rng);
        const auto anchor = detail::random_unit(8, rng);
        std::vector<LabeledPoint> pos, ref;
        std::uniform_real_distribution<double> w(0.1, 1.0);
        for (int i = 0; i < 6; ++i) pos.push_back({detail::clustered_unit(anchor, 0.4, rng), 0, w(rng)});
        for (int i = 0; i < 10; ++i) ref.push_back({detail::random_unit(8, rng), i % 3, w(rng)});
        const auto h = hebbian_info(anchor, 0, pos, k);
        const auto d = distinctiveness_info(anchor, 0, ref, k);
        if (h.value < 0.0) return "hebbian_info negative: " + detail::fmt(h.value);
        if (d.value < 0.0) return "distinctiveness_info negative: " + detail::fmt(d.value);
        double total = 0.0, mean = 0.0;
        for (const auto& p : pos) total += p.weight;
        for (const auto& p : pos) mean += p.weight / total * mdp(anchor, p.embedding, k);
        if (h.value < -std::log(mean) - 1e-12)
            return "Jensen violated: I_h=" + detail::fmt(h.value) + " < " + detail::fmt(-std::log(mean));
    }
    return {};
}

inline std::string check_oracle_optimum(const Options& o, std::mt19937_64& rng) {
    for (std::size_t t = 0; t < detail::scaled(o, 100, 20); ++t) {
        std::uniform_int_distribution<int> cn(2, 12), per(1, 6);
        const int C = cn(rng);
        std::vector<std::pair<Embedding, int>> items;
        std::map<int, double> cw;
        for (int c = 0; c < C; ++c) {
            cw[c] = 1.0 / C;
            const int n = per(rng);
            for (int i = 0; i < n; ++i) items.emplace_back(detail::random_unit(5, rng), c);
        }
        const auto dist = FiniteDistribution::with_class_weights(std::move(items), cw);
        const auto l = hml_loss(dist, SimilarityKernel::label_oracle());
        if (l.infinite || std::abs(l.value + std::log(static_cast<double>(C))) > 1e-9)
            return "|C|=" + std::to_string(C) + ": loss " + detail::fmt(l.value);
    }
    return {};
}

inline std::string check_lower_bound(const Options& o, std::mt19937_64& rng) {
    for (std::size_t t = 0; t < detail::scaled(o, 500, 80); ++t) {
        std::uniform_int_distribution<int> cn(2, 8), per(1, 5);
        std::uniform_real_distribution<double> spread(0.0, 1.5);
        const int C = cn(rng);
        const auto k = detail::random_kernel(rng);
        const double sp = spread(rng);
        std::vector<std::pair<Embedding, int>> items;
        std::map<int, double> cw;
        for (int c = 0; c < C; ++c) {
            cw[c] = 1.0 / C;
            const auto center = detail::random_unit(6, rng);
            const int n = per(rng);
            for (int i = 0; i < n; ++i) items.emplace_back(detail::clustered_unit(center, sp, rng), c);
        }
        const auto l = hml_loss(FiniteDistribution::with_class_weights(std::move(items), cw), k);
        if (l.value < -std::log(static_cast<double>(C)) - 1e-9)
            return "loss " + detail::fmt(l.value) + " below -ln " + std::to_string(C);
    }
    return {};
}

/// D balanced, D' imbalanced with the same class conditionals, M arbitrary.
inline std::string check_memory_bound(const Options& o, std::mt19937_64& rng) {
    for (std::size_t t = 0; t < detail::scaled(o, 100, 20); ++t) {
        std::uniform_int_distribution<int> cn(2, 6), per(1, 4);
        std::uniform_real_distribution<double> u(0.05, 1.0), spread(0.0, 1.0);
        const int C = cn(rng);
        const auto k = detail::random_kernel(rng);
        const double sp = spread(rng);
        std::vector<std::pair<Embedding, int>> items;
        std::map<int, double> balanced, rho;
        double total = 0.0;
        for (int c = 0; c < C; ++c) {
            balanced[c] = 1.0 / C;
            rho[c] = u(rng);
            total += rho[c];
            const auto center = detail::random_unit(6, rng);
            const int n = per(rng);
            for (int i = 0; i < n; ++i) items.emplace_back(detail::clustered_unit(center, sp, rng), c);
        }
        double rho_min = 1.0;
        for (auto& [c, r] : rho) {
            r /= total;
            rho_min = std::min(rho_min, r);
        }
        const auto D = FiniteDistribution::with_class_weights(items, balanced);
        const auto Dp = FiniteDistribution::with_class_weights(items, rho);
        std::vector<LabeledPoint> mem;
        std::uniform_int_distribution<int> msize(1, 12), cls(0, C - 1);
        const int m = msize(rng);
        for (int i = 0; i < m; ++i) mem.push_back({detail::random_unit(6, rng), cls(rng), 1.0});
        const auto bound = mhml_bound(Dp, mem, D, k, rho_min, static_cast<std::size_t>(C));
        const auto loss = hml_loss(D, k);
        if (!bound.infinite && bound.value < loss.value - 1e-9)
            return "bound " + detail::fmt(bound.value) + " < loss " + detail::fmt(loss.value);
    }
    return {};
}

// ---------------------------------------------------------------------------
// memory

inline std::string check_monotone_equivalence(const Options& o, std::mt19937_64& rng) {
    for (std::size_t t = 0; t < detail::scaled(o, 1000, 150); ++t) {
        std::uniform_int_distribution<std::size_t> kk(2, 128), zz(2, 32);
        std::uniform_real_distribution<double> spread(0.0, 1.0);
        const auto K = kk(rng), Z = zz(rng);
        const auto kern = t % 2 ? SimilarityKernel::affine_cosine() : SimilarityKernel::exponential(0.5);
        auto mem = detail::filled_memory(K, kern, detail::random_entries(K, Z, 5, spread(rng), 0, rng));
        if (duel_select_by_score(mem) != duel_select_naive(mem))
            return "trial " + std::to_string(t) + ": K=" + std::to_string(K) + " Z=" + std::to_string(Z);
    }
    return {};
}

inline std::string check_incremental_equivalence(const Options& o, std::mt19937_64& rng) {
    for (std::size_t t = 0; t < detail::scaled(o, 200, 40); ++t) {
        const auto kern = t % 2 ? SimilarityKernel::affine_cosine() : SimilarityKernel::exponential(0.5);
        std::uniform_real_distribution<double> spread(0.1, 1.0);
        const double sp = spread(rng);
        auto a = detail::filled_memory(64, kern, detail::random_entries(64, 16, 6, sp, 0, rng));
        auto b = a;
        const auto batch = detail::random_entries(8, 16, 6, sp, 1000, rng);
        const auto li = duel_update_incremental(a, batch, o.fault);
        const auto ln = duel_update_naive(b, batch);
        if (li != ln) return "eviction logs differ in trial " + std::to_string(t);
        if (a.size() != b.size()) return "sizes differ";
        for (std::size_t j = 0; j < a.size(); ++j)
            if (a.entry(j).id != b.entry(j).id) return "memory order differs in trial " + std::to_string(t);
    }
    return {};
}

inline std::string check_cache_and_capacity(const Options& o, std::mt19937_64& rng) {
    const EvictionPolicy policies[] = {EvictionPolicy::DuelIncremental, EvictionPolicy::DuelNaive,
                                       EvictionPolicy::Fifo, EvictionPolicy::Random, EvictionPolicy::Reservoir};
    std::uint64_t id = 0;
    for (auto p : policies) {
        ActiveMemory mem(48, SimilarityKernel::exponential(0.5), p, 3);
        for (std::size_t round = 0; round < detail::scaled(o, 40, 10); ++round) {
            auto batch = detail::random_entries(11, 12, 4, 0.5, id, rng);
            id += batch.size();
            for (auto& e : batch) e.insert_step = round;
            push_batch(mem, batch, o.fault);
            if (mem.size() > mem.capacity()) return std::string(policy_name(p)) + ": over capacity";
            const double err = detail::max_cache_error(mem);
            if (err > 1e-9) return std::string(policy_name(p)) + ": cached scores off by " + detail::fmt(err);
        }
    }
    return {};
}

/// Every single replacement is scored against the pre-update memory mixture.
inline std::string check_safeness(const Options& o, std::mt19937_64& rng) {
    const std::size_t C = 10, K = 64;
    std::uniform_real_distribution<double> rmax(0.3, 0.95);
    std::size_t done = 0;
    const std::size_t target = detail::scaled(o, 10000, 2000);
    while (done < target) {
        const double rho_max = rmax(rng);
        const double rho_min = dominant_rho_min(C, rho_max);
        std::vector<double> probs(C, rho_min);
        probs[0] = rho_max;
        OracleEmbeddingStream stream(C, C, probs, rng());
        ActiveMemory mem(K, SimilarityKernel::label_oracle());
        std::uint64_t id = 0;
        while (!mem.full()) {
            auto [e, c] = stream.next();
            mem.append({e, c, 0, id++});
        }
        for (std::size_t i = 0; i < 1000 && done < target; ++i, ++done) {
            auto [e, c] = stream.next();
            const std::vector<MemoryEntry> probe(mem.entries().begin(), mem.entries().end());
            const auto before = mean_probe_distinctiveness(mem, probe);
            const MemoryEntry incoming{e, c, 0, id++};
            duel_update_incremental(mem, std::span<const MemoryEntry>(&incoming, 1), o.fault);
            const auto after = mean_probe_distinctiveness(mem, probe);
            if (after.value < before.value - 1e-12)
                return "replacement " + std::to_string(done) + ": " + detail::fmt(before.value) + " -> " +
                       detail::fmt(after.value);
        }
    }
    return {};
}

inline std::string check_label_blindness(const Options& o, std::mt19937_64& rng) {
    for (std::size_t t = 0; t < detail::scaled(o, 100, 20); ++t) {
        const auto kern = t % 2 ? SimilarityKernel::affine_cosine() : SimilarityKernel::exponential(0.3);
        auto entries = detail::random_entries(40, 8, 4, 0.6, 0, rng);
        auto batch = detail::random_entries(10, 8, 4, 0.6, 100, rng);
        auto relabeled = entries;
        auto relabeled_batch = batch;
        std::uniform_int_distribution<int> lab(-5, 50);
        for (auto& e : relabeled) e.hidden_label = lab(rng);
        for (auto& e : relabeled_batch) e.hidden_label = lab(rng);
        auto a = detail::filled_memory(40, kern, entries);
        auto b = detail::filled_memory(40, kern, relabeled);
        if (duel_update_incremental(a, batch, o.fault) != duel_update_incremental(b, relabeled_batch, o.fault))
            return "relabeling changed evictions in trial " + std::to_string(t);
    }
    return {};
}

// ---------------------------------------------------------------------------
// trainer

struct GradientCase {
    Architecture arch;
    NegativeSource source;
    double epsilon;
    bool with_key;
};

/// Max relative error between analytic and central-difference gradients.
/// Relative error per coordinate: |a - n| / max(|a|, |n|, 1e-6).
inline double gradient_error(const GradientCase& gc, std::mt19937_64& rng, double h = 1e-5) {
    std::uniform_int_distribution<std::size_t> din(3, 7), zdim(2, 6), hid(3, 6), bs(2, 5), mn(1, 6);
    const std::size_t d = din(rng), z = zdim(rng);
    auto q = FeatureExtractor::initialized(gc.arch, d, hid(rng), z, rng());
    std::optional<FeatureExtractor> key;
    if (gc.with_key) key = FeatureExtractor::initialized(gc.arch, d, q.hidden_dim(), z, rng());
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<Pair> batch(bs(rng));
    for (auto& p : batch) {
        p.x.resize(d);
        p.x_pos.resize(d);
        for (double& v : p.x) v = g(rng);
        for (std::size_t i = 0; i < d; ++i) p.x_pos[i] = p.x[i] + 0.3 * g(rng);
    }
    std::vector<Embedding> negs;
    const std::size_t nm = mn(rng);
    for (std::size_t i = 0; i < nm; ++i) negs.push_back(detail::random_unit(z, rng));
    std::uniform_real_distribution<double> tau(0.2, 1.0);
    const LossConfig lc{tau(rng), gc.epsilon, gc.source};
    const FeatureExtractor* kp = key ? &*key : nullptr;
    const auto analytic = contrastive_loss(q, kp, batch, negs, lc, true).grad;
    double worst = 0.0;
    for (std::size_t i = 0; i < q.param_count(); ++i) {
        const double keep = q.params()[i];
        q.params()[i] = keep + h;
        const double up = contrastive_loss(q, kp, batch, negs, lc, false).loss;
        q.params()[i] = keep - h;
        const double down = contrastive_loss(q, kp, batch, negs, lc, false).loss;
        q.params()[i] = keep;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

inline std::vector<GradientCase> gradient_cases(std::size_t n) {
    const Architecture archs[] = {Architecture::Linear, Architecture::Mlp};
    const NegativeSource sources[] = {NegativeSource::BatchOnly, NegativeSource::MemoryOnly, NegativeSource::Mixed};
    const double eps[] = {0.0, 1.0};
    std::vector<GradientCase> out;
    for (std::size_t i = 0; out.size() < n; ++i)
        out.push_back({archs[i % 2], sources[(i / 2) % 3], eps[(i / 6) % 2], (i / 12) % 2 == 1});
    return out;
}

inline std::string check_gradients(const Options& o, std::mt19937_64& rng) {
    const auto cases = gradient_cases(detail::scaled(o, 50, 12));
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const double err = gradient_error(cases[i], rng);
        if (!(err < 1e-4)) return "config " + std::to_string(i) + ": relative error " + detail::fmt(err);
    }
    return {};
}

inline std::string check_infonce_identity(const Options& o, std::mt19937_64& rng) {
    const auto kern = SimilarityKernel::exponential(0.5);
    for (std::size_t t = 0; t < detail::scaled(o, 100, 30); ++t) {
        std::uniform_int_distribution<std::size_t> kk(1, 64), zz(2, 32);
        const auto K = kk(rng), Z = zz(rng);
        const auto a = detail::random_unit(Z, rng);
        const auto p = detail::clustered_unit(a, 0.5, rng);
        std::vector<Embedding> mem;
        for (std::size_t i = 0; i < K; ++i) mem.push_back(detail::random_unit(Z, rng));
        const double nce = infonce_loss(a, p, mem, 0.5, 0.0);
        const std::vector<LabeledPoint> pos{{p, 0, 1.0}};
        const double ih = hebbian_info(a, 0, pos, kern).value;
        const double id = distinctiveness_info(a, 0, mem, {}, kern).value;
        const double rhs = ih - id + std::log(static_cast<double>(K));
        if (std::abs(nce - rhs) > 1e-9) return "instance " + std::to_string(t) + ": diff " + detail::fmt(nce - rhs);
    }
    return {};
}

inline std::string check_loss_nonnegative(const Options& o, std::mt19937_64& rng) {
    for (std::size_t t = 0; t < detail::scaled(o, 300, 50); ++t) {
        const auto a = detail::random_unit(8, rng);
        const auto p = detail::random_unit(8, rng);
        std::vector<Embedding> negs;
        for (int i = 0; i < 1 + static_cast<int>(t % 20); ++i) negs.push_back(detail::random_unit(8, rng));
        const double l = infonce_loss(a, p, negs, 0.1 + 0.01 * static_cast<double>(t % 50), 1.0);
        if (l < 0.0) return "loss " + detail::fmt(l) + " with eps=1";
    }
    return {};
}

inline std::string check_momentum(const Options&, std::mt19937_64& rng) {
    auto q = FeatureExtractor::initialized(Architecture::Mlp, 5, 4, 3, rng());
    auto k = FeatureExtractor::initialized(Architecture::Mlp, 5, 4, 3, rng());
    for (double m : {0.0, 0.5, 0.9, 0.999}) {
        auto k2 = k;
        momentum_update(k2, q, m);
        for (std::size_t i = 0; i < q.param_count(); ++i) {
            const double lhs = std::abs(k2.params()[i] - q.params()[i]);
            const double rhs = m * std::abs(k.params()[i] - q.params()[i]);
            if (std::abs(lhs - rhs) > 1e-12 * (1.0 + rhs)) return "m=" + detail::fmt(m) + " not a contraction";
        }
    }
    return {};
}

/// Memory negatives move the loss but enter the gradient only as constants:
/// the analytic gradient still matches finite differences after they move.
inline std::string check_stop_gradient(const Options& o, std::mt19937_64& rng) {
    for (std::size_t t = 0; t < detail::scaled(o, 10, 3); ++t) {
        auto q = FeatureExtractor::initialized(Architecture::Mlp, 4, 5, 3, rng());
        std::normal_distribution<double> g(0.0, 1.0);
        std::vector<Pair> batch(3);
        for (auto& p : batch) {
            p.x = {g(rng), g(rng), g(rng), g(rng)};
            p.x_pos = {g(rng), g(rng), g(rng), g(rng)};
        }
        std::vector<Embedding> negs{detail::random_unit(3, rng), detail::random_unit(3, rng)};
        const LossConfig lc{0.5, 1.0, NegativeSource::MemoryOnly};
        const double base = contrastive_loss(q, nullptr, batch, negs, lc, false).loss;
        auto moved = negs;
        moved[0] = detail::random_unit(3, rng);
        const auto shifted = contrastive_loss(q, nullptr, batch, moved, lc, true);
        if (shifted.loss == base) return "loss insensitive to memory contents";
        if (shifted.grad.size() != q.param_count()) return "gradient has entries beyond encoder parameters";
        const double h = 1e-5;
        for (std::size_t i = 0; i < q.param_count(); ++i) {
            const double keep = q.params()[i];
            q.params()[i] = keep + h;
            const double up = contrastive_loss(q, nullptr, batch, moved, lc, false).loss;
            q.params()[i] = keep - h;
            const double down = contrastive_loss(q, nullptr, batch, moved, lc, false).loss;
            q.params()[i] = keep;
            const double n = (up - down) / (2.0 * h);
            if (std::abs(n - shifted.grad[i]) > 1e-4 * std::max({std::abs(n), std::abs(shifted.grad[i]), 1e-6}))
                return "gradient mismatch after moving memory";
        }
    }
    return {};
}

// ---------------------------------------------------------------------------
// streams

inline std::string check_dominant_profile(const Options&, std::mt19937_64&) {
    for (std::size_t C = 2; C <= 20; ++C) {
        for (double rho : {0.1, 0.25, 0.5, 0.75, 0.9}) {
            if (rho < 1.0 / static_cast<double>(C)) continue;
            StreamConfig cfg;
            cfg.num_classes = C;
            cfg.input_dim = 32;
            cfg.imbalance = DominantImbalance{rho};
            const auto p = class_probabilities(cfg);
            const double sum = std::accumulate(p.begin(), p.end(), 0.0);
            if (std::abs(sum - 1.0) > 1e-12) return "probabilities sum to " + detail::fmt(sum);
            const double rmin = (1.0 - rho) / static_cast<double>(C - 1);
            if (p[0] != rho) return "dominant probability wrong";
            for (std::size_t c = 1; c < C; ++c)
                if (std::abs(p[c] - rmin) > 1e-15) return "rho_min mismatch";
            if (std::abs(dominant_rho_min(C, rho) - rmin) > 1e-15) return "dominant_rho_min mismatch";
        }
    }
    return {};
}

inline std::string check_longtail_profile(const Options&, std::mt19937_64&) {
    for (std::size_t C = 2; C <= 20; C += 3) {
        for (double R : {1.0, 2.0, 10.0, 100.0}) {
            const auto p = longtail_probs(C, R);
            const double sum = std::accumulate(p.begin(), p.end(), 0.0);
            if (std::abs(sum - 1.0) > 1e-12) return "long-tail sum " + detail::fmt(sum);
            for (std::size_t c = 0; c < C; ++c) {
                if (!(p[c] > 0.0)) return "non-positive probability";
                if (c > 0 && p[c] > p[c - 1]) return "not monotone";
            }
            if (std::abs(p.front() / p.back() - R) > 1e-12 * R) return "max/min != R for R=" + detail::fmt(R);
        }
    }
    return {};
}

inline std::string check_augmentation_moments(const Options& o, std::mt19937_64& rng) {
    StreamConfig cfg;
    cfg.augment_sigma = 0.3;
    cfg.seed = rng();
    StreamGenerator gen(cfg);
    const std::size_t n = detail::scaled(o, 20000, 4000);
    double sum = 0.0, sq = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto p = gen.sample_pair();
        for (std::size_t j = 0; j < p.x.size(); ++j) {
            const double d = p.x_pos[j] - p.x[j];
            sum += d;
            sq += d * d;
            ++count;
        }
    }
    const double mean = sum / static_cast<double>(count);
    const double var = sq / static_cast<double>(count) - mean * mean;
    const double s2 = cfg.augment_sigma * cfg.augment_sigma;
    // Five standard errors of each estimator.
    if (std::abs(mean) > 5.0 * cfg.augment_sigma / std::sqrt(static_cast<double>(count)))
        return "mean of x+ - x is " + detail::fmt(mean);
    if (std::abs(var - s2) > 5.0 * s2 * std::sqrt(2.0 / static_cast<double>(count)))
        return "variance of x+ - x is " + detail::fmt(var);
    return {};
}

inline std::string check_stream_determinism(const Options&, std::mt19937_64& rng) {
    StreamConfig cfg;
    cfg.imbalance = LongTailImbalance{10.0};
    cfg.seed = rng();
    StreamGenerator a(cfg), b(cfg);
    for (int i = 0; i < 500; ++i) {
        const auto pa = a.sample_pair(), pb = b.sample_pair();
        if (pa.label != pb.label || pa.x != pb.x || pa.x_pos != pb.x_pos)
            return "streams diverge at item " + std::to_string(i);
    }
    return {};
}

// ---------------------------------------------------------------------------
// metrics

inline std::string check_entropy_ceiling(const Options& o, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> cn(2, 10), n(1, 60);
    for (std::size_t t = 0; t < detail::scaled(o, 300, 60); ++t) {
        const int C = cn(rng);
        std::vector<int> labels;
        std::uniform_int_distribution<int> cls(0, C - 1);
        const int m = n(rng);
        for (int i = 0; i < m; ++i) labels.push_back(cls(rng));
        const double h = class_entropy(labels);
        std::map<int, int> counts;
        for (int l : labels) ++counts[l];
        bool balanced = static_cast<int>(counts.size()) == C;
        for (auto [c, k] : counts) balanced = balanced && k == counts.begin()->second;
        const double cap = std::log(static_cast<double>(C));
        if (h > cap + 1e-12) return "entropy above ln|C|";
        if (balanced && std::abs(h - cap) > 1e-12) return "balanced memory below ln|C|";
        if (!balanced && std::abs(h - cap) < 1e-12) return "unbalanced memory reaches ln|C|";
    }
    return {};
}

inline std::string check_intra_variance_zero(const Options&, std::mt19937_64& rng) {
    LabeledSet same, spread;
    for (int c = 0; c < 4; ++c) {
        const auto e = detail::random_unit(6, rng);
        for (int i = 0; i < 5; ++i) {
            same.embeddings.push_back(e);
            same.labels.push_back(c);
            spread.embeddings.push_back(i == 0 ? e : detail::clustered_unit(e, 0.3, rng));
            spread.labels.push_back(c);
        }
    }
    if (intra_class_variance(same) > 1e-12) return "identical class members give nonzero variance";
    if (!(intra_class_variance(spread) > 0.0)) return "distinct class members give zero variance";
    return {};
}

inline std::string check_inter_relabel(const Options&, std::mt19937_64& rng) {
    LabeledSet s;
    for (int c = 0; c < 5; ++c) {
        const auto e = detail::random_unit(6, rng);
        for (int i = 0; i < 6; ++i) {
            s.embeddings.push_back(detail::clustered_unit(e, 0.4, rng));
            s.labels.push_back(c);
        }
    }
    std::vector<int> perm{3, 0, 4, 1, 2};
    auto r = s;
    for (int& l : r.labels) l = perm[static_cast<std::size_t>(l)] + 100;
    if (std::abs(inter_class_similarity(s) - inter_class_similarity(r)) > 1e-12) return "relabeling moved s_inter";
    return {};
}

inline std::string check_probe_separable(const Options&, std::mt19937_64& rng) {
    LabeledSet tr, te;
    for (int c = 0; c < 6; ++c) {
        for (int i = 0; i < 20; ++i) {
            auto& set = i < 10 ? tr : te;
            set.embeddings.push_back(detail::clustered_unit(Embedding::basis(8, static_cast<std::size_t>(c)), 0.05, rng));
            set.labels.push_back(c);
        }
    }
    const double acc = linear_probe(tr, tr);
    if (acc != 1.0) return "separable training features reach only " + detail::fmt(acc);
    return {};
}

// ---------------------------------------------------------------------------
// harness

inline ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.trainer.steps = 12;
    c.trainer.batch_size = 16;
    c.trainer.memory_negatives = 16;
    c.memory.capacity = 32;
    c.eval.cadence = 4;
    c.eval.eval_per_class = 5;
    c.eval.probe_train_per_class = 5;
    c.eval.probe.steps = 20;
    return c;
}

inline std::string metrics_csv(const RunResult& r) {
    std::ostringstream os;
    write_metrics_header(os);
    for (const auto& row : r.rows) write_metrics_row(os, row);
    return os.str();
}

inline std::string check_run_determinism(const Options& o, std::mt19937_64&) {
    auto cfg = tiny_config();
    RunOptions ro;
    ro.fault = o.fault;
    const auto a = metrics_csv(run_experiment(cfg, 11, ro));
    const auto b = metrics_csv(run_experiment(cfg, 11, ro));
    if (a != b) return "identical config and seed gave different metrics";
    return {};
}

// ---------------------------------------------------------------------------

struct NamedCheck {
    const char* name;
    CheckFn fn;
};

inline std::vector<NamedCheck> all_checks() {
    return {
        {"kernel.range_symmetry", check_kernel_range},
        {"kernel.info_nonnegative_jensen", check_info_nonnegative_and_jensen},
        {"kernel.oracle_optimum", check_oracle_optimum},
        {"kernel.lower_bound", check_lower_bound},
        {"kernel.mhml_bound", check_memory_bound},
        {"memory.monotone_equivalence", check_monotone_equivalence},
        {"memory.incremental_equivalence", check_incremental_equivalence},
        {"memory.cache_coherence_capacity", check_cache_and_capacity},
        {"memory.safeness", check_safeness},
        {"memory.label_blindness", check_label_blindness},
        {"trainer.gradient_check", check_gradients},
        {"trainer.infonce_mhml_identity", check_infonce_identity},
        {"trainer.loss_nonnegative", check_loss_nonnegative},
        {"trainer.momentum_contraction", check_momentum},
        {"trainer.stop_gradient", check_stop_gradient},
        {"streams.dominant_profile", check_dominant_profile},
        {"streams.longtail_profile", check_longtail_profile},
        {"streams.augmentation_moments", check_augmentation_moments},
        {"streams.seed_determinism", check_stream_determinism},
        {"metrics.entropy_ceiling", check_entropy_ceiling},
        {"metrics.intra_variance_zero", check_intra_variance_zero},
        {"metrics.inter_relabel_invariance", check_inter_relabel},
        {"metrics.probe_separable", check_probe_separable},
        {"harness.run_determinism", check_run_determinism},
    };
}

inline std::vector<CheckResult> run_all(const Options& o) {
    std::vector<CheckResult> out;
    std::uint64_t k = 0;
    for (const auto& c : all_checks()) {
        std::mt19937_64 rng(o.seed * 1000003ULL + k++);
        const auto t0 = std::chrono::steady_clock::now();
        CheckResult r{c.name, true, {}, 0.0};
        try {
            r.detail = c.fn(o, rng);
            r.passed = r.detail.empty();
        } catch (const std::exception& e) {
            r.passed = false;
            r.detail = std::string("exception: ") + e.what();
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace duel::verify
