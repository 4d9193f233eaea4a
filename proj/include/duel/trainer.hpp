#pragma once

// Small feature extractors trained by memory-augmented InfoNCE with
// hand-written backpropagation, an optional momentum (key) encoder and a
// cosine learning-rate schedule.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "duel/kernel.hpp"
#include "duel/memory.hpp"
#include "duel/streams.hpp"

namespace duel {

enum class Architecture { Linear, Mlp };
enum class NegativeSource { BatchOnly, MemoryOnly, Mixed };
enum class OptimizerKind { Sgd, Adam };

inline std::string_view to_string(Architecture a) { return a == Architecture::Linear ? "linear" : "mlp"; }
inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }
inline std::string_view to_string(NegativeSource s) {
    switch (s) {
    case NegativeSource::BatchOnly: return "batch_only";
    case NegativeSource::MemoryOnly: return "memory_only";
    case NegativeSource::Mixed: return "mixed";
    }
    return "unknown";
}

inline NegativeSource parse_negative_source(std::string_view s) {
    if (s == "batch_only") return NegativeSource::BatchOnly;
    if (s == "memory_only") return NegativeSource::MemoryOnly;
    if (s == "mixed") return NegativeSource::Mixed;
    throw std::invalid_argument("unknown negative source '" + std::string(s) + "'");
}

inline bool uses_batch(NegativeSource s) { return s != NegativeSource::MemoryOnly; }
inline bool uses_memory(NegativeSource s) { return s != NegativeSource::BatchOnly; }

/// Linear (d_in -> Z) or one-hidden-layer tanh MLP (d_in -> H -> Z), output
/// L2-normalized. Parameters live in one flat vector:
///   linear: W[Z x d_in], b[Z]
///   mlp:    W1[H x d_in], b1[H], W2[Z x H], b2[Z]
class FeatureExtractor {
public:
    FeatureExtractor() = default;

    FeatureExtractor(Architecture arch, std::size_t input_dim, std::size_t hidden_dim,
                     std::size_t output_dim)
        : arch_(arch), in_(input_dim), hidden_(arch == Architecture::Linear ? 0 : hidden_dim),
          out_(output_dim) {
        if (in_ == 0 || out_ == 0) throw std::invalid_argument("extractor: dimensions must be positive");
        if (arch_ == Architecture::Mlp && hidden_ == 0)
            throw std::invalid_argument("extractor: mlp needs a hidden layer");
        params_.assign(param_count(), 0.0);
    }

    /// Glorot-uniform weights, zero biases.
    static FeatureExtractor initialized(Architecture arch, std::size_t input_dim,
                                        std::size_t hidden_dim, std::size_t output_dim,
                                        std::uint64_t seed) {
        FeatureExtractor f(arch, input_dim, hidden_dim, output_dim);
        std::mt19937_64 rng(seed);
        auto fill = [&rng](std::span<double> w, std::size_t fan_in, std::size_t fan_out) {
            const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            std::uniform_real_distribution<double> u(-a, a);
            for (double& x : w) x = u(rng);
        };
        if (arch == Architecture::Linear) {
            fill(f.weight(0), f.in_, f.out_);
        } else {
            fill(f.weight(0), f.in_, f.hidden_);
            fill(f.weight(1), f.hidden_, f.out_);
        }
        return f;
    }

    Architecture architecture() const noexcept { return arch_; }
    std::size_t input_dim() const noexcept { return in_; }
    std::size_t hidden_dim() const noexcept { return hidden_; }
    std::size_t output_dim() const noexcept { return out_; }

    std::size_t param_count() const noexcept {
        if (arch_ == Architecture::Linear) return out_ * in_ + out_;
        return hidden_ * in_ + hidden_ + out_ * hidden_ + out_;
    }

    std::vector<double>& params() noexcept { return params_; }
    const std::vector<double>& params() const noexcept { return params_; }

    bool same_shape(const FeatureExtractor& o) const noexcept {
        return arch_ == o.arch_ && in_ == o.in_ && hidden_ == o.hidden_ && out_ == o.out_;
    }

    struct Cache {
        std::vector<double> input;
        std::vector<double> hidden;  // tanh activations (mlp only)
        std::vector<double> pre;     // pre-normalization output
        double norm = 0.0;
        std::vector<double> z;
    };

    Cache forward_cached(std::span<const double> x) const {
        if (x.size() != in_) throw std::invalid_argument("extractor: input dimension mismatch");
        for (double v : x)
            if (!std::isfinite(v)) throw std::invalid_argument("extractor: non-finite input");
        Cache c;
        c.input.assign(x.begin(), x.end());
        if (arch_ == Architecture::Linear) {
            c.pre = affine(layer(0), bias(0), x, out_);
        } else {
            c.hidden = affine(layer(0), bias(0), x, hidden_);
            for (double& h : c.hidden) h = std::tanh(h);
            c.pre = affine(layer(1), bias(1), c.hidden, out_);
        }
        c.norm = std::sqrt(detail::dot(c.pre, c.pre));
        if (!(c.norm > 0.0) || !std::isfinite(c.norm))
            throw std::domain_error("extractor: zero pre-normalization norm");
        c.z = c.pre;
        for (double& v : c.z) v /= c.norm;
        return c;
    }

    Embedding forward(std::span<const double> x) const {
        return Embedding::from_unit(forward_cached(x).z);
    }

    /// Accumulates dL/dtheta into `grad` given dL/dz for one forward pass.
    void backward(const Cache& c, std::span<const double> grad_z, std::span<double> grad) const {
        // d(h/|h|)/dh = (I - z z^T) / |h|
        const double zg = detail::dot(c.z, grad_z);
        std::vector<double> dpre(out_);
        for (std::size_t i = 0; i < out_; ++i) dpre[i] = (grad_z[i] - c.z[i] * zg) / c.norm;

        if (arch_ == Architecture::Linear) {
            accumulate_affine(dpre, c.input, grad, 0);
            return;
        }
        accumulate_affine(dpre, c.hidden, grad, 1);
        const auto w2 = layer(1);
        std::vector<double> da(hidden_, 0.0);
        for (std::size_t o = 0; o < out_; ++o)
            for (std::size_t h = 0; h < hidden_; ++h) da[h] += w2[o * hidden_ + h] * dpre[o];
        for (std::size_t h = 0; h < hidden_; ++h) da[h] *= 1.0 - c.hidden[h] * c.hidden[h];
        accumulate_affine(da, c.input, grad, 0);
    }

private:
    // Offsets of layer `l` weights and biases in the flat parameter vector.
    std::size_t weight_offset(int l) const { return l == 0 ? 0 : hidden_ * in_ + hidden_; }
    std::size_t rows(int l) const {
        return arch_ == Architecture::Linear ? out_ : (l == 0 ? hidden_ : out_);
    }
    std::size_t cols(int l) const { return l == 0 ? in_ : hidden_; }

    std::span<double> weight(int l) {
        return std::span<double>(params_).subspan(weight_offset(l), rows(l) * cols(l));
    }
    std::span<const double> layer(int l) const {
        return std::span<const double>(params_).subspan(weight_offset(l), rows(l) * cols(l));
    }
    std::span<const double> bias(int l) const {
        return std::span<const double>(params_).subspan(weight_offset(l) + rows(l) * cols(l), rows(l));
    }

    static std::vector<double> affine(std::span<const double> w, std::span<const double> b,
                                      std::span<const double> x, std::size_t n_out) {
        std::vector<double> y(n_out);
        for (std::size_t o = 0; o < n_out; ++o)
            y[o] = b[o] + detail::dot(w.subspan(o * x.size(), x.size()), x);
        return y;
    }

    void accumulate_affine(std::span<const double> dy, std::span<const double> x,
                           std::span<double> grad, int l) const {
        const std::size_t off = weight_offset(l);
        const std::size_t r = rows(l), cl = cols(l);
        for (std::size_t o = 0; o < r; ++o) {
            double* gw = grad.data() + off + o * cl;
            for (std::size_t i = 0; i < cl; ++i) gw[i] += dy[o] * x[i];
            grad[off + r * cl + o] += dy[o];
        }
    }

    Architecture arch_ = Architecture::Linear;
    std::size_t in_ = 0;
    std::size_t hidden_ = 0;
    std::size_t out_ = 0;
    std::vector<double> params_;
};

/// -log( e^{s+/tau} / (eps * e^{s+/tau} + sum_k e^{s_k/tau}) ), evaluated with
/// a shifted log-sum-exp.
inline double infonce_loss(const Embedding& anchor, const Embedding& positive,
                           std::span<const Embedding> negatives, double temperature, double epsilon) {
    if (negatives.empty()) throw std::invalid_argument("infonce_loss: no negatives");
    if (!(temperature > 0.0)) throw std::invalid_argument("infonce_loss: temperature must be positive");
    const double l0 = detail::dot(anchor.values(), positive.values()) / temperature;
    std::vector<double> lk;
    lk.reserve(negatives.size());
    for (const auto& n : negatives) lk.push_back(detail::dot(anchor.values(), n.values()) / temperature);
    double m = *std::max_element(lk.begin(), lk.end());
    if (epsilon > 0.0) m = std::max(m, l0);
    std::vector<double> terms;
    terms.reserve(lk.size() + 1);
    if (epsilon > 0.0) terms.push_back(epsilon * std::exp(l0 - m));
    for (double l : lk) terms.push_back(std::exp(l - m));
    return -(l0 - m) + std::log(detail::pairwise_sum(terms));
}

struct LossConfig {
    double temperature = 0.5;
    double epsilon = 1.0;
    NegativeSource source = NegativeSource::Mixed;
};

struct BatchLoss {
    double loss = 0.0;
    std::vector<double> grad;  // dL/dtheta of the query encoder; empty unless requested
};

/// Mean InfoNCE over a batch of (x, x+) pairs. Anchors are embedded by
/// `query`; positives by `key` when given (no gradient), by `query` otherwise.
/// Batch negatives for anchor b are the other positives; memory negatives are
/// constants shared across the batch.
inline BatchLoss contrastive_loss(const FeatureExtractor& query, const FeatureExtractor* key,
                                  std::span<const Pair> batch, std::span<const Embedding> memory_negatives,
                                  const LossConfig& cfg, bool want_grad) {
    const std::size_t B = batch.size();
    if (B == 0) throw std::invalid_argument("contrastive_loss: empty batch");
    if (uses_batch(cfg.source) && B < 2)
        throw std::invalid_argument("contrastive_loss: batch negatives need B >= 2");
    if (uses_memory(cfg.source) && memory_negatives.empty())
        throw std::invalid_argument("contrastive_loss: memory negatives requested but none given");
    if (key && !key->same_shape(query)) throw std::invalid_argument("contrastive_loss: key shape mismatch");

    const std::size_t Z = query.output_dim();
    std::vector<FeatureExtractor::Cache> anchors, positives;
    anchors.reserve(B);
    positives.reserve(B);
    for (const auto& p : batch) {
        anchors.push_back(query.forward_cached(p.x));
        positives.push_back(key ? key->forward_cached(p.x_pos) : query.forward_cached(p.x_pos));
    }
    for (const auto& n : memory_negatives)
        if (n.dim() != Z) throw std::invalid_argument("contrastive_loss: negative dimension mismatch");

    const double tau = cfg.temperature;
    const double scale = 1.0 / static_cast<double>(B);
    std::vector<std::vector<double>> gz(B, std::vector<double>(Z, 0.0));
    std::vector<std::vector<double>> gp(B, std::vector<double>(Z, 0.0));
    std::vector<double> losses(B);

    std::vector<double> logits;
    std::vector<const std::vector<double>*> negs;
    std::vector<std::size_t> neg_batch_index;  // batch index of a negative, or B for memory
    for (std::size_t b = 0; b < B; ++b) {
        const auto& z = anchors[b].z;
        const auto& pos = positives[b].z;
        negs.clear();
        neg_batch_index.clear();
        if (uses_batch(cfg.source)) {
            for (std::size_t k = 0; k < B; ++k) {
                if (k == b) continue;
                negs.push_back(&positives[k].z);
                neg_batch_index.push_back(k);
            }
        }
        if (uses_memory(cfg.source)) {
            negs.insert(negs.end(), memory_negatives.size(), nullptr);
            neg_batch_index.insert(neg_batch_index.end(), memory_negatives.size(), B);
        }
        const std::size_t n_batch_negs = uses_batch(cfg.source) ? B - 1 : 0;
        auto neg_values = [&](std::size_t k) -> std::span<const double> {
            if (k < n_batch_negs) return *negs[k];
            return memory_negatives[k - n_batch_negs].values();
        };

        const double l0 = detail::dot(z, pos) / tau;
        logits.assign(negs.size(), 0.0);
        for (std::size_t k = 0; k < negs.size(); ++k) logits[k] = detail::dot(z, neg_values(k)) / tau;
        double m = *std::max_element(logits.begin(), logits.end());
        if (cfg.epsilon > 0.0) m = std::max(m, l0);
        const double e0 = cfg.epsilon > 0.0 ? cfg.epsilon * std::exp(l0 - m) : 0.0;
        std::vector<double> ek(negs.size());
        for (std::size_t k = 0; k < negs.size(); ++k) ek[k] = std::exp(logits[k] - m);
        std::vector<double> terms(ek);
        terms.push_back(e0);
        const double den = detail::pairwise_sum(terms);
        losses[b] = -(l0 - m) + std::log(den);

        if (!want_grad) continue;
        const double d0 = scale * (-1.0 + e0 / den) / tau;
        for (std::size_t i = 0; i < Z; ++i) {
            gz[b][i] += d0 * pos[i];
            gp[b][i] += d0 * z[i];
        }
        for (std::size_t k = 0; k < negs.size(); ++k) {
            const double dk = scale * (ek[k] / den) / tau;
            const auto nv = neg_values(k);
            for (std::size_t i = 0; i < Z; ++i) gz[b][i] += dk * nv[i];
            if (neg_batch_index[k] < B)
                for (std::size_t i = 0; i < Z; ++i) gp[neg_batch_index[k]][i] += dk * z[i];
        }
    }

    BatchLoss out;
    out.loss = detail::pairwise_sum(losses) * scale;
    if (!want_grad) return out;
    out.grad.assign(query.param_count(), 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        query.backward(anchors[b], gz[b], out.grad);
        if (!key) query.backward(positives[b], gp[b], out.grad);
    }
    return out;
}

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double delta = 1e-8;
    double weight_decay = 0.0;
};

class Optimizer {
public:
    Optimizer() = default;
    Optimizer(OptimizerConfig cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::vector<double>& params, std::span<const double> grad, double lr) {
        if (grad.size() != params.size() || m_.size() != params.size())
            throw std::invalid_argument("optimizer: size mismatch");
        ++t_;
        if (cfg_.kind == OptimizerKind::Sgd) {
            for (std::size_t i = 0; i < params.size(); ++i)
                params[i] -= lr * (grad[i] + cfg_.weight_decay * params[i]);
            return;
        }
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grad[i] + cfg_.weight_decay * params[i];
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
            params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.delta);
        }
    }

    const OptimizerConfig& config() const noexcept { return cfg_; }
    std::vector<double>& first_moment() noexcept { return m_; }
    std::vector<double>& second_moment() noexcept { return v_; }
    const std::vector<double>& first_moment() const noexcept { return m_; }
    const std::vector<double>& second_moment() const noexcept { return v_; }
    std::uint64_t steps() const noexcept { return t_; }
    void set_steps(std::uint64_t t) noexcept { t_ = t; }

private:
    OptimizerConfig cfg_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::uint64_t t_ = 0;
};

/// theta_key <- m * theta_key + (1 - m) * theta_query
inline void momentum_update(FeatureExtractor& key, const FeatureExtractor& query, double m) {
    if (!key.same_shape(query)) throw std::invalid_argument("momentum_update: shape mismatch");
    auto& k = key.params();
    const auto& q = query.params();
    for (std::size_t i = 0; i < k.size(); ++i) k[i] = m * k[i] + (1.0 - m) * q[i];
}

inline double cosine_lr(std::uint64_t step, std::uint64_t total, double base_lr) {
    if (total == 0) return base_lr;
    const double t = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

struct TrainerConfig {
    Architecture architecture = Architecture::Mlp;
    std::size_t hidden_dim = 64;
    std::size_t embedding_dim = 16;
    std::size_t batch_size = 64;
    double temperature = 0.5;
    double epsilon = 1.0;
    NegativeSource negative_source = NegativeSource::Mixed;
    std::size_t memory_negatives = 128;
    std::optional<double> momentum = 0.9;
    double learning_rate = 0.01;
    OptimizerConfig optimizer;
    std::uint64_t steps = 1500;
    std::uint64_t seed = 0;
};

inline void validate(const TrainerConfig& c) {
    if (!(c.temperature > 0.0)) throw std::invalid_argument("trainer.temperature must be positive");
    if (!(c.epsilon >= 0.0 && c.epsilon <= 1.0)) throw std::invalid_argument("trainer.epsilon must lie in [0, 1]");
    if (c.batch_size == 0) throw std::invalid_argument("trainer.batch_size must be positive");
    if (uses_batch(c.negative_source) && c.batch_size < 2)
        throw std::invalid_argument("trainer.batch_size must be >= 2 with batch negatives");
    if (uses_memory(c.negative_source) && c.memory_negatives == 0)
        throw std::invalid_argument("trainer.memory_negatives must be positive with memory negatives");
    if (c.momentum && !(*c.momentum >= 0.0 && *c.momentum < 1.0))
        throw std::invalid_argument("trainer.momentum must lie in [0, 1)");
    if (!(c.learning_rate >= 0.0)) throw std::invalid_argument("trainer.learning_rate must be nonnegative");
    if (c.embedding_dim == 0) throw std::invalid_argument("trainer.embedding_dim must be positive");
    if (c.architecture == Architecture::Mlp && c.hidden_dim == 0)
        throw std::invalid_argument("trainer.hidden_dim must be positive for mlp");
}

struct MemoryConfig {
    std::size_t capacity = 256;
    EvictionPolicy policy = EvictionPolicy::DuelIncremental;
    SimilarityKernel kernel = SimilarityKernel::affine_cosine();
    bool guarded = false;
};

struct TrainerState {
    TrainerConfig config;
    MemoryConfig memory_config;
    FeatureExtractor query;
    std::optional<FeatureExtractor> key;
    ActiveMemory memory;
    Optimizer optimizer;
    std::uint64_t step = 0;
    std::uint64_t next_id = 0;
    std::mt19937_64 rng;
};

inline TrainerState make_trainer(const TrainerConfig& cfg, const MemoryConfig& mcfg, std::size_t input_dim) {
    validate(cfg);
    auto query = FeatureExtractor::initialized(cfg.architecture, input_dim, cfg.hidden_dim,
                                               cfg.embedding_dim, cfg.seed);
    std::optional<FeatureExtractor> key;
    if (cfg.momentum) key = query;
    Optimizer opt(cfg.optimizer, query.param_count());
    ActiveMemory mem(mcfg.capacity, mcfg.kernel, mcfg.policy, cfg.seed ^ 0xa5a5a5a5ULL);
    return TrainerState{cfg, mcfg, std::move(query), std::move(key), std::move(mem), std::move(opt),
                        0, 0, std::mt19937_64(cfg.seed + 1)};
}

/// Encoder that produces memory and positive embeddings.
inline const FeatureExtractor& target_encoder(const TrainerState& s) {
    return s.key ? *s.key : s.query;
}

inline std::vector<MemoryEntry> embed_for_memory(TrainerState& s, std::span<const Pair> batch) {
    std::vector<MemoryEntry> out;
    out.reserve(batch.size());
    const auto& enc = target_encoder(s);
    for (const auto& p : batch) out.push_back({enc.forward(p.x), p.label, s.step, s.next_id++});
    return out;
}

/// Fills the empty memory with initial stream samples (M_0).
inline void initialize_memory(TrainerState& s, StreamGenerator& stream) {
    while (!s.memory.full()) {
        const auto batch = stream.sample_batch(std::min(s.config.batch_size, s.memory.capacity() - s.memory.size()));
        const auto entries = embed_for_memory(s, batch);
        push_batch(s.memory, entries);
    }
}

struct StepReport {
    double loss = 0.0;
    double lr = 0.0;
    std::size_t evictions = 0;
    bool memory_applied = true;
};

/// One iteration: embed, gather negatives, gradient step, momentum update,
/// then push the anchors' target-encoder embeddings into memory.
inline StepReport train_step(TrainerState& s, std::span<const Pair> batch, IncrementalFault fault = {}) {
    StepReport rep;
    rep.lr = cosine_lr(s.step, s.config.steps, s.config.learning_rate);

    std::vector<Embedding> mem_negs;
    if (uses_memory(s.config.negative_source))
        mem_negs = sample_negatives(s.memory, s.config.memory_negatives, s.rng);

    const LossConfig lc{s.config.temperature, s.config.epsilon, s.config.negative_source};
    const auto bl = contrastive_loss(s.query, s.key ? &*s.key : nullptr, batch, mem_negs, lc, true);
    rep.loss = bl.loss;
    s.optimizer.step(s.query.params(), bl.grad, rep.lr);
    if (s.key) momentum_update(*s.key, s.query, *s.config.momentum);

    const auto entries = embed_for_memory(s, batch);
    EvictionLog log;
    if (s.memory_config.guarded && s.memory.full()) {
        auto g = guarded_update(s.memory, entries, entries);
        log = std::move(g.log);
        rep.memory_applied = g.applied;
    } else {
        log = push_batch(s.memory, entries, fault);
    }
    if (rep.memory_applied)
        for (const auto& r : log) rep.evictions += r.evicted_id ? 1 : 0;
    ++s.step;
    return rep;
}

}  // namespace duel
