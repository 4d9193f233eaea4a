#pragma once

// Capacity-K active memory with pluggable eviction policies.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "duel/detail/summation.hpp"
#include "duel/kernel.hpp"

namespace duel {

enum class EvictionPolicy { DuelIncremental, DuelNaive, Fifo, Random, Reservoir };

inline std::string_view policy_name(EvictionPolicy p) {
    switch (p) {
    case EvictionPolicy::DuelIncremental: return "duel";
    case EvictionPolicy::DuelNaive: return "duel_naive";
    case EvictionPolicy::Fifo: return "fifo";
    case EvictionPolicy::Random: return "random";
    case EvictionPolicy::Reservoir: return "reservoir";
    }
    return "unknown";
}

inline EvictionPolicy parse_policy(std::string_view name) {
    if (name == "duel" || name == "duel_incremental") return EvictionPolicy::DuelIncremental;
    if (name == "duel_naive") return EvictionPolicy::DuelNaive;
    if (name == "fifo") return EvictionPolicy::Fifo;
    if (name == "random") return EvictionPolicy::Random;
    if (name == "reservoir") return EvictionPolicy::Reservoir;
    throw std::invalid_argument("unknown memory policy '" + std::string(name) + "'");
}

/// One stored element. `hidden_label` is carried for diagnostics only and
/// is read by scoring exclusively when the label-oracle kernel is injected.
struct MemoryEntry {
    Embedding embedding;
    int hidden_label = -1;
    std::uint64_t insert_step = 0;
    std::uint64_t id = 0;
};

struct EvictionRecord {
    std::optional<std::size_t> evicted_index;  // position in the memory at eviction time
    std::optional<std::uint64_t> evicted_id;
    std::uint64_t incoming_id = 0;
    bool inserted = true;

    friend bool operator==(const EvictionRecord&, const EvictionRecord&) = default;
};

using EvictionLog = std::vector<EvictionRecord>;

// Relative tolerance under which two scores count as tied. Ties resolve to the
// lowest index. Distinctiveness is -log(score / K), so a relative score gap
// maps to the same absolute gap in nats to first order.
inline constexpr double kTieTolerance = 1e-10;

class ActiveMemory {
public:
    ActiveMemory(std::size_t capacity, SimilarityKernel kernel,
                 EvictionPolicy policy = EvictionPolicy::DuelIncremental, std::uint64_t seed = 0)
        : capacity_(capacity), kernel_(kernel), policy_(policy), rng_(seed) {
        if (capacity_ == 0) throw std::invalid_argument("memory capacity must be positive");
        entries_.reserve(capacity_);
        scores_.reserve(capacity_);
    }

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    bool full() const noexcept { return entries_.size() >= capacity_; }
    std::optional<std::size_t> dim() const {
        if (entries_.empty()) return std::nullopt;
        return entries_.front().embedding.dim();
    }

    const SimilarityKernel& kernel() const noexcept { return kernel_; }
    EvictionPolicy policy() const noexcept { return policy_; }
    void set_policy(EvictionPolicy p) noexcept { policy_ = p; }

    std::span<const MemoryEntry> entries() const noexcept { return entries_; }
    const MemoryEntry& entry(std::size_t i) const { return entries_.at(i); }

    /// Row sums of pairwise q over current entries, self term included.
    std::span<const double> cached_scores() const noexcept { return scores_; }

    std::uint64_t seen_count() const noexcept { return seen_count_; }
    std::mt19937_64& rng() noexcept { return rng_; }
    const std::mt19937_64& rng() const noexcept { return rng_; }
    void set_rng_state(const std::mt19937_64& r) { rng_ = r; }
    void set_seen_count(std::uint64_t n) noexcept { seen_count_ = n; }

    double q(const MemoryEntry& a, const MemoryEntry& b) const {
        if (kernel_.needs_labels()) return SimilarityKernel::from_labels(a.hidden_label, b.hidden_label);
        return kernel_.from_cosine(cosine(a.embedding, b.embedding));
    }

    std::vector<Embedding> embeddings() const {
        std::vector<Embedding> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.embedding);
        return out;
    }
    std::vector<int> labels() const {
        std::vector<int> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.hidden_label);
        return out;
    }

    /// Appends without eviction; requires spare capacity.
    void append(MemoryEntry e) {
        check_dim(e.embedding);
        if (full()) throw std::logic_error("append on full memory");
        double row = 0.0;
        for (std::size_t k = 0; k < entries_.size(); ++k) {
            const double qk = q(entries_[k], e);
            scores_[k] += qk;
            row += qk;
        }
        row += q(e, e);
        entries_.push_back(std::move(e));
        scores_.push_back(row);
    }

    /// Removes the entry at `index`, keeping the order of the rest.
    MemoryEntry remove(std::size_t index) {
        if (index >= entries_.size()) throw std::out_of_range("memory remove: index out of range");
        MemoryEntry gone = std::move(entries_[index]);
        entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(index));
        scores_.erase(scores_.begin() + static_cast<std::ptrdiff_t>(index));
        for (std::size_t k = 0; k < entries_.size(); ++k) scores_[k] -= q(entries_[k], gone);
        return gone;
    }

    /// Full O(K^2) recomputation of the row sums.
    std::vector<double> recompute_scores() const {
        std::vector<double> out(entries_.size());
        std::vector<double> row(entries_.size());
        for (std::size_t j = 0; j < entries_.size(); ++j) {
            for (std::size_t k = 0; k < entries_.size(); ++k) row[k] = q(entries_[j], entries_[k]);
            out[j] = detail::pairwise_sum(row);
        }
        return out;
    }

    void refresh_scores() { scores_ = recompute_scores(); }

    /// Replaces contents wholesale (used by checkpoint restore and Alg-4 commit).
    void assign(std::vector<MemoryEntry> entries, std::vector<double> scores) {
        if (entries.size() > capacity_) throw std::invalid_argument("memory assign: over capacity");
        if (entries.size() != scores.size()) throw std::invalid_argument("memory assign: score size");
        entries_ = std::move(entries);
        scores_ = std::move(scores);
    }

    void note_seen(std::uint64_t n = 1) noexcept { seen_count_ += n; }

    void check_dim(const Embedding& e) const {
        if (!entries_.empty() && entries_.front().embedding.dim() != e.dim())
            throw std::invalid_argument("memory: embedding dimension mismatch");
    }

private:
    std::size_t capacity_;
    SimilarityKernel kernel_;
    EvictionPolicy policy_;
    std::vector<MemoryEntry> entries_;
    std::vector<double> scores_;
    std::mt19937_64 rng_;
    std::uint64_t seen_count_ = 0;
};

// ---------------------------------------------------------------------------
// Selection rules

namespace detail {

inline std::size_t argmax_with_ties(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("argmax of empty range");
    const double best = *std::max_element(v.begin(), v.end());
    const double cut = best - kTieTolerance * std::abs(best);
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i] >= cut) return i;
    return 0;
}

}  // namespace detail

/// Per-entry distinctiveness I_d(x_j; M) against the memory contents.
inline std::vector<InfoValue> memory_distinctiveness(const ActiveMemory& mem) {
    const auto n = mem.size();
    std::vector<InfoValue> out;
    out.reserve(n);
    std::vector<double> row(n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < n; ++k) row[k] = mem.q(mem.entry(j), mem.entry(k));
        const double mean = detail::pairwise_sum(row) / static_cast<double>(n);
        out.push_back(mean > 0.0 ? InfoValue::finite(-std::log(mean)) : InfoValue::infinity());
    }
    return out;
}

/// Index with minimum distinctiveness, recomputed from scratch.
inline std::size_t duel_select_naive(const ActiveMemory& mem) {
    if (mem.empty()) throw std::invalid_argument("duel_select_naive: empty memory");
    const auto info = memory_distinctiveness(mem);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& v : info) best = std::min(best, v.value);
    for (std::size_t j = 0; j < info.size(); ++j)
        if (info[j].value <= best + kTieTolerance) return j;
    return 0;
}

/// Index with maximum cached row sum. Equivalent to duel_select_naive since
/// -log(mean) is strictly decreasing.
inline std::size_t duel_select_by_score(const ActiveMemory& mem) {
    if (mem.empty()) throw std::invalid_argument("duel_select_by_score: empty memory");
    return detail::argmax_with_ties(mem.cached_scores());
}

// ---------------------------------------------------------------------------
// Update rules. Each takes a full memory and applies one replacement per
// batch element. Replacement removes the victim and appends the newcomer.

namespace detail {

inline void check_batch(const ActiveMemory& mem, std::span<const MemoryEntry> batch) {
    for (const auto& e : batch) mem.check_dim(e.embedding);
    if (!batch.empty()) {
        const auto d = batch.front().embedding.dim();
        for (const auto& e : batch)
            if (e.embedding.dim() != d) throw std::invalid_argument("batch dimension mismatch");
    }
}

inline EvictionRecord replace(ActiveMemory& mem, std::size_t victim, MemoryEntry incoming) {
    EvictionRecord rec;
    rec.evicted_index = victim;
    rec.evicted_id = mem.entry(victim).id;
    rec.incoming_id = incoming.id;
    mem.remove(victim);
    mem.append(std::move(incoming));
    return rec;
}

}  // namespace detail

/// DUEL with a full recomputation of distinctiveness before every replacement.
inline EvictionLog duel_update_naive(ActiveMemory& mem, std::span<const MemoryEntry> batch) {
    detail::check_batch(mem, batch);
    EvictionLog log;
    for (const auto& e : batch) {
        mem.note_seen();
        log.push_back(detail::replace(mem, duel_select_naive(mem), e));
        mem.refresh_scores();
    }
    return log;
}

/// Test hook: corrupts the incremental score maintenance so the
/// verification suite can demonstrate it detects the fault.
struct IncrementalFault {
    bool skip_deletion_update = false;
};

/// Batched DUEL with a (K+B)x(K+B) score matrix and a selection mask.
///
/// For each incoming row i: (a) J = argmax score; (b) logical deletion:
/// subtract row J masked by the selection, clear mask and score at J;
/// (c) logical insertion: add row i masked by the selection, set the mask,
/// and set score[i] to the masked row sum plus q(i,i).
inline EvictionLog duel_update_incremental(ActiveMemory& mem, std::span<const MemoryEntry> batch,
                                           IncrementalFault fault = {}) {
    if (!mem.full()) throw std::logic_error("duel_update_incremental: memory must be full");
    detail::check_batch(mem, batch);
    const std::size_t K = mem.size();
    const std::size_t B = batch.size();
    const std::size_t N = K + B;

    std::vector<const MemoryEntry*> comb;
    comb.reserve(N);
    for (const auto& e : mem.entries()) comb.push_back(&e);
    for (const auto& e : batch) comb.push_back(&e);

    std::vector<double> matrix(N * N);
    for (std::size_t a = 0; a < N; ++a) {
        for (std::size_t b = a; b < N; ++b) {
            const double v = mem.q(*comb[a], *comb[b]);
            matrix[a * N + b] = v;
            matrix[b * N + a] = v;
        }
    }

    std::vector<char> selection(N, 0);
    std::vector<double> score(N, 0.0);
    for (std::size_t j = 0; j < K; ++j) {
        selection[j] = 1;
        score[j] = detail::pairwise_sum(std::span<const double>(&matrix[j * N], K));
    }

    EvictionLog log;
    log.reserve(B);
    for (std::size_t i = K; i < N; ++i) {
        const std::size_t J = detail::argmax_with_ties(score);

        EvictionRecord rec;
        std::size_t position = 0;
        for (std::size_t t = 0; t < J; ++t) position += selection[t] ? 1 : 0;
        rec.evicted_index = position;
        rec.evicted_id = comb[J]->id;
        rec.incoming_id = comb[i]->id;
        log.push_back(rec);

        if (!fault.skip_deletion_update) {
            const double* row = &matrix[J * N];
            for (std::size_t t = 0; t < N; ++t)
                if (selection[t]) score[t] -= row[t];
        }
        selection[J] = 0;
        score[J] = 0.0;

        const double* row = &matrix[i * N];
        double added = 0.0;
        for (std::size_t t = 0; t < N; ++t) {
            if (selection[t]) {
                score[t] += row[t];
                added += row[t];
            }
        }
        selection[i] = 1;
        score[i] = added + row[i];
    }

    std::vector<MemoryEntry> kept;
    std::vector<double> kept_scores;
    kept.reserve(K);
    kept_scores.reserve(K);
    for (std::size_t t = 0; t < N; ++t) {
        if (!selection[t]) continue;
        kept.push_back(*comb[t]);
        kept_scores.push_back(score[t]);
    }
    mem.note_seen(B);
    mem.assign(std::move(kept), std::move(kept_scores));
    return log;
}

/// Evicts the oldest insert_step (lowest index on ties).
inline EvictionLog fifo_update(ActiveMemory& mem, std::span<const MemoryEntry> batch) {
    detail::check_batch(mem, batch);
    EvictionLog log;
    for (const auto& e : batch) {
        mem.note_seen();
        const auto ents = mem.entries();
        std::size_t victim = 0;
        for (std::size_t j = 1; j < ents.size(); ++j)
            if (ents[j].insert_step < ents[victim].insert_step) victim = j;
        log.push_back(detail::replace(mem, victim, e));
    }
    return log;
}

/// Evicts a uniformly random index.
inline EvictionLog random_update(ActiveMemory& mem, std::span<const MemoryEntry> batch,
                                 std::mt19937_64& rng) {
    detail::check_batch(mem, batch);
    EvictionLog log;
    for (const auto& e : batch) {
        mem.note_seen();
        std::uniform_int_distribution<std::size_t> pick(0, mem.size() - 1);
        log.push_back(detail::replace(mem, pick(rng), e));
    }
    return log;
}

/// Algorithm R: the n-th item seen is kept with probability K/n and
/// replaces a uniform victim.
inline EvictionLog reservoir_update(ActiveMemory& mem, std::span<const MemoryEntry> batch,
                                    std::mt19937_64& rng) {
    detail::check_batch(mem, batch);
    EvictionLog log;
    for (const auto& e : batch) {
        mem.note_seen();
        const std::uint64_t n = std::max<std::uint64_t>(mem.seen_count(), mem.capacity());
        std::uniform_int_distribution<std::uint64_t> draw(0, n - 1);
        const std::uint64_t slot = draw(rng);
        if (slot < mem.capacity()) {
            std::uniform_int_distribution<std::size_t> pick(0, mem.size() - 1);
            log.push_back(detail::replace(mem, pick(rng), e));
        } else {
            log.push_back({std::nullopt, std::nullopt, e.id, false});
        }
    }
    return log;
}

/// Fills spare capacity, then applies the configured policy to the rest.
inline EvictionLog push_batch(ActiveMemory& mem, std::span<const MemoryEntry> batch,
                              IncrementalFault fault = {}) {
    detail::check_batch(mem, batch);
    EvictionLog log;
    std::size_t i = 0;
    for (; i < batch.size() && !mem.full(); ++i) {
        mem.note_seen();
        mem.append(batch[i]);
        log.push_back({std::nullopt, std::nullopt, batch[i].id, true});
    }
    const auto rest = batch.subspan(i);
    if (rest.empty()) return log;
    EvictionLog more;
    switch (mem.policy()) {
    case EvictionPolicy::DuelIncremental: more = duel_update_incremental(mem, rest, fault); break;
    case EvictionPolicy::DuelNaive: more = duel_update_naive(mem, rest); break;
    case EvictionPolicy::Fifo: more = fifo_update(mem, rest); break;
    case EvictionPolicy::Random: more = random_update(mem, rest, mem.rng()); break;
    case EvictionPolicy::Reservoir: more = reservoir_update(mem, rest, mem.rng()); break;
    }
    log.insert(log.end(), more.begin(), more.end());
    return log;
}

/// Mean of I_d(x; M) over a probe sample. Infinite when any probe item has
/// zero duplication probability with every entry.
inline InfoValue mean_probe_distinctiveness(const ActiveMemory& mem,
                                            std::span<const MemoryEntry> probe) {
    if (probe.empty()) throw std::invalid_argument("probe sample is empty");
    if (mem.empty()) return InfoValue::infinity();
    std::vector<double> terms;
    std::vector<double> q(mem.size());
    for (const auto& p : probe) {
        for (std::size_t k = 0; k < mem.size(); ++k) q[k] = mem.q(p, mem.entry(k));
        const double mean = detail::pairwise_sum(q) / static_cast<double>(mem.size());
        if (mean <= 0.0) return InfoValue::infinity();
        terms.push_back(-std::log(mean));
    }
    return InfoValue::finite(detail::pairwise_sum(terms) / static_cast<double>(terms.size()));
}

/// Mean distinctiveness of the memory entries against the memory itself,
/// i.e. the probe is the memory's own class mixture.
inline InfoValue mean_memory_distinctiveness(const ActiveMemory& mem) {
    if (mem.empty()) return InfoValue::infinity();
    return mean_probe_distinctiveness(mem, mem.entries());
}

struct GuardedResult {
    EvictionLog log;
    bool applied = true;
    InfoValue before;
    InfoValue after;
};

// Slack under which a drop in probe distinctiveness is treated as rounding.
inline constexpr double kGuardTolerance = 1e-12;

/// Applies the policy to a copy and commits only if the probe sample's mean
/// distinctiveness against the memory does not decrease.
inline GuardedResult guarded_update(ActiveMemory& mem, std::span<const MemoryEntry> batch,
                                    std::span<const MemoryEntry> probe) {
    GuardedResult r;
    r.before = mean_probe_distinctiveness(mem, probe);
    ActiveMemory candidate = mem;
    r.log = push_batch(candidate, batch);
    r.after = mean_probe_distinctiveness(candidate, probe);
    bool decreased;
    if (r.before.infinite)
        decreased = !r.after.infinite;
    else
        decreased = !r.after.infinite && r.after.value < r.before.value - kGuardTolerance;
    r.applied = !decreased;
    if (r.applied) mem = std::move(candidate);
    return r;
}

/// Uniform negatives: without replacement when n <= |M|, with replacement otherwise.
inline std::vector<Embedding> sample_negatives(const ActiveMemory& mem, std::size_t n,
                                               std::mt19937_64& rng) {
    if (mem.empty()) throw std::invalid_argument("sample_negatives: empty memory");
    if (n == 0) throw std::invalid_argument("sample_negatives: n must be positive");
    std::vector<Embedding> out;
    out.reserve(n);
    const auto size = mem.size();
    if (n > size) {
        std::uniform_int_distribution<std::size_t> pick(0, size - 1);
        for (std::size_t i = 0; i < n; ++i) out.push_back(mem.entry(pick(rng)).embedding);
        return out;
    }
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, size - 1);
        std::swap(idx[i], idx[pick(rng)]);
        out.push_back(mem.entry(idx[i]).embedding);
    }
    return out;
}

/// CSV snapshot: index,label,insert_step,score,v_0..v_{Z-1}
inline void write_memory_snapshot(std::ostream& os, const ActiveMemory& mem) {
    const std::size_t z = mem.dim().value_or(0);
    os << "index,label,insert_step,score";
    for (std::size_t i = 0; i < z; ++i) os << ",v_" << i;
    os << '\n';
    const auto old_prec = os.precision(17);
    const auto scores = mem.cached_scores();
    for (std::size_t j = 0; j < mem.size(); ++j) {
        const auto& e = mem.entry(j);
        os << j << ',' << e.hidden_label << ',' << e.insert_step << ',' << scores[j];
        for (double v : e.embedding.values()) os << ',' << v;
        os << '\n';
    }
    os.precision(old_prec);
}

}  // namespace duel
