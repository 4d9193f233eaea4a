#pragma once

// Seeded experiment runs, policy benchmarking and artifact emission.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iomanip>
#include <map>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "duel/checkpoint.hpp"
#include "duel/config.hpp"
#include "duel/memory.hpp"
#include "duel/metrics.hpp"
#include "duel/streams.hpp"
#include "duel/trainer.hpp"

namespace duel {

/// Held-out balanced sets used for representation metrics and probing.
struct EvalData {
    std::vector<std::pair<std::vector<double>, int>> probe_train;
    std::vector<std::pair<std::vector<double>, int>> eval;
};

inline EvalData make_eval_data(const StreamGenerator& stream, const EvalConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x5eed5eed5eedULL);
    EvalData d;
    d.probe_train = stream.balanced_set(cfg.probe_train_per_class, rng);
    d.eval = stream.balanced_set(cfg.eval_per_class, rng);
    return d;
}

inline LabeledSet embed_set(const FeatureExtractor& f, const std::vector<std::pair<std::vector<double>, int>>& xs) {
    LabeledSet out;
    out.embeddings.reserve(xs.size());
    out.labels.reserve(xs.size());
    for (const auto& [x, c] : xs) {
        out.embeddings.push_back(f.forward(x));
        out.labels.push_back(c);
    }
    return out;
}

inline MetricsReport evaluate(const TrainerState& s, const EvalData& data, const EvalConfig& cfg, bool with_probe) {
    MetricsReport r;
    r.step = s.step;
    const auto labels = s.memory.labels();
    r.class_entropy = class_entropy(labels);
    r.dominant_class_fraction = dominant_fraction(labels);
    r.mean_memory_distinctiveness = mean_memory_distinctiveness(s.memory).value;
    const auto eval = embed_set(s.query, data.eval);
    r.v_intra = intra_class_variance(eval);
    r.s_inter = inter_class_similarity(eval);
    if (with_probe) r.probe_accuracy = linear_probe(embed_set(s.query, data.probe_train), eval, cfg.probe);
    return r;
}

struct RunResult {
    std::vector<MetricsReport> rows;
    TrainerState state;
};

struct RunOptions {
    bool probe_every_row = true;
    IncrementalFault fault;
};

/// Full training run for one seed; emits a metrics row every `cadence` steps.
inline RunResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed, const RunOptions& opt = {}) {
    StreamConfig sc = cfg.stream;
    sc.seed = seed;
    TrainerConfig tc = cfg.trainer;
    tc.seed = seed;
    StreamGenerator stream(sc);
    const EvalData data = make_eval_data(stream, cfg.eval, seed);

    RunResult out{{}, make_trainer(tc, cfg.memory, sc.input_dim)};
    auto& s = out.state;
    initialize_memory(s, stream);
    for (std::uint64_t t = 0; t < tc.steps; ++t) {
        const auto batch = stream.sample_batch(tc.batch_size);
        const StepReport rep = train_step(s, batch, opt.fault);
        if (s.step % cfg.eval.cadence == 0 || s.step == tc.steps) {
            const bool probe = opt.probe_every_row || s.step == tc.steps;
            MetricsReport m = evaluate(s, data, cfg.eval, probe);
            m.loss = rep.loss;
            m.lr = rep.lr;
            out.rows.push_back(m);
        }
    }
    return out;
}

/// Writes metrics.csv, memory.csv and checkpoint.json under `dir`.
inline void write_run_artifacts(const std::filesystem::path& dir, const ExperimentConfig& cfg, std::uint64_t seed,
                                const RunResult& r) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / "metrics.csv");
        if (!os) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
        write_metrics_header(os);
        for (const auto& row : r.rows) write_metrics_row(os, row);
    }
    {
        std::ofstream os(dir / "memory.csv");
        if (!os) throw std::runtime_error("cannot write " + (dir / "memory.csv").string());
        write_memory_snapshot(os, r.state.memory);
    }
    save_checkpoint((dir / "checkpoint.json").string(), Checkpoint{cfg, seed, r.state});
}

struct BenchRow {
    std::string policy;
    std::uint64_t seed = 0;
    MetricsReport final;
};

/// Runs every (policy, seed) pair; trials share nothing and run concurrently.
inline std::vector<BenchRow> bench_policies(const ExperimentConfig& cfg, const std::vector<EvictionPolicy>& policies,
                                            unsigned workers = std::thread::hardware_concurrency()) {
    if (policies.size() < 2) throw std::invalid_argument("bench_policies: need at least two policies");
    struct Job {
        EvictionPolicy policy;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (auto p : policies)
        for (auto s : cfg.seeds) jobs.push_back({p, s});
    std::vector<BenchRow> rows(jobs.size());
    auto run_one = [&](std::size_t i) {
        ExperimentConfig c = cfg;
        c.memory.policy = jobs[i].policy;
        RunOptions opt;
        opt.probe_every_row = false;
        const auto r = run_experiment(c, jobs[i].seed, opt);
        rows[i] = {std::string(policy_name(jobs[i].policy)), jobs[i].seed, r.rows.back()};
    };
    workers = std::max(1u, workers);
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < std::min<std::size_t>(workers, jobs.size()); ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < jobs.size(); i = next++) run_one(i);
        });
    for (auto& t : pool) t.join();
    return rows;
}

struct BenchSummary {
    std::string policy;
    double class_entropy = 0.0;
    double v_intra = 0.0;
    double s_inter = 0.0;
    double probe_accuracy = 0.0;
    double dominant_fraction = 0.0;
};

inline std::vector<BenchSummary> summarize(const std::vector<BenchRow>& rows) {
    std::vector<BenchSummary> out;
    std::map<std::string, std::size_t> index;
    std::vector<std::size_t> counts;
    for (const auto& r : rows) {
        auto [it, fresh] = index.emplace(r.policy, out.size());
        if (fresh) {
            out.push_back({r.policy});
            counts.push_back(0);
        }
        auto& s = out[it->second];
        s.class_entropy += r.final.class_entropy;
        s.v_intra += r.final.v_intra;
        s.s_inter += r.final.s_inter;
        s.probe_accuracy += r.final.probe_accuracy.value_or(0.0);
        s.dominant_fraction += r.final.dominant_class_fraction;
        ++counts[it->second];
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double n = static_cast<double>(counts[i]);
        out[i].class_entropy /= n;
        out[i].v_intra /= n;
        out[i].s_inter /= n;
        out[i].probe_accuracy /= n;
        out[i].dominant_fraction /= n;
    }
    return out;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
    os << "policy,seed,class_entropy,v_intra,s_inter,probe_acc,dominant_frac\n";
    const auto old = os.precision(17);
    for (const auto& r : rows)
        os << r.policy << ',' << r.seed << ',' << r.final.class_entropy << ',' << r.final.v_intra << ','
           << r.final.s_inter << ',' << r.final.probe_accuracy.value_or(0.0) << ',' << r.final.dominant_class_fraction
           << '\n';
    for (const auto& s : summarize(rows))
        os << s.policy << ",mean," << s.class_entropy << ',' << s.v_intra << ',' << s.s_inter << ','
           << s.probe_accuracy << ',' << s.dominant_fraction << '\n';
    os.precision(old);
}

inline void print_bench_table(std::ostream& os, const std::vector<BenchRow>& rows) {
    os << std::left << std::setw(12) << "policy" << std::setw(8) << "seed" << std::right << std::setw(10)
       << "entropy" << std::setw(10) << "v_intra" << std::setw(10) << "s_inter" << std::setw(10) << "probe"
       << std::setw(10) << "dom_frac" << '\n';
    auto line = [&](const std::string& p, const std::string& seed, double h, double vi, double si, double pa,
                    double df) {
        os << std::left << std::setw(12) << p << std::setw(8) << seed << std::right << std::fixed
           << std::setprecision(4) << std::setw(10) << h << std::setw(10) << vi << std::setw(10) << si
           << std::setw(10) << pa << std::setw(10) << df << '\n';
    };
    for (const auto& r : rows)
        line(r.policy, std::to_string(r.seed), r.final.class_entropy, r.final.v_intra, r.final.s_inter,
             r.final.probe_accuracy.value_or(0.0), r.final.dominant_class_fraction);
    for (const auto& s : summarize(rows))
        line(s.policy, "mean", s.class_entropy, s.v_intra, s.s_inter, s.probe_accuracy, s.dominant_fraction);
    os.unsetf(std::ios::floatfield);
}

/// Embeds `per_class` balanced samples per class with the checkpoint's
/// query encoder and writes them in embedding-stream format.
inline void export_embeddings(const Checkpoint& ckpt, std::size_t per_class, std::uint64_t sample_seed,
                              std::ostream& os) {
    StreamConfig sc = ckpt.config.stream;
    sc.seed = ckpt.seed;
    const StreamGenerator stream(sc);
    std::mt19937_64 rng(sample_seed);
    const auto xs = stream.balanced_set(per_class, rng);
    std::vector<LabeledEmbedding> rows;
    rows.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        rows.push_back({std::to_string(i), xs[i].second, ckpt.state.query.forward(xs[i].first)});
    write_embedding_stream(os, ckpt.state.query.output_dim(), rows);
}

}  // namespace duel
