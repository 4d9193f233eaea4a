// Acceptance run: one PASS/FAIL line per criterion. Exit 0 if all pass, 2 otherwise.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "duel/config.hpp"
#include "duel/harness.hpp"
#include "duel/verify.hpp"
#include "oracles.hpp"

using namespace duel;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

std::string sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

std::vector<oracle::Point> oracle_points(const FiniteDistribution& d) {
    std::vector<oracle::Point> out;
    for (const auto& p : d.points()) out.push_back({oracle::values(p.embedding), p.label, p.weight});
    return out;
}

Embedding near(const Embedding& c, double spread, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    std::vector<double> v(oracle::values(c));
    for (double& x : v) x += spread * g(rng);
    return Embedding::normalize(std::move(v));
}

// 1. Oracle optimum, lower bound and memory-integrated bound.
Outcome theorem_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> cn(2, 12), per(1, 5);
    double worst_optimum = 0.0;
    for (int t = 0; t < 200; ++t) {
        const int C = cn(rng);
        std::vector<std::pair<Embedding, int>> items;
        std::map<int, double> cw;
        for (int c = 0; c < C; ++c) {
            cw[c] = 1.0 / C;
            const int n = per(rng);
            for (int i = 0; i < n; ++i) items.emplace_back(Embedding::basis(static_cast<std::size_t>(C), c), c);
        }
        const double l = hml_loss(FiniteDistribution::with_class_weights(items, cw), SimilarityKernel::label_oracle()).value;
        worst_optimum = std::max(worst_optimum, std::abs(l + std::log(static_cast<double>(C))));
    }
    int bound_viol = 0;
    for (int t = 0; t < 500; ++t) {
        const int C = cn(rng);
        std::uniform_real_distribution<double> spread(0.0, 1.5);
        const double sp = spread(rng);
        std::vector<std::pair<Embedding, int>> items;
        std::map<int, double> cw;
        for (int c = 0; c < C; ++c) {
            cw[c] = 1.0 / C;
            const auto center = oracle::random_unit(8, rng);
            const int n = per(rng);
            for (int i = 0; i < n; ++i) items.emplace_back(near(center, sp, rng), c);
        }
        const auto D = FiniteDistribution::with_class_weights(items, cw);
        const auto k = t % 2 ? SimilarityKernel::affine_cosine() : SimilarityKernel::exponential(0.1 + 0.9 * (t % 7) / 6.0);
        const double l = oracle::hml_loss(oracle_points(D), k);
        if (std::isfinite(l) && l < -std::log(static_cast<double>(C)) - 1e-9) ++bound_viol;
    }
    int mhml_viol = 0;
    for (int t = 0; t < 100; ++t) {
        const int C = std::uniform_int_distribution<int>(2, 6)(rng);
        std::uniform_real_distribution<double> u(0.05, 1.0);
        std::vector<std::pair<Embedding, int>> items;
        std::map<int, double> bal, rho;
        double total = 0.0;
        for (int c = 0; c < C; ++c) {
            bal[c] = 1.0 / C;
            total += rho[c] = u(rng);
            const auto center = oracle::random_unit(6, rng);
            const int n = per(rng);
            for (int i = 0; i < n; ++i) items.emplace_back(near(center, 0.5, rng), c);
        }
        double rho_min = 1.0;
        for (auto& [_, r] : rho) rho_min = std::min(rho_min, r /= total);
        const auto D = FiniteDistribution::with_class_weights(items, bal);
        const auto Dp = FiniteDistribution::with_class_weights(items, rho);
        std::vector<LabeledPoint> mem;
        for (int i = 0; i < 1 + t % 12; ++i) mem.push_back({oracle::random_unit(6, rng), i % C, 1.0});
        const auto k = t % 2 ? SimilarityKernel::affine_cosine() : SimilarityKernel::exponential(0.5);
        const auto b = mhml_bound(Dp, mem, D, k, rho_min, static_cast<std::size_t>(C));
        if (!b.infinite && b.value < oracle::hml_loss(oracle_points(D), k) - 1e-9) ++mhml_viol;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {worst_optimum <= 1e-9 && bound_viol == 0 && mhml_viol == 0 && secs < 30.0,
            "optimum max err " + sci(worst_optimum) + ", lower-bound violations " + std::to_string(bound_viol) +
                "/500, m-hml bound violations " + std::to_string(mhml_viol) + "/100, " + fmt(secs, 2) + "s"};
}

std::vector<MemoryEntry> random_entries(std::size_t n, std::size_t dim, double spread, std::uint64_t first_id,
                                        std::mt19937_64& rng) {
    std::vector<Embedding> centers;
    for (int c = 0; c < 5; ++c) centers.push_back(oracle::random_unit(dim, rng));
    std::vector<MemoryEntry> out;
    for (std::size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(rng() % 5);
        out.push_back({near(centers[static_cast<std::size_t>(c)], spread, rng), c, first_id + i, first_id + i});
    }
    return out;
}

ActiveMemory filled(std::size_t K, const SimilarityKernel& k, const std::vector<MemoryEntry>& es,
                    EvictionPolicy p = EvictionPolicy::DuelIncremental) {
    ActiveMemory m(K, k, p, 0);
    for (const auto& e : es) m.append(e);
    return m;
}

// 2. Score-based selection equals distinctiveness-based selection.
Outcome monotone_equivalence() {
    std::mt19937_64 rng(202);
    int mismatches = 0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t K = std::uniform_int_distribution<std::size_t>(2, 128)(rng);
        const std::size_t Z = std::uniform_int_distribution<std::size_t>(2, 32)(rng);
        const double sp = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const auto k = t % 2 ? SimilarityKernel::affine_cosine() : SimilarityKernel::exponential(0.5);
        const auto m = filled(K, k, random_entries(K, Z, sp, 0, rng));
        const auto d = oracle::memory_distinctiveness({m.entries().begin(), m.entries().end()}, k);
        std::size_t want = 0;
        for (std::size_t j = 1; j < d.size(); ++j)
            if (d[j] < d[want] - 1e-10) want = j;
        const auto by_score = duel_select_by_score(m);
        if (by_score != duel_select_naive(m) || by_score != want) ++mismatches;
    }
    return {mismatches == 0, std::to_string(1000 - mismatches) + "/1000 exact matches"};
}

// 3. Batched incremental update reproduces the single-step recompute oracle.
Outcome incremental_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(303);
    int mismatches = 0;
    for (int t = 0; t < 200; ++t) {
        const auto k = t % 2 ? SimilarityKernel::affine_cosine() : SimilarityKernel::exponential(0.5);
        const double sp = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
        const auto es = random_entries(64, 16, sp, 0, rng);
        auto batch = random_entries(8, 16, sp, 1000, rng);
        if (t % 5 == 0) batch[3] = {batch[1].embedding, batch[1].hidden_label, 1003, 1003};
        auto m = filled(64, k, es);
        const auto log = push_batch(m, batch);
        std::vector<std::uint64_t> got;
        for (const auto& r : log) got.push_back(r.evicted_id.value());
        if (got != oracle::duel_naive_log(es, batch, k)) ++mismatches;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {mismatches == 0 && secs < 10.0,
            std::to_string(200 - mismatches) + "/200 identical logs, " + fmt(secs, 2) + "s"};
}

// 4. Safeness under the label oracle on an imbalanced oracle stream.
Outcome safeness() {
    const std::size_t C = 10, K = 64;
    std::vector<double> probs(C, 0.25 / (C - 1));
    probs[0] = 0.75;
    OracleEmbeddingStream stream(C, C, probs, 404);
    const auto k = SimilarityKernel::label_oracle();
    ActiveMemory m(K, k, EvictionPolicy::DuelIncremental, 0);
    std::uint64_t id = 0;
    while (m.size() < K) {
        auto [e, c] = stream.next();
        m.append({e, c, id, id});
        ++id;
    }
    // Mean over probe items of -log(fraction of memory sharing the probe's class).
    auto mean_distinct = [](const std::vector<MemoryEntry>& mem, const std::vector<MemoryEntry>& probe) {
        double s = 0.0;
        for (const auto& p : probe) {
            double same = 0.0;
            for (const auto& x : mem) same += x.hidden_label == p.hidden_label ? 1.0 : 0.0;
            if (same == 0.0) return std::numeric_limits<double>::infinity();
            s += -std::log(same / static_cast<double>(mem.size()));
        }
        return s / static_cast<double>(probe.size());
    };
    int violations = 0;
    for (int t = 0; t < 10000; ++t) {
        auto [e, c] = stream.next();
        const std::vector<MemoryEntry> before(m.entries().begin(), m.entries().end());
        const std::vector<MemoryEntry> b{{e, c, id, id}};
        ++id;
        push_batch(m, b);
        const std::vector<MemoryEntry> after(m.entries().begin(), m.entries().end());
        if (mean_distinct(after, before) < mean_distinct(before, before) - 1e-12) ++violations;
    }
    return {violations == 0, std::to_string(violations) + " violations in 10000 replacements"};
}

// 5. Per-sample InfoNCE equals I_h - I_d + ln K.
Outcome infonce_identity() {
    std::mt19937_64 rng(505);
    const auto k = SimilarityKernel::exponential(0.5);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t K = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
        const std::size_t Z = std::uniform_int_distribution<std::size_t>(2, 32)(rng);
        const auto a = oracle::random_unit(Z, rng), p = oracle::random_unit(Z, rng);
        std::vector<Embedding> mem;
        for (std::size_t i = 0; i < K; ++i) mem.push_back(oracle::random_unit(Z, rng));
        const double ih = -std::log(oracle::q(oracle::values(a), 0, oracle::values(p), 0, k));
        double mean = 0.0;
        for (const auto& x : mem) mean += oracle::q(oracle::values(a), 0, oracle::values(x), 0, k) / K;
        const double rhs = ih + std::log(mean) + std::log(static_cast<double>(K));
        worst = std::max(worst, std::abs(infonce_loss(a, p, mem, 0.5, 0.0) - rhs));
    }
    return {worst <= 1e-9, "max |difference| " + sci(worst) + " over 100 instances"};
}

// 6. Analytic vs central-difference gradients.
Outcome gradient_checks() {
    std::mt19937_64 rng(606);
    double worst = 0.0;
    for (const auto& gc : verify::gradient_cases(50)) worst = std::max(worst, verify::gradient_error(gc, rng));
    return {worst < 1e-4, "max relative error " + sci(worst) + " over 50 configs"};
}

struct Agg {
    double entropy = 0, s_inter = 0, probe = 0, dom_mid = 0, dom_final = 0;
    int n = 0;
};

Agg run_seeds(ExperimentConfig cfg, EvictionPolicy policy, double rho, const std::vector<std::uint64_t>& seeds,
              double* max_secs = nullptr) {
    cfg.memory.policy = policy;
    cfg.stream.imbalance = DominantImbalance{rho};
    Agg a;
    for (auto s : seeds) {
        const auto t0 = std::chrono::steady_clock::now();
        RunOptions opt;
        opt.probe_every_row = false;
        const auto r = run_experiment(cfg, s, opt);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (max_secs) *max_secs = std::max(*max_secs, secs);
        const auto& last = r.rows.back();
        const MetricsReport* mid = &r.rows.front();
        for (const auto& row : r.rows)
            if (row.step <= cfg.trainer.steps / 2) mid = &row;
        a.entropy += last.class_entropy;
        a.s_inter += last.s_inter;
        a.probe += last.probe_accuracy.value_or(0.0);
        a.dom_mid += mid->dominant_class_fraction;
        a.dom_final += last.dominant_class_fraction;
        ++a.n;
    }
    for (double* v : {&a.entropy, &a.s_inter, &a.probe, &a.dom_mid, &a.dom_final}) *v /= a.n;
    return a;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(DUEL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// 11. Two CLI executions with the same config and seed give identical bytes.
Outcome determinism() {
    const auto dir = fs::temp_directory_path() / ("duel_accept_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    ExperimentConfig cfg;
    cfg.trainer.steps = 300;
    {
        std::ofstream os(dir / "cfg.json");
        os << to_json(cfg).dump(2);
    }
    const std::string base = "run --config " + (dir / "cfg.json").string() + " --seed 3 --out ";
    const int a = run_cli(base + (dir / "a").string());
    const int b = run_cli(base + (dir / "b").string());
    const std::string ma = slurp(dir / "a" / "metrics.csv"), mb = slurp(dir / "b" / "metrics.csv");
    const bool same = a == 0 && b == 0 && !ma.empty() && ma == mb &&
                      slurp(dir / "a" / "memory.csv") == slurp(dir / "b" / "memory.csv");
    fs::remove_all(dir);
    return {same, same ? "metrics.csv and memory.csv byte-identical (" + std::to_string(ma.size()) + " bytes)"
                       : "outputs differ or run failed (exit " + std::to_string(a) + "/" + std::to_string(b) + ")"};
}

}  // namespace

int main() {
    int failed = 0;
    auto report = [&](int id, const std::string& name, const Outcome& o) {
        std::printf("[%s] %2d %-34s %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    };

    report(1, "theorem suite", theorem_suite());
    report(2, "monotonic equivalence", monotone_equivalence());
    report(3, "incremental oracle equivalence", incremental_equivalence());
    report(4, "safeness", safeness());
    report(5, "infonce / m-hml identity", infonce_identity());
    report(6, "gradient checks", gradient_checks());

    const ExperimentConfig base;
    const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    double max_secs = 0.0;
    const auto duel75 = run_seeds(base, EvictionPolicy::DuelIncremental, 0.75, seeds, &max_secs);
    const auto fifo75 = run_seeds(base, EvictionPolicy::Fifo, 0.75, seeds, &max_secs);
    const std::string per_seed = ", max " + fmt(max_secs, 1) + "s/seed";
    report(7, "entropy: duel >= fifo + 0.3",
           {duel75.entropy >= fifo75.entropy + 0.3 && max_secs < 300.0,
            "duel " + fmt(duel75.entropy) + " vs fifo " + fmt(fifo75.entropy) + per_seed});
    report(8, "s_inter: duel <= fifo",
           {duel75.s_inter <= fifo75.s_inter, "duel " + fmt(duel75.s_inter) + " vs fifo " + fmt(fifo75.s_inter)});
    report(9, "probe: duel >= fifo",
           {duel75.probe >= fifo75.probe, "duel " + fmt(duel75.probe) + " vs fifo " + fmt(fifo75.probe)});

    const auto duel50 = run_seeds(base, EvictionPolicy::DuelIncremental, 0.5, seeds);
    const bool flat = duel50.dom_mid < 0.5 && duel50.dom_final < 0.5 && duel75.dom_mid < 0.75 && duel75.dom_final < 0.75;
    report(10, "class-frequency flattening",
           {flat, "rho 0.5: mid " + fmt(duel50.dom_mid) + " final " + fmt(duel50.dom_final) + "; rho 0.75: mid " +
                      fmt(duel75.dom_mid) + " final " + fmt(duel75.dom_final)});

    report(11, "determinism", determinism());

    std::map<std::pair<NegativeSource, double>, double> grid;
    for (auto src : {NegativeSource::BatchOnly, NegativeSource::MemoryOnly, NegativeSource::Mixed})
        for (double eps : {0.0, 1.0}) {
            ExperimentConfig c = base;
            c.trainer.negative_source = src;
            c.trainer.epsilon = eps;
            grid[{src, eps}] = run_seeds(c, EvictionPolicy::DuelIncremental, 0.1, seeds).probe;
        }
    std::string cells;
    bool finite = true;
    for (const auto& [key, acc] : grid) {
        cells += std::string(to_string(key.first)) + "/" + fmt(key.second, 0) + "=" + fmt(acc, 3) + " ";
        finite = finite && std::isfinite(acc);
    }
    const double mixed1 = grid[{NegativeSource::Mixed, 1.0}], mem0 = grid[{NegativeSource::MemoryOnly, 0.0}];
    report(12, "ablation grid: mixed/1 >= memory/0", {finite && grid.size() == 6 && mixed1 >= mem0, cells});

    std::printf("%d/12 criteria passed\n", 12 - failed);
    return failed ? 2 : 0;
}
