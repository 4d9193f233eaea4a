// duel: run experiments, compare eviction policies, verify invariants and
// export embeddings.
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 check failure.

#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "duel/checkpoint.hpp"
#include "duel/config.hpp"
#include "duel/harness.hpp"
#include "duel/verify.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kCheckFailed = 2;

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, const std::optional<std::uint64_t>& seed) {
    const auto cfg = duel::load_config(config_path);
    std::vector<std::uint64_t> seeds = seed ? std::vector<std::uint64_t>{*seed} : cfg.seeds;
    for (auto s : seeds) {
        const std::filesystem::path dir =
            seeds.size() == 1 ? std::filesystem::path(out_dir) : std::filesystem::path(out_dir) / ("seed_" + std::to_string(s));
        const auto r = duel::run_experiment(cfg, s);
        duel::write_run_artifacts(dir, cfg, s, r);
        const auto& last = r.rows.back();
        std::cout << "seed " << s << ": " << r.rows.size() << " rows -> " << dir.string() << " (entropy "
                  << std::fixed << std::setprecision(4) << last.class_entropy << ", probe "
                  << last.probe_accuracy.value_or(0.0) << ")\n";
        std::cout.unsetf(std::ios::floatfield);
    }
    return kOk;
}

int cmd_bench(const std::string& config_path, const std::string& policies, const std::string& out,
              unsigned workers) {
    const auto cfg = duel::load_config(config_path);
    std::vector<duel::EvictionPolicy> ps;
    for (const auto& name : split_list(policies)) ps.push_back(duel::parse_policy(name));
    if (ps.size() < 2) throw std::invalid_argument("--policies needs at least two entries");
    const auto rows = duel::bench_policies(cfg, ps, workers);
    duel::print_bench_table(std::cout, rows);
    if (!out.empty()) {
        std::ofstream os(out);
        if (!os) throw std::runtime_error("cannot write '" + out + "'");
        duel::write_bench_csv(os, rows);
    }
    return kOk;
}

int cmd_verify(bool quick, bool inject_fault) {
    duel::verify::Options o;
    o.quick = quick;
    o.fault.skip_deletion_update = inject_fault;
    const auto results = duel::verify::run_all(o);
    std::size_t failed = 0;
    double total = 0.0;
    for (const auto& r : results) {
        total += r.seconds;
        std::cout << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(36) << r.name << std::right
                  << std::fixed << std::setprecision(2) << std::setw(8) << r.seconds << "s";
        if (!r.passed) {
            std::cout << "  " << r.detail;
            ++failed;
        }
        std::cout << '\n';
    }
    std::cout << results.size() - failed << "/" << results.size() << " checks passed in " << total << "s\n";
    return failed ? kCheckFailed : kOk;
}

int cmd_export(const std::string& ckpt_path, const std::string& out, std::size_t per_class, std::uint64_t seed) {
    const auto ckpt = duel::load_checkpoint(ckpt_path);
    std::ofstream os(out);
    if (!os) throw std::runtime_error("cannot write '" + out + "'");
    duel::export_embeddings(ckpt, per_class, seed, os);
    if (!os) throw std::runtime_error("error writing '" + out + "'");
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Duplicate-elimination active memory for contrastive learning on imbalanced streams"};
    app.require_subcommand(1);

    std::string config, out, policies = "duel,fifo,random,reservoir", ckpt;
    std::uint64_t seed = 0;
    std::size_t per_class = 100;
    unsigned workers = std::max(1u, std::thread::hardware_concurrency());
    bool quick = false, inject_fault = false;

    auto* run = app.add_subcommand("run", "Train one configuration and write metrics, memory and checkpoint");
    run->add_option("--config", config, "JSON configuration file")->required();
    run->add_option("--out", out, "Output directory")->required();
    auto* seed_opt = run->add_option("--seed", seed, "Seed (default: every seed listed in the config)");

    auto* bench = app.add_subcommand("bench-policies", "Compare eviction policies across the config's seeds");
    bench->add_option("--config", config, "JSON configuration file")->required();
    bench->add_option("--policies", policies, "Comma-separated policies")->capture_default_str();
    bench->add_option("--out", out, "Also write the table as CSV");
    bench->add_option("--workers", workers, "Parallel trials")->capture_default_str();

    auto* ver = app.add_subcommand("verify", "Run the invariant and equivalence suite");
    ver->add_flag("--quick", quick, "Smaller randomized sample counts");
    ver->add_flag("--inject-fault", inject_fault, "Corrupt incremental score updates (negative control)");

    auto* exp = app.add_subcommand("export-embeddings", "Embed a balanced sample with a checkpoint's encoder");
    exp->add_option("--ckpt", ckpt, "Checkpoint written by run")->required();
    exp->add_option("--out", out, "Output CSV")->required();
    exp->add_option("--per-class", per_class, "Samples per class")->capture_default_str();
    exp->add_option("--seed", seed, "Sampling seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*run) return cmd_run(config, out, seed_opt->count() ? std::optional<std::uint64_t>(seed) : std::nullopt);
        if (*bench) return cmd_bench(config, policies, out, workers);
        if (*ver) return cmd_verify(quick, inject_fault);
        if (*exp) return cmd_export(ckpt, out, per_class, seed);
    } catch (const duel::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    }
    return kUsage;
}
