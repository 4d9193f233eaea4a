#pragma once

// Checkpoint file: JSON dump of the trainer state (architecture, parameters,
// optimizer moments, memory, step and RNG states) plus the experiment
// configuration. Doubles are written with 17 significant digits, so a save
// followed by a load restores every value bit for bit.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "duel/config.hpp"
#include "duel/trainer.hpp"

namespace duel {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    ExperimentConfig config;
    std::uint64_t seed = 0;
    TrainerState state;
};

namespace detail {

template <class Rng>
std::string rng_to_string(const Rng& r) {
    std::ostringstream os;
    os << r;
    return os.str();
}

template <class Rng>
Rng rng_from_string(const std::string& s) {
    Rng r;
    std::istringstream is(s);
    is >> r;
    if (!is) throw std::runtime_error("checkpoint: corrupt rng state");
    return r;
}

inline json extractor_to_json(const FeatureExtractor& f) {
    return json{{"architecture", std::string(to_string(f.architecture()))},
                {"input_dim", f.input_dim()},
                {"hidden_dim", f.hidden_dim()},
                {"output_dim", f.output_dim()},
                {"params", f.params()}};
}

inline FeatureExtractor extractor_from_json(const json& j) {
    const auto arch = j.at("architecture").get<std::string>() == "linear" ? Architecture::Linear : Architecture::Mlp;
    FeatureExtractor f(arch, j.at("input_dim").get<std::size_t>(), j.at("hidden_dim").get<std::size_t>(),
                       j.at("output_dim").get<std::size_t>());
    auto p = j.at("params").get<std::vector<double>>();
    if (p.size() != f.param_count()) throw std::runtime_error("checkpoint: parameter count mismatch");
    f.params() = std::move(p);
    return f;
}

}  // namespace detail

inline json checkpoint_to_json(const Checkpoint& c) {
    const auto& s = c.state;
    json entries = json::array();
    for (const auto& e : s.memory.entries())
        entries.push_back({{"id", e.id},
                           {"label", e.hidden_label},
                           {"insert_step", e.insert_step},
                           {"v", std::vector<double>(e.embedding.values().begin(), e.embedding.values().end())}});
    json j{{"checkpoint_version", kCheckpointVersion},
           {"config", to_json(c.config)},
           {"seed", c.seed},
           {"step", s.step},
           {"next_id", s.next_id},
           {"rng", detail::rng_to_string(s.rng)},
           {"query", detail::extractor_to_json(s.query)},
           {"key", s.key ? detail::extractor_to_json(*s.key) : json(nullptr)},
           {"optimizer",
            {{"t", s.optimizer.steps()}, {"m", s.optimizer.first_moment()}, {"v", s.optimizer.second_moment()}}},
           {"memory",
            {{"rng", detail::rng_to_string(s.memory.rng())},
             {"seen", s.memory.seen_count()},
             {"scores", std::vector<double>(s.memory.cached_scores().begin(), s.memory.cached_scores().end())},
             {"entries", entries}}}};
    return j;
}

inline Checkpoint checkpoint_from_json(const json& j) {
    if (j.value("checkpoint_version", -1) != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version");
    ExperimentConfig config = config_from_json(j.at("config"));
    const auto seed = j.at("seed").get<std::uint64_t>();
    TrainerConfig tc = config.trainer;
    tc.seed = seed;
    Checkpoint c{config, seed, make_trainer(tc, config.memory, config.stream.input_dim)};
    auto& s = c.state;
    s.step = j.at("step").get<std::uint64_t>();
    s.next_id = j.at("next_id").get<std::uint64_t>();
    s.rng = detail::rng_from_string<std::mt19937_64>(j.at("rng").get<std::string>());
    s.query = detail::extractor_from_json(j.at("query"));
    if (j.at("key").is_null())
        s.key.reset();
    else
        s.key = detail::extractor_from_json(j.at("key"));
    const auto& o = j.at("optimizer");
    s.optimizer = Optimizer(tc.optimizer, s.query.param_count());
    s.optimizer.set_steps(o.at("t").get<std::uint64_t>());
    s.optimizer.first_moment() = o.at("m").get<std::vector<double>>();
    s.optimizer.second_moment() = o.at("v").get<std::vector<double>>();
    const auto& m = j.at("memory");
    std::vector<MemoryEntry> entries;
    for (const auto& e : m.at("entries"))
        entries.push_back({Embedding::from_unit(e.at("v").get<std::vector<double>>()), e.at("label").get<int>(),
                           e.at("insert_step").get<std::uint64_t>(), e.at("id").get<std::uint64_t>()});
    s.memory.assign(std::move(entries), m.at("scores").get<std::vector<double>>());
    s.memory.set_rng_state(detail::rng_from_string<std::mt19937_64>(m.at("rng").get<std::string>()));
    s.memory.set_seen_count(m.at("seen").get<std::uint64_t>());
    return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    out << checkpoint_to_json(c).dump(1) << '\n';
    if (!out) throw std::runtime_error("error writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    return checkpoint_from_json(json::parse(in));
}

}  // namespace duel
