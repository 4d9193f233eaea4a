#pragma once

// Versioned JSON experiment configuration. Unknown fields are rejected with
// the dotted path of the offending field.

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "duel/memory.hpp"
#include "duel/metrics.hpp"
#include "duel/streams.hpp"
#include "duel/trainer.hpp"

namespace duel {

using json = nlohmann::json;

inline constexpr int kConfigVersion = 1;

struct EvalConfig {
    std::uint64_t cadence = 100;
    std::size_t eval_per_class = 100;
    std::size_t probe_train_per_class = 100;
    ProbeConfig probe;
};

struct ExperimentConfig {
    StreamConfig stream;
    TrainerConfig trainer;
    MemoryConfig memory;
    EvalConfig eval;
    std::vector<std::uint64_t> seeds{0};
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void reject_unknown(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError(path + ": expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, _] : obj.items())
        if (!ok.count(k)) throw ConfigError(path + "." + k + ": unknown field");
}

template <class T>
void read_field(const json& obj, const std::string& path, const char* name, T& out) {
    const auto it = obj.find(name);
    if (it == obj.end()) return;
    try {
        out = it->template get<T>();
    } catch (const json::exception&) {
        throw ConfigError(path + "." + name + ": wrong type");
    }
}

inline SimilarityKernel kernel_from_json(const json& j, const std::string& path) {
    reject_unknown(j, path, {"kind", "temperature"});
    std::string kind = "affine_cosine";
    double tau = 0.5;
    read_field(j, path, "kind", kind);
    read_field(j, path, "temperature", tau);
    if (kind == "affine_cosine") return SimilarityKernel::affine_cosine();
    if (kind == "exponential") {
        if (!(tau > 0.0)) throw ConfigError(path + ".temperature: must be positive");
        return SimilarityKernel::exponential(tau);
    }
    if (kind == "label_oracle") return SimilarityKernel::label_oracle();
    throw ConfigError(path + ".kind: unknown kernel '" + kind + "'");
}

inline json kernel_to_json(const SimilarityKernel& k) {
    json j{{"kind", k.name()}};
    if (k.form() == KernelForm::ExponentialTemp) j["temperature"] = k.temperature();
    return j;
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
    json imbalance;
    if (const auto* d = std::get_if<DominantImbalance>(&c.stream.imbalance))
        imbalance = {{"kind", "dominant"}, {"rho_max", d->rho_max}};
    else
        imbalance = {{"kind", "long_tail"}, {"ratio", std::get<LongTailImbalance>(c.stream.imbalance).ratio}};
    const auto& t = c.trainer;
    json trainer{{"architecture", std::string(to_string(t.architecture))},
                 {"hidden_dim", t.hidden_dim},
                 {"embedding_dim", t.embedding_dim},
                 {"batch_size", t.batch_size},
                 {"temperature", t.temperature},
                 {"epsilon", t.epsilon},
                 {"negative_source", std::string(to_string(t.negative_source))},
                 {"memory_negatives", t.memory_negatives},
                 {"momentum", t.momentum ? json(*t.momentum) : json(nullptr)},
                 {"learning_rate", t.learning_rate},
                 {"optimizer", std::string(to_string(t.optimizer.kind))},
                 {"adam_beta1", t.optimizer.beta1},
                 {"adam_beta2", t.optimizer.beta2},
                 {"adam_delta", t.optimizer.delta},
                 {"weight_decay", t.optimizer.weight_decay},
                 {"steps", t.steps}};
    return json{{"version", kConfigVersion},
                {"stream",
                 {{"num_classes", c.stream.num_classes},
                  {"input_dim", c.stream.input_dim},
                  {"separation", c.stream.separation},
                  {"within_sigma", c.stream.within_sigma},
                  {"augment_sigma", c.stream.augment_sigma},
                  {"imbalance", imbalance}}},
                {"trainer", trainer},
                {"memory",
                 {{"capacity", c.memory.capacity},
                  {"policy", std::string(policy_name(c.memory.policy))},
                  {"kernel", detail::kernel_to_json(c.memory.kernel)},
                  {"guarded", c.memory.guarded}}},
                {"eval",
                 {{"cadence", c.eval.cadence},
                  {"eval_per_class", c.eval.eval_per_class},
                  {"probe_train_per_class", c.eval.probe_train_per_class},
                  {"probe_steps", c.eval.probe.steps},
                  {"probe_learning_rate", c.eval.probe.learning_rate},
                  {"probe_weight_decay", c.eval.probe.weight_decay}}},
                {"seeds", c.seeds}};
}

/// Parses and validates a configuration; missing fields take defaults.
inline ExperimentConfig config_from_json(const json& j) {
    using detail::read_field;
    using detail::reject_unknown;
    reject_unknown(j, "config", {"version", "stream", "trainer", "memory", "eval", "seeds"});
    int version = -1;
    read_field(j, "config", "version", version);
    if (version != kConfigVersion)
        throw ConfigError("config.version: expected " + std::to_string(kConfigVersion));

    ExperimentConfig c;
    if (j.contains("stream")) {
        const auto& s = j["stream"];
        reject_unknown(s, "config.stream",
                       {"num_classes", "input_dim", "separation", "within_sigma", "augment_sigma", "imbalance"});
        read_field(s, "config.stream", "num_classes", c.stream.num_classes);
        read_field(s, "config.stream", "input_dim", c.stream.input_dim);
        read_field(s, "config.stream", "separation", c.stream.separation);
        read_field(s, "config.stream", "within_sigma", c.stream.within_sigma);
        read_field(s, "config.stream", "augment_sigma", c.stream.augment_sigma);
        if (s.contains("imbalance")) {
            const auto& im = s["imbalance"];
            reject_unknown(im, "config.stream.imbalance", {"kind", "rho_max", "ratio"});
            std::string kind = "dominant";
            read_field(im, "config.stream.imbalance", "kind", kind);
            if (kind == "dominant") {
                DominantImbalance d;
                read_field(im, "config.stream.imbalance", "rho_max", d.rho_max);
                c.stream.imbalance = d;
            } else if (kind == "long_tail") {
                LongTailImbalance lt;
                read_field(im, "config.stream.imbalance", "ratio", lt.ratio);
                c.stream.imbalance = lt;
            } else {
                throw ConfigError("config.stream.imbalance.kind: unknown profile '" + kind + "'");
            }
        }
    }
    if (j.contains("trainer")) {
        const auto& t = j["trainer"];
        const std::string p = "config.trainer";
        reject_unknown(t, p,
                       {"architecture", "hidden_dim", "embedding_dim", "batch_size", "temperature", "epsilon",
                        "negative_source", "memory_negatives", "momentum", "learning_rate", "optimizer",
                        "adam_beta1", "adam_beta2", "adam_delta", "weight_decay", "steps"});
        std::string arch = std::string(to_string(c.trainer.architecture));
        read_field(t, p, "architecture", arch);
        if (arch == "linear")
            c.trainer.architecture = Architecture::Linear;
        else if (arch == "mlp")
            c.trainer.architecture = Architecture::Mlp;
        else
            throw ConfigError(p + ".architecture: unknown architecture '" + arch + "'");
        read_field(t, p, "hidden_dim", c.trainer.hidden_dim);
        read_field(t, p, "embedding_dim", c.trainer.embedding_dim);
        read_field(t, p, "batch_size", c.trainer.batch_size);
        read_field(t, p, "temperature", c.trainer.temperature);
        read_field(t, p, "epsilon", c.trainer.epsilon);
        if (t.contains("negative_source")) {
            std::string ns;
            read_field(t, p, "negative_source", ns);
            try {
                c.trainer.negative_source = parse_negative_source(ns);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(p + ".negative_source: " + e.what());
            }
        }
        read_field(t, p, "memory_negatives", c.trainer.memory_negatives);
        if (t.contains("momentum")) {
            if (t["momentum"].is_null()) {
                c.trainer.momentum.reset();
            } else {
                double m = 0.0;
                read_field(t, p, "momentum", m);
                c.trainer.momentum = m;
            }
        }
        read_field(t, p, "learning_rate", c.trainer.learning_rate);
        if (t.contains("optimizer")) {
            std::string o;
            read_field(t, p, "optimizer", o);
            if (o == "adam")
                c.trainer.optimizer.kind = OptimizerKind::Adam;
            else if (o == "sgd")
                c.trainer.optimizer.kind = OptimizerKind::Sgd;
            else
                throw ConfigError(p + ".optimizer: unknown optimizer '" + o + "'");
        }
        read_field(t, p, "adam_beta1", c.trainer.optimizer.beta1);
        read_field(t, p, "adam_beta2", c.trainer.optimizer.beta2);
        read_field(t, p, "adam_delta", c.trainer.optimizer.delta);
        read_field(t, p, "weight_decay", c.trainer.optimizer.weight_decay);
        read_field(t, p, "steps", c.trainer.steps);
    }
    if (j.contains("memory")) {
        const auto& m = j["memory"];
        reject_unknown(m, "config.memory", {"capacity", "policy", "kernel", "guarded"});
        read_field(m, "config.memory", "capacity", c.memory.capacity);
        if (m.contains("policy")) {
            std::string pol;
            read_field(m, "config.memory", "policy", pol);
            try {
                c.memory.policy = parse_policy(pol);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("config.memory.policy: ") + e.what());
            }
        }
        if (m.contains("kernel")) c.memory.kernel = detail::kernel_from_json(m["kernel"], "config.memory.kernel");
        read_field(m, "config.memory", "guarded", c.memory.guarded);
    }
    if (j.contains("eval")) {
        const auto& e = j["eval"];
        const std::string p = "config.eval";
        reject_unknown(e, p,
                       {"cadence", "eval_per_class", "probe_train_per_class", "probe_steps", "probe_learning_rate",
                        "probe_weight_decay"});
        read_field(e, p, "cadence", c.eval.cadence);
        read_field(e, p, "eval_per_class", c.eval.eval_per_class);
        read_field(e, p, "probe_train_per_class", c.eval.probe_train_per_class);
        read_field(e, p, "probe_steps", c.eval.probe.steps);
        read_field(e, p, "probe_learning_rate", c.eval.probe.learning_rate);
        read_field(e, p, "probe_weight_decay", c.eval.probe.weight_decay);
    }
    if (j.contains("seeds")) {
        read_field(j, "config", "seeds", c.seeds);
        if (c.seeds.empty()) throw ConfigError("config.seeds: need at least one seed");
        std::set<std::uint64_t> distinct(c.seeds.begin(), c.seeds.end());
        if (distinct.size() != c.seeds.size()) throw ConfigError("config.seeds: seeds must be distinct");
    }

    try {
        validate(c.stream);
        validate(c.trainer);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (c.memory.capacity == 0) throw ConfigError("config.memory.capacity: must be positive");
    if (c.eval.cadence == 0) throw ConfigError("config.eval.cadence: must be positive");
    if (c.eval.eval_per_class < 2) throw ConfigError("config.eval.eval_per_class: must be >= 2");
    if (c.eval.probe_train_per_class == 0) throw ConfigError("config.eval.probe_train_per_class: must be positive");
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    return config_from_json(j);
}

}  // namespace duel
