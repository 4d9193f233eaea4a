#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "duel/kernel.hpp"
#include "duel/streams.hpp"
#include "duel/trainer.hpp"
#include "oracles.hpp"

using namespace duel;

namespace {

std::vector<Pair> random_batch(std::size_t n, std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<Pair> out(n);
    for (auto& p : out) {
        for (std::size_t i = 0; i < d; ++i) p.x.push_back(g(rng));
        for (std::size_t i = 0; i < d; ++i) p.x_pos.push_back(p.x[i] + 0.2 * g(rng));
    }
    return out;
}

std::vector<double> finite_difference(FeatureExtractor q, const FeatureExtractor* key, const std::vector<Pair>& batch,
                                      const std::vector<Embedding>& negs, const LossConfig& lc, double h = 1e-5) {
    std::vector<double> out(q.param_count());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double keep = q.params()[i];
        q.params()[i] = keep + h;
        const double up = contrastive_loss(q, key, batch, negs, lc, false).loss;
        q.params()[i] = keep - h;
        const double down = contrastive_loss(q, key, batch, negs, lc, false).loss;
        q.params()[i] = keep;
        out[i] = (up - down) / (2 * h);
    }
    return out;
}

double max_rel_error(const std::vector<double>& a, const std::vector<double>& n) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - n[i]) / std::max({std::abs(a[i]), std::abs(n[i]), 1e-6}));
    return worst;
}

}  // namespace

TEST(Forward, LinearIdentityMapsBasisToBasis) {
    FeatureExtractor f(Architecture::Linear, 3, 0, 3);
    auto& p = f.params();
    for (std::size_t i = 0; i < 3; ++i) p[i * 3 + i] = 1.0;
    EXPECT_EQ(f.forward(std::vector<double>{1, 0, 0}), Embedding::basis(3, 0));
}

TEST(Forward, OutputIsUnitAndDeterministic) {
    std::mt19937_64 rng(2);
    const auto a = FeatureExtractor::initialized(Architecture::Mlp, 6, 8, 4, 42);
    const auto b = FeatureExtractor::initialized(Architecture::Mlp, 6, 8, 4, 42);
    EXPECT_EQ(a.params(), b.params());
    for (const auto& p : random_batch(50, 6, rng)) {
        const auto z = a.forward(p.x);
        double n = 0.0;
        for (double v : z.values()) n += v * v;
        EXPECT_NEAR(std::sqrt(n), 1.0, 1e-9);
        EXPECT_EQ(z, b.forward(p.x));
    }
}

TEST(Forward, ZeroNormThrows) {
    FeatureExtractor f(Architecture::Linear, 2, 0, 2);
    EXPECT_THROW(f.forward(std::vector<double>{1, 1}), std::domain_error);
    EXPECT_THROW(f.forward(std::vector<double>{1}), std::invalid_argument);
}

TEST(InfoNce, Examples) {
    const auto e1 = Embedding::basis(2, 0), e2 = Embedding::basis(2, 1);
    const std::vector<Embedding> same{e2};
    EXPECT_NEAR(infonce_loss(e1, e2, same, 0.5, 0.0), 0.0, 1e-15);
    const std::vector<Embedding> anti{-e1};
    EXPECT_NEAR(infonce_loss(e1, e1, anti, 0.5, 1.0), 0.0181499, 1e-7);
    EXPECT_NEAR(infonce_loss(e1, e1, anti, 0.5, 1.0), std::log1p(std::exp(-4.0)), 1e-15);
}

TEST(InfoNce, StableAtTinyTemperature) {
    const auto e1 = Embedding::basis(2, 0);
    const std::vector<Embedding> negs{-e1};
    const double l = infonce_loss(e1, e1, negs, 1e-4, 1.0);
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_GE(l, 0.0);
}

TEST(InfoNce, IdentityWithMhmlTerms) {
    std::mt19937_64 rng(3);
    const auto k = SimilarityKernel::exponential(0.5);
    for (int t = 0; t < 100; ++t) {
        const std::size_t K = 1 + t % 40;
        const auto a = oracle::random_unit(8, rng), p = oracle::random_unit(8, rng);
        std::vector<Embedding> mem;
        for (std::size_t i = 0; i < K; ++i) mem.push_back(oracle::random_unit(8, rng));
        // Plain-loop oracle of I_h - I_d + log K.
        const double ih = -std::log(oracle::q(oracle::values(a), 0, oracle::values(p), 0, k));
        double mean = 0.0;
        for (const auto& m : mem) mean += oracle::q(oracle::values(a), 0, oracle::values(m), 0, k) / K;
        const double rhs = ih + std::log(mean) + std::log(static_cast<double>(K));
        EXPECT_NEAR(infonce_loss(a, p, mem, 0.5, 0.0), rhs, 1e-9);
    }
}

TEST(InfoNce, PerfectOracleEmbeddings) {
    // Positives share the anchor's basis vector; memory holds one vector per class.
    const auto k = SimilarityKernel::exponential(0.5);
    std::vector<Embedding> mem;
    for (std::size_t c = 0; c < 4; ++c) mem.push_back(Embedding::basis(4, c));
    for (std::size_t c = 0; c < 4; ++c) {
        const auto a = Embedding::basis(4, c);
        const std::vector<LabeledPoint> pos{{a, 0, 1.0}};
        const double rhs = hebbian_info(a, 0, pos, k).value - distinctiveness_info(a, 0, mem, {}, k).value + std::log(4.0);
        EXPECT_NEAR(infonce_loss(a, a, mem, 0.5, 0.0), rhs, 1e-12);
    }
}

TEST(Gradient, MatchesFiniteDifferencesAcrossConfigs) {
    std::mt19937_64 rng(5);
    int n = 0;
    for (auto arch : {Architecture::Linear, Architecture::Mlp})
        for (auto src : {NegativeSource::BatchOnly, NegativeSource::MemoryOnly, NegativeSource::Mixed})
            for (double eps : {0.0, 1.0})
                for (bool with_key : {false, true}) {
                    auto q = FeatureExtractor::initialized(arch, 5, 4, 3, rng());
                    auto key = FeatureExtractor::initialized(arch, 5, 4, 3, rng());
                    const auto batch = random_batch(4, 5, rng);
                    std::vector<Embedding> negs;
                    for (int i = 0; i < 5; ++i) negs.push_back(oracle::random_unit(3, rng));
                    const LossConfig lc{0.4, eps, src};
                    const auto* kp = with_key ? &key : nullptr;
                    const auto g = contrastive_loss(q, kp, batch, negs, lc, true).grad;
                    EXPECT_LT(max_rel_error(g, finite_difference(q, kp, batch, negs, lc)), 1e-4)
                        << to_string(arch) << " " << to_string(src) << " eps=" << eps << " key=" << with_key;
                    ++n;
                }
    EXPECT_EQ(n, 24);
}

TEST(Gradient, ZeroAtSymmetricLogitsForAnyTemperature) {
    // Zero weights, shared bias: every embedding equals the same unit vector.
    FeatureExtractor f(Architecture::Linear, 3, 0, 2);
    f.params()[6] = 0.6;
    f.params()[7] = 0.8;
    std::mt19937_64 rng(7);
    const auto batch = random_batch(3, 3, rng);
    const std::vector<Embedding> negs{f.forward(batch[0].x)};
    for (double tau : {0.25, 0.5, 1.0})
        for (double eps : {0.0, 1.0}) {
            const auto g = contrastive_loss(f, nullptr, batch, negs, {tau, eps, NegativeSource::Mixed}, true).grad;
            double norm = 0.0;
            for (double v : g) norm += v * v;
            EXPECT_LT(std::sqrt(norm), 1e-8);
        }
}

TEST(ContrastiveLoss, InputErrors) {
    const auto f = FeatureExtractor::initialized(Architecture::Linear, 3, 0, 2, 1);
    std::mt19937_64 rng(9);
    const auto one = random_batch(1, 3, rng);
    EXPECT_THROW(contrastive_loss(f, nullptr, one, {}, {0.5, 1.0, NegativeSource::BatchOnly}, false),
                 std::invalid_argument);
    EXPECT_THROW(contrastive_loss(f, nullptr, random_batch(3, 3, rng), {}, {0.5, 1.0, NegativeSource::MemoryOnly}, false),
                 std::invalid_argument);
}

TEST(Momentum, Examples) {
    FeatureExtractor q(Architecture::Linear, 1, 0, 1), k(Architecture::Linear, 1, 0, 1);
    q.params() = {0.0, 0.0};
    k.params() = {1.0, 1.0};
    auto k0 = k, k1 = k, k9 = k;
    momentum_update(k0, q, 0.0);
    momentum_update(k1, q, 1.0);
    momentum_update(k9, q, 0.9);
    EXPECT_EQ(k0.params(), q.params());
    EXPECT_EQ(k1.params(), k.params());
    EXPECT_DOUBLE_EQ(k9.params()[0], 0.9);
    FeatureExtractor other(Architecture::Linear, 2, 0, 1);
    EXPECT_THROW(momentum_update(other, q, 0.5), std::invalid_argument);
}

TEST(CosineLr, Examples) {
    EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 0.3), 0.3);
    EXPECT_NEAR(cosine_lr(100, 100, 0.3), 0.0, 1e-17);
    EXPECT_NEAR(cosine_lr(50, 100, 0.3), 0.15, 1e-15);
}

TEST(Optimizer, SgdAndAdamFirstStep) {
    std::vector<double> p{1.0, -2.0};
    Optimizer sgd({OptimizerKind::Sgd}, 2);
    sgd.step(p, std::vector<double>{0.5, -1.0}, 0.1);
    EXPECT_DOUBLE_EQ(p[0], 0.95);
    EXPECT_DOUBLE_EQ(p[1], -1.9);
    std::vector<double> a{0.0, 0.0};
    Optimizer adam({}, 2);
    adam.step(a, std::vector<double>{3.0, -0.01}, 0.01);
    // First bias-corrected Adam step has magnitude lr regardless of gradient scale.
    EXPECT_NEAR(a[0], -0.01, 1e-9);
    EXPECT_NEAR(a[1], 0.01, 1e-6);
}

namespace {

TrainerState small_state(TrainerConfig tc, EvictionPolicy policy = EvictionPolicy::DuelIncremental) {
    tc.batch_size = 8;
    tc.memory_negatives = 8;
    tc.hidden_dim = 6;
    tc.embedding_dim = 4;
    MemoryConfig mc;
    mc.capacity = 16;
    mc.policy = policy;
    return make_trainer(tc, mc, 5);
}

StreamConfig small_stream(std::uint64_t seed) {
    StreamConfig sc;
    sc.num_classes = 3;
    sc.input_dim = 5;
    sc.seed = seed;
    return sc;
}

}  // namespace

TEST(TrainStep, ZeroLearningRateStillUpdatesMemory) {
    TrainerConfig tc;
    tc.learning_rate = 0.0;
    auto s = small_state(tc, EvictionPolicy::Fifo);
    StreamGenerator gen(small_stream(1));
    initialize_memory(s, gen);
    const auto before = s.query.params();
    const auto first_id = s.memory.entry(0).id;
    const auto rep = train_step(s, gen.sample_batch(8));
    EXPECT_EQ(s.query.params(), before);
    EXPECT_EQ(rep.evictions, 8u);
    EXPECT_NE(s.memory.entry(0).id, first_id);
}

TEST(TrainStep, LossTrajectoryIsBitIdentical) {
    auto run = [] {
        TrainerConfig tc;
        tc.seed = 4;
        tc.steps = 20;
        auto s = small_state(tc);
        StreamGenerator gen(small_stream(4));
        initialize_memory(s, gen);
        std::vector<double> losses;
        for (int i = 0; i < 20; ++i) losses.push_back(train_step(s, gen.sample_batch(8)).loss);
        return losses;
    };
    EXPECT_EQ(run(), run());
}

TEST(TrainStep, AblationGridRuns) {
    int ran = 0;
    for (auto src : {NegativeSource::BatchOnly, NegativeSource::MemoryOnly, NegativeSource::Mixed})
        for (double eps : {0.0, 1.0}) {
            TrainerConfig tc;
            tc.negative_source = src;
            tc.epsilon = eps;
            tc.steps = 5;
            auto s = small_state(tc);
            StreamGenerator gen(small_stream(2));
            initialize_memory(s, gen);
            for (int i = 0; i < 5; ++i) EXPECT_TRUE(std::isfinite(train_step(s, gen.sample_batch(8)).loss));
            ++ran;
        }
    EXPECT_EQ(ran, 6);
}

TEST(TrainStep, LossDecreasesOnSeparableStream) {
    TrainerConfig tc;
    tc.steps = 200;
    tc.seed = 8;
    auto s = small_state(tc);
    StreamGenerator gen(small_stream(8));
    initialize_memory(s, gen);
    double early = 0.0, late = 0.0;
    for (int i = 0; i < 200; ++i) {
        const double l = train_step(s, gen.sample_batch(8)).loss;
        if (i < 20) early += l;
        if (i >= 180) late += l;
    }
    EXPECT_LT(late, early);
}

TEST(TrainerConfig, ValidationErrors) {
    TrainerConfig tc;
    tc.temperature = 0.0;
    EXPECT_THROW(validate(tc), std::invalid_argument);
    tc = {};
    tc.epsilon = 2.0;
    EXPECT_THROW(validate(tc), std::invalid_argument);
    tc = {};
    tc.momentum = 1.0;
    EXPECT_THROW(validate(tc), std::invalid_argument);
    tc = {};
    tc.batch_size = 1;
    EXPECT_THROW(validate(tc), std::invalid_argument);
}
