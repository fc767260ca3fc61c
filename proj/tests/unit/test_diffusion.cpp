#include <gtest/gtest.h>

#include <driftforge/diffusion.hpp>

#include <filesystem>

using namespace driftforge;
using namespace driftforge::diffusion;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, Rng& rng) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
    }
    return m;
}

Table twoClusters(std::size_t n, std::uint64_t seed) {
    Schema s({{"x", AttributeKind::kContinuous, {}, 0.0, 10.0, false},
              {"c", AttributeKind::kCategorical, {"left", "right"}, 0, 0, false}});
    Rng rng(seed);
    std::vector<Row> rows;
    for (std::size_t i = 0; i < n; ++i) {
        const bool right = rng.uniform() < 0.5;
        const double x = std::clamp((right ? 7.5 : 2.5) + 0.5 * rng.normal(), 0.0, 10.0);
        rows.push_back(Row{x, std::string(right ? "right" : "left")});
    }
    return Table(s, rows);
}

DiffuserConfig tinyConfig(std::size_t steps) {
    DiffuserConfig cfg;
    cfg.hidden = {16, 16};
    cfg.steps = steps;
    cfg.timesteps = 20;
    cfg.optimizer.batchSize = 32;
    cfg.seed = 4;
    return cfg;
}

}// namespace

TEST(Schedule, CumulativeProducts) {
    const auto s = scheduleFromBetas({0.1, 0.2});
    EXPECT_NEAR(s.alphaBarAt(1), 0.9, 1e-15);
    EXPECT_NEAR(s.alphaBarAt(2), 0.72, 1e-15);
}

TEST(Schedule, LinearAndDecreasing) {
    const auto s = makeSchedule(50);
    for (std::size_t t = 2; t <= 50; ++t) {
        EXPECT_LT(s.alphaBarAt(t), s.alphaBarAt(t - 1));
        EXPECT_NEAR(s.betaAt(t) - s.betaAt(t - 1), (0.02 - 1e-4) / 49.0, 1e-15);
    }
    EXPECT_DOUBLE_EQ(s.betaAt(1), 1e-4);
    EXPECT_DOUBLE_EQ(s.betaAt(50), 0.02);
    EXPECT_THROW(makeSchedule(1), Error);
    EXPECT_THROW(makeSchedule(10, 0.1, 0.05), Error);
    EXPECT_THROW(makeSchedule(10, 0.1, 1.0), Error);
}

TEST(ForwardSample, Limits) {
    Rng rng(1);
    const Eigen::MatrixXd x0 = gaussian(4, 3, rng);
    const Eigen::MatrixXd eps = gaussian(4, 3, rng);
    EXPECT_TRUE(corrupt(x0, 1.0, eps).isApprox(x0));
    EXPECT_TRUE(corrupt(x0, 0.0, eps).isApprox(eps));
    const auto s = makeSchedule(10);
    EXPECT_THROW(forwardSample({x0, true}, 0, eps, s), Error);
    EXPECT_THROW(forwardSample({x0, true}, 11, eps, s), Error);
    EXPECT_FALSE(forwardSample({x0, true}, 3, eps, s).clean);
}

TEST(ForwardSample, ClosedFormEqualsIterativeComposition) {
    const auto s = makeSchedule(10, 1e-4, 0.2);
    Rng rng(2);
    const Eigen::MatrixXd x0 = gaussian(5, 4, rng);
    for (std::size_t T = 1; T <= 10; ++T) {
        // Iterate q(x_t | x_{t-1}) and track the noise the closed form must see.
        Eigen::MatrixXd x = x0;
        Eigen::MatrixXd carried = Eigen::MatrixXd::Zero(5, 4);// accumulates sum of scaled step noises
        for (std::size_t t = 1; t <= T; ++t) {
            const Eigen::MatrixXd e = gaussian(5, 4, rng);
            x = std::sqrt(1.0 - s.betaAt(t)) * x + std::sqrt(s.betaAt(t)) * e;
            carried = std::sqrt(s.alphaAt(t)) * carried + std::sqrt(s.betaAt(t)) * e;
        }
        const Eigen::MatrixXd matched = carried / std::sqrt(1.0 - s.alphaBarAt(T));
        const auto closed = forwardSample({x0, true}, T, matched, s);
        EXPECT_LE((closed.values - x).cwiseAbs().maxCoeff(), 1e-10) << "T=" << T;
    }
}

TEST(PosteriorMean, ZeroNoiseCollapses) {
    const auto s = makeSchedule(10);
    Rng rng(3);
    const Eigen::MatrixXd xt = gaussian(3, 2, rng);
    const auto mu = posteriorMean(xt, Eigen::MatrixXd::Zero(3, 2), 4, s);
    EXPECT_TRUE(mu.isApprox(xt / std::sqrt(s.alphaAt(4)), 1e-15));
    EXPECT_THROW(posteriorMean(xt, Eigen::MatrixXd::Zero(2, 2), 4, s), Error);
}

TEST(PosteriorMean, MatchesAnalyticPosterior) {
    const auto s = makeSchedule(10, 1e-4, 0.2);
    Rng rng(4);
    const Eigen::MatrixXd x0 = gaussian(6, 3, rng);
    for (std::size_t t = 1; t <= 10; ++t) {
        const Eigen::MatrixXd eps = gaussian(6, 3, rng);
        const double ab = s.alphaBarAt(t);
        const double abPrev = t == 1 ? 1.0 : s.alphaBarAt(t - 1);
        const Eigen::MatrixXd xt = std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
        const Eigen::MatrixXd oracle = (std::sqrt(abPrev) * s.betaAt(t) / (1.0 - ab)) * x0
            + (std::sqrt(s.alphaAt(t)) * (1.0 - abPrev) / (1.0 - ab)) * xt;
        EXPECT_LE((posteriorMean(xt, eps, t, s) - oracle).cwiseAbs().maxCoeff(), 1e-10) << "t=" << t;
    }
}

TEST(PosteriorMean, LiteralFormAgreesAtFirstStep) {
    const auto s = makeSchedule(10);
    Rng rng(5);
    const Eigen::MatrixXd xt = gaussian(3, 3, rng);
    const Eigen::MatrixXd eps = gaussian(3, 3, rng);
    EXPECT_LE((posteriorMean(xt, eps, 1, s, PosteriorForm::kStandard)
               - posteriorMean(xt, eps, 1, s, PosteriorForm::kLiteral)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_GT((posteriorMean(xt, eps, 5, s, PosteriorForm::kStandard)
               - posteriorMean(xt, eps, 5, s, PosteriorForm::kLiteral)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Diffuser, ZeroStepsIsSeededInitialization) {
    const Table data = twoClusters(64, 1);
    const auto model = trainDiffuser(data, tinyConfig(0));
    EXPECT_TRUE(model.net == nn::Mlp({{3, 16, 16, 2}, nn::Activation::kRelu, 4}));
}

TEST(Diffuser, LossDecreasesAndIsDeterministic) {
    const Table data = twoClusters(400, 2);
    auto cfg = tinyConfig(600);
    cfg.historyEvery = 10;
    const auto a = trainDiffuser(data, cfg);
    const auto b = trainDiffuser(data, cfg);
    EXPECT_TRUE(a.net == b.net);
    ASSERT_GE(a.meta.lossHistory.size(), 2u);
    EXPECT_LT(a.meta.finalLoss, a.meta.initialLoss);
}

TEST(Sampling, EmptyAndDeterministic) {
    const Table data = twoClusters(200, 3);
    const auto model = trainDiffuser(data, tinyConfig(50));
    EXPECT_EQ(sampleUnguided(model, 0, 1).size(), 0u);
    const Table a = sampleUnguided(model, 50, 9);
    const Table b = sampleUnguided(model, 50, 9);
    EXPECT_EQ(a.rows(), b.rows());
    EXPECT_NE(a.rows(), sampleUnguided(model, 50, 10).rows());
}

TEST(Sampling, ThreadCountDoesNotChangeOutput) {
    const Table data = twoClusters(200, 3);
    const auto model = trainDiffuser(data, tinyConfig(20));
    SamplingOptions one;
    one.seed = 5;
    one.shardRows = 64;
    SamplingOptions many = one;
    many.threads = 3;
    EXPECT_EQ(reverseProcess(model, 300, one).values, reverseProcess(model, 300, many).values);
}

TEST(Diffuser, CheckpointRoundTrip) {
    const Table data = twoClusters(100, 4);
    const auto model = trainDiffuser(data, tinyConfig(10));
    const auto dir = (std::filesystem::temp_directory_path() / "driftforge_unit" / "diffuser").string();
    saveDiffuser(dir, model);
    const auto back = loadDiffuser(dir);
    EXPECT_TRUE(back.net == model.net);
    EXPECT_EQ(back.schedule.alphaBar, model.schedule.alphaBar);
    EXPECT_TRUE(back.encoding.schema() == model.encoding.schema());
    EXPECT_EQ(sampleUnguided(back, 20, 1).rows(), sampleUnguided(model, 20, 1).rows());
}
