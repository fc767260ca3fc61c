#include <gtest/gtest.h>

#include <driftforge/dist.hpp>
#include <driftforge/rng.hpp>

#include <numbers>

using namespace driftforge;

namespace {

AttributeProfile categorical(std::string name, std::vector<std::string> cats, std::vector<double> p) {
    return {std::move(name), AttributeKind::kCategorical, {}, std::move(cats), std::move(p)};
}

DistributionProfile single(AttributeProfile a) { return {{std::move(a)}}; }

Table continuousTable(std::vector<double> values) {
    Schema s({{"v", AttributeKind::kContinuous, {}, 0.0, 100.0, false}});
    std::vector<Row> rows;
    for (double v : values) rows.push_back(Row{v});
    return Table(s, rows);
}

}// namespace

TEST(MarginalProfile, CategoricalFrequencies) {
    Schema s({{"c", AttributeKind::kCategorical, {"A", "B"}, 0, 0, false}});
    Table t(s, {Row{std::string("A")}, Row{std::string("B")}, Row{std::string("A")}, Row{std::string("A")}});
    const auto p = marginalProfile(t);
    EXPECT_DOUBLE_EQ(p.attributes[0].probabilities[0], 0.75);
    EXPECT_DOUBLE_EQ(p.attributes[0].probabilities[1], 0.25);
}

TEST(MarginalProfile, TenEquiWidthBins) {
    const auto p = marginalProfile(continuousTable({5.0, 15.0}));
    ASSERT_EQ(p.attributes[0].probabilities.size(), 10u);
    EXPECT_DOUBLE_EQ(p.attributes[0].probabilities[0], 0.5);
    EXPECT_DOUBLE_EQ(p.attributes[0].probabilities[1], 0.5);
    EXPECT_EQ(binIndex(100.0, 0.0, 100.0, 10), 9u);
    EXPECT_THROW(marginalProfile(continuousTable({})), Error);
}

TEST(MarginalProfile, MatchesBruteForceHistogram) {
    Rng rng(11);
    std::vector<double> v;
    for (int i = 0; i < 500; ++i) v.push_back(rng.uniform(0.0, 100.0));
    const auto p = marginalProfile(continuousTable(v));
    for (int b = 0; b < 10; ++b) {
        int count = 0;
        for (double x : v) count += (x >= 10.0 * b && (x < 10.0 * (b + 1) || (b == 9 && x <= 100.0))) ? 1 : 0;
        EXPECT_DOUBLE_EQ(p.attributes[0].probabilities[static_cast<std::size_t>(b)], count / 500.0);
    }
}

TEST(Divergence, KlWorkedExample) {
    const std::vector<double> p{0.5, 0.5}, q{0.25, 0.75};
    EXPECT_NEAR(klDivergence(p, q), 0.143841, 1e-6);
    EXPECT_EQ(klDivergence(p, p), 0.0);
    EXPECT_GT(std::abs(klDivergence(p, q) - klDivergence(q, p)), 1e-3);
    EXPECT_THROW(klDivergence(p, std::vector<double>{1.0}), Error);
}

TEST(Divergence, JsWorkedExample) {
    const std::vector<double> p{0.5, 0.5}, q{1.0, 0.0};
    EXPECT_NEAR(jsDivergence(p, q), 0.215762, 1e-6);
    EXPECT_EQ(jsDivergence(p, p), 0.0);
    EXPECT_NEAR(jsDivergence(std::vector<double>{1, 0}, std::vector<double>{0, 1}), std::numbers::ln2, 1e-12);
    EXPECT_DOUBLE_EQ(jsDivergence(p, q), jsDivergence(q, p));
}

TEST(DriftFactor, WorkedExampleWithZeroPadding) {
    const auto a = single(categorical("c", {"A", "B"}, {0.5, 0.5}));
    const auto b = single(categorical("c", {"A"}, {1.0}));
    EXPECT_NEAR(driftFactor(a, b).aggregate.value(), 0.311278, 1e-6);
    EXPECT_EQ(driftFactor(a, a, 1e-9).aggregate.value(), 0.0);
}

TEST(DriftFactor, DisjointSupportsGiveOne) {
    const auto a = single(categorical("c", {"A"}, {1.0}));
    const auto b = single(categorical("c", {"B"}, {1.0}));
    EXPECT_NEAR(driftFactor(a, b, 1e-12).aggregate.value(), 1.0, 1e-6);
}

TEST(DriftFactor, MeanOverAttributes) {
    DistributionProfile a{{categorical("x", {"A", "B"}, {0.5, 0.5}), categorical("y", {"A", "B"}, {0.9, 0.1})}};
    DistributionProfile b{{categorical("x", {"A", "B"}, {0.8, 0.2}), categorical("y", {"A", "B"}, {0.1, 0.9})}};
    const auto r = driftFactor(a, b);
    EXPECT_NEAR(r.aggregate.value(), 0.5 * (r.attributes[0].drift + r.attributes[1].drift), 1e-15);
    EXPECT_THROW(driftFactor(a, single(categorical("x", {"A"}, {1.0}))), Error);
}

TEST(DriftFactor, BinningMismatchFails) {
    BinningConfig five{5, 1e-9};
    EXPECT_THROW(driftFactor(marginalProfile(continuousTable({1.0})), marginalProfile(continuousTable({1.0}), five)),
                 Error);
    EXPECT_THROW(DriftFactor(1.5), Error);
}

TEST(DriftFactor, SymmetricAndBounded) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> p(6), q(6);
        for (auto& v : p) v = rng.uniform();
        for (auto& v : q) v = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
        q[0] += 1e-3;
        auto norm = [](std::vector<double>& v) {
            double s = 0;
            for (double x : v) s += x;
            for (double& x : v) x /= s;
        };
        norm(p);
        norm(q);
        const std::vector<std::string> cats{"a", "b", "c", "d", "e", "f"};
        const auto A = single(categorical("c", cats, p));
        const auto B = single(categorical("c", cats, q));
        const double ab = driftFactor(A, B).aggregate.value();
        EXPECT_EQ(ab, driftFactor(B, A).aggregate.value());
        EXPECT_GE(ab, 0.0);
        EXPECT_LE(ab, 1.0);
    }
}

TEST(DriftFactor, MixingIsMonotone) {
    Rng rng(5);
    const std::vector<std::string> cats{"a", "b", "c", "d", "e"};
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> p(5), q(5);
        double sp = 0, sq = 0;
        for (int i = 0; i < 5; ++i) {
            p[i] = rng.uniform();
            q[i] = rng.uniform();
            sp += p[i];
            sq += q[i];
        }
        for (int i = 0; i < 5; ++i) {
            p[i] /= sp;
            q[i] /= sq;
        }
        double previous = -1.0;
        for (int k = 0; k <= 20; ++k) {
            const double w = k / 20.0;
            std::vector<double> mix(5);
            for (int i = 0; i < 5; ++i) mix[i] = (1 - w) * p[i] + w * q[i];
            const double d = driftFactor(single(categorical("c", cats, p)), single(categorical("c", cats, mix)))
                                 .aggregate.value();
            EXPECT_GE(d, previous - 1e-15);
            previous = d;
        }
    }
}

TEST(Correlation, PearsonExamples) {
    const std::vector<double> x{1, 2, 3};
    EXPECT_NEAR(pearson(x, std::vector<double>{2, 4, 6}), 1.0, 1e-15);
    EXPECT_NEAR(pearson(x, std::vector<double>{6, 4, 2}), -1.0, 1e-15);
    EXPECT_NEAR(pearson(x, std::vector<double>{1, 3, 2}), 0.5, 1e-15);
    EXPECT_EQ(pearson(x, std::vector<double>{4, 4, 4}), 0.0);
}

TEST(Correlation, AffineInvariance) {
    Rng rng(9);
    std::vector<double> x(200), y(200);
    for (int i = 0; i < 200; ++i) {
        x[i] = rng.normal();
        y[i] = 0.3 * x[i] + rng.normal();
    }
    const double r = pearson(x, y);
    std::vector<double> x2(x), y2(y);
    for (auto& v : x2) v = 7.5 * v - 3.0;
    for (auto& v : y2) v = 0.01 * v + 100.0;
    EXPECT_NEAR(pearson(x2, y2), r, 1e-9);
}

TEST(Correlation, MatrixZeroVarianceKeepsDiagonal) {
    Schema s({{"a", AttributeKind::kContinuous, {}, 0, 10, false}, {"b", AttributeKind::kContinuous, {}, 0, 10, false}});
    Table t(s, {Row{1.0, 5.0}, Row{2.0, 5.0}, Row{3.0, 5.0}});
    const auto c = correlationMatrix(t);
    EXPECT_EQ(c.values(0, 0), 1.0);
    EXPECT_EQ(c.values(1, 1), 1.0);
    EXPECT_EQ(c.values(0, 1), 0.0);
}

TEST(Correlation, AverageError) {
    CorrelationMatrix a{{"x", "y"}, Eigen::MatrixXd::Identity(2, 2)};
    CorrelationMatrix b = a;
    a.values(0, 1) = a.values(1, 0) = 0.5;
    b.values(0, 1) = b.values(1, 0) = 0.3;
    EXPECT_NEAR(averageCorrelationError(a, b), 0.2, 1e-15);
    EXPECT_EQ(averageCorrelationError(a, a), 0.0);

    CorrelationMatrix c{{"x", "y", "z"}, Eigen::MatrixXd::Identity(3, 3)};
    CorrelationMatrix d = c;
    d.values(0, 1) = 0.1;
    d.values(0, 2) = -0.2;
    d.values(1, 2) = 0.3;
    EXPECT_NEAR(averageCorrelationError(c, d), 0.2, 1e-15);
    EXPECT_THROW(averageCorrelationError(a, c), Error);
}
