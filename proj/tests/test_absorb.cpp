#include "openmig/absorb.hpp"
#include "openmig/error.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace openmig;

namespace {

// Dense oracle: residual of weighted least squares on explicit dummies.
Eigen::VectorXd dense_residual(const Eigen::VectorXd& x, const Eigen::VectorXd& w, const FixedEffects& fe) {
    const auto n = x.size();
    int cols = 0;
    for (const auto& d : fe) cols += d.n_levels;
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, cols);
    int off = 0;
    for (const auto& d : fe) {
        for (Eigen::Index i = 0; i < n; ++i) D(i, off + d.codes[static_cast<std::size_t>(i)]) = 1.0;
        off += d.n_levels;
    }
    Eigen::VectorXd sw = w.cwiseSqrt();
    Eigen::MatrixXd Dw = sw.asDiagonal() * D;
    Eigen::VectorXd b = Dw.completeOrthogonalDecomposition().solve(sw.cwiseProduct(x));
    return x - D * b;
}

FixedEffects random_crossed(std::mt19937& rng, int n, int a, int b) {
    std::uniform_int_distribution<int> ua(0, a - 1), ub(0, b - 1);
    std::vector<std::string> ka, kb;
    for (int i = 0; i < n; ++i) {
        ka.push_back("a" + std::to_string(ua(rng)));
        kb.push_back("b" + std::to_string(ub(rng)));
    }
    return {encode_keys("a", ka), encode_keys("b", kb)};
}

} // namespace

TEST(EncodeKeys, SortedCodingIndependentOfOrder) {
    auto d = encode_keys("o", {"ZZZ", "AAA", "MMM", "AAA"});
    EXPECT_EQ(d.n_levels, 3);
    EXPECT_EQ(d.level_names, (std::vector<std::string>{"AAA", "MMM", "ZZZ"}));
    EXPECT_EQ(d.codes, (std::vector<int>{2, 0, 1, 0}));
}

TEST(Absorb, SingleDimensionIsGroupDemeaning) {
    auto fe = FixedEffects{encode_keys("g", {"a", "a", "b", "b", "b"})};
    Eigen::VectorXd x(5), w(5);
    x << 1, 3, 2, 4, 9;
    w << 1, 1, 1, 2, 1;
    auto r = absorb(x, w, fe);
    // weighted group means: a -> 2, b -> (2 + 8 + 9) / 4
    EXPECT_NEAR(r[0], -1.0, 1e-14);
    EXPECT_NEAR(r[1], 1.0, 1e-14);
    EXPECT_NEAR(r[2], 2.0 - 19.0 / 4.0, 1e-14);
    EXPECT_NEAR(r[4], 9.0 - 19.0 / 4.0, 1e-14);
}

TEST(Absorb, CrossedDimensionsMatchDenseProjection) {
    std::mt19937 rng(17);
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> uw(0.1, 5.0);
    for (int rep = 0; rep < 10; ++rep) {
        const int n = 200;
        auto fe = random_crossed(rng, n, 7, 11);
        Eigen::VectorXd x(n), w(n);
        for (int i = 0; i < n; ++i) {
            x[i] = n01(rng) + fe[0].codes[static_cast<std::size_t>(i)];
            w[i] = uw(rng);
        }
        AbsorbOptions opt;
        opt.tol = 1e-13;
        auto r = absorb(x, w, fe, opt);
        auto oracle = dense_residual(x, w, fe);
        EXPECT_LT((r - oracle).cwiseAbs().maxCoeff(), 1e-9 * (1 + x.cwiseAbs().maxCoeff())) << "rep " << rep;
    }
}

TEST(Absorb, AccelerationDoesNotChangeTheAnswer) {
    std::mt19937 rng(3);
    std::normal_distribution<double> n01;
    const int n = 150;
    auto fe = random_crossed(rng, n, 5, 9);
    Eigen::VectorXd x(n), w = Eigen::VectorXd::Ones(n);
    for (int i = 0; i < n; ++i) x[i] = n01(rng);
    AbsorbOptions a, b;
    a.tol = b.tol = 1e-13;
    b.accelerate = false;
    EXPECT_LT((absorb(x, w, fe, a) - absorb(x, w, fe, b)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Absorb, ResidualIsOrthogonalToEveryGroup) {
    std::mt19937 rng(8);
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> uw(0.5, 2.0);
    const int n = 300;
    auto fe = random_crossed(rng, n, 12, 6);
    fe.push_back(encode_keys("c", std::vector<std::string>(n, "one")));
    Eigen::VectorXd x(n), w(n);
    for (int i = 0; i < n; ++i) {
        x[i] = 10 + n01(rng);
        w[i] = uw(rng);
    }
    auto r = absorb(x, w, fe);
    for (const auto& d : fe) {
        std::vector<double> s(static_cast<std::size_t>(d.n_levels), 0.0);
        for (int i = 0; i < n; ++i) s[static_cast<std::size_t>(d.codes[static_cast<std::size_t>(i)])] += w[i] * r[i];
        for (double v : s) EXPECT_LT(std::abs(v), 1e-8 * w.dot(x.cwiseAbs()));
    }
}

TEST(Absorb, RejectsBadWeights) {
    auto fe = FixedEffects{encode_keys("g", {"a", "b"})};
    Eigen::VectorXd x(2), w(2);
    x << 1, 2;
    w << 1, 0;
    EXPECT_THROW(absorb(x, w, fe), Error);
}

TEST(RecoverFe, ReconstructsTheFixedEffectSum) {
    std::mt19937 rng(21);
    std::normal_distribution<double> n01;
    const int n = 120;
    auto fe = random_crossed(rng, n, 6, 4);
    std::vector<double> a(6), b(4);
    for (auto& v : a) v = n01(rng);
    for (auto& v : b) v = n01(rng);
    Eigen::VectorXd sum(n), w = Eigen::VectorXd::Ones(n);
    for (int i = 0; i < n; ++i)
        sum[i] = a[static_cast<std::size_t>(fe[0].codes[static_cast<std::size_t>(i)])] +
                 b[static_cast<std::size_t>(fe[1].codes[static_cast<std::size_t>(i)])];
    auto alpha = recover_fe_values(sum, w, fe);
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < fe.size(); ++k)
            s += alpha[k][static_cast<std::size_t>(fe[k].codes[static_cast<std::size_t>(i)])];
        EXPECT_NEAR(s, sum[i], 1e-10);
    }
}
