#include "openmig/analysis.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace openmig;
using testutil::rel_diff;

namespace {

struct Dataset {
    Eigen::VectorXd y;
    Eigen::MatrixXd x;
    std::vector<std::string> names;
};

Dataset random_dataset(std::mt19937& rng, int n, int k) {
    std::normal_distribution<double> n01;
    Dataset d;
    d.x.resize(n, k);
    d.y.resize(n);
    for (int j = 0; j < k; ++j) d.names.push_back("x" + std::to_string(j));
    for (int i = 0; i < n; ++i) {
        double s = 0.5;
        for (int j = 0; j < k; ++j) {
            d.x(i, j) = n01(rng) * (j + 1) + j;
            s += (j % 2 ? -0.3 : 0.7) * d.x(i, j);
        }
        d.y[i] = s + (1.0 + std::abs(d.x(i, 0))) * n01(rng); // heteroskedastic
    }
    return d;
}

IndicatorRow ind(const std::string& c, int y, double old, double wage, double gdp = 10000.0) {
    IndicatorRow r;
    r.country = c;
    r.year = y;
    r.pop = 1e7;
    r.gdp_pc_ppp = gdp;
    r.land_km2 = 1000.0;
    r.old_dep_ratio = old;
    r.wage_proxy = wage;
    return r;
}

OpennessRecord rec(const std::string& d, int y, int v) {
    OpennessRecord r;
    r.destination = d;
    r.year = y;
    r.diversity = v;
    return r;
}

} // namespace

TEST(Ols, MatchesNormalEquationsAndLiteralHc1) {
    std::mt19937 rng(2024);
    for (int rep = 0; rep < 5; ++rep) {
        auto d = random_dataset(rng, 80, 4);
        auto res = ols_hc1(d.y, d.x, d.names);
        const auto n = d.y.size();
        const auto k = d.x.cols() + 1;
        Eigen::MatrixXd z(n, k);
        z << d.x, Eigen::VectorXd::Ones(n);
        Eigen::MatrixXd xtx = z.transpose() * z;
        Eigen::VectorXd b = xtx.ldlt().solve(z.transpose() * d.y);
        Eigen::VectorXd e = d.y - z * b;
        Eigen::MatrixXd inv = xtx.inverse();
        Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
        for (Eigen::Index i = 0; i < n; ++i) meat += e[i] * e[i] * z.row(i).transpose() * z.row(i);
        Eigen::MatrixXd v = double(n) / double(n - k) * inv * meat * inv;
        for (Eigen::Index j = 0; j < k; ++j) {
            EXPECT_LT(rel_diff(res.coefficients[static_cast<std::size_t>(j)].estimate, b[j]), 1e-10);
            EXPECT_LT(rel_diff(res.coefficients[static_cast<std::size_t>(j)].se, std::sqrt(v(j, j))), 1e-10);
        }
        const double r2 = 1.0 - e.squaredNorm() / (d.y.array() - d.y.mean()).square().sum();
        EXPECT_LT(rel_diff(res.r2, r2), 1e-10);
        EXPECT_LT(rel_diff(res.adj_r2, 1.0 - (1.0 - r2) * double(n - 1) / double(n - k)), 1e-10);
        EXPECT_EQ(res.coefficients.back().name, kInterceptName);
    }
}

TEST(Ols, ExactFitHasUnitR2AndZeroSe) {
    Eigen::MatrixXd x(6, 1);
    x << 1, 2, 3, 4, 5, 7;
    Eigen::VectorXd y = 2.0 * x.col(0).array() + 1.0;
    auto res = ols_hc1(y, x, {"x"});
    EXPECT_NEAR(res.r2, 1.0, 1e-12);
    EXPECT_NEAR(res.coefficients[0].estimate, 2.0, 1e-12);
    EXPECT_NEAR(res.coefficients[0].se, 0.0, 1e-12);
}

TEST(Ols, RankDeficiencyNamesTheColumn) {
    std::mt19937 rng(1);
    auto d = random_dataset(rng, 30, 3);
    d.x.col(2) = 2.0 * d.x.col(0) - d.x.col(1);
    try {
        ols_hc1(d.y, d.x, d.names);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::RankDeficient);
        EXPECT_NE(std::string(e.what()).find("'x2'"), std::string::npos);
    }
}

TEST(FdDataset, DifferencesAndListwiseCompleteness) {
    IndicatorTable t;
    t.rows = {ind("AAA", 2000, 10, 100), ind("AAA", 2010, 13.5, 120), ind("AAA", 2020, 15, 150),
              ind("BBB", 2010, 20, 200), ind("CCC", 2000, 8, 90), ind("CCC", 2010, 9, 95)};
    t.rows.back().wage_proxy.reset();
    auto fd = build_fd_dataset(t, {rec("AAA", 2000, 3), rec("AAA", 2010, 5), rec("AAA", 2020, 4), rec("BBB", 2010, 9),
                                   rec("CCC", 2000, 1), rec("CCC", 2010, 2)});
    ASSERT_EQ(fd.rows.size(), 3u); // BBB has openness only in 2010
    const auto& a1 = fd.rows[0];
    EXPECT_EQ(a1.destination, "AAA");
    EXPECT_EQ(a1.period(), "2000-2010");
    EXPECT_DOUBLE_EQ(*a1.d_old, 3.5);
    EXPECT_DOUBLE_EQ(*a1.d_lnw, std::log(120.0) - std::log(100.0));
    EXPECT_EQ(a1.d_open, 2.0);
    EXPECT_EQ(a1.open_lag, 3.0);
    EXPECT_EQ(a1.dummy_2020, 0.0);
    EXPECT_EQ(fd.rows[1].dummy_2020, 1.0);
    EXPECT_EQ(fd.rows[1].d_open, -1.0);
    EXPECT_FALSE(fd.rows[2].d_lnw.has_value()); // CCC lacks 2010 wages
    EXPECT_EQ(fd.n_aging, 3u);
    EXPECT_EQ(fd.n_wage, 2u);
}

TEST(NestedRegressions, CommonSampleAndNondecreasingR2) {
    std::mt19937 rng(77);
    std::normal_distribution<double> n01;
    IndicatorTable t;
    std::vector<OpennessRecord> records;
    for (int c = 0; c < 60; ++c) {
        const std::string code = "C" + std::string(1, char('A' + c / 26)) + std::string(1, char('A' + c % 26));
        double old = 10 + 5 * std::abs(n01(rng));
        double w = 1e4 * std::exp(n01(rng));
        int open = static_cast<int>(std::abs(n01(rng)) * 10);
        for (int y : {2000, 2010, 2020}) {
            t.rows.push_back(ind(code, y, old, w, w * 0.4));
            records.push_back(rec(code, y, open));
            old += 1.0 + 0.5 * n01(rng) - 0.03 * open;
            w *= std::exp(0.1 + 0.05 * n01(rng));
            open = std::max(0, open + static_cast<int>(std::lround(2 * n01(rng))));
        }
    }
    auto fd = build_fd_dataset(t, records);
    for (const auto& label : {"aging", "wages"}) {
        auto m = nested_regressions(fd, label);
        ASSERT_EQ(m.columns.size(), 3u);
        EXPECT_EQ(m.columns[0].n_obs, m.columns[2].n_obs);
        EXPECT_LE(m.columns[0].r2, m.columns[1].r2 + 1e-12);
        EXPECT_LE(m.columns[1].r2, m.columns[2].r2 + 1e-12);
        EXPECT_TRUE(m.columns[2].period_dummies);
        EXPECT_NE(m.columns[2].find("d_open"), nullptr);
        EXPECT_EQ(m.columns[0].find("d_open"), nullptr);
    }
    // one period only: no period dummy
    std::vector<OpennessRecord> two;
    for (const auto& r : records)
        if (r.year != 2020) two.push_back(r);
    auto m = nested_regressions(build_fd_dataset(t, two), "aging");
    EXPECT_FALSE(m.columns[2].period_dummies);
}

// Size check: an outcome unrelated to openness rejects at 5% about 5% of the time.
TEST(NestedRegressions, MonteCarloSizeOfOpennessTest) {
    std::mt19937 rng(5150);
    std::normal_distribution<double> n01;
    int rejections = 0;
    const int reps = 200;
    for (int rep = 0; rep < reps; ++rep) {
        IndicatorTable t;
        std::vector<OpennessRecord> records;
        for (int c = 0; c < 80; ++c) {
            const std::string code = "D" + std::string(1, char('A' + c / 26)) + std::string(1, char('A' + c % 26));
            double old = 12 + 3 * n01(rng);
            for (int y : {2000, 2010}) {
                t.rows.push_back(ind(code, y, old, 1e4, 1e4 * std::exp(n01(rng))));
                records.push_back(rec(code, y, static_cast<int>(std::abs(n01(rng)) * 8)));
                old += 1.0 + n01(rng);
            }
        }
        auto m = nested_regressions(build_fd_dataset(t, records), "aging");
        rejections += m.columns[2].find("d_open")->p < 0.05;
    }
    const double rate = double(rejections) / reps;
    EXPECT_GT(rate, 0.01);
    EXPECT_LT(rate, 0.10);
}

TEST(Correlations, SymmetricUnitDiagonalAndBounded) {
    std::mt19937 rng(8);
    std::normal_distribution<double> n01;
    MeasurePanel p;
    for (int i = 0; i < 40; ++i) {
        MeasureRow r;
        r.destination = "X" + std::to_string(i);
        r.year = 2010;
        r.diversity = std::abs(n01(rng)) * 10;
        r.scale_all = n01(rng);
        r.scale_excl_contig = *r.scale_all + 0.1 * n01(rng);
        r.visa_do = n01(rng);
        r.visa_od = i % 7 ? std::optional<double>(n01(rng)) : std::nullopt;
        r.mai = n01(rng);
        r.mai_rank = -*r.mai;
        r.mipex = n01(rng);
        p.rows.push_back(r);
    }
    auto cm = pearson_correlations(p, measure_columns());
    const auto k = cm.r.rows();
    for (Eigen::Index a = 0; a < k; ++a) {
        EXPECT_EQ(cm.r(a, a), 1.0);
        for (Eigen::Index b = 0; b < k; ++b) {
            EXPECT_EQ(cm.r(a, b), cm.r(b, a));
            EXPECT_LE(std::abs(cm.r(a, b)), 1.0);
        }
    }
    auto idx = [&](const std::string& n) {
        return std::find(cm.names.begin(), cm.names.end(), n) - cm.names.begin();
    };
    EXPECT_NEAR(cm.r(idx("mai"), idx("mai_rank")), -1.0, 1e-12);
    EXPECT_LT(cm.n(idx("visa_od"), idx("mipex")), 40);
    auto text = correlations_csv(cm);
    EXPECT_EQ(text.substr(0, text.find('\n')), "var_a,var_b,r,n,significant_5pct");
}

TEST(Correlations, TooFewPairsIsInsufficientData) {
    MeasurePanel p;
    for (int i = 0; i < 2; ++i) {
        MeasureRow r;
        r.diversity = i;
        r.mipex = i;
        p.rows.push_back(r);
    }
    EXPECT_THROW(pearson_correlations(p, {"diversity", "mipex"}), Error);
}

TEST(ExternalTable, ParsesNullableColumns) {
    auto t = parse_external_table(testutil::csv("country,year,visa_do,visa_od,mai,mai_rank,mipex\n"
                                                "GBR,2010,150,,5.5,3,57\n"));
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_FALSE(t.rows[0].visa_od.has_value());
    EXPECT_EQ(*t.rows[0].mipex, 57.0);
    EXPECT_EQ(external_csv(t), "country,year,visa_do,visa_od,mai,mai_rank,mipex\nGBR,2010,150,,5.5,3,57\n");
}
