#include "openmig/ingest.hpp"
#include "openmig/simlab.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace openmig;
using testutil::csv;

namespace {

const char* kStocks3 = "origin,destination,year,skill,stock\n"
                       "FRA,DEU,2010,all,100\n"
                       "DEU,FRA,2010,all,50\n"
                       "ITA,FRA,2010,all,0\n";

IndicatorTable indicators_for(const std::vector<std::string>& countries, const std::vector<int>& years, double pop = 5e6) {
    IndicatorTable t;
    for (const auto& c : countries)
        for (int y : years) t.rows.push_back({c, y, pop, 1000.0, 2000.0, 10.0, 3000.0, "R"});
    return t;
}

DyadTable full_dyads(const std::vector<std::string>& countries) {
    DyadTable t;
    for (const auto& a : countries)
        for (const auto& b : countries)
            if (a != b) t.rows.push_back({a, b, 500.0, 0, 1, 0, 0});
    return t;
}

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::InvalidValue;
}

} // namespace

TEST(StockTable, ParsesWellFormedRows) {
    auto t = parse_stock_table(csv(kStocks3));
    ASSERT_EQ(t.rows.size(), 3u);
    EXPECT_EQ(t.rows[0].origin, "FRA");
    EXPECT_EQ(t.rows[1].stock, 50.0);
    EXPECT_EQ(t.rows[2].skill, Skill::all);
}

TEST(StockTable, DuplicateKeyNamesRow) {
    std::string text = std::string(kStocks3) + "FRA,DEU,2010,all,7\n";
    try {
        parse_stock_table(csv(text));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DuplicateKey);
        ASSERT_TRUE(e.row().has_value());
        EXPECT_EQ(*e.row(), 3u);
    }
}

TEST(StockTable, ValidationErrors) {
    const std::string h = "origin,destination,year,skill,stock\n";
    EXPECT_EQ(kind_of([&] { parse_stock_table(csv(h + "FRA,DEU,2010,all,-1\n")); }), ErrorKind::NegativeStock);
    EXPECT_EQ(kind_of([&] { parse_stock_table(csv(h + "FRANCE,DEU,2010,all,1\n")); }), ErrorKind::BadISO3);
    EXPECT_EQ(kind_of([&] { parse_stock_table(csv(h + "fra,DEU,2010,all,1\n")); }), ErrorKind::BadISO3);
    EXPECT_EQ(kind_of([&] { parse_stock_table(csv(h + "FRA,FRA,2010,all,1\n")); }), ErrorKind::InvalidValue);
    EXPECT_EQ(kind_of([&] { parse_stock_table(csv(h + "FRA,DEU,2005,all,1\n")); }), ErrorKind::InvalidValue);
    EXPECT_EQ(kind_of([&] { parse_stock_table(csv(h + "FRA,DEU,2010,all,abc\n")); }), ErrorKind::InvalidValue);
    EXPECT_EQ(kind_of([&] { parse_stock_table(csv("origin,destination,year,stock\nFRA,DEU,2010,1\n")); }),
              ErrorKind::MissingColumn);
}

TEST(StockTable, MissingFileIsReported) {
    try {
        load_stock_table("/nonexistent/stocks.csv");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::FileNotFound);
        EXPECT_NE(std::string(e.what()).find("/nonexistent/stocks.csv"), std::string::npos);
    }
}

TEST(DyadTable, BothDirectionsNoWarnings) {
    auto t = parse_dyad_table(csv("origin,destination,dist_km,contig,comlang,comcol,coldepever\n"
                                  "FRA,DEU,880,1,0,0,0\n"
                                  "DEU,FRA,880,1,0,0,0\n"));
    EXPECT_EQ(t.rows.size(), 2u);
    EXPECT_TRUE(t.warnings.empty());
}

TEST(DyadTable, AsymmetryWarnsAndGuardsFire) {
    const std::string h = "origin,destination,dist_km,contig,comlang,comcol,coldepever\n";
    auto t = parse_dyad_table(csv(h + "FRA,DEU,880,1,0,0,0\n"));
    EXPECT_EQ(t.warnings.size(), 1u);
    EXPECT_EQ(kind_of([&] { parse_dyad_table(csv(h + "FRA,DEU,0,1,0,0,0\n")); }), ErrorKind::NonpositiveDistance);
    EXPECT_EQ(kind_of([&] { parse_dyad_table(csv(h + "FRA,DEU,10,2,0,0,0\n")); }), ErrorKind::NonBinaryDummy);
}

TEST(IndicatorTable, OneCountryThreeYearsAndSmallPopulationKept) {
    auto t = parse_indicator_table(csv("country,year,pop,gdp_pc_ppp,land_km2,old_dep_ratio,wage_proxy,region\n"
                                       "LUX,2000,400000,50000,2586,20,,Europe\n"
                                       "LUX,2010,500000,60000,2586,,,Europe\n"
                                       "LUX,2020,600000,70000,2586,21,90000,Europe\n"));
    ASSERT_EQ(t.rows.size(), 3u);
    EXPECT_FALSE(t.rows[1].old_dep_ratio.has_value());
    EXPECT_FALSE(t.rows[0].wage_proxy.has_value());
    EXPECT_EQ(*t.rows[2].wage_proxy, 90000.0);
    EXPECT_EQ(kind_of([&] {
                  parse_indicator_table(csv("country,year,pop,gdp_pc_ppp,land_km2,old_dep_ratio,wage_proxy,region\n"
                                            "LUX,2000,0,50000,2586,20,,Europe\n"));
              }),
              ErrorKind::NonpositivePopulation);
}

TEST(BuildPanel, ThreeCountriesTwoYearsGiveTwelveRows) {
    std::vector<std::string> c{"AAA", "BBB", "CCC"};
    StockTable s;
    for (int y : {2000, 2010})
        for (const auto& a : c)
            for (const auto& b : c)
                if (a != b) s.rows.push_back({a, b, y, Skill::all, 10.0});
    PanelFilter f;
    f.years = {2000, 2010};
    auto p = build_panel(s, full_dyads(c), indicators_for(c, {2000, 2010}), f);
    EXPECT_EQ(p.size(), 12u);
    EXPECT_EQ(p.rows_in, p.size() + p.excluded.size());
}

TEST(BuildPanel, DensifiesZerosAndKeepsThem) {
    std::vector<std::string> c{"AAA", "BBB", "CCC"};
    StockTable s;
    s.rows.push_back({"AAA", "BBB", 2000, Skill::all, 5.0});
    s.rows.push_back({"CCC", "AAA", 2000, Skill::all, 5.0});
    s.rows.push_back({"BBB", "CCC", 2000, Skill::all, 5.0});
    PanelFilter f;
    f.years = {2000};
    auto p = build_panel(s, full_dyads(c), indicators_for(c, {2000}), f);
    EXPECT_EQ(p.size(), 6u);
    EXPECT_EQ(p.imputed_zeros, 3u);
    for (const auto& r : p.rows) EXPECT_EQ(r.imputed_zero, r.stock == 0.0);
}

TEST(BuildPanel, PopulationFloorAndMissingDyadAreLogged) {
    std::vector<std::string> c{"AAA", "BBB", "CCC", "DDD"};
    StockTable s;
    for (const auto& a : c)
        for (const auto& b : c)
            if (a != b) s.rows.push_back({a, b, 2000, Skill::all, 3.0});
    auto ind = indicators_for(c, {2000});
    ind.rows[3].pop = 1e5; // DDD below the floor as a destination, kept as an origin
    auto dy = full_dyads(c);
    dy.rows.erase(std::remove_if(dy.rows.begin(), dy.rows.end(),
                                 [](const DyadRow& r) { return r.origin == "AAA" && r.destination == "BBB"; }),
                  dy.rows.end());
    PanelFilter f;
    f.years = {2000};
    auto p = build_panel(s, dy, ind, f);
    std::map<std::string, int> reasons;
    for (const auto& e : p.excluded) ++reasons[e.reason];
    EXPECT_EQ(reasons["below_min_population"], 3);
    EXPECT_EQ(reasons["missing_dyad"], 1);
    EXPECT_EQ(p.rows_in, 12u);
    EXPECT_EQ(p.rows_in, p.size() + p.excluded.size());
    for (const auto& r : p.rows) EXPECT_NE(r.destination, "DDD");
    bool ddd_origin = false;
    for (const auto& r : p.rows) ddd_origin |= r.origin == "DDD";
    EXPECT_TRUE(ddd_origin);
}

TEST(BuildPanel, MissingIndicatorYearIsAnError) {
    std::vector<std::string> c{"AAA", "BBB"};
    StockTable s;
    s.rows.push_back({"AAA", "BBB", 2000, Skill::all, 1.0});
    PanelFilter f;
    f.years = {2000, 2010};
    EXPECT_EQ(kind_of([&] { build_panel(s, full_dyads(c), indicators_for(c, {2000}), f); }), ErrorKind::InvalidValue);
}

TEST(BuildPanel, EmptyPanelWhenEverythingFiltered) {
    std::vector<std::string> c{"AAA", "BBB"};
    StockTable s;
    s.rows.push_back({"AAA", "BBB", 2000, Skill::all, 1.0});
    PanelFilter f;
    f.years = {2000};
    EXPECT_EQ(kind_of([&] { build_panel(s, full_dyads(c), indicators_for(c, {2000}, 10.0), f); }), ErrorKind::EmptyPanel);
}

// The generator's own panel is the bookkeeping oracle for the ingest join.
TEST(BuildPanel, ReingestedSyntheticWorldMatchesGenerator) {
    simlab::WorldParams wp;
    wp.n_countries = 8;
    wp.seed = 3;
    auto w = simlab::generate_world(wp);
    auto s = parse_stock_table(csv(simlab::stocks_csv(w.stocks)));
    auto d = parse_dyad_table(csv(simlab::dyads_csv(w.dyads)));
    auto i = parse_indicator_table(csv(simlab::indicators_csv(w.indicators)));
    PanelFilter f;
    f.min_population = 0.0;
    auto p = build_panel(s, d, i, f);
    ASSERT_EQ(p.size(), w.panel.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
        const auto& a = p.rows[k];
        const auto& b = w.panel.rows[k];
        EXPECT_EQ(a.origin, b.origin);
        EXPECT_EQ(a.destination, b.destination);
        EXPECT_EQ(a.year, b.year);
        EXPECT_EQ(a.stock, b.stock);
        for (const auto& col : numeric_panel_columns())
            EXPECT_NEAR(panel_value(a, col), panel_value(b, col), 1e-12 * (1 + std::abs(panel_value(b, col)))) << col;
    }
}

// Random spot checks that joined covariates equal their source values.
TEST(BuildPanel, JoinCompletenessSpotCheck) {
    simlab::WorldParams wp;
    wp.n_countries = 10;
    wp.seed = 11;
    auto w = simlab::generate_world(wp);
    PanelFilter f;
    auto p = build_panel(w.stocks, w.dyads, w.indicators, f);
    std::mt19937 rng(5);
    std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
    for (int t = 0; t < 50; ++t) {
        const auto& r = p.rows[pick(rng)];
        const auto* ind = w.indicators.find(r.destination, r.year);
        ASSERT_NE(ind, nullptr);
        EXPECT_DOUBLE_EQ(r.log_pop_d, std::log(ind->pop));
        EXPECT_DOUBLE_EQ(r.log_gdppc_d, std::log(*ind->gdp_pc_ppp));
        EXPECT_DOUBLE_EQ(r.log_land_d, std::log(*ind->land_km2));
        const DyadRow* dy = nullptr;
        for (const auto& x : w.dyads.rows)
            if (x.origin == r.origin && x.destination == r.destination) dy = &x;
        ASSERT_NE(dy, nullptr);
        EXPECT_DOUBLE_EQ(r.log_dist, std::log(dy->dist_km));
        EXPECT_EQ(r.contig, dy->contig);
        EXPECT_EQ(r.comlang, dy->comlang);
    }
}

TEST(PanelCsv, RoundTripAndDeterministicOrder) {
    simlab::WorldParams wp;
    wp.n_countries = 5;
    wp.seed = 9;
    auto w = simlab::generate_world(wp);
    auto text = panel_to_csv(w.panel);
    auto back = panel_from_csv(csv(text));
    EXPECT_EQ(panel_to_csv(back), text);
    for (std::size_t k = 1; k < back.size(); ++k) {
        const auto& a = back.rows[k - 1];
        const auto& b = back.rows[k];
        EXPECT_LT(std::tie(a.origin, a.destination, a.year), std::tie(b.origin, b.destination, b.year));
    }
}

TEST(PanelMeta, ConservationAndTimestampLast) {
    std::vector<std::string> c{"AAA", "BBB", "CCC"};
    StockTable s;
    s.rows.push_back({"AAA", "BBB", 2000, Skill::all, 5.0});
    s.rows.push_back({"CCC", "AAA", 2000, Skill::all, 5.0});
    PanelFilter f;
    f.years = {2000};
    auto ind = indicators_for(c, {2000});
    ind.rows[1].pop = 10.0;
    auto p = build_panel(s, full_dyads(c), ind, f);
    auto j = panel_meta_json(p, "2026-01-01T00:00:00Z");
    EXPECT_EQ(j["schema_version"], 1);
    EXPECT_EQ(j["rows_in"].get<std::size_t>(), j["rows_kept"].get<std::size_t>() + j["rows_excluded"].get<std::size_t>());
    EXPECT_EQ(std::prev(j.end()).key(), "generated_at");
}

TEST(Csv, QuotedFieldsBomAndCrlf) {
    auto t = csv("\xEF\xBB\xBF" "a,b\r\n\"x,1\",\"he said \"\"hi\"\"\"\r\n");
    ASSERT_EQ(t.header.size(), 2u);
    EXPECT_EQ(t.header[0], "a");
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_EQ(t.rows[0][0], "x,1");
    EXPECT_EQ(t.rows[0][1], "he said \"hi\"");
}

TEST(Csv, FormatDoubleRoundTrips) {
    for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.125, -2.5e17}) {
        auto s = io::format_double(v);
        EXPECT_EQ(*io::parse_double(s), v) << s;
    }
}
