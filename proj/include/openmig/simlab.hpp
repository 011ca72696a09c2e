#pragma once

#include "openmig/analysis.hpp"
#include "openmig/error.hpp"
#include "openmig/estimator.hpp"
#include "openmig/ingest.hpp"
#include "openmig/openness.hpp"

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace openmig::simlab {

struct Shock {
    std::string destination;
    std::vector<std::string> origins;
    double per_million = 200.0; // expected excess stock per million destination inhabitants
};

struct WorldParams {
    int n_countries = 20;
    std::vector<int> years{2000, 2010, 2020};
    // slopes in default_regressors() order:
    // log_pop_d, log_gdppc_d, log_dist, contig, comlang, comcol, coldepever, log_land_d
    std::vector<double> beta{0.6, 1.2, -1.0, 1.1, 1.0, 1.2, 0.8, 0.3};
    double level = -10.0; // common log-mean shift
    double origin_fe_sd = 1.0;
    double year_fe_sd = 0.3;
    double origin_year_fe_sd = 0.2;
    double log_pop_min = std::log(1.5e6);
    double log_pop_max = std::log(1.5e8);
    double log_gdppc_min = std::log(800.0);
    double log_gdppc_max = std::log(80000.0);
    double log_land_min = std::log(2.0e3);
    double log_land_max = std::log(5.0e6);
    double coord_box_km = 12000.0;
    double contig_km = 1500.0; // pairs closer than this are contiguous
    double p_comlang = 0.12;
    double p_comcol = 0.07;
    double p_coldepever = 0.04;
    double zero_inflation = 0.0; // probability that a dyad is a structural zero in every year
    double tertiary_share_min = 0.15;
    double tertiary_share_max = 0.45;
    bool skill_split = false;
    std::vector<Shock> shocks;
    std::uint64_t seed = 42;

    void validate() const {
        if (n_countries < 3) throw Error(ErrorKind::InvalidValue, "n_countries must be >= 3");
        if (n_countries > 26 * 26) throw Error(ErrorKind::InvalidValue, "n_countries must be <= 676");
        if (years.empty()) throw Error(ErrorKind::InvalidValue, "years must be nonempty");
        for (int y : years)
            if (!is_census_year(y)) throw Error(ErrorKind::InvalidValue, "years must be drawn from {2000,2010,2020}");
        if (beta.size() != default_regressors().size())
            throw Error(ErrorKind::InvalidValue, "beta needs one entry per default regressor");
        if (zero_inflation < 0.0 || zero_inflation >= 1.0)
            throw Error(ErrorKind::InvalidValue, "zero_inflation must lie in [0, 1)");
    }
};

struct TruthRecord {
    std::vector<std::string> regressors;
    std::vector<double> beta;
    double level = 0.0;
    std::map<std::string, double> origin_fe;
    std::map<std::string, double> year_fe;
    std::map<std::string, double> origin_year_fe;
    std::vector<double> mu;          // per panel row
    std::vector<double> log_shock;   // per panel row, 0 when unshocked
    std::vector<Shock> shocks;
    std::vector<bool> structural_zero; // per panel row
};

struct World {
    EstimationPanel panel;
    TruthRecord truth;
    StockTable stocks;
    DyadTable dyads;
    IndicatorTable indicators;
    ExternalTable external;
};

inline std::string country_code(int i) {
    std::string code = "X";
    code.push_back(static_cast<char>('A' + i / 26));
    code.push_back(static_cast<char>('A' + i % 26));
    return code;
}

namespace detail {

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                              std::uint64_t salt = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(b),
                      static_cast<std::uint32_t>(c),    static_cast<std::uint32_t>(salt)};
    return std::mt19937_64(seq);
}

} // namespace detail

/// Random openness shocks: each destination is shocked with probability
/// `share`, on 1..max_origins distinct origins.
inline std::vector<Shock> draw_shocks(int n_countries, std::uint64_t seed, double share = 1.0 / 3.0, int max_origins = 6,
                                      double per_million = 200.0) {
    std::vector<Shock> out;
    for (int d = 0; d < n_countries; ++d) {
        auto rng = detail::stream(seed, 8, static_cast<std::uint64_t>(d));
        if (!std::bernoulli_distribution(share)(rng)) continue;
        const int k = std::uniform_int_distribution<int>(1, std::min(max_origins, n_countries - 1))(rng);
        std::vector<int> others;
        for (int o = 0; o < n_countries; ++o)
            if (o != d) others.push_back(o);
        std::shuffle(others.begin(), others.end(), rng);
        others.resize(static_cast<std::size_t>(k));
        std::sort(others.begin(), others.end());
        Shock sh{country_code(d), {}, per_million};
        for (int o : others) sh.origins.push_back(country_code(o));
        out.push_back(std::move(sh));
    }
    return out;
}

/// Synthetic gravity world. Every random draw comes from a stream keyed by
/// (seed, entity), so changing one dyad's mean leaves every other draw intact.
inline World generate_world(const WorldParams& params) {
    params.validate();
    const int nc = params.n_countries;
    std::vector<int> years = params.years;
    std::sort(years.begin(), years.end());
    years.erase(std::unique(years.begin(), years.end()), years.end());

    World w;
    auto& truth = w.truth;
    truth.regressors = default_regressors();
    truth.beta = params.beta;
    truth.level = params.level;
    truth.shocks = params.shocks;

    std::vector<std::string> codes;
    for (int i = 0; i < nc; ++i) codes.push_back(country_code(i));

    // country attributes
    struct Country {
        double x = 0, y = 0, log_pop0 = 0, pop_growth = 0, log_gdp0 = 0, gdp_growth = 0, log_land = 0;
        double old0 = 0, old_growth = 0, wage_ratio = 0, tertiary_share = 0;
    };
    std::vector<Country> country(static_cast<std::size_t>(nc));
    for (int i = 0; i < nc; ++i) {
        auto rng = detail::stream(params.seed, 1, static_cast<std::uint64_t>(i));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::normal_distribution<double> n01(0.0, 1.0);
        auto& c = country[static_cast<std::size_t>(i)];
        c.x = u01(rng) * params.coord_box_km;
        c.y = u01(rng) * params.coord_box_km;
        c.log_pop0 = params.log_pop_min + u01(rng) * (params.log_pop_max - params.log_pop_min);
        c.pop_growth = 0.12 + 0.06 * n01(rng);
        c.log_gdp0 = params.log_gdppc_min + u01(rng) * (params.log_gdppc_max - params.log_gdppc_min);
        c.gdp_growth = 0.25 + 0.15 * n01(rng);
        c.log_land = params.log_land_min + u01(rng) * (params.log_land_max - params.log_land_min);
        c.old0 = 5.0 + 25.0 * u01(rng);
        c.old_growth = 1.5 + 1.5 * n01(rng);
        c.wage_ratio = 1.8 + 0.4 * u01(rng);
        c.tertiary_share = params.tertiary_share_min + u01(rng) * (params.tertiary_share_max - params.tertiary_share_min);
        truth.origin_fe[codes[static_cast<std::size_t>(i)]] = params.origin_fe_sd * n01(rng);
    }
    for (std::size_t t = 0; t < years.size(); ++t) {
        auto rng = detail::stream(params.seed, 2, static_cast<std::uint64_t>(years[t]));
        std::normal_distribution<double> n01(0.0, 1.0);
        truth.year_fe[std::to_string(years[t])] = params.year_fe_sd * n01(rng);
        for (int i = 0; i < nc; ++i) {
            auto r2 = detail::stream(params.seed, 3, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(years[t]));
            std::normal_distribution<double> m01(0.0, 1.0);
            truth.origin_year_fe[origin_year_key(codes[static_cast<std::size_t>(i)], years[t])] =
                params.origin_year_fe_sd * m01(r2);
        }
    }
    auto decade = [](int year) { return (year - 2000) / 10.0; };
    auto log_pop = [&](int i, int year) { return country[i].log_pop0 + country[i].pop_growth * decade(year); };
    auto log_gdp = [&](int i, int year) { return country[i].log_gdp0 + country[i].gdp_growth * decade(year); };

    // dyads (symmetric)
    struct Dyad {
        double dist = 0;
        int contig = 0, comlang = 0, comcol = 0, coldep = 0;
        bool structural_zero = false;
    };
    std::vector<Dyad> dyad(static_cast<std::size_t>(nc * nc));
    for (int a = 0; a < nc; ++a)
        for (int b = a + 1; b < nc; ++b) {
            auto rng = detail::stream(params.seed, 4, static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(b));
            std::bernoulli_distribution lang(params.p_comlang), col(params.p_comcol), dep(params.p_coldepever);
            Dyad d;
            const auto& ca = country[static_cast<std::size_t>(a)];
            const auto& cb = country[static_cast<std::size_t>(b)];
            d.dist = std::max(std::hypot(ca.x - cb.x, ca.y - cb.y), 5.0);
            d.contig = d.dist < params.contig_km ? 1 : 0;
            d.comlang = lang(rng);
            d.comcol = col(rng);
            d.coldep = dep(rng);
            dyad[static_cast<std::size_t>(a * nc + b)] = d;
            dyad[static_cast<std::size_t>(b * nc + a)] = d;
        }
    // structural zeros are directional
    for (int o = 0; o < nc; ++o)
        for (int d = 0; d < nc; ++d) {
            if (o == d) continue;
            auto rng = detail::stream(params.seed, 5, static_cast<std::uint64_t>(o), static_cast<std::uint64_t>(d));
            std::bernoulli_distribution z(params.zero_inflation);
            dyad[static_cast<std::size_t>(o * nc + d)].structural_zero = params.zero_inflation > 0 && z(rng);
        }

    std::map<std::pair<std::string, std::string>, double> shock_per_million;
    for (const auto& s : params.shocks)
        for (const auto& o : s.origins) shock_per_million[{o, s.destination}] += s.per_million;

    // tables
    for (int a = 0; a < nc; ++a)
        for (int b = 0; b < nc; ++b) {
            if (a == b) continue;
            const auto& d = dyad[static_cast<std::size_t>(a * nc + b)];
            w.dyads.rows.push_back({codes[static_cast<std::size_t>(a)], codes[static_cast<std::size_t>(b)], d.dist,
                                    d.contig, d.comlang, d.comcol, d.coldep});
        }
    for (int i = 0; i < nc; ++i)
        for (int year : years) {
            IndicatorRow r;
            const auto& c = country[static_cast<std::size_t>(i)];
            r.country = codes[static_cast<std::size_t>(i)];
            r.year = year;
            r.pop = std::round(std::exp(log_pop(i, year)));
            r.gdp_pc_ppp = std::exp(log_gdp(i, year));
            r.land_km2 = std::exp(c.log_land);
            r.old_dep_ratio = std::max(0.5, c.old0 + c.old_growth * decade(year));
            r.wage_proxy = c.wage_ratio * std::exp(log_gdp(i, year));
            r.region = "R" + std::to_string(i % 4 + 1);
            w.indicators.rows.push_back(std::move(r));
        }
    for (int i = 0; i < nc; ++i)
        for (int year : years) {
            auto rng = detail::stream(params.seed, 6, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(year));
            std::uniform_real_distribution<double> u01(0.0, 1.0);
            ExternalRow e;
            e.country = codes[static_cast<std::size_t>(i)];
            e.year = year;
            e.visa_do = std::floor(u01(rng) * nc);
            e.visa_od = std::floor(u01(rng) * nc);
            e.mai = 2.0 + 6.0 * u01(rng);
            e.mai_rank = std::floor(1.0 + u01(rng) * nc);
            e.mipex = 20.0 + 60.0 * u01(rng);
            w.external.rows.push_back(std::move(e));
        }

    // panel rows in canonical order (origin, destination, year)
    auto& panel = w.panel;
    panel.skill = Skill::all;
    panel.years = years;
    panel.min_population = 0.0;
    panel.input_digests = {{"generator_seed", std::to_string(params.seed)}};
    for (int o = 0; o < nc; ++o)
        for (int d = 0; d < nc; ++d) {
            if (o == d) continue;
            const auto& dy = dyad[static_cast<std::size_t>(o * nc + d)];
            for (int year : years) {
                const auto& oc = codes[static_cast<std::size_t>(o)];
                const auto& dc = codes[static_cast<std::size_t>(d)];
                const auto* ind = &w.indicators.rows[static_cast<std::size_t>(d) * years.size() +
                                                     static_cast<std::size_t>(std::find(years.begin(), years.end(), year) - years.begin())];
                PanelRow r;
                r.origin = oc;
                r.destination = dc;
                r.year = year;
                r.skill = Skill::all;
                r.pop_d = ind->pop;
                r.log_pop_d = std::log(ind->pop);
                r.log_gdppc_d = std::log(*ind->gdp_pc_ppp);
                r.log_dist = std::log(dy.dist);
                r.contig = dy.contig;
                r.comlang = dy.comlang;
                r.comcol = dy.comcol;
                r.coldepever = dy.coldep;
                r.log_land_d = std::log(*ind->land_km2);
                r.origin_fe_key = oc;
                r.origin_year_fe_key = origin_year_key(oc, year);
                r.year_fe_key = std::to_string(year);

                double eta = params.level + truth.origin_fe[oc] + truth.year_fe[r.year_fe_key] +
                             truth.origin_year_fe[r.origin_year_fe_key];
                const auto& names = truth.regressors;
                for (std::size_t j = 0; j < names.size(); ++j) eta += params.beta[j] * panel_value(r, names[j]);
                double mu = std::exp(eta);
                double log_shock = 0.0;
                if (auto it = shock_per_million.find({oc, dc}); it != shock_per_million.end()) {
                    log_shock = std::log1p(it->second * 1e-6 * r.pop_d / mu);
                    mu *= std::exp(log_shock);
                }
                const double share = country[static_cast<std::size_t>(d)].tertiary_share;
                auto rng = detail::stream(params.seed, 7, static_cast<std::uint64_t>(o), static_cast<std::uint64_t>(d),
                                          static_cast<std::uint64_t>(year));
                double stock = 0.0, tertiary = 0.0, nontertiary = 0.0;
                if (!dy.structural_zero) {
                    if (params.skill_split) {
                        std::poisson_distribution<long long> pt(mu * share), pn(mu * (1.0 - share));
                        tertiary = static_cast<double>(pt(rng));
                        nontertiary = static_cast<double>(pn(rng));
                        stock = tertiary + nontertiary;
                    } else {
                        std::poisson_distribution<long long> pa(mu);
                        stock = static_cast<double>(pa(rng));
                    }
                }
                r.stock = stock;
                truth.mu.push_back(mu);
                truth.log_shock.push_back(log_shock);
                truth.structural_zero.push_back(dy.structural_zero);
                // the UN matrix lists positive cells only; zeros are densified on ingest
                if (stock > 0) {
                    w.stocks.rows.push_back({oc, dc, year, Skill::all, stock});
                    if (params.skill_split) {
                        if (tertiary > 0) w.stocks.rows.push_back({oc, dc, year, Skill::tertiary, tertiary});
                        if (nontertiary > 0) w.stocks.rows.push_back({oc, dc, year, Skill::nontertiary, nontertiary});
                    }
                } else {
                    r.imputed_zero = true;
                    panel.imputed_zeros += 1;
                }
                panel.rows.push_back(std::move(r));
            }
        }
    panel.rows_in = panel.rows.size();
    return w;
}

inline nlohmann::ordered_json truth_to_json(const TruthRecord& t, const EstimationPanel& panel) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    nlohmann::ordered_json beta;
    for (std::size_t k = 0; k < t.regressors.size(); ++k) beta[t.regressors[k]] = t.beta[k];
    j["beta"] = beta;
    j["level"] = t.level;
    j["origin_fe"] = t.origin_fe;
    j["year_fe"] = t.year_fe;
    j["origin_year_fe"] = t.origin_year_fe;
    auto shocks = nlohmann::ordered_json::array();
    for (const auto& s : t.shocks)
        shocks.push_back({{"destination", s.destination}, {"origins", s.origins}, {"per_million", s.per_million}});
    j["shocks"] = shocks;
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < panel.rows.size(); ++i) {
        const auto& r = panel.rows[i];
        rows.push_back({{"origin", r.origin},
                        {"destination", r.destination},
                        {"year", r.year},
                        {"mu", t.mu[i]},
                        {"log_shock", t.log_shock[i]},
                        {"structural_zero", static_cast<bool>(t.structural_zero[i])}});
    }
    j["rows"] = rows;
    return j;
}

inline std::string stocks_csv(const StockTable& t) {
    std::string out = "origin,destination,year,skill,stock\n";
    for (const auto& r : t.rows)
        out += r.origin + ',' + r.destination + ',' + std::to_string(r.year) + ',' + std::string(to_string(r.skill)) + ',' +
               io::format_double(r.stock) + '\n';
    return out;
}

inline std::string dyads_csv(const DyadTable& t) {
    std::string out = "origin,destination,dist_km,contig,comlang,comcol,coldepever\n";
    for (const auto& r : t.rows)
        out += r.origin + ',' + r.destination + ',' + io::format_double(r.dist_km) + ',' + std::to_string(r.contig) + ',' +
               std::to_string(r.comlang) + ',' + std::to_string(r.comcol) + ',' + std::to_string(r.coldepever) + '\n';
    return out;
}

inline std::string indicators_csv(const IndicatorTable& t) {
    std::string out = "country,year,pop,gdp_pc_ppp,land_km2,old_dep_ratio,wage_proxy,region\n";
    for (const auto& r : t.rows)
        out += r.country + ',' + std::to_string(r.year) + ',' + io::format_double(r.pop) + ',' +
               io::format_optional(r.gdp_pc_ppp) + ',' + io::format_optional(r.land_km2) + ',' +
               io::format_optional(r.old_dep_ratio) + ',' + io::format_optional(r.wage_proxy) + ',' +
               io::csv_escape(r.region) + '\n';
    return out;
}

// ---------------------------------------------------------------- dense oracle

inline constexpr std::size_t kDenseColumnLimit = 500;

/// Full-Newton PPML with every fixed-effect level as an explicit dummy column.
/// Shares no estimation code with fit_ppml: sample cleaning, rank reduction,
/// the Newton solve and the sandwich are all written out densely here.
inline FitResult dense_ppml_oracle(const EstimationPanel& panel, const ModelSpec& spec) {
    spec.validate();
    const auto names_all = spec.effective_regressors();

    // FE level columns before any reduction
    std::size_t fe_levels = 0;
    for (const auto& d : spec.fe_dims) {
        std::set<std::string> levels;
        for (std::size_t i = 0; i < panel.size(); ++i) levels.insert(panel_key(panel.rows[i], d, i));
        fe_levels += levels.size();
    }
    const std::size_t total_cols = names_all.size() + fe_levels + (spec.include_intercept ? 1 : 0);
    if (total_cols > kDenseColumnLimit)
        throw Error(ErrorKind::TooLargeForDense,
                    std::to_string(total_cols) + " dense columns exceed the limit of " + std::to_string(kDenseColumnLimit));

    // sample: drop FE levels with zero outcome total or a single member until stable
    std::vector<bool> keep(panel.size(), true);
    for (bool changed = true; changed;) {
        changed = false;
        for (const auto& d : spec.fe_dims) {
            std::map<std::string, std::pair<double, int>> agg;
            for (std::size_t i = 0; i < panel.size(); ++i)
                if (keep[i]) {
                    auto& a = agg[panel_key(panel.rows[i], d, i)];
                    a.first += panel_value(panel.rows[i], spec.outcome);
                    a.second += 1;
                }
            for (std::size_t i = 0; i < panel.size(); ++i) {
                if (!keep[i]) continue;
                const auto& a = agg[panel_key(panel.rows[i], d, i)];
                if (a.first <= 0.0 || a.second == 1) {
                    keep[i] = false;
                    changed = true;
                }
            }
        }
    }
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < panel.size(); ++i)
        if (keep[i]) rows.push_back(i);
    const auto n = static_cast<Eigen::Index>(rows.size());
    if (n == 0) throw Error(ErrorKind::EmptyAfterSeparation, "dense oracle: no rows left");

    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = panel_value(panel.rows[rows[static_cast<std::size_t>(i)]], spec.outcome);

    // dummy block
    std::vector<Eigen::VectorXd> dummies;
    for (const auto& d : spec.fe_dims) {
        std::map<std::string, Eigen::Index> level;
        for (Eigen::Index i = 0; i < n; ++i) level.emplace(panel_key(panel.rows[rows[static_cast<std::size_t>(i)]], d, rows[static_cast<std::size_t>(i)]), 0);
        Eigen::Index next = 0;
        for (auto& [k, c] : level) c = next++;
        Eigen::MatrixXd block = Eigen::MatrixXd::Zero(n, next);
        for (Eigen::Index i = 0; i < n; ++i)
            block(i, level.at(panel_key(panel.rows[rows[static_cast<std::size_t>(i)]], d, rows[static_cast<std::size_t>(i)]))) = 1.0;
        for (Eigen::Index c = 0; c < next; ++c) dummies.push_back(block.col(c));
    }
    if (spec.fe_dims.empty() && spec.include_intercept) dummies.push_back(Eigen::VectorXd::Ones(n));

    // basis of the dummy span via pivoted QR
    Eigen::MatrixXd fe_basis(n, 0);
    if (!dummies.empty()) {
        Eigen::MatrixXd all(n, static_cast<Eigen::Index>(dummies.size()));
        for (std::size_t c = 0; c < dummies.size(); ++c) all.col(static_cast<Eigen::Index>(c)) = dummies[c];
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(all);
        qr.setThreshold(1e-10);
        std::vector<Eigen::Index> chosen;
        for (Eigen::Index k = 0; k < qr.rank(); ++k) chosen.push_back(qr.colsPermutation().indices()[k]);
        std::sort(chosen.begin(), chosen.end());
        fe_basis.resize(n, static_cast<Eigen::Index>(chosen.size()));
        for (std::size_t k = 0; k < chosen.size(); ++k) fe_basis.col(static_cast<Eigen::Index>(k)) = all.col(chosen[k]);
    }

    // regressors that add rank, in order
    std::vector<std::string> names;
    std::vector<Eigen::VectorXd> xcols;
    {
        Eigen::MatrixXd current = fe_basis;
        for (const auto& name : names_all) {
            Eigen::VectorXd col(n);
            for (Eigen::Index i = 0; i < n; ++i) col[i] = panel_value(panel.rows[rows[static_cast<std::size_t>(i)]], name);
            Eigen::MatrixXd trial(n, current.cols() + 1);
            trial << current, col;
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(trial);
            qr.setThreshold(1e-9);
            if (qr.rank() == trial.cols()) {
                current = trial;
                names.push_back(name);
                xcols.push_back(col);
            }
        }
    }
    const auto p = static_cast<Eigen::Index>(names.size());
    const auto m = fe_basis.cols();
    Eigen::MatrixXd design(n, p + m);
    for (Eigen::Index j = 0; j < p; ++j) design.col(j) = xcols[static_cast<std::size_t>(j)];
    design.rightCols(m) = fe_basis;

    auto deviance = [&](const Eigen::VectorXd& mu) {
        double dev = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) dev += (y[i] > 0 ? y[i] * std::log(y[i] / mu[i]) : 0.0) - (y[i] - mu[i]);
        return 2.0 * dev;
    };

    // start from least squares on log((y + ybar) / 2), then Newton with step halving
    const double ybar = y.mean();
    Eigen::VectorXd theta = design.colPivHouseholderQr().solve(((y.array() + ybar) * 0.5).log().matrix());
    Eigen::VectorXd mu = (design * theta).array().exp().matrix();
    double dev = deviance(mu);
    FitResult fit;
    fit.spec = spec;
    bool converged = false;
    for (int it = 1; it <= 200; ++it) {
        Eigen::VectorXd grad = design.transpose() * (y - mu);
        Eigen::MatrixXd hess = design.transpose() * mu.asDiagonal() * design;
        Eigen::VectorXd step = hess.ldlt().solve(grad);
        double t = 1.0;
        Eigen::VectorXd theta_new = theta + step;
        Eigen::VectorXd mu_new = (design * theta_new).array().exp().matrix();
        double dev_new = deviance(mu_new);
        while (!(dev_new <= dev * (1.0 + 1e-15) + 1e-300) && t > 1e-12) {
            t *= 0.5;
            theta_new = theta + t * step;
            mu_new = (design * theta_new).array().exp().matrix();
            dev_new = deviance(mu_new);
        }
        const double move = (t * step).cwiseAbs().maxCoeff();
        theta = theta_new;
        mu = mu_new;
        dev = dev_new;
        fit.iterations = it;
        fit.iteration_log.push_back({it, dev, 0.0, 0});
        if (move < 1e-13 * (1.0 + theta.cwiseAbs().maxCoeff())) {
            converged = true;
            break;
        }
    }
    if (!converged) throw Error(ErrorKind::NonConvergence, "dense oracle Newton iterations did not converge");

    // sandwich on the full dense design
    std::map<std::string, int> cluster_code;
    std::vector<int> cluster(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        cluster_code.emplace(panel_key(panel.rows[rows[static_cast<std::size_t>(i)]], spec.cluster, rows[static_cast<std::size_t>(i)]), 0);
    int g = 0;
    for (auto& [k, c] : cluster_code) c = g++;
    for (Eigen::Index i = 0; i < n; ++i)
        cluster[static_cast<std::size_t>(i)] =
            cluster_code.at(panel_key(panel.rows[rows[static_cast<std::size_t>(i)]], spec.cluster, rows[static_cast<std::size_t>(i)]));
    Eigen::MatrixXd hess = design.transpose() * mu.asDiagonal() * design;
    Eigen::MatrixXd hinv = hess.inverse();
    Eigen::MatrixXd score_sum = Eigen::MatrixXd::Zero(p + m, g);
    for (Eigen::Index i = 0; i < n; ++i) score_sum.col(cluster[static_cast<std::size_t>(i)]) += design.row(i).transpose() * (y[i] - mu[i]);
    Eigen::MatrixXd meat = (static_cast<double>(g) / (g - 1.0)) * score_sum * score_sum.transpose();
    Eigen::MatrixXd vfull = hinv * meat * hinv;

    // reported parameters: slopes, then the mu-weighted mean of the dummy part
    const Eigen::Index q = p + (spec.include_intercept ? 1 : 0);
    Eigen::MatrixXd map = Eigen::MatrixXd::Zero(q, p + m);
    map.topLeftCorner(p, p).setIdentity();
    if (spec.include_intercept) map.row(p).tail(m) = (mu.transpose() * fe_basis) / mu.sum();
    fit.coef = map * theta;
    fit.vcov = map * vfull * map.transpose();
    fit.vcov = 0.5 * (fit.vcov + fit.vcov.transpose());
    fit.se = fit.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
    fit.coef_names = names;
    if (spec.include_intercept) fit.coef_names.push_back(kInterceptName);
    for (const auto& nm : names_all)
        if (std::find(names.begin(), names.end(), nm) == names.end()) fit.omitted_regressors.push_back(nm);

    fit.kept = keep;
    fit.kept_rows = rows;
    fit.y = y;
    fit.fitted = mu;
    fit.n_obs = static_cast<std::size_t>(n);
    fit.n_clusters = static_cast<std::size_t>(g);
    fit.converged = true;
    fit.deviance = dev;
    double ll = 0.0, ll0 = 0.0, dev0 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        ll += (y[i] > 0 ? y[i] * std::log(mu[i]) : 0.0) - mu[i] - std::lgamma(y[i] + 1.0);
        ll0 += (y[i] > 0 ? y[i] * std::log(ybar) : 0.0) - ybar - std::lgamma(y[i] + 1.0);
        dev0 += (y[i] > 0 ? y[i] * std::log(y[i] / ybar) : 0.0) - (y[i] - ybar);
    }
    fit.loglik = ll;
    fit.null_loglik = ll0;
    fit.null_deviance = 2.0 * dev0;
    auto st = fit_statistics(fit);
    fit.pseudo_r2 = st.pseudo_r2;
    fit.wald_chi2 = st.wald_chi2;
    fit.wald_df = st.wald_df;
    return fit;
}

// ---------------------------------------------------------------- recount oracle

/// Naive recount of per-capita residuals above the cutoff, keyed by
/// (destination, year); every destination-year of the matrix's universe is present.
/// The threshold test runs in 256-bit floating point, where the products of
/// two doubles are exact.
inline std::map<std::pair<std::string, int>, int> recount_diversity_oracle(const ResidualMatrix& rm, double cutoff_per_million) {
    using exact = boost::multiprecision::number<boost::multiprecision::cpp_bin_float<256>>;
    std::map<std::pair<std::string, int>, int> counts;
    for (const auto& d : rm.destinations)
        for (int y : rm.years) {
            int c = 0;
            for (std::size_t k = 0; k < rm.entries.size(); ++k) {
                const auto& e = rm.entries[k];
                if (e.destination != d || e.year != y) continue;
                if (exact(e.residual) * exact(1000000) > exact(cutoff_per_million) * exact(e.pop_d)) c += 1;
            }
            counts[{d, y}] = c;
        }
    for (const auto& e : rm.entries) counts.emplace(std::make_pair(e.destination, e.year), 0);
    return counts;
}

} // namespace openmig::simlab
