#pragma once

#include "openmig/error.hpp"
#include "openmig/ingest.hpp"
#include "openmig/io.hpp"
#include "openmig/openness.hpp"
#include "openmig/stats.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace openmig {

// ---------------------------------------------------------------- external indices

struct ExternalRow {
    std::string country;
    int year = 0;
    std::optional<double> visa_do;
    std::optional<double> visa_od;
    std::optional<double> mai;
    std::optional<double> mai_rank;
    std::optional<double> mipex;
};

struct ExternalTable {
    std::vector<ExternalRow> rows;
    std::string digest;
};

inline ExternalTable parse_external_table(const io::CsvTable& t) {
    const auto c_country = t.column("country");
    const auto c_year = t.column("year");
    const auto c_vdo = t.column("visa_do");
    const auto c_vod = t.column("visa_od");
    const auto c_mai = t.column("mai");
    const auto c_rank = t.column("mai_rank");
    const auto c_mipex = t.column("mipex");
    ExternalTable out;
    std::set<std::pair<std::string, int>> seen;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        ExternalRow r;
        r.country = detail::iso3_cell(t, i, c_country);
        r.year = detail::year_cell(t, i, c_year);
        r.visa_do = detail::optional_number_cell(t, i, c_vdo);
        r.visa_od = detail::optional_number_cell(t, i, c_vod);
        r.mai = detail::optional_number_cell(t, i, c_mai);
        r.mai_rank = detail::optional_number_cell(t, i, c_rank);
        r.mipex = detail::optional_number_cell(t, i, c_mipex);
        if (!seen.emplace(r.country, r.year).second)
            throw Error(ErrorKind::DuplicateKey, "duplicate (" + r.country + "," + std::to_string(r.year) + ")", i);
        out.rows.push_back(std::move(r));
    }
    return out;
}

inline ExternalTable load_external_table(const std::filesystem::path& path) {
    auto digest = detail::read_digest(path);
    auto table = parse_external_table(io::read_csv(path));
    table.digest = std::move(digest);
    return table;
}

inline std::string external_csv(const ExternalTable& t) {
    std::string out = "country,year,visa_do,visa_od,mai,mai_rank,mipex\n";
    for (const auto& r : t.rows)
        out += r.country + ',' + std::to_string(r.year) + ',' + io::format_optional(r.visa_do) + ',' +
               io::format_optional(r.visa_od) + ',' + io::format_optional(r.mai) + ',' + io::format_optional(r.mai_rank) +
               ',' + io::format_optional(r.mipex) + '\n';
    return out;
}

// ---------------------------------------------------------------- measure panel

struct MeasureRow {
    std::string destination;
    int year = 0;
    std::optional<double> diversity;
    std::optional<double> scale_all;
    std::optional<double> scale_excl_contig;
    std::optional<double> visa_do;
    std::optional<double> visa_od;
    std::optional<double> mai;
    std::optional<double> mai_rank;
    std::optional<double> mipex;

    std::optional<double> value(std::string_view name) const {
        if (name == "diversity") return diversity;
        if (name == "scale_all") return scale_all;
        if (name == "scale_excl_contig") return scale_excl_contig;
        if (name == "visa_do") return visa_do;
        if (name == "visa_od") return visa_od;
        if (name == "mai") return mai;
        if (name == "mai_rank") return mai_rank;
        if (name == "mipex") return mipex;
        throw Error(ErrorKind::UnknownColumn, "no measure column '" + std::string(name) + "'");
    }
};

struct MeasurePanel {
    std::vector<MeasureRow> rows;
};

inline const std::vector<std::string>& measure_columns() {
    static const std::vector<std::string> names{"diversity", "scale_all", "scale_excl_contig", "visa_do",
                                                "visa_od",   "mai_rank",  "mai",               "mipex"};
    return names;
}

/// One row per destination-year of `records` (a single skill and cutoff),
/// joined with external indices on (country, year).
inline MeasurePanel build_measure_panel(const std::vector<OpennessRecord>& records, const ExternalTable& external) {
    std::map<std::pair<std::string, int>, const ExternalRow*> ext;
    for (const auto& r : external.rows) ext[{r.country, r.year}] = &r;
    std::set<std::pair<std::string, int>> seen;
    MeasurePanel panel;
    for (const auto& r : records) {
        if (!seen.emplace(r.destination, r.year).second)
            throw Error(ErrorKind::DuplicateKey, "records hold more than one row for " + r.destination + " " +
                                                     std::to_string(r.year));
        MeasureRow m;
        m.destination = r.destination;
        m.year = r.year;
        if (r.diversity) m.diversity = static_cast<double>(*r.diversity);
        m.scale_all = r.scale_all;
        m.scale_excl_contig = r.scale_excl_contig;
        if (auto it = ext.find({r.destination, r.year}); it != ext.end()) {
            m.visa_do = it->second->visa_do;
            m.visa_od = it->second->visa_od;
            m.mai = it->second->mai;
            m.mai_rank = it->second->mai_rank;
            m.mipex = it->second->mipex;
        }
        panel.rows.push_back(std::move(m));
    }
    return panel;
}

struct CorrelationEntry {
    std::string var_a;
    std::string var_b;
    double r = 0.0;
    std::size_t n = 0;
    double p = 0.0;
    bool significant_5pct = false;
};

struct CorrelationMatrix {
    std::vector<std::string> names;
    Eigen::MatrixXd r;
    Eigen::MatrixXi n;
    std::vector<CorrelationEntry> entries; // lower triangle incl. diagonal, row-major
};

/// Pairwise-complete Pearson correlations with 5% two-sided significance.
inline CorrelationMatrix pearson_correlations(const MeasurePanel& panel, const std::vector<std::string>& columns) {
    if (columns.size() < 2) throw Error(ErrorKind::InsufficientData, "need at least two columns");
    const auto k = static_cast<Eigen::Index>(columns.size());
    CorrelationMatrix cm;
    cm.names = columns;
    cm.r = Eigen::MatrixXd::Identity(k, k);
    cm.n = Eigen::MatrixXi::Zero(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
        for (Eigen::Index b = 0; b <= a; ++b) {
            std::vector<double> xa, xb;
            for (const auto& row : panel.rows) {
                auto va = row.value(columns[static_cast<std::size_t>(a)]);
                auto vb = row.value(columns[static_cast<std::size_t>(b)]);
                if (va && vb) {
                    xa.push_back(*va);
                    xb.push_back(*vb);
                }
            }
            const auto n = xa.size();
            if (n < 3)
                throw Error(ErrorKind::InsufficientData, "pair (" + columns[static_cast<std::size_t>(a)] + ", " +
                                                             columns[static_cast<std::size_t>(b)] + ") has " +
                                                             std::to_string(n) + " complete observations");
            double r = a == b ? 1.0 : stats::pearson(xa, xb);
            cm.r(a, b) = cm.r(b, a) = r;
            cm.n(a, b) = cm.n(b, a) = static_cast<int>(n);
            const double p = a == b ? 0.0 : stats::correlation_p_value(r, n);
            cm.entries.push_back({columns[static_cast<std::size_t>(a)], columns[static_cast<std::size_t>(b)], r, n, p,
                                  p < 0.05});
        }
    }
    return cm;
}

inline std::string correlations_csv(const CorrelationMatrix& cm) {
    std::string out = "var_a,var_b,r,n,significant_5pct\n";
    for (const auto& e : cm.entries)
        out += e.var_a + ',' + e.var_b + ',' + io::format_double(e.r) + ',' + std::to_string(e.n) + ',' +
               (e.significant_5pct ? "1" : "0") + '\n';
    return out;
}

// ---------------------------------------------------------------- first differences

struct FdRow {
    std::string destination;
    int year_from = 0;
    int year_to = 0;
    std::optional<double> d_old;
    std::optional<double> d_lnw;
    double d_open = 0.0;
    double open_lag = 0.0;
    std::optional<double> old_lag;
    std::optional<double> lnw_lag;
    std::optional<double> lngdppc_lag;
    double dummy_2020 = 0.0;

    std::optional<double> value(std::string_view name) const {
        if (name == "d_old") return d_old;
        if (name == "d_lnw") return d_lnw;
        if (name == "d_open") return d_open;
        if (name == "open_lag") return open_lag;
        if (name == "old_lag") return old_lag;
        if (name == "lnw_lag") return lnw_lag;
        if (name == "lngdppc_lag") return lngdppc_lag;
        if (name == "dummy_2020") return dummy_2020;
        throw Error(ErrorKind::UnknownColumn, "no first-difference column '" + std::string(name) + "'");
    }

    std::string period() const { return std::to_string(year_from) + "-" + std::to_string(year_to); }
};

struct FdDataset {
    std::vector<FdRow> rows;
    std::size_t n_aging = 0; // listwise complete for the aging equation
    std::size_t n_wage = 0;  // listwise complete for the wage equation
    bool empty() const { return rows.empty(); }
};

inline const std::vector<std::string>& aging_variables() {
    static const std::vector<std::string> v{"d_old", "d_open", "open_lag", "old_lag", "lngdppc_lag", "dummy_2020"};
    return v;
}

inline const std::vector<std::string>& wage_variables() {
    static const std::vector<std::string> v{"d_lnw", "d_open", "open_lag", "lnw_lag", "old_lag", "dummy_2020"};
    return v;
}

inline bool row_complete(const FdRow& r, const std::vector<std::string>& vars) {
    for (const auto& v : vars)
        if (!r.value(v)) return false;
    return true;
}

/// Ten-year differences of indicators and diversity; a row needs openness at
/// both ends of its period.
inline FdDataset build_fd_dataset(const IndicatorTable& indicators, const std::vector<OpennessRecord>& records) {
    std::map<std::pair<std::string, int>, int> open;
    for (const auto& r : records)
        if (r.diversity) open[{r.destination, r.year}] = *r.diversity;
    std::map<std::pair<std::string, int>, const IndicatorRow*> ind;
    for (const auto& r : indicators.rows) ind[{r.country, r.year}] = &r;

    FdDataset fd;
    for (const auto& [key, open_to] : open) {
        const auto& [dest, year] = key;
        auto from = open.find({dest, year - 10});
        if (from == open.end()) continue;
        FdRow row;
        row.destination = dest;
        row.year_from = year - 10;
        row.year_to = year;
        row.d_open = open_to - from->second;
        row.open_lag = from->second;
        row.dummy_2020 = year == 2020 ? 1.0 : 0.0;
        auto it0 = ind.find({dest, year - 10});
        auto it1 = ind.find({dest, year});
        const IndicatorRow* i0 = it0 == ind.end() ? nullptr : it0->second;
        const IndicatorRow* i1 = it1 == ind.end() ? nullptr : it1->second;
        if (i0) {
            row.old_lag = i0->old_dep_ratio;
            if (i0->wage_proxy) row.lnw_lag = std::log(*i0->wage_proxy);
            if (i0->gdp_pc_ppp) row.lngdppc_lag = std::log(*i0->gdp_pc_ppp);
        }
        if (i0 && i1) {
            if (i0->old_dep_ratio && i1->old_dep_ratio) row.d_old = *i1->old_dep_ratio - *i0->old_dep_ratio;
            if (i0->wage_proxy && i1->wage_proxy) row.d_lnw = std::log(*i1->wage_proxy) - std::log(*i0->wage_proxy);
        }
        fd.rows.push_back(std::move(row));
    }
    for (const auto& r : fd.rows) {
        fd.n_aging += row_complete(r, aging_variables());
        fd.n_wage += row_complete(r, wage_variables());
    }
    return fd;
}

// ---------------------------------------------------------------- OLS with HC1

struct Coefficient {
    std::string name;
    double estimate = 0.0;
    double se = 0.0;
    double t = 0.0;
    double p = 0.0;
};

struct RegressionResult {
    std::string outcome;
    std::vector<Coefficient> coefficients; // regressors in order, then "_cons"
    Eigen::MatrixXd vcov;
    std::size_t n_obs = 0;
    double r2 = 0.0;
    double adj_r2 = 0.0;
    bool period_dummies = false;

    const Coefficient* find(std::string_view name) const {
        for (const auto& c : coefficients)
            if (c.name == name) return &c;
        return nullptr;
    }
};

/// Least squares with a constant on raw arrays; HC1 covariance
/// n/(n-k) (X'X)^-1 X' diag(e^2) X (X'X)^-1.
inline RegressionResult ols_hc1(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, const std::vector<std::string>& names,
                                const std::string& outcome = "y") {
    const Eigen::Index n = y.size();
    const Eigen::Index k = x.cols() + 1;
    if (n <= k) throw Error(ErrorKind::InsufficientData, "need more observations than coefficients");
    Eigen::MatrixXd xc(n, k);
    xc.leftCols(k - 1) = x;
    xc.col(k - 1).setOnes();

    // name the first column that adds no rank, in order (constant first)
    {
        Eigen::MatrixXd ordered(n, k);
        ordered.col(0).setOnes();
        ordered.rightCols(k - 1) = x;
        for (Eigen::Index j = 1; j <= k; ++j) {
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(ordered.leftCols(j));
            qr.setThreshold(1e-10);
            if (qr.rank() < j)
                throw Error(ErrorKind::RankDeficient, "column '" + (j == 1 ? std::string(kInterceptName) : names[static_cast<std::size_t>(j - 2)]) +
                                                          "' is collinear with earlier columns");
        }
    }

    Eigen::HouseholderQR<Eigen::MatrixXd> qr(xc);
    Eigen::VectorXd b = qr.solve(y);
    Eigen::VectorXd e = y - xc * b;
    Eigen::MatrixXd r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    Eigen::MatrixXd rinv = r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(k, k));
    Eigen::MatrixXd xtx_inv = rinv * rinv.transpose();
    Eigen::MatrixXd meat = xc.transpose() * e.array().square().matrix().asDiagonal() * xc;
    Eigen::MatrixXd v = (static_cast<double>(n) / static_cast<double>(n - k)) * (xtx_inv * meat * xtx_inv);
    v = 0.5 * (v + v.transpose());

    RegressionResult res;
    res.outcome = outcome;
    res.vcov = v;
    res.n_obs = static_cast<std::size_t>(n);
    const double ssr = e.squaredNorm();
    const double sst = (y.array() - y.mean()).square().sum();
    res.r2 = sst > 0 ? 1.0 - ssr / sst : 1.0;
    res.adj_r2 = 1.0 - (1.0 - res.r2) * static_cast<double>(n - 1) / static_cast<double>(n - k);
    const double df = static_cast<double>(n - k);
    for (Eigen::Index j = 0; j < k; ++j) {
        Coefficient c;
        c.name = j + 1 < k ? names[static_cast<std::size_t>(j)] : kInterceptName;
        c.estimate = b[j];
        c.se = std::sqrt(std::max(v(j, j), 0.0));
        c.t = c.se > 0 ? c.estimate / c.se : (c.estimate == 0 ? 0.0 : std::copysign(INFINITY, c.estimate));
        c.p = stats::student_t_two_sided_p(c.t, df);
        res.coefficients.push_back(std::move(c));
    }
    return res;
}

/// OLS of `outcome` on `regressors` (plus constant) over the listwise-complete rows.
inline RegressionResult ols_hc_robust(const std::vector<FdRow>& rows, const std::string& outcome,
                                      const std::vector<std::string>& regressors) {
    std::vector<std::string> vars{outcome};
    vars.insert(vars.end(), regressors.begin(), regressors.end());
    std::vector<const FdRow*> use;
    for (const auto& r : rows)
        if (row_complete(r, vars)) use.push_back(&r);
    const auto n = static_cast<Eigen::Index>(use.size());
    Eigen::VectorXd y(n);
    Eigen::MatrixXd x(n, static_cast<Eigen::Index>(regressors.size()));
    for (Eigen::Index i = 0; i < n; ++i) {
        y[i] = *use[static_cast<std::size_t>(i)]->value(outcome);
        for (std::size_t j = 0; j < regressors.size(); ++j)
            x(i, static_cast<Eigen::Index>(j)) = *use[static_cast<std::size_t>(i)]->value(regressors[j]);
    }
    auto res = ols_hc1(y, x, regressors, outcome);
    res.period_dummies = std::find(regressors.begin(), regressors.end(), "dummy_2020") != regressors.end();
    return res;
}

struct NestedRegressions {
    std::string label;   // "aging" or "wages"
    std::string outcome;
    std::vector<RegressionResult> columns; // controls; + open_lag; + d_open
};

/// Three nested specifications on a common listwise-complete sample.
inline NestedRegressions nested_regressions(const FdDataset& fd, const std::string& label) {
    const bool aging = label == "aging";
    const auto& vars = aging ? aging_variables() : wage_variables();
    std::vector<FdRow> sample;
    std::set<double> periods;
    for (const auto& r : fd.rows)
        if (row_complete(r, vars)) {
            sample.push_back(r);
            periods.insert(r.dummy_2020);
        }
    std::vector<std::string> controls = aging ? std::vector<std::string>{"old_lag", "lngdppc_lag"}
                                              : std::vector<std::string>{"lnw_lag", "old_lag"};
    if (periods.size() > 1) controls.push_back("dummy_2020");

    NestedRegressions out;
    out.label = label;
    out.outcome = aging ? "d_old" : "d_lnw";
    std::vector<std::string> c1 = controls;
    std::vector<std::string> c2{"open_lag"};
    c2.insert(c2.end(), controls.begin(), controls.end());
    std::vector<std::string> c3{"d_open", "open_lag"};
    c3.insert(c3.end(), controls.begin(), controls.end());
    for (const auto& spec : {c1, c2, c3}) out.columns.push_back(ols_hc_robust(sample, out.outcome, spec));
    return out;
}

inline nlohmann::ordered_json regression_to_json(const RegressionResult& r) {
    nlohmann::ordered_json j;
    j["outcome"] = r.outcome;
    auto table = nlohmann::ordered_json::array();
    for (const auto& c : r.coefficients)
        table.push_back({{"name", c.name},
                         {"estimate", c.estimate},
                         {"robust_se", c.se},
                         {"t", c.t},
                         {"p", c.p},
                         {"stars", stats::significance_stars(c.p)}});
    j["coefficients"] = table;
    j["n_obs"] = r.n_obs;
    j["r2"] = r.r2;
    j["adj_r2"] = r.adj_r2;
    j["period_dummies"] = r.period_dummies;
    return j;
}

inline nlohmann::ordered_json regressions_json(const std::vector<NestedRegressions>& models, const FdDataset& fd) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["se_type"] = "HC1";
    j["fd_rows"] = fd.rows.size();
    j["n_aging"] = fd.n_aging;
    j["n_wage"] = fd.n_wage;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& m : models) {
        nlohmann::ordered_json mj;
        mj["label"] = m.label;
        mj["outcome"] = m.outcome;
        auto cols = nlohmann::ordered_json::array();
        for (const auto& c : m.columns) cols.push_back(regression_to_json(c));
        mj["columns"] = cols;
        arr.push_back(mj);
    }
    j["models"] = arr;
    return j;
}

} // namespace openmig
