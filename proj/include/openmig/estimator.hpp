#pragma once

#include "openmig/absorb.hpp"
#include "openmig/error.hpp"
#include "openmig/ingest.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace openmig {

inline const std::vector<std::string>& default_regressors() {
    static const std::vector<std::string> names{"log_pop_d", "log_gdppc_d", "log_dist",   "contig",
                                                "comlang",   "comcol",      "coldepever", "log_land_d"};
    return names;
}

inline constexpr const char* kInterceptName = "_cons";

struct ModelSpec {
    std::string outcome = "stock";
    std::vector<std::string> regressors = default_regressors();
    std::vector<std::string> fe_dims{"origin", "year", "origin_year"};
    std::string cluster = "origin";
    bool include_intercept = true;
    bool drop_colonial = false; // drops comcol and coldepever
    bool drop_land = false;     // drops log_land_d

    std::vector<std::string> effective_regressors() const {
        std::vector<std::string> out;
        for (const auto& r : regressors) {
            if (drop_colonial && (r == "comcol" || r == "coldepever")) continue;
            if (drop_land && r == "log_land_d") continue;
            out.push_back(r);
        }
        return out;
    }

    void validate() const {
        if (!is_numeric_panel_column(outcome)) throw Error(ErrorKind::UnknownColumn, "outcome '" + outcome + "'");
        std::set<std::string> seen;
        for (const auto& r : regressors) {
            if (!is_numeric_panel_column(r)) throw Error(ErrorKind::UnknownColumn, "regressor '" + r + "'");
            if (!seen.insert(r).second) throw Error(ErrorKind::InvalidSpec, "regressor '" + r + "' listed twice");
        }
        for (const auto& d : fe_dims)
            if (!is_key_panel_column(d)) throw Error(ErrorKind::UnknownColumn, "fixed-effect dimension '" + d + "'");
        if (!is_key_panel_column(cluster)) throw Error(ErrorKind::UnknownColumn, "cluster key '" + cluster + "'");
    }
};

struct FitOptions {
    double tol = 1e-9; // |delta deviance| / (deviance + 1)
    int max_iter = 200;
    int max_halvings = 30;
    AbsorbOptions absorb{};
    bool check_separation = true;
    double separation_tol = 1e-5;  // on the certificate scaled to max 1; must exceed leakage ~1/separation_weight
    int separation_max_iter = 1000;
    double separation_weight = 1e6; // weight pinning positive-outcome rows
    double collinear_tol = 1e-9;
    bool drop_singletons = true;
};

struct IterationRecord {
    int iteration = 0;
    double deviance = 0.0;
    double relative_change = 0.0;
    int halvings = 0;
};

/// Pieces needed to rebuild the sandwich covariance.
struct ScoreInputs {
    Eigen::MatrixXd x_demeaned;  // kept rows x slopes, weighted-demeaned with `weights`
    Eigen::VectorXd residual;    // y - mu
    Eigen::VectorXd weights;     // mu
    Eigen::RowVectorXd x_mean;   // weighted means of the raw slopes
    bool intercept = false;      // append an intercept row/column
};

struct FitResult {
    ModelSpec spec;
    std::vector<std::string> coef_names; // estimated slopes, then "_cons" if reported
    Eigen::VectorXd coef;
    Eigen::MatrixXd vcov;
    Eigen::VectorXd se;
    std::vector<std::string> omitted_regressors;
    std::vector<std::string> warnings;

    std::vector<bool> kept;             // per panel row
    std::vector<std::size_t> kept_rows; // panel indices of estimation rows
    Eigen::VectorXd y;                  // kept rows
    Eigen::VectorXd fitted;             // kept rows
    std::vector<std::size_t> separated_rows;
    std::vector<std::size_t> singleton_rows;
    std::vector<std::string> dropped_singleton_groups;
    std::vector<std::string> zero_outcome_groups;

    double deviance = 0.0;
    double null_deviance = 0.0;
    double loglik = 0.0;
    double null_loglik = 0.0;
    double pseudo_r2 = 0.0;
    double wald_chi2 = 0.0;
    int wald_df = 0;
    std::size_t n_obs = 0;
    std::size_t n_clusters = 0;
    int iterations = 0;
    bool converged = false;
    std::vector<IterationRecord> iteration_log;

    FixedEffects fe;                             // on kept rows
    std::vector<std::vector<double>> fe_values; // per dim, per level
    std::vector<int> cluster_codes;
    ScoreInputs scores;

    std::size_t n_slopes() const { return static_cast<std::size_t>(coef.size()) - (has_intercept() ? 1 : 0); }
    bool has_intercept() const { return !coef_names.empty() && coef_names.back() == kInterceptName; }

    std::optional<std::size_t> index_of(const std::string& name) const {
        for (std::size_t j = 0; j < coef_names.size(); ++j)
            if (coef_names[j] == name) return j;
        return std::nullopt;
    }
};

struct SeparationResult {
    std::vector<bool> kept;
    std::vector<std::size_t> separated_rows;     // certified by the rectified regression
    std::vector<std::string> zero_outcome_groups; // FE levels whose outcome total is zero
    std::vector<std::size_t> zero_group_rows;
    bool certificate_converged = true;
};

namespace detail {

inline Eigen::VectorXd outcome_vector(const EstimationPanel& panel, const std::string& name,
                                      const std::vector<std::size_t>& rows) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) y[static_cast<Eigen::Index>(i)] = panel_value(panel.rows[rows[i]], name);
    return y;
}

inline Eigen::MatrixXd design_matrix(const EstimationPanel& panel, const std::vector<std::string>& names,
                                     const std::vector<std::size_t>& rows) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(names.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < names.size(); ++j)
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = panel_value(panel.rows[rows[i]], names[j]);
    return x;
}

inline std::vector<std::string> key_vector(const EstimationPanel& panel, const std::string& name,
                                           const std::vector<std::size_t>& rows) {
    std::vector<std::string> keys;
    keys.reserve(rows.size());
    for (auto i : rows) keys.push_back(panel_key(panel.rows[i], name, i));
    return keys;
}

/// FE dimensions on `rows`; an intercept without FE becomes a one-level "_cons" dimension.
inline FixedEffects build_fe(const EstimationPanel& panel, const ModelSpec& spec, const std::vector<std::size_t>& rows) {
    FixedEffects fe;
    for (const auto& d : spec.fe_dims) fe.push_back(encode_keys(d, key_vector(panel, d, rows)));
    if (fe.empty() && spec.include_intercept)
        fe.push_back(encode_keys(kInterceptName, std::vector<std::string>(rows.size(), "all")));
    return fe;
}

inline std::vector<std::size_t> mask_to_rows(const std::vector<bool>& mask) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) rows.push_back(i);
    return rows;
}

inline double poisson_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
    double dev = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (y[i] > 0) dev += y[i] * std::log(y[i] / mu[i]);
        dev -= y[i] - mu[i];
    }
    return 2.0 * dev;
}

inline double poisson_loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        ll += -mu[i] - std::lgamma(y[i] + 1.0);
        if (y[i] > 0) ll += y[i] * std::log(mu[i]);
    }
    return ll;
}

inline constexpr double kEtaMin = -690.0;
inline constexpr double kEtaMax = 690.0;

inline Eigen::VectorXd safe_exp(const Eigen::VectorXd& eta) {
    return eta.array().max(kEtaMin).min(kEtaMax).exp().matrix();
}

/// Solves the weighted least-squares normal equations of already-demeaned data.
inline Eigen::VectorXd wls_solve(const Eigen::MatrixXd& xt, const Eigen::VectorXd& zt, const Eigen::VectorXd& w) {
    if (xt.cols() == 0) return Eigen::VectorXd(0);
    Eigen::MatrixXd xtw = xt.transpose() * w.asDiagonal();
    Eigen::MatrixXd b = xtw * xt;
    Eigen::VectorXd rhs = xtw * zt;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(b);
    return ldlt.solve(rhs);
}

/// Greedy ordered rank check on the weighted cross-product of demeaned
/// columns: column j is kept when its residual after projecting on the kept
/// columns retains more than `tol` of its raw weighted norm.
inline std::vector<bool> independent_columns(const Eigen::MatrixXd& raw, const Eigen::MatrixXd& demeaned,
                                             const Eigen::VectorXd& w, double tol) {
    const Eigen::Index p = raw.cols();
    std::vector<bool> keep(static_cast<std::size_t>(p), false);
    std::vector<Eigen::Index> kept;
    Eigen::VectorXd sw = w.array().sqrt().matrix();
    Eigen::MatrixXd q(raw.rows(), 0);
    for (Eigen::Index j = 0; j < p; ++j) {
        Eigen::VectorXd v = sw.cwiseProduct(demeaned.col(j));
        const double raw_norm2 = sw.cwiseProduct(raw.col(j)).squaredNorm();
        // two passes of Gram-Schmidt
        for (int pass = 0; pass < 2; ++pass)
            for (Eigen::Index k = 0; k < q.cols(); ++k) v -= q.col(k).dot(v) * q.col(k);
        const double resid2 = v.squaredNorm();
        if (resid2 > tol * std::max(raw_norm2, std::numeric_limits<double>::min()) && resid2 > 0) {
            keep[static_cast<std::size_t>(j)] = true;
            q.conservativeResize(Eigen::NoChange, q.cols() + 1);
            q.col(q.cols() - 1) = v / std::sqrt(resid2);
        }
    }
    return keep;
}

/// Iteratively drops rows of FE groups with a single member.
inline std::vector<std::size_t> drop_singletons(const EstimationPanel& panel, const std::vector<std::string>& dims,
                                                std::vector<bool>& mask, std::vector<std::string>& groups) {
    std::vector<std::size_t> dropped;
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& d : dims) {
            std::map<std::string, std::vector<std::size_t>> members;
            for (std::size_t i = 0; i < mask.size(); ++i)
                if (mask[i]) members[panel_key(panel.rows[i], d, i)].push_back(i);
            for (const auto& [key, rows] : members) {
                if (rows.size() != 1) continue;
                mask[rows[0]] = false;
                dropped.push_back(rows[0]);
                groups.push_back(d + "=" + key);
                changed = true;
            }
        }
    }
    std::sort(dropped.begin(), dropped.end());
    return dropped;
}

inline std::vector<std::size_t> drop_zero_groups(const EstimationPanel& panel, const ModelSpec& spec,
                                                 std::vector<bool>& mask, std::vector<std::string>& groups) {
    std::vector<std::size_t> dropped;
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& d : spec.fe_dims) {
            std::map<std::string, std::pair<double, std::vector<std::size_t>>> total;
            for (std::size_t i = 0; i < mask.size(); ++i) {
                if (!mask[i]) continue;
                auto& t = total[panel_key(panel.rows[i], d, i)];
                t.first += panel_value(panel.rows[i], spec.outcome);
                t.second.push_back(i);
            }
            for (const auto& [key, t] : total) {
                if (t.first > 0.0) continue;
                for (auto i : t.second) {
                    mask[i] = false;
                    dropped.push_back(i);
                }
                groups.push_back(d + "=" + key);
                changed = true;
            }
        }
    }
    std::sort(dropped.begin(), dropped.end());
    return dropped;
}

} // namespace detail

/// Rows whose zero outcome is perfectly predicted by the regressors and fixed
/// effects. Two stages: FE groups with zero outcome total, then the
/// rectified-regression certificate over the remaining zero rows.
inline SeparationResult detect_separation(const EstimationPanel& panel, const ModelSpec& spec,
                                          const std::vector<bool>& start_mask, const FitOptions& opt = {}) {
    spec.validate();
    SeparationResult out;
    out.kept = start_mask;
    out.zero_group_rows = detail::drop_zero_groups(panel, spec, out.kept, out.zero_outcome_groups);

    auto rows = detail::mask_to_rows(out.kept);
    if (rows.empty()) return out;
    Eigen::VectorXd y = detail::outcome_vector(panel, spec.outcome, rows);
    const Eigen::Index n = y.size();
    std::vector<Eigen::Index> zeros;
    for (Eigen::Index i = 0; i < n; ++i)
        if (y[i] == 0.0) zeros.push_back(i);
    if (zeros.empty()) return out;

    const auto names = spec.effective_regressors();
    Eigen::MatrixXd x = detail::design_matrix(panel, names, rows);
    FixedEffects fe = detail::build_fe(panel, spec, rows);
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) w[i] = y[i] == 0.0 ? 1.0 : opt.separation_weight;

    Eigen::MatrixXd xt = absorb(x, w, fe, opt.absorb);
    auto keep_cols = detail::independent_columns(x, xt, w, opt.collinear_tol);
    Eigen::MatrixXd xk(n, std::count(keep_cols.begin(), keep_cols.end(), true));
    for (Eigen::Index j = 0, c = 0; j < x.cols(); ++j)
        if (keep_cols[static_cast<std::size_t>(j)]) xk.col(c++) = xt.col(j);

    Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
    for (auto i : zeros) u[i] = 1.0;
    Eigen::VectorXd uhat(n);
    bool done = false;
    for (int it = 0; it < opt.separation_max_iter; ++it) {
        Eigen::VectorXd ut = absorb(u, w, fe, opt.absorb);
        Eigen::VectorXd gamma = detail::wls_solve(xk, ut, w);
        uhat = u - (ut - xk * gamma);
        double zmax = 0.0, zmin = 0.0;
        for (auto i : zeros) {
            zmax = std::max(zmax, uhat[i]);
            zmin = std::min(zmin, uhat[i]);
        }
        if (zmax <= opt.separation_tol) { // certificate collapsed: no separation
            done = true;
            uhat.setZero();
            break;
        }
        if (zmin >= -opt.separation_tol) {
            for (auto i : zeros)
                if (uhat[i] > opt.separation_tol) {
                    out.separated_rows.push_back(rows[static_cast<std::size_t>(i)]);
                    out.kept[rows[static_cast<std::size_t>(i)]] = false;
                }
            done = true;
            break;
        }
        // rectify and renormalise (the certificate is scale free)
        for (auto i : zeros) u[i] = std::max(uhat[i], 0.0) / zmax;
    }
    out.certificate_converged = done;
    std::sort(out.separated_rows.begin(), out.separated_rows.end());
    return out;
}

inline SeparationResult detect_separation(const EstimationPanel& panel, const ModelSpec& spec, const FitOptions& opt = {}) {
    return detect_separation(panel, spec, std::vector<bool>(panel.size(), true), opt);
}

/// Cluster-robust sandwich with small-sample factor G/(G-1). Row influence on
/// the slopes is B^-1 x~_i e_i; a reported intercept (weighted mean of the
/// absorbed part) adds e_i / sum(w) - xbar' B^-1 x~_i e_i.
inline Eigen::MatrixXd clustered_covariance(const ScoreInputs& s, const std::vector<int>& cluster_codes) {
    const Eigen::Index n = s.residual.size();
    const Eigen::Index p = s.x_demeaned.cols();
    const Eigen::Index q = p + (s.intercept ? 1 : 0);
    if (static_cast<Eigen::Index>(cluster_codes.size()) != n)
        throw Error(ErrorKind::InvalidSpec, "cluster key length differs from score rows");
    const int n_clusters = cluster_codes.empty() ? 0 : *std::max_element(cluster_codes.begin(), cluster_codes.end()) + 1;
    if (n_clusters < 2) throw Error(ErrorKind::InvalidSpec, "clustered covariance needs at least 2 clusters");

    Eigen::MatrixXd binv = Eigen::MatrixXd::Zero(p, p);
    if (p > 0) {
        Eigen::MatrixXd bread = s.x_demeaned.transpose() * s.weights.asDiagonal() * s.x_demeaned;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(bread);
        const double lo = eig.eigenvalues().minCoeff();
        const double hi = eig.eigenvalues().maxCoeff();
        const double cond = lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
        if (!(cond < 1e14))
            throw Error(ErrorKind::SingularBread, "bread matrix condition number " + std::to_string(cond));
        binv = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    }
    const double wsum = s.weights.sum();

    Eigen::MatrixXd cluster_sums = Eigen::MatrixXd::Zero(q, n_clusters);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd psi(q);
        if (p > 0) psi.head(p) = binv * s.x_demeaned.row(i).transpose();
        if (s.intercept) {
            psi[p] = 1.0 / wsum;
            if (p > 0) psi[p] -= s.x_mean.dot(psi.head(p));
        }
        cluster_sums.col(cluster_codes[static_cast<std::size_t>(i)]) += psi * s.residual[i];
    }
    const double g = n_clusters;
    Eigen::MatrixXd v = (g / (g - 1.0)) * (cluster_sums * cluster_sums.transpose());
    return 0.5 * (v + v.transpose());
}

inline double linear_predictor(const FitResult& fit, const EstimationPanel& panel, std::size_t row) {
    const auto& r = panel.rows[row];
    const std::size_t p = fit.n_slopes();
    double eta = 0.0;
    for (std::size_t j = 0; j < p; ++j) eta += panel_value(r, fit.coef_names[j]) * fit.coef[static_cast<Eigen::Index>(j)];
    for (std::size_t k = 0; k < fit.fe.size(); ++k) {
        const auto& dim = fit.fe[k];
        const std::string key = dim.name == kInterceptName ? std::string("all") : panel_key(r, dim.name, row);
        auto it = std::lower_bound(dim.level_names.begin(), dim.level_names.end(), key);
        if (it == dim.level_names.end() || *it != key)
            throw Error(ErrorKind::UnknownFELevel, dim.name + " level '" + key + "' unseen at fit time");
        eta += fit.fe_values[k][static_cast<std::size_t>(it - dim.level_names.begin())];
    }
    return eta;
}

/// Fitted means for the given panel rows.
inline Eigen::VectorXd predict(const FitResult& fit, const EstimationPanel& panel, const std::vector<std::size_t>& rows) {
    Eigen::VectorXd mu(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        mu[static_cast<Eigen::Index>(i)] = std::exp(std::clamp(linear_predictor(fit, panel, rows[i]), detail::kEtaMin, detail::kEtaMax));
    return mu;
}

inline Eigen::VectorXd predict(const FitResult& fit, const EstimationPanel& panel) {
    std::vector<std::size_t> rows(panel.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return predict(fit, panel, rows);
}

struct FitStatistics {
    double pseudo_r2 = 0.0;
    double wald_chi2 = 0.0;
    int wald_df = 0;
    double deviance = 0.0;
    std::size_t n_obs = 0;
};

/// Likelihood-ratio pseudo R2 against the constant-mean model, and the Wald
/// test that every slope is zero under the clustered covariance.
inline FitStatistics fit_statistics(const FitResult& fit) {
    FitStatistics st;
    st.deviance = fit.deviance;
    st.n_obs = fit.n_obs;
    st.pseudo_r2 = fit.null_loglik != 0.0 ? 1.0 - fit.loglik / fit.null_loglik : 0.0;
    const auto p = static_cast<Eigen::Index>(fit.n_slopes());
    st.wald_df = static_cast<int>(p);
    if (p > 0) {
        Eigen::VectorXd b = fit.coef.head(p);
        Eigen::MatrixXd v = fit.vcov.topLeftCorner(p, p);
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(v);
        st.wald_chi2 = b.dot(cod.solve(b));
        st.wald_df = static_cast<int>(cod.rank());
    }
    return st;
}

/// Poisson pseudo-maximum-likelihood with absorbed fixed effects (IRLS on
/// alternating-projection demeaned working variables).
inline FitResult fit_ppml(const EstimationPanel& panel, const ModelSpec& spec, const FitOptions& opt = {}) {
    spec.validate();
    if (panel.rows.empty()) throw Error(ErrorKind::EmptyPanel, "panel has no rows");
    for (std::size_t i = 0; i < panel.size(); ++i) {
        double v = panel_value(panel.rows[i], spec.outcome);
        if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorKind::InvalidValue, "outcome must be nonnegative", i);
    }

    FitResult fit;
    fit.spec = spec;

    // sample: separation and singletons until stable
    std::vector<bool> mask(panel.size(), true);
    for (int round = 0; round < 100; ++round) {
        const auto before = std::count(mask.begin(), mask.end(), true);
        if (opt.check_separation) {
            auto sep = detect_separation(panel, spec, mask, opt);
            mask = sep.kept;
            fit.separated_rows.insert(fit.separated_rows.end(), sep.zero_group_rows.begin(), sep.zero_group_rows.end());
            fit.separated_rows.insert(fit.separated_rows.end(), sep.separated_rows.begin(), sep.separated_rows.end());
            fit.zero_outcome_groups.insert(fit.zero_outcome_groups.end(), sep.zero_outcome_groups.begin(),
                                           sep.zero_outcome_groups.end());
            if (!sep.certificate_converged)
                fit.warnings.push_back("separation certificate did not converge; no regressor separation assumed");
        }
        if (opt.drop_singletons) {
            auto dropped = detail::drop_singletons(panel, spec.fe_dims, mask, fit.dropped_singleton_groups);
            fit.singleton_rows.insert(fit.singleton_rows.end(), dropped.begin(), dropped.end());
        }
        if (std::count(mask.begin(), mask.end(), true) == before) break;
    }
    std::sort(fit.separated_rows.begin(), fit.separated_rows.end());
    std::sort(fit.singleton_rows.begin(), fit.singleton_rows.end());
    fit.kept = mask;
    fit.kept_rows = detail::mask_to_rows(mask);
    if (fit.kept_rows.empty()) throw Error(ErrorKind::EmptyAfterSeparation, "no rows left after separation and singleton drops");
    const auto& rows = fit.kept_rows;

    Eigen::VectorXd y = detail::outcome_vector(panel, spec.outcome, rows);
    const Eigen::Index n = y.size();
    if (!(y.sum() > 0.0)) throw Error(ErrorKind::EmptyAfterSeparation, "outcome is zero on every kept row");
    FixedEffects fe = detail::build_fe(panel, spec, rows);

    const double ybar = y.mean();
    Eigen::VectorXd mu = (y.array() + ybar).matrix() * 0.5;
    Eigen::VectorXd eta = mu.array().log().matrix();

    // collinearity on the starting weights; later-ordered columns lose
    auto all_names = spec.effective_regressors();
    Eigen::MatrixXd x_all = detail::design_matrix(panel, all_names, rows);
    std::vector<std::string> names;
    {
        Eigen::MatrixXd xt0 = absorb(x_all, mu, fe, opt.absorb);
        auto keep = detail::independent_columns(x_all, xt0, mu, opt.collinear_tol);
        for (std::size_t j = 0; j < all_names.size(); ++j) {
            if (keep[j]) names.push_back(all_names[j]);
            else {
                fit.omitted_regressors.push_back(all_names[j]);
                fit.warnings.push_back("regressor '" + all_names[j] + "' is collinear and was dropped");
            }
        }
    }
    Eigen::MatrixXd x = detail::design_matrix(panel, names, rows);
    const Eigen::Index p = x.cols();

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    double dev = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd work(n, p + 1);
    for (int iter = 1; iter <= opt.max_iter; ++iter) {
        work.col(0) = eta + ((y - mu).array() / mu.array()).matrix();
        work.rightCols(p) = x;
        Eigen::MatrixXd dm = absorb(work, mu, fe, opt.absorb);
        Eigen::VectorXd beta_new = detail::wls_solve(dm.rightCols(p), dm.col(0), mu);
        Eigen::VectorXd eta_new = work.col(0) - (dm.col(0) - dm.rightCols(p) * beta_new);
        Eigen::VectorXd mu_new = detail::safe_exp(eta_new);
        double dev_new = detail::poisson_deviance(y, mu_new);

        int halvings = 0;
        if (iter > 1 && !(dev_new <= dev)) {
            const Eigen::VectorXd eta_old = eta, beta_old = beta;
            double t = 1.0;
            while (!(dev_new <= dev) && halvings < opt.max_halvings) {
                t *= 0.5;
                ++halvings;
                eta_new = eta_old + t * (eta_new - eta_old);
                beta_new = beta_old + t * (beta_new - beta_old);
                mu_new = detail::safe_exp(eta_new);
                dev_new = detail::poisson_deviance(y, mu_new);
            }
        }
        const double rel = iter > 1 ? std::abs(dev_new - dev) / (dev_new + 1.0) : std::numeric_limits<double>::infinity();
        eta = std::move(eta_new);
        beta = std::move(beta_new);
        mu = std::move(mu_new);
        dev = dev_new;
        fit.iteration_log.push_back({iter, dev, iter > 1 ? rel : -1.0, halvings});
        fit.iterations = iter;
        if (iter > 1 && rel < opt.tol) {
            fit.converged = true;
            break;
        }
    }
    if (!fit.converged) {
        std::string trace;
        for (const auto& rec : fit.iteration_log)
            trace += " [" + std::to_string(rec.iteration) + ": dev=" + std::to_string(rec.deviance) + "]";
        throw Error(ErrorKind::NonConvergence, "IRLS did not converge in " + std::to_string(opt.max_iter) +
                                                   " iterations; trace:" + trace);
    }

    // absorbed part, its per-level values, and fitted means in predict() form
    fit.coef_names = names;
    fit.coef = beta;
    fit.fe = fe;
    Eigen::VectorXd fe_sum = eta - x * beta;
    fit.fe_values = recover_fe_values(fe_sum, mu, fe);
    fit.fitted = predict(fit, panel, rows);
    mu = fit.fitted;
    fit.y = y;

    Eigen::RowVectorXd x_mean = (mu.transpose() * x) / mu.sum();
    const bool report_intercept = spec.include_intercept;
    if (report_intercept) {
        Eigen::VectorXd eta_now = mu.array().log().matrix();
        const double cons = mu.dot(eta_now - x * beta) / mu.sum();
        fit.coef_names.push_back(kInterceptName);
        fit.coef.conservativeResize(p + 1);
        fit.coef[p] = cons;
    }

    fit.scores.x_demeaned = absorb(x, mu, fe, opt.absorb);
    fit.scores.residual = y - mu;
    fit.scores.weights = mu;
    fit.scores.x_mean = x_mean;
    fit.scores.intercept = report_intercept;
    auto cluster_dim = encode_keys(spec.cluster, detail::key_vector(panel, spec.cluster, rows));
    fit.cluster_codes = cluster_dim.codes;
    fit.n_clusters = static_cast<std::size_t>(cluster_dim.n_levels);
    fit.vcov = clustered_covariance(fit.scores, fit.cluster_codes);
    fit.se = fit.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();

    fit.n_obs = static_cast<std::size_t>(n);
    fit.deviance = detail::poisson_deviance(y, mu);
    fit.loglik = detail::poisson_loglik(y, mu);
    Eigen::VectorXd mu0 = Eigen::VectorXd::Constant(n, ybar);
    fit.null_deviance = detail::poisson_deviance(y, mu0);
    fit.null_loglik = detail::poisson_loglik(y, mu0);
    auto st = fit_statistics(fit);
    fit.pseudo_r2 = st.pseudo_r2;
    fit.wald_chi2 = st.wald_chi2;
    fit.wald_df = st.wald_df;
    return fit;
}

inline double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

inline nlohmann::ordered_json fit_to_json(const FitResult& fit, const EstimationPanel& panel) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    nlohmann::ordered_json spec;
    spec["outcome"] = fit.spec.outcome;
    spec["regressors"] = fit.spec.effective_regressors();
    spec["fe_dims"] = fit.spec.fe_dims;
    spec["cluster"] = fit.spec.cluster;
    spec["include_intercept"] = fit.spec.include_intercept;
    spec["drop_colonial"] = fit.spec.drop_colonial;
    spec["drop_land"] = fit.spec.drop_land;
    j["spec"] = spec;
    auto table = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < fit.coef_names.size(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        const double z = fit.coef[kk] / fit.se[kk];
        table.push_back({{"name", fit.coef_names[k]},
                         {"estimate", fit.coef[kk]},
                         {"se", fit.se[kk]},
                         {"z", z},
                         {"p", normal_two_sided_p(z)}});
    }
    j["coefficients"] = table;
    j["omitted_regressors"] = fit.omitted_regressors;
    nlohmann::ordered_json stats;
    stats["n_obs"] = fit.n_obs;
    stats["n_clusters"] = fit.n_clusters;
    stats["deviance"] = fit.deviance;
    stats["null_deviance"] = fit.null_deviance;
    stats["loglik"] = fit.loglik;
    stats["null_loglik"] = fit.null_loglik;
    stats["pseudo_r2"] = fit.pseudo_r2;
    stats["wald_chi2"] = fit.wald_chi2;
    stats["wald_df"] = fit.wald_df;
    stats["converged"] = fit.converged;
    stats["iterations"] = fit.iterations;
    j["statistics"] = stats;
    auto describe = [&](const std::vector<std::size_t>& idx) {
        auto arr = nlohmann::ordered_json::array();
        for (auto i : idx) {
            const auto& r = panel.rows[i];
            arr.push_back({{"row", i}, {"origin", r.origin}, {"destination", r.destination}, {"year", r.year}});
        }
        return arr;
    };
    nlohmann::ordered_json dropped;
    dropped["panel_rows"] = panel.size();
    dropped["kept_rows"] = fit.kept_rows.size();
    dropped["separated"] = describe(fit.separated_rows);
    dropped["zero_outcome_groups"] = fit.zero_outcome_groups;
    dropped["singletons"] = describe(fit.singleton_rows);
    dropped["singleton_groups"] = fit.dropped_singleton_groups;
    j["dropped"] = dropped;
    j["warnings"] = fit.warnings;
    auto log = nlohmann::ordered_json::array();
    for (const auto& rec : fit.iteration_log)
        log.push_back({{"iteration", rec.iteration},
                       {"deviance", rec.deviance},
                       {"relative_change", rec.relative_change},
                       {"halvings", rec.halvings}});
    j["iteration_log"] = log;
    return j;
}

} // namespace openmig
