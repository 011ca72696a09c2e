#pragma once

#include "openmig/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace openmig {

/// One categorical dimension, coded 0..n_levels-1 per row.
struct FixedEffectDim {
    std::string name;
    std::vector<int> codes;
    int n_levels = 0;
    std::vector<std::string> level_names; // sorted, level_names[code]
};

using FixedEffects = std::vector<FixedEffectDim>;

/// Codes string keys by their sorted order, so coding is independent of row order.
inline FixedEffectDim encode_keys(std::string name, const std::vector<std::string>& keys) {
    FixedEffectDim dim;
    dim.name = std::move(name);
    std::map<std::string, int> level;
    for (const auto& k : keys) level.emplace(k, 0);
    int next = 0;
    for (auto& [k, code] : level) {
        code = next++;
        dim.level_names.push_back(k);
    }
    dim.n_levels = next;
    dim.codes.reserve(keys.size());
    for (const auto& k : keys) dim.codes.push_back(level.at(k));
    return dim;
}

/// Keeps rows where mask is true and recodes levels densely (empty levels disappear).
inline FixedEffectDim subset_dim(const FixedEffectDim& dim, const std::vector<bool>& mask) {
    std::vector<std::string> keys;
    for (std::size_t i = 0; i < dim.codes.size(); ++i)
        if (mask[i]) keys.push_back(dim.level_names[static_cast<std::size_t>(dim.codes[i])]);
    return encode_keys(dim.name, keys);
}

struct AbsorbOptions {
    double tol = 1e-10;       // relative to the column scale sum_i w_i |x_i|
    int max_sweeps = 100000;
    bool accelerate = true;   // Irons-Tuck extrapolation on every double sweep
};

namespace detail {

class GroupProjector {
public:
    GroupProjector(const FixedEffects& fe, const Eigen::VectorXd& w) : fe_(fe), w_(w) {
        group_weight_.resize(fe.size());
        for (std::size_t k = 0; k < fe.size(); ++k) {
            group_weight_[k].assign(static_cast<std::size_t>(fe[k].n_levels), 0.0);
            for (Eigen::Index i = 0; i < w.size(); ++i) group_weight_[k][fe[k].codes[i]] += w[i];
        }
        sums_.resize(fe.size());
        for (std::size_t k = 0; k < fe.size(); ++k) sums_[k].resize(static_cast<std::size_t>(fe[k].n_levels));
    }

    // One sweep of weighted group-mean subtraction across every dimension.
    void sweep(Eigen::Ref<Eigen::VectorXd> x) {
        const Eigen::Index n = x.size();
        for (std::size_t k = 0; k < fe_.size(); ++k) {
            auto& s = sums_[k];
            std::fill(s.begin(), s.end(), 0.0);
            const auto& codes = fe_[k].codes;
            for (Eigen::Index i = 0; i < n; ++i) s[codes[i]] += w_[i] * x[i];
            for (std::size_t g = 0; g < s.size(); ++g) s[g] = group_weight_[k][g] > 0 ? s[g] / group_weight_[k][g] : 0.0;
            for (Eigen::Index i = 0; i < n; ++i) x[i] -= s[codes[i]];
        }
    }

    // Largest |sum_{i in g} w_i x_i| over every group of every dimension.
    double worst_group_sum(const Eigen::Ref<const Eigen::VectorXd>& x) {
        double worst = 0.0;
        const Eigen::Index n = x.size();
        for (std::size_t k = 0; k < fe_.size(); ++k) {
            auto& s = sums_[k];
            std::fill(s.begin(), s.end(), 0.0);
            const auto& codes = fe_[k].codes;
            for (Eigen::Index i = 0; i < n; ++i) s[codes[i]] += w_[i] * x[i];
            for (double v : s) worst = std::max(worst, std::abs(v));
        }
        return worst;
    }

private:
    const FixedEffects& fe_;
    const Eigen::VectorXd& w_;
    std::vector<std::vector<double>> group_weight_;
    std::vector<std::vector<double>> sums_;
};

} // namespace detail

/// Weighted alternating projections: returns each column minus its weighted
/// projection on the span of every FE group indicator.
inline Eigen::MatrixXd absorb(const Eigen::MatrixXd& columns, const Eigen::VectorXd& weights, const FixedEffects& fe,
                              const AbsorbOptions& opt = {}) {
    const Eigen::Index n = columns.rows();
    if (weights.size() != n) throw Error(ErrorKind::InvalidSpec, "weights length differs from column length");
    for (const auto& dim : fe)
        if (static_cast<Eigen::Index>(dim.codes.size()) != n)
            throw Error(ErrorKind::InvalidSpec, "FE key vector '" + dim.name + "' length differs from column length");
    if ((weights.array() <= 0.0).any() || !weights.allFinite())
        throw Error(ErrorKind::InvalidSpec, "absorb weights must be strictly positive");

    Eigen::MatrixXd out = columns;
    if (fe.empty() || n == 0) return out;

    detail::GroupProjector proj(fe, weights);
    const bool single_pass = fe.size() == 1;

    Eigen::VectorXd x1(n), x2(n), d1(n), d2(n);
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        auto x = out.col(j);
        const double scale = std::max((weights.array() * x.array().abs()).sum(), 1e-300);
        const double target = opt.tol * scale;
        proj.sweep(x);
        if (single_pass) continue;

        double worst = proj.worst_group_sum(x);
        int sweeps = 1;
        while (worst > target) {
            if (sweeps >= opt.max_sweeps)
                throw Error(ErrorKind::NonConvergence, "alternating projections did not converge for column " +
                                                           std::to_string(j) + "; worst group residual " +
                                                           std::to_string(worst) + " (target " +
                                                           std::to_string(target) + ")");
            if (opt.accelerate) {
                x1 = x;
                proj.sweep(x1);
                x2 = x1;
                proj.sweep(x2);
                sweeps += 2;
                d1 = x2 - x1;
                d2 = d1 - (x1 - x);
                const double denom = d2.squaredNorm();
                if (denom > 0.0) x = x2 - (d2.dot(d1) / denom) * d1;
                else x = x2;
                // the extrapolated point stays in x0 - span(FE); one more sweep restores
                // exact orthogonality to the last dimension
                proj.sweep(x);
                ++sweeps;
            } else {
                proj.sweep(x);
                ++sweeps;
            }
            worst = proj.worst_group_sum(x);
        }
    }
    return out;
}

inline Eigen::VectorXd absorb(const Eigen::VectorXd& column, const Eigen::VectorXd& weights, const FixedEffects& fe,
                              const AbsorbOptions& opt = {}) {
    Eigen::MatrixXd m = column;
    return absorb(m, weights, fe, opt).col(0);
}

/// Recovers per-level FE values whose row sums reproduce `fe_sum`
/// (backfitting). Values are normalised so every dimension but the first has
/// weighted mean zero.
inline std::vector<std::vector<double>> recover_fe_values(const Eigen::VectorXd& fe_sum, const Eigen::VectorXd& weights,
                                                          const FixedEffects& fe, double tol = 1e-14,
                                                          int max_sweeps = 100000) {
    const Eigen::Index n = fe_sum.size();
    std::vector<std::vector<double>> alpha(fe.size());
    std::vector<std::vector<double>> gw(fe.size());
    for (std::size_t k = 0; k < fe.size(); ++k) {
        alpha[k].assign(static_cast<std::size_t>(fe[k].n_levels), 0.0);
        gw[k].assign(static_cast<std::size_t>(fe[k].n_levels), 0.0);
        for (Eigen::Index i = 0; i < n; ++i) gw[k][fe[k].codes[i]] += weights[i];
    }
    if (fe.empty()) return alpha;

    Eigen::VectorXd resid = fe_sum;
    const double scale = std::max(fe_sum.cwiseAbs().maxCoeff(), 1.0);
    std::vector<double> step;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_step = 0.0;
        for (std::size_t k = 0; k < fe.size(); ++k) {
            step.assign(alpha[k].size(), 0.0);
            const auto& codes = fe[k].codes;
            for (Eigen::Index i = 0; i < n; ++i) step[codes[i]] += weights[i] * resid[i];
            for (std::size_t g = 0; g < step.size(); ++g) {
                step[g] = gw[k][g] > 0 ? step[g] / gw[k][g] : 0.0;
                alpha[k][g] += step[g];
                max_step = std::max(max_step, std::abs(step[g]));
            }
            for (Eigen::Index i = 0; i < n; ++i) resid[i] -= step[codes[i]];
        }
        if (max_step <= tol * scale) break;
        if (sweep + 1 == max_sweeps)
            throw Error(ErrorKind::NonConvergence, "fixed-effect recovery did not converge");
    }

    // shift the weighted means of dimensions 1.. into dimension 0
    for (std::size_t k = 1; k < fe.size(); ++k) {
        double num = 0.0, den = 0.0;
        for (std::size_t g = 0; g < alpha[k].size(); ++g) {
            num += gw[k][g] * alpha[k][g];
            den += gw[k][g];
        }
        const double mean = den > 0 ? num / den : 0.0;
        for (auto& a : alpha[k]) a -= mean;
        for (auto& a : alpha[0]) a += mean;
    }
    return alpha;
}

} // namespace openmig
