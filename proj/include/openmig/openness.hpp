#pragma once

#include "openmig/error.hpp"
#include "openmig/estimator.hpp"
#include "openmig/ingest.hpp"
#include "openmig/io.hpp"
#include "openmig/stats.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace openmig {

inline constexpr double kDefaultCutoffPerMillion = 10.0;

struct ResidualEntry {
    std::string origin;
    std::string destination;
    int year = 0;
    Skill skill = Skill::all;
    double actual = 0.0;
    double fitted = 0.0;
    double residual = 0.0; // actual - fitted
    double pop_d = 0.0;
    bool contig = false;
};

/// Residuals on the estimation sample. `destinations` and `years` span the
/// whole panel so destinations absent from a year's sample stay visible.
struct ResidualMatrix {
    Skill skill = Skill::all;
    std::vector<ResidualEntry> entries;
    std::vector<std::string> destinations;
    std::vector<int> years;
};

struct DestinationYear {
    std::string destination;
    int year = 0;
    Skill skill = Skill::all;

    auto operator<=>(const DestinationYear&) const = default;
};

struct ScaleScore {
    DestinationYear key;
    std::optional<double> scale; // nullopt: destination absent from the year's sample
};

struct DiversityCount {
    DestinationYear key;
    std::optional<int> diversity;
};

struct OpennessRecord {
    std::string destination;
    int year = 0;
    Skill skill = Skill::all;
    double cutoff_per_million = kDefaultCutoffPerMillion;
    std::optional<int> diversity;
    std::optional<double> scale_all;
    std::optional<double> scale_excl_contig;
    std::string region;
};

inline ResidualMatrix residual_matrix(const FitResult& fit, const EstimationPanel& panel) {
    if (fit.kept.size() != panel.size() || static_cast<Eigen::Index>(fit.kept_rows.size()) != fit.fitted.size())
        throw Error(ErrorKind::PanelMismatch, "fit was not estimated on this panel (row counts differ)");
    ResidualMatrix rm;
    rm.skill = panel.skill;
    std::set<std::string> dests;
    std::set<int> years(panel.years.begin(), panel.years.end());
    for (const auto& r : panel.rows) {
        dests.insert(r.destination);
        years.insert(r.year);
    }
    rm.destinations.assign(dests.begin(), dests.end());
    rm.years.assign(years.begin(), years.end());
    rm.entries.reserve(fit.kept_rows.size());
    for (std::size_t k = 0; k < fit.kept_rows.size(); ++k) {
        const auto& r = panel.rows[fit.kept_rows[k]];
        const double actual = panel_value(r, fit.spec.outcome);
        if (actual != fit.y[static_cast<Eigen::Index>(k)])
            throw Error(ErrorKind::PanelMismatch, "outcome of panel row " + std::to_string(fit.kept_rows[k]) +
                                                      " differs from the fitted sample");
        ResidualEntry e;
        e.origin = r.origin;
        e.destination = r.destination;
        e.year = r.year;
        e.skill = r.skill;
        e.actual = actual;
        e.fitted = fit.fitted[static_cast<Eigen::Index>(k)];
        e.residual = e.actual - e.fitted;
        e.pop_d = r.pop_d;
        e.contig = r.contig != 0.0;
        rm.entries.push_back(std::move(e));
    }
    return rm;
}

namespace detail {

// a * b > c * d without rounding: compare the rounded products, then their
// exact fma remainders
inline bool product_exceeds(double a, double b, double c, double d) {
    const double p = a * b, q = c * d;
    if (p != q) return p > q;
    return std::fma(a, b, -p) > std::fma(c, d, -q);
}

inline void check_population(const ResidualEntry& e) {
    if (!(e.pop_d > 0.0) || !std::isfinite(e.pop_d))
        throw Error(ErrorKind::MissingPopulation,
                    "no population for destination " + e.destination + " in " + std::to_string(e.year));
}

inline std::map<DestinationYear, std::vector<const ResidualEntry*>> group_by_destination(const ResidualMatrix& rm) {
    std::map<DestinationYear, std::vector<const ResidualEntry*>> groups;
    for (const auto& d : rm.destinations)
        for (int y : rm.years) groups[{d, y, rm.skill}];
    for (const auto& e : rm.entries) {
        check_population(e);
        groups[{e.destination, e.year, e.skill}].push_back(&e);
    }
    return groups;
}

} // namespace detail

/// Summed residuals per destination-year divided by destination population;
/// optionally leaving out contiguous origins.
inline std::vector<ScaleScore> scale_openness(const ResidualMatrix& rm, bool exclude_contiguous) {
    std::vector<ScaleScore> out;
    for (const auto& [key, entries] : detail::group_by_destination(rm)) {
        ScaleScore s{key, std::nullopt};
        if (!entries.empty()) {
            double sum = 0.0;
            for (const auto* e : entries)
                if (!(exclude_contiguous && e->contig)) sum += e->residual;
            s.scale = sum / entries.front()->pop_d;
        }
        out.push_back(std::move(s));
    }
    return out;
}

/// Number of origins whose residual per destination inhabitant strictly
/// exceeds cutoff_per_million / 1e6.
inline std::vector<DiversityCount> diversity_openness(const ResidualMatrix& rm,
                                                      double cutoff_per_million = kDefaultCutoffPerMillion) {
    if (!(cutoff_per_million > 0.0)) throw Error(ErrorKind::InvalidValue, "cutoff_per_million must be > 0");
    std::vector<DiversityCount> out;
    for (const auto& [key, entries] : detail::group_by_destination(rm)) {
        DiversityCount c{key, std::nullopt};
        if (!entries.empty()) {
            int count = 0;
            for (const auto* e : entries)
                // residual / pop > cutoff / 1e6, decided exactly
                if (detail::product_exceeds(e->residual, 1e6, cutoff_per_million, e->pop_d)) ++count;
            c.diversity = count;
        }
        out.push_back(std::move(c));
    }
    return out;
}

inline std::vector<OpennessRecord> openness_records(const ResidualMatrix& rm, double cutoff_per_million,
                                                    const std::map<std::string, std::string>& region_map = {}) {
    auto all = scale_openness(rm, false);
    auto excl = scale_openness(rm, true);
    auto div = diversity_openness(rm, cutoff_per_million);
    std::vector<OpennessRecord> out;
    out.reserve(div.size());
    for (std::size_t i = 0; i < div.size(); ++i) {
        OpennessRecord r;
        r.destination = div[i].key.destination;
        r.year = div[i].key.year;
        r.skill = div[i].key.skill;
        r.cutoff_per_million = cutoff_per_million;
        r.diversity = div[i].diversity;
        r.scale_all = all[i].scale;
        r.scale_excl_contig = excl[i].scale;
        if (auto it = region_map.find(r.destination); it != region_map.end()) r.region = it->second;
        out.push_back(std::move(r));
    }
    return out;
}

struct RankCorrelation {
    double cutoff_a = 0.0;
    double cutoff_b = 0.0;
    double spearman = 0.0;
    std::size_t n = 0;
};

struct CutoffSweepRow {
    DestinationYear key;
    std::vector<std::optional<int>> counts; // one per cutoff
};

struct CutoffSweep {
    std::vector<double> cutoffs;
    std::vector<CutoffSweepRow> rows;
    std::vector<RankCorrelation> rank_correlations; // every pair a < b
};

inline CutoffSweep cutoff_sweep(const ResidualMatrix& rm, const std::vector<double>& cutoffs) {
    if (cutoffs.empty()) throw Error(ErrorKind::InvalidValue, "cutoff sweep needs at least one cutoff");
    if (!std::is_sorted(cutoffs.begin(), cutoffs.end()))
        throw Error(ErrorKind::InvalidValue, "cutoff sweep must be sorted ascending");
    CutoffSweep sweep;
    sweep.cutoffs = cutoffs;
    std::vector<std::vector<DiversityCount>> per_cutoff;
    for (double c : cutoffs) per_cutoff.push_back(diversity_openness(rm, c));
    const std::size_t n_rows = per_cutoff.front().size();
    for (std::size_t i = 0; i < n_rows; ++i) {
        CutoffSweepRow row{per_cutoff.front()[i].key, {}};
        for (const auto& pc : per_cutoff) row.counts.push_back(pc[i].diversity);
        sweep.rows.push_back(std::move(row));
    }
    for (std::size_t a = 0; a < cutoffs.size(); ++a)
        for (std::size_t b = a + 1; b < cutoffs.size(); ++b) {
            std::vector<double> xa, xb;
            for (const auto& row : sweep.rows)
                if (row.counts[a] && row.counts[b]) {
                    xa.push_back(*row.counts[a]);
                    xb.push_back(*row.counts[b]);
                }
            sweep.rank_correlations.push_back({cutoffs[a], cutoffs[b], stats::spearman(xa, xb), xa.size()});
        }
    return sweep;
}

struct SkillPair {
    std::string destination;
    int year = 0;
    int tertiary = 0;
    int nontertiary = 0;
    double pop_d = 0.0;
};

struct SkillSplit {
    std::vector<SkillPair> pairs;
    double correlation = 0.0; // Pearson over pooled destination-years
    std::map<int, double> mean_tertiary;
    std::map<int, double> mean_nontertiary;
    std::map<int, std::size_t> n_by_year;
    std::vector<std::string> coverage_mismatch; // "DEST:year (present in tertiary|nontertiary only)"
};

inline SkillSplit skill_split_openness(const ResidualMatrix& rm_tertiary, const ResidualMatrix& rm_nontertiary,
                                       double cutoff_per_million = kDefaultCutoffPerMillion) {
    auto index = [&](const ResidualMatrix& rm) {
        std::map<std::pair<std::string, int>, int> out;
        for (const auto& c : diversity_openness(rm, cutoff_per_million))
            if (c.diversity) out[{c.key.destination, c.key.year}] = *c.diversity;
        return out;
    };
    auto pops = [](const ResidualMatrix& rm) {
        std::map<std::pair<std::string, int>, double> out;
        for (const auto& e : rm.entries) out[{e.destination, e.year}] = e.pop_d;
        return out;
    };
    const auto t = index(rm_tertiary);
    const auto nt = index(rm_nontertiary);
    const auto pop = pops(rm_tertiary);

    SkillSplit out;
    for (const auto& [key, count] : t) {
        auto it = nt.find(key);
        if (it == nt.end()) {
            out.coverage_mismatch.push_back(key.first + ":" + std::to_string(key.second) + " (tertiary only)");
            continue;
        }
        out.pairs.push_back({key.first, key.second, count, it->second, pop.at(key)});
    }
    for (const auto& [key, count] : nt)
        if (!t.count(key))
            out.coverage_mismatch.push_back(key.first + ":" + std::to_string(key.second) + " (nontertiary only)");

    std::vector<double> a, b;
    std::map<int, double> sum_t, sum_n;
    for (const auto& p : out.pairs) {
        a.push_back(p.tertiary);
        b.push_back(p.nontertiary);
        sum_t[p.year] += p.tertiary;
        sum_n[p.year] += p.nontertiary;
        ++out.n_by_year[p.year];
    }
    out.correlation = stats::pearson(a, b);
    for (const auto& [y, n] : out.n_by_year) {
        out.mean_tertiary[y] = sum_t[y] / static_cast<double>(n);
        out.mean_nontertiary[y] = sum_n[y] / static_cast<double>(n);
    }
    return out;
}

struct OpennessDelta {
    std::string destination;
    int delta = 0;
    std::string region;
};

struct OpennessChange {
    int year_from = 0;
    int year_to = 0;
    std::vector<OpennessDelta> deltas;
    double global_mean = 0.0;
    std::map<std::string, double> region_means;
    std::vector<std::string> only_in_from;
    std::vector<std::string> only_in_to;

    std::string period() const { return std::to_string(year_from) + "-" + std::to_string(year_to); }
};

/// Diversity change between two sets of records over their common destinations.
inline OpennessChange openness_change(const std::vector<OpennessRecord>& records_t,
                                      const std::vector<OpennessRecord>& records_t_minus_10,
                                      const std::map<std::string, std::string>& region_map) {
    auto index = [](const std::vector<OpennessRecord>& recs, int& year) {
        std::map<std::string, int> out;
        for (const auto& r : recs) {
            if (!r.diversity) continue;
            out[r.destination] = *r.diversity;
            year = r.year;
        }
        return out;
    };
    OpennessChange ch;
    const auto to = index(records_t, ch.year_to);
    const auto from = index(records_t_minus_10, ch.year_from);
    std::map<std::string, std::pair<double, std::size_t>> by_region;
    double total = 0.0;
    for (const auto& [dest, v] : to) {
        auto it = from.find(dest);
        if (it == from.end()) {
            ch.only_in_to.push_back(dest);
            continue;
        }
        OpennessDelta d{dest, v - it->second, {}};
        if (auto rg = region_map.find(dest); rg != region_map.end()) d.region = rg->second;
        total += d.delta;
        auto& acc = by_region[d.region];
        acc.first += d.delta;
        ++acc.second;
        ch.deltas.push_back(std::move(d));
    }
    for (const auto& [dest, v] : from)
        if (!to.count(dest)) ch.only_in_from.push_back(dest);
    ch.global_mean = ch.deltas.empty() ? 0.0 : total / static_cast<double>(ch.deltas.size());
    for (const auto& [region, acc] : by_region) ch.region_means[region] = acc.first / static_cast<double>(acc.second);
    return ch;
}

/// Records of one year out of a mixed list.
inline std::vector<OpennessRecord> records_for_year(const std::vector<OpennessRecord>& records, int year) {
    std::vector<OpennessRecord> out;
    for (const auto& r : records)
        if (r.year == year) out.push_back(r);
    return out;
}

// plot values replace zero counts with 0.5 before taking logs
inline double plot_log_count(int count) { return std::log(count == 0 ? 0.5 : static_cast<double>(count)); }

inline std::string openness_csv(const std::vector<OpennessRecord>& records) {
    std::string out = "destination,year,skill,cutoff_per_million,diversity,scale_all,scale_excl_contig,region\n";
    for (const auto& r : records) {
        out += r.destination + ',' + std::to_string(r.year) + ',' + std::string(to_string(r.skill)) + ',' +
               io::format_double(r.cutoff_per_million) + ',' + (r.diversity ? std::to_string(*r.diversity) : "") + ',' +
               io::format_optional(r.scale_all) + ',' + io::format_optional(r.scale_excl_contig) + ',' +
               io::csv_escape(r.region) + '\n';
    }
    return out;
}

inline std::vector<OpennessRecord> parse_openness_csv(const io::CsvTable& t) {
    const auto c_dest = t.column("destination");
    const auto c_year = t.column("year");
    const auto c_skill = t.column("skill");
    const auto c_cut = t.column("cutoff_per_million");
    const auto c_div = t.column("diversity");
    const auto c_sa = t.column("scale_all");
    const auto c_se = t.column("scale_excl_contig");
    const auto c_reg = t.column("region");
    std::vector<OpennessRecord> out;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        OpennessRecord r;
        r.destination = detail::iso3_cell(t, i, c_dest);
        r.year = detail::year_cell(t, i, c_year);
        auto skill = parse_skill(detail::cell(t, i, c_skill));
        if (!skill) throw Error(ErrorKind::InvalidValue, "unknown skill", i);
        r.skill = *skill;
        r.cutoff_per_million = detail::number_cell(t, i, c_cut);
        if (auto d = io::parse_int(detail::cell(t, i, c_div))) r.diversity = static_cast<int>(*d);
        r.scale_all = detail::optional_number_cell(t, i, c_sa);
        r.scale_excl_contig = detail::optional_number_cell(t, i, c_se);
        r.region = detail::cell(t, i, c_reg);
        out.push_back(std::move(r));
    }
    return out;
}

inline std::string changes_csv(const std::vector<OpennessChange>& changes) {
    std::string out = "destination,period,delta_diversity,region\n";
    for (const auto& ch : changes)
        for (const auto& d : ch.deltas)
            out += d.destination + ',' + ch.period() + ',' + std::to_string(d.delta) + ',' + io::csv_escape(d.region) + '\n';
    return out;
}

inline std::string change_summary_csv(const std::vector<OpennessChange>& changes) {
    std::string out = "period,scope,mean_delta_diversity,n\n";
    for (const auto& ch : changes) {
        out += ch.period() + ",global," + io::format_double(ch.global_mean) + ',' + std::to_string(ch.deltas.size()) + '\n';
        std::map<std::string, std::size_t> counts;
        for (const auto& d : ch.deltas) ++counts[d.region];
        for (const auto& [region, m] : ch.region_means)
            out += ch.period() + ',' + io::csv_escape("region:" + region) + ',' + io::format_double(m) + ',' +
                   std::to_string(counts[region]) + '\n';
    }
    return out;
}

inline std::string plotdata_skill_csv(const SkillSplit& split) {
    std::string out = "destination,year,log_open_tertiary,log_open_nontertiary,pop_d\n";
    for (const auto& p : split.pairs)
        out += p.destination + ',' + std::to_string(p.year) + ',' + io::format_double(plot_log_count(p.tertiary)) + ',' +
               io::format_double(plot_log_count(p.nontertiary)) + ',' + io::format_double(p.pop_d) + '\n';
    return out;
}

inline std::string cutoff_sweep_csv(const CutoffSweep& sweep) {
    std::string out = "destination,year,skill,cutoff_per_million,diversity\n";
    for (const auto& row : sweep.rows)
        for (std::size_t c = 0; c < sweep.cutoffs.size(); ++c)
            out += row.key.destination + ',' + std::to_string(row.key.year) + ',' + std::string(to_string(row.key.skill)) +
                   ',' + io::format_double(sweep.cutoffs[c]) + ',' +
                   (row.counts[c] ? std::to_string(*row.counts[c]) : "") + '\n';
    return out;
}

inline std::string rank_correlation_csv(const CutoffSweep& sweep) {
    std::string out = "cutoff_a,cutoff_b,spearman,n\n";
    for (const auto& rc : sweep.rank_correlations)
        out += io::format_double(rc.cutoff_a) + ',' + io::format_double(rc.cutoff_b) + ',' + io::format_double(rc.spearman) +
               ',' + std::to_string(rc.n) + '\n';
    return out;
}

} // namespace openmig
