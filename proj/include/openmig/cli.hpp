#pragma once

#include "openmig/analysis.hpp"
#include "openmig/error.hpp"
#include "openmig/estimator.hpp"
#include "openmig/ingest.hpp"
#include "openmig/io.hpp"
#include "openmig/openness.hpp"
#include "openmig/simlab.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace openmig::cli {

namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kOutEnv = "OPENMIG_OUT";

enum ExitCode : int {
    kOk = 0,
    kUsage = 2,       // also input validation
    kNoConvergence = 3,
    kMissingPrereq = 4,
    kDenseGuard = 5,
};

struct RunConfig {
    fs::path stocks;
    fs::path dyads;
    fs::path countries;
    fs::path external;
    std::vector<int> years{2000, 2010, 2020};
    Skill skill = Skill::all;
    double min_population = 1.2e6;
    double cutoff = kDefaultCutoffPerMillion;
    std::vector<double> cutoff_sweep{1.0, 5.0, 10.0, 100.0};
    bool exclude_contiguous = false;
    bool drop_colonial = false;
    bool drop_land = false;
    fs::path out;
    std::uint64_t seed = 42;
    int n_countries = 20;
    double zero_inflation = 0.0;
    bool oracle = false;
    int verbosity = 0;

    fs::path out_dir() const {
        if (!out.empty()) return out;
        if (const char* env = std::getenv(kOutEnv); env && *env) return env;
        return "openmig_out";
    }
    // inputs default to the file names simulate writes into the output directory
    fs::path stocks_path() const { return stocks.empty() ? out_dir() / "stocks.csv" : stocks; }
    fs::path dyads_path() const { return dyads.empty() ? out_dir() / "dyads.csv" : dyads; }
    fs::path countries_path() const { return countries.empty() ? out_dir() / "countries.csv" : countries; }
    fs::path external_path() const { return external.empty() ? out_dir() / "external_measures.csv" : external; }

    ModelSpec model_spec() const {
        ModelSpec spec;
        spec.drop_colonial = drop_colonial;
        spec.drop_land = drop_land;
        return spec;
    }

    void validate() const {
        if (years.empty()) throw Error(ErrorKind::InvalidValue, "years must be nonempty");
        for (int y : years)
            if (!is_census_year(y)) throw Error(ErrorKind::InvalidValue, "year " + std::to_string(y) + " is not 2000, 2010 or 2020");
        if (!(min_population >= 0)) throw Error(ErrorKind::InvalidValue, "min-pop must be nonnegative");
        if (!(cutoff > 0)) throw Error(ErrorKind::InvalidValue, "cutoff must be positive");
        for (double c : cutoff_sweep)
            if (!(c > 0)) throw Error(ErrorKind::InvalidValue, "cutoff sweep values must be positive");
        if (zero_inflation < 0 || zero_inflation >= 1) throw Error(ErrorKind::InvalidValue, "zero-inflation must lie in [0, 1)");
    }
};

class Logger {
public:
    Logger(std::ostream& err, int verbosity) : err_(err), verbosity_(verbosity) {}
    void info(const std::string& msg) const {
        if (verbosity_ >= 1) err_ << "[openmig] " << msg << '\n';
    }
    void debug(const std::string& msg) const {
        if (verbosity_ >= 2) err_ << "[openmig] " << msg << '\n';
    }
    void error(const std::string& msg) const { err_ << "error: " << msg << '\n'; }

private:
    std::ostream& err_;
    int verbosity_;
};

inline int exit_code_for(const Error& e) {
    switch (e.kind()) {
    case ErrorKind::NonConvergence:
    case ErrorKind::EmptyAfterSeparation:
    case ErrorKind::SingularBread:
        return kNoConvergence;
    case ErrorKind::TooLargeForDense:
        return kDenseGuard;
    default:
        return kUsage;
    }
}

namespace detail {

// SOURCE_DATE_EPOCH pins the clock for reproducible builds of the metadata
inline std::string utc_timestamp() {
    std::time_t t = std::time(nullptr);
    if (const char* sde = std::getenv("SOURCE_DATE_EPOCH"); sde && *sde) t = static_cast<std::time_t>(std::atoll(sde));
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

inline std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + '\n'; }

struct Written {
    std::vector<std::pair<std::string, std::string>> files; // name, sha256

    void write(const fs::path& dir, const std::string& name, const std::string& content) {
        io::write_atomic(dir / name, content);
        files.emplace_back(name, io::sha256_hex(content));
    }
};

inline void write_manifest(const fs::path& dir, const std::string& command, const Written& w,
                           nlohmann::ordered_json extra = nlohmann::ordered_json::object()) {
    nlohmann::ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["command"] = command;
    nlohmann::ordered_json files = nlohmann::ordered_json::object();
    for (const auto& [name, sha] : w.files) files[name] = sha;
    j["artifacts"] = files;
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    io::write_atomic(dir / (command + "_manifest.json"), dump(j));
}

struct Inputs {
    StockTable stocks;
    DyadTable dyads;
    IndicatorTable indicators;
};

inline void require_files(const std::vector<fs::path>& paths) {
    for (const auto& p : paths)
        if (!fs::exists(p)) throw Error(ErrorKind::FileNotFound, "cannot open " + p.string());
}

inline Inputs load_inputs(const RunConfig& cfg, const Logger& log) {
    require_files({cfg.stocks_path(), cfg.dyads_path(), cfg.countries_path()});
    Inputs in;
    log.info("reading " + cfg.stocks_path().string());
    in.stocks = load_stock_table(cfg.stocks_path());
    log.info("reading " + cfg.dyads_path().string());
    in.dyads = load_dyad_table(cfg.dyads_path());
    for (const auto& w : in.dyads.warnings) log.info("dyads: " + w);
    log.info("reading " + cfg.countries_path().string());
    in.indicators = load_indicator_table(cfg.countries_path());
    return in;
}

inline EstimationPanel panel_for(const Inputs& in, const RunConfig& cfg, Skill skill) {
    PanelFilter filter;
    filter.min_population = cfg.min_population;
    filter.years = cfg.years;
    filter.skill = skill;
    return build_panel(in.stocks, in.dyads, in.indicators, filter);
}

inline FitResult fit_logged(const EstimationPanel& panel, const ModelSpec& spec, const Logger& log) {
    log.info("fitting PPML on " + std::to_string(panel.size()) + " rows (" + std::string(to_string(panel.skill)) + ")");
    auto fit = fit_ppml(panel, spec);
    for (const auto& it : fit.iteration_log)
        log.debug("iteration " + std::to_string(it.iteration) + " deviance " + io::format_double(it.deviance));
    for (const auto& w : fit.warnings) log.info("warning: " + w);
    return fit;
}

inline void print_coefficients(std::ostream& out, const FitResult& fit) {
    out << std::left << std::setw(14) << "term" << std::setw(26) << "estimate" << "se\n";
    for (std::size_t k = 0; k < fit.coef_names.size(); ++k)
        out << std::setw(14) << fit.coef_names[k] << std::setw(26) << io::format_double(fit.coef[static_cast<Eigen::Index>(k)])
            << io::format_double(fit.se[static_cast<Eigen::Index>(k)]) << '\n';
    out << "n_obs " << fit.n_obs << "  clusters " << fit.n_clusters << "  pseudo_r2 " << io::format_double(fit.pseudo_r2)
        << '\n';
}

inline bool has_skill(const StockTable& t, Skill s) {
    for (const auto& r : t.rows)
        if (r.skill == s) return true;
    return false;
}

inline std::vector<double> sorted_unique(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

inline std::string plotdata_levels_csv(const std::vector<OpennessRecord>& records) {
    std::string out = "destination,year,diversity,log_diversity,region\n";
    for (const auto& r : records) {
        if (!r.diversity) continue;
        out += r.destination + ',' + std::to_string(r.year) + ',' + std::to_string(*r.diversity) + ',' +
               io::format_double(plot_log_count(*r.diversity)) + ',' + io::csv_escape(r.region) + '\n';
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------- fit

inline int cmd_fit(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    Logger log(err, cfg.verbosity);
    try {
        cfg.validate();
        auto in = detail::load_inputs(cfg, log);
        auto panel = detail::panel_for(in, cfg, cfg.skill);
        auto fit = detail::fit_logged(panel, cfg.model_spec(), log);
        if (!fit.converged) {
            log.error("NonConvergence: PPML did not converge after " + std::to_string(fit.iterations) + " iterations");
            return kNoConvergence;
        }
        const auto dir = cfg.out_dir();
        detail::Written w;
        w.write(dir, "fit.json", detail::dump(fit_to_json(fit, panel)));
        w.write(dir, "panel.csv", panel_to_csv(panel));
        // panel_meta carries the only timestamp; the manifest records everything else
        io::write_atomic(dir / "panel_meta.json", detail::dump(panel_meta_json(panel, detail::utc_timestamp())));
        detail::write_manifest(dir, "fit", w);
        detail::print_coefficients(out, fit);
        return kOk;
    } catch (const Error& e) {
        log.error(e.what());
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------- openness

inline int cmd_openness(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    Logger log(err, cfg.verbosity);
    try {
        cfg.validate();
        const auto dir = cfg.out_dir();
        for (const auto& p : {cfg.stocks_path(), cfg.dyads_path(), cfg.countries_path()})
            if (!fs::exists(p)) {
                log.error("no fit inputs: " + p.string() + " not found");
                return kMissingPrereq;
            }
        auto in = detail::load_inputs(cfg, log);
        const auto regions = in.indicators.region_map();
        const auto spec = cfg.model_spec();
        detail::Written w;

        EstimationPanel panel;
        try {
            panel = detail::panel_for(in, cfg, cfg.skill);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::EmptyPanel) throw;
            w.write(dir, "openness.csv", openness_csv({}));
            detail::write_manifest(dir, "openness", w);
            out << "no destinations passed filters\n";
            return kOk;
        }
        auto fit = detail::fit_logged(panel, spec, log);
        if (!fit.converged) {
            log.error("NonConvergence: PPML did not converge");
            return kNoConvergence;
        }
        auto rm = residual_matrix(fit, panel);
        auto records = openness_records(rm, cfg.cutoff, regions);
        auto sweep = cutoff_sweep(rm, detail::sorted_unique(cfg.cutoff_sweep));

        std::vector<OpennessChange> changes;
        for (int y : panel.years)
            if (std::find(panel.years.begin(), panel.years.end(), y - 10) != panel.years.end())
                changes.push_back(openness_change(records_for_year(records, y), records_for_year(records, y - 10), regions));

        w.write(dir, "openness.csv", openness_csv(records));
        w.write(dir, "cutoff_sweep.csv", cutoff_sweep_csv(sweep));
        w.write(dir, "cutoff_rank_correlations.csv", rank_correlation_csv(sweep));
        w.write(dir, "changes.csv", changes_csv(changes));
        w.write(dir, "change_summary.csv", change_summary_csv(changes));
        w.write(dir, "plotdata_levels.csv", detail::plotdata_levels_csv(records));

        nlohmann::ordered_json extra;
        extra["skill"] = to_string(cfg.skill);
        extra["cutoff_per_million"] = cfg.cutoff;
        extra["exclude_contiguous"] = cfg.exclude_contiguous;
        if (cfg.skill == Skill::all && detail::has_skill(in.stocks, Skill::tertiary) &&
            detail::has_skill(in.stocks, Skill::nontertiary)) {
            auto pt = detail::panel_for(in, cfg, Skill::tertiary);
            auto pn = detail::panel_for(in, cfg, Skill::nontertiary);
            auto ft = detail::fit_logged(pt, spec, log);
            auto fn = detail::fit_logged(pn, spec, log);
            if (!ft.converged || !fn.converged) {
                log.error("NonConvergence: skill-specific PPML did not converge");
                return kNoConvergence;
            }
            auto split = skill_split_openness(residual_matrix(ft, pt), residual_matrix(fn, pn), cfg.cutoff);
            for (const auto& m : split.coverage_mismatch) log.info("skill coverage mismatch: " + m);
            w.write(dir, "plotdata_skill.csv", plotdata_skill_csv(split));
            nlohmann::ordered_json sj;
            sj["correlation"] = split.correlation;
            sj["n_pairs"] = split.pairs.size();
            nlohmann::ordered_json means = nlohmann::ordered_json::object();
            for (const auto& [y, n] : split.n_by_year)
                means[std::to_string(y)] = {{"tertiary", split.mean_tertiary.at(y)},
                                            {"nontertiary", split.mean_nontertiary.at(y)},
                                            {"n", n}};
            sj["means_by_year"] = means;
            sj["coverage_mismatch"] = split.coverage_mismatch;
            extra["skill_split"] = sj;
        }
        detail::write_manifest(dir, "openness", w, extra);

        // summary: most open destinations in the latest year, then period means
        std::vector<const OpennessRecord*> latest;
        const int last_year = panel.years.back();
        for (const auto& r : records)
            if (r.year == last_year && r.diversity) latest.push_back(&r);
        if (latest.empty()) {
            out << "no destinations passed filters\n";
            return kOk;
        }
        std::stable_sort(latest.begin(), latest.end(), [&](const auto* a, const auto* b) {
            if (*a->diversity != *b->diversity) return *a->diversity > *b->diversity;
            return a->destination < b->destination;
        });
        const char* scale_name = cfg.exclude_contiguous ? "scale_excl_contig" : "scale_all";
        out << "most open destinations " << last_year << " (diversity at " << io::format_double(cfg.cutoff)
            << " per million; " << scale_name << ")\n";
        for (std::size_t i = 0; i < latest.size() && i < 10; ++i) {
            const auto& r = *latest[i];
            const auto& scale = cfg.exclude_contiguous ? r.scale_excl_contig : r.scale_all;
            out << "  " << r.destination << ' ' << *r.diversity << ' ' << io::format_optional(scale) << '\n';
        }
        for (const auto& ch : changes)
            out << "mean change " << ch.period() << ' ' << io::format_double(ch.global_mean) << " over " << ch.deltas.size()
                << " destinations\n";
        return kOk;
    } catch (const Error& e) {
        log.error(e.what());
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------- validate

inline int cmd_validate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    Logger log(err, cfg.verbosity);
    try {
        cfg.validate();
        const auto dir = cfg.out_dir();
        const auto openness_path = dir / "openness.csv";
        for (const auto& p : {openness_path, cfg.external_path(), cfg.countries_path()})
            if (!fs::exists(p)) {
                log.error("missing prerequisite " + p.string());
                return kMissingPrereq;
            }
        auto records = parse_openness_csv(io::read_csv(openness_path));
        std::vector<OpennessRecord> selected;
        for (auto& r : records)
            if (r.skill == cfg.skill && r.cutoff_per_million == cfg.cutoff) selected.push_back(std::move(r));
        auto external = load_external_table(cfg.external_path());
        auto indicators = load_indicator_table(cfg.countries_path());

        CorrelationMatrix cm;
        FdDataset fd;
        std::vector<NestedRegressions> models;
        try {
            cm = pearson_correlations(build_measure_panel(selected, external), measure_columns());
            fd = build_fd_dataset(indicators, selected);
            models.push_back(nested_regressions(fd, "aging"));
            models.push_back(nested_regressions(fd, "wages"));
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::InsufficientData && e.kind() != ErrorKind::RankDeficient) throw;
            log.error(std::string(e.what()) + " (openness.csv holds too little data for validation)");
            return kMissingPrereq;
        }
        detail::Written w;
        w.write(dir, "correlations.csv", correlations_csv(cm));
        w.write(dir, "regression.json", detail::dump(regressions_json(models, fd)));
        detail::write_manifest(dir, "validate", w);

        for (const auto& m : models) {
            const auto& full = m.columns.back();
            const auto* c = full.find("d_open");
            out << m.label << ": d_open " << io::format_double(c->estimate) << " (" << io::format_double(c->se) << ")"
                << stats::significance_stars(c->p) << "  n " << full.n_obs << "  adj_r2 " << io::format_double(full.adj_r2)
                << '\n';
        }
        return kOk;
    } catch (const Error& e) {
        log.error(e.what());
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------- simulate

inline int cmd_simulate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    Logger log(err, cfg.verbosity);
    try {
        cfg.validate();
        simlab::WorldParams params;
        params.n_countries = cfg.n_countries;
        params.years = cfg.years;
        params.seed = cfg.seed;
        params.zero_inflation = cfg.zero_inflation;
        params.skill_split = true;
        params.shocks = simlab::draw_shocks(params.n_countries, params.seed);
        log.info("generating world with " + std::to_string(params.n_countries) + " countries, seed " +
                 std::to_string(params.seed) + ", " + std::to_string(params.shocks.size()) + " shocked destinations");
        auto world = simlab::generate_world(params);
        const auto dir = cfg.out_dir();
        detail::Written w;
        w.write(dir, "stocks.csv", simlab::stocks_csv(world.stocks));
        w.write(dir, "dyads.csv", simlab::dyads_csv(world.dyads));
        w.write(dir, "countries.csv", simlab::indicators_csv(world.indicators));
        w.write(dir, "external_measures.csv", external_csv(world.external));
        w.write(dir, "panel.csv", panel_to_csv(world.panel));
        w.write(dir, "world_truth.json", detail::dump(simlab::truth_to_json(world.truth, world.panel)));

        const auto spec = cfg.model_spec();
        std::optional<FitResult> oracle;
        if (cfg.oracle) {
            try {
                oracle = simlab::dense_ppml_oracle(world.panel, spec);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::TooLargeForDense) throw;
                detail::write_manifest(dir, "simulate", w);
                log.error(e.what());
                return kDenseGuard;
            }
        }
        auto fit = detail::fit_logged(world.panel, spec, log);
        if (!fit.converged) {
            log.error("NonConvergence: PPML did not converge");
            return kNoConvergence;
        }

        nlohmann::ordered_json report;
        report["schema_version"] = kSchemaVersion;
        report["seed"] = cfg.seed;
        report["n_countries"] = cfg.n_countries;
        report["n_obs"] = fit.n_obs;
        auto rows = nlohmann::ordered_json::array();
        double max_gap = 0.0;
        for (std::size_t k = 0; k < fit.coef_names.size(); ++k) {
            const auto& name = fit.coef_names[k];
            nlohmann::ordered_json r;
            r["name"] = name;
            auto t = std::find(world.truth.regressors.begin(), world.truth.regressors.end(), name);
            if (t != world.truth.regressors.end())
                r["truth"] = world.truth.beta[static_cast<std::size_t>(t - world.truth.regressors.begin())];
            else
                r["truth"] = nullptr;
            r["estimate"] = fit.coef[static_cast<Eigen::Index>(k)];
            r["se"] = fit.se[static_cast<Eigen::Index>(k)];
            if (oracle) {
                const auto j = static_cast<Eigen::Index>(
                    std::find(oracle->coef_names.begin(), oracle->coef_names.end(), name) - oracle->coef_names.begin());
                if (j < oracle->coef.size()) {
                    const double gap = std::abs(oracle->coef[j] - fit.coef[static_cast<Eigen::Index>(k)]);
                    max_gap = std::max(max_gap, gap);
                    r["oracle_estimate"] = oracle->coef[j];
                    r["oracle_se"] = oracle->se[j];
                } else {
                    max_gap = std::numeric_limits<double>::infinity();
                }
            }
            rows.push_back(r);
        }
        report["coefficients"] = rows;
        if (oracle) report["max_oracle_coef_gap"] = max_gap;
        w.write(dir, "recovery.json", detail::dump(report));
        detail::write_manifest(dir, "simulate", w);

        out << std::left << std::setw(14) << "term" << std::setw(26) << "truth" << "estimate\n";
        for (const auto& r : rows)
            out << std::setw(14) << r["name"].get<std::string>() << std::setw(26)
                << (r["truth"].is_null() ? std::string("-") : io::format_double(r["truth"].get<double>()))
                << io::format_double(r["estimate"].get<double>()) << '\n';
        if (oracle) out << "max |fit - oracle| coefficient gap " << io::format_double(max_gap) << '\n';
        return kOk;
    } catch (const Error& e) {
        log.error(e.what());
        return exit_code_for(e);
    }
}

} // namespace openmig::cli
