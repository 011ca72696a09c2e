// openmig: gravity-model migration openness pipeline.
//
//   openmig simulate --out run --seed 7
//   openmig fit --out run
//   openmig openness --out run --cutoff 10
//   openmig validate --out run
//
// Options may also come from a flat key=value file given with --config;
// flags on the command line win over file values.

#include "openmig/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    using namespace openmig;
    cli::RunConfig cfg;
    std::string skill = "all";
    std::string stocks, dyads, countries, external, out;

    CLI::App app{"Gravity-model openness to immigration"};
    app.set_config("--config", "", "flat key=value configuration file");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1, 1);

    app.add_option("--stocks", stocks, "bilateral stocks CSV");
    app.add_option("--dyads", dyads, "dyadic covariates CSV");
    app.add_option("--countries", countries, "country-year indicators CSV");
    app.add_option("--external", external, "external openness indices CSV");
    app.add_option("--years", cfg.years, "census years")->delimiter(',')->capture_default_str();
    app.add_option("--skill", skill, "skill group")->check(CLI::IsMember({"all", "tertiary", "nontertiary"}))->capture_default_str();
    app.add_option("--min-pop", cfg.min_population, "minimum destination population")->capture_default_str();
    app.add_option("--cutoff", cfg.cutoff, "diversity cutoff per million")->capture_default_str();
    app.add_option("--cutoff-sweep", cfg.cutoff_sweep, "cutoffs for the sensitivity sweep")->delimiter(',')->capture_default_str();
    app.add_flag("--exclude-contiguous", cfg.exclude_contiguous, "report the scale measure without contiguous origins");
    app.add_flag("--drop-colonial", cfg.drop_colonial, "drop the colonial-tie regressors");
    app.add_flag("--drop-land", cfg.drop_land, "drop the land-area regressor");
    app.add_option("--out", out, "output directory (default $" + std::string(cli::kOutEnv) + " or ./openmig_out)");
    app.add_option("--seed", cfg.seed, "simulation seed")->capture_default_str();
    app.add_option("--n-countries", cfg.n_countries, "simulated countries")->capture_default_str();
    app.add_option("--zero-inflation", cfg.zero_inflation, "simulated structural-zero share")->capture_default_str();
    app.add_flag("--oracle", cfg.oracle, "also run the dense reference estimator");
    app.add_flag("-v,--verbose", cfg.verbosity, "log progress to stderr (repeat for more)");

    auto* fit = app.add_subcommand("fit", "estimate the gravity model")->fallthrough();
    auto* openness = app.add_subcommand("openness", "derive openness measures")->fallthrough();
    auto* validate = app.add_subcommand("validate", "correlations and first-difference regressions")->fallthrough();
    auto* simulate = app.add_subcommand("simulate", "generate a synthetic world and check recovery")->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cli::kUsage;
    }
    cfg.skill = *parse_skill(skill);
    cfg.stocks = stocks;
    cfg.dyads = dyads;
    cfg.countries = countries;
    cfg.external = external;
    cfg.out = out;

    if (*fit) return cli::cmd_fit(cfg, std::cout, std::cerr);
    if (*openness) return cli::cmd_openness(cfg, std::cout, std::cerr);
    if (*validate) return cli::cmd_validate(cfg, std::cout, std::cerr);
    if (*simulate) return cli::cmd_simulate(cfg, std::cout, std::cerr);
    return cli::kUsage;
}
