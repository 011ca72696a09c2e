#include "openmig/cli.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstdlib>

#include <sys/wait.h>

using namespace openmig;
namespace fs = std::filesystem;
using testutil::slurp;
using testutil::TempDir;

namespace {

cli::RunConfig config_in(const fs::path& dir) {
    cli::RunConfig cfg;
    cfg.out = dir;
    cfg.n_countries = 12;
    cfg.seed = 11;
    cfg.min_population = 0;
    return cfg;
}

struct Run {
    int code;
    std::string out;
    std::string err;
};

template <class F>
Run run(F cmd, const cli::RunConfig& cfg) {
    std::ostringstream out, err;
    int code = cmd(cfg, out, err);
    return {code, out.str(), err.str()};
}

std::map<std::string, std::string> artifacts(const fs::path& dir) {
    std::map<std::string, std::string> m;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().filename() != "panel_meta.json") m[e.path().filename().string()] = slurp(e.path());
    return m;
}

int run_binary(const std::string& args, const fs::path& log, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + OPENMIG_BIN + " " + args + " >" + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Cli, FullPipelineSucceeds) {
    TempDir tmp("cli_pipeline");
    auto cfg = config_in(tmp.path());
    auto sim = run(cli::cmd_simulate, cfg);
    ASSERT_EQ(sim.code, 0) << sim.err;
    auto fit = run(cli::cmd_fit, cfg);
    ASSERT_EQ(fit.code, 0) << fit.err;
    EXPECT_NE(fit.out.find("log_dist"), std::string::npos);
    auto op = run(cli::cmd_openness, cfg);
    ASSERT_EQ(op.code, 0) << op.err;
    auto val = run(cli::cmd_validate, cfg);
    ASSERT_EQ(val.code, 0) << val.err;
    for (const char* f : {"fit.json", "panel_meta.json", "openness.csv", "changes.csv", "cutoff_sweep.csv",
                          "plotdata_levels.csv", "plotdata_skill.csv", "correlations.csv", "regression.json",
                          "world_truth.json", "recovery.json", "fit_manifest.json"})
        EXPECT_TRUE(fs::exists(tmp.path() / f)) << f;
    auto manifest = nlohmann::json::parse(slurp(tmp.path() / "openness_manifest.json"));
    EXPECT_EQ(manifest["schema_version"], cli::kSchemaVersion);
}

TEST(Cli, MissingStocksIsUsageErrorNamingThePath) {
    TempDir tmp("cli_missing");
    auto cfg = config_in(tmp.path());
    cfg.stocks = tmp.path() / "nowhere" / "stocks.csv";
    auto r = run(cli::cmd_fit, cfg);
    EXPECT_EQ(r.code, cli::kUsage);
    EXPECT_NE(r.err.find(cfg.stocks.string()), std::string::npos);
}

TEST(Cli, OpennessWithoutInputsIsMissingPrereq) {
    TempDir tmp("cli_openness");
    EXPECT_EQ(run(cli::cmd_openness, config_in(tmp.path())).code, cli::kMissingPrereq);
}

TEST(Cli, ValidateWithoutOpennessIsMissingPrereq) {
    TempDir tmp("cli_validate");
    auto cfg = config_in(tmp.path());
    ASSERT_EQ(run(cli::cmd_simulate, cfg).code, 0);
    auto r = run(cli::cmd_validate, cfg);
    EXPECT_EQ(r.code, cli::kMissingPrereq);
    EXPECT_NE(r.err.find("openness.csv"), std::string::npos);
}

TEST(Cli, EmptyMeasureSetIsReportedNotFailed) {
    TempDir tmp("cli_empty");
    auto cfg = config_in(tmp.path());
    ASSERT_EQ(run(cli::cmd_simulate, cfg).code, 0);
    cfg.min_population = 1e15;
    auto r = run(cli::cmd_openness, cfg);
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("no destinations passed filters"), std::string::npos);
}

TEST(Cli, DenseGuardExitCode) {
    TempDir tmp("cli_guard");
    auto cfg = config_in(tmp.path());
    cfg.n_countries = 200;
    cfg.oracle = true;
    EXPECT_EQ(run(cli::cmd_simulate, cfg).code, cli::kDenseGuard);
}

TEST(Cli, InvalidYearIsUsageError) {
    TempDir tmp("cli_year");
    auto cfg = config_in(tmp.path());
    cfg.years = {2005};
    EXPECT_EQ(run(cli::cmd_simulate, cfg).code, cli::kUsage);
}

TEST(Cli, RerunsAreByteIdentical) {
    TempDir a("cli_det_a"), b("cli_det_b");
    for (const auto* dir : {&a, &b}) {
        auto cfg = config_in(dir->path());
        ASSERT_EQ(run(cli::cmd_simulate, cfg).code, 0);
        ASSERT_EQ(run(cli::cmd_fit, cfg).code, 0);
        ASSERT_EQ(run(cli::cmd_openness, cfg).code, 0);
        ASSERT_EQ(run(cli::cmd_validate, cfg).code, 0);
    }
    auto fa = artifacts(a.path()), fb = artifacts(b.path());
    EXPECT_EQ(fa.size(), fb.size());
    for (const auto& [name, bytes] : fa) EXPECT_EQ(bytes, fb[name]) << name;
    auto ma = nlohmann::json::parse(slurp(a.path() / "panel_meta.json"));
    auto mb = nlohmann::json::parse(slurp(b.path() / "panel_meta.json"));
    ma.erase("generated_at");
    mb.erase("generated_at");
    EXPECT_EQ(ma, mb);
}

TEST(CliBinary, FlagsOverrideConfigFile) {
    TempDir tmp("cli_bin");
    const auto conf = tmp.path() / "run.conf";
    std::ofstream(conf) << "seed=3\nn-countries=5\nout=" << (tmp.path() / "from_file").string() << "\n";
    const auto out = tmp.path() / "from_flag";
    ASSERT_EQ(run_binary("simulate --config " + conf.string() + " --seed 9 --out " + out.string(), tmp.path() / "log"), 0)
        << slurp(tmp.path() / "log");
    EXPECT_FALSE(fs::exists(tmp.path() / "from_file"));
    auto rec = nlohmann::json::parse(slurp(out / "recovery.json"));
    EXPECT_EQ(rec["seed"], 9);
    EXPECT_EQ(rec["n_countries"], 5);
}

TEST(CliBinary, UnknownConfigKeyRejected) {
    TempDir tmp("cli_bin_bad");
    const auto conf = tmp.path() / "bad.conf";
    std::ofstream(conf) << "sede=3\n";
    EXPECT_EQ(run_binary("simulate --config " + conf.string() + " --out " + tmp.path().string(), tmp.path() / "log"),
              cli::kUsage);
}

TEST(CliBinary, EnvironmentSuppliesDefaultOutDir) {
    TempDir tmp("cli_bin_env");
    const auto dir = tmp.path() / "envout";
    ASSERT_EQ(run_binary("simulate --n-countries 4 --seed 2", tmp.path() / "log", "OPENMIG_OUT=" + dir.string()), 0)
        << slurp(tmp.path() / "log");
    EXPECT_TRUE(fs::exists(dir / "world_truth.json"));
}

TEST(CliBinary, HelpExitsZeroAndMissingSubcommandIsUsage) {
    TempDir tmp("cli_bin_help");
    EXPECT_EQ(run_binary("--help", tmp.path() / "log"), 0);
    EXPECT_EQ(run_binary("", tmp.path() / "log"), cli::kUsage);
}
