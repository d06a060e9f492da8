#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "fedpower/config.hpp"
#include "fedpower/experiments.hpp"
#include "oracles.hpp"

using namespace fedpower;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny() {
    auto cfg = ExperimentConfig::desk();
    cfg.train_channels = 16;
    cfg.validation_channels = 8;
    cfg.test_channels = 16;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.seeds = {1};
    cfg.factors = {1};
    return cfg;
}

fs::path fresh_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / name;
    fs::remove_all(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

#ifdef FEDPOWER_CLI_PATH
constexpr const char* kCli = FEDPOWER_CLI_PATH;
#else
constexpr const char* kCli = nullptr;
#endif

int run_cli(const std::string& args) {
    if (!kCli) return -1;
    const int status = std::system((std::string(kCli) + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Config, SetParseAndWrite) {
    ExperimentConfig cfg;
    set_field(cfg, "workers", "6");
    set_field(cfg, "factors", "1, 2.5,8");
    set_field(cfg, "adam-theta", "false");
    set_field(cfg, "policies", "gcn,orth");
    EXPECT_EQ(cfg.workers, 6u);
    EXPECT_EQ(cfg.factors, (std::vector<double>{1, 2.5, 8}));
    EXPECT_FALSE(cfg.adam_theta);
    EXPECT_EQ(cfg.policies, (std::vector<std::string>{"gcn", "orth"}));
    EXPECT_THROW(set_field(cfg, "no-such-key", "1"), ConfigError);
    EXPECT_THROW(set_field(cfg, "workers", "six"), ConfigError);
    EXPECT_THROW(set_field(cfg, "adam-theta", "maybe"), ConfigError);

    std::istringstream file("# comment\nepochs = 7   # trailing\n\nstep-q=0.5\n");
    apply_config(cfg, file);
    EXPECT_EQ(cfg.epochs, 7u);
    EXPECT_EQ(cfg.step_q, 0.5);
    std::istringstream broken("epochs 7\n");
    EXPECT_THROW(apply_config(cfg, broken), ConfigError);

    std::ostringstream os;
    write_config(os, cfg);
    ExperimentConfig back;
    std::istringstream is(os.str());
    apply_config(back, is);
    std::ostringstream again;
    write_config(again, back);
    EXPECT_EQ(os.str(), again.str());
}

TEST(Config, DefaultsAndDeskScale) {
    const ExperimentConfig full;
    EXPECT_EQ(full.epochs, 1000u);
    EXPECT_EQ(full.train_channels, 1000u);
    EXPECT_EQ(full.step_theta, 1e-3);
    EXPECT_EQ(full.step_lambda_r, 1e-4);
    const auto desk = ExperimentConfig::desk();
    EXPECT_GE(desk.epochs, 200u);
    EXPECT_GE(desk.train_channels, 200u);
}

TEST(Evaluation, OrthMatchesDirectFormula) {
    const auto cfg = tiny();
    const auto sc = make_scenario(cfg, 8, 1, 1.0, cfg.p_max_dbw);
    PowerPolicy orth{OrthPolicy{}};
    const auto ev = evaluate_policy(orth, sc.test, sc.weights, sc.link);
    double want = 0.0;
    for (const auto& H : sc.test) {
        const auto s = oracle::sinr(H.entries, std::vector<double>(8, sc.link.p_max));
        for (std::size_t i = 0; i < 8; ++i) want += sc.weights[i] * oracle::per(s[i], sc.link.waterfall);
    }
    want /= static_cast<double>(sc.test.size());
    EXPECT_NEAR(ev.weighted_per, want, 1e-12);
    EXPECT_NEAR(ev.weighted_failure, want, 1e-12);
    EXPECT_EQ(ev.min_power, sc.link.p_max);
    EXPECT_EQ(ev.max_power, sc.link.p_max);
    for (double f : ev.transmit_fraction) EXPECT_EQ(f, 1.0);
}

TEST(Sweeps, InterferenceRows) {
    const auto cfg = tiny();
    ModelStore store;
    const auto rows = run_interference_sweep(cfg, store);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0].policy, "gcn");
    EXPECT_EQ(rows[3].policy, "orth");
    for (const auto& r : rows) {
        EXPECT_EQ(r.axis, "factor");
        EXPECT_EQ(r.value, 1.0);
        EXPECT_GE(r.eval.min_power, 0.0);
        EXPECT_LE(r.eval.max_power, dbw_to_watts(cfg.p_max_dbw));
    }
}

TEST(Sweeps, PmaxRowCount) {
    auto cfg = tiny();
    cfg.p_max_grid = {-30, -20, -10};
    cfg.policies = {"rand", "orth"};
    ModelStore store;
    const auto rows = run_pmax_sweep(cfg, store);
    EXPECT_EQ(rows.size(), 6u);
    EXPECT_EQ(rows[4].value, -10.0);
    EXPECT_NEAR(rows[5].eval.max_power, 0.1, 1e-15);
}

TEST(Sweeps, SizeSweep) {
    auto cfg = tiny();
    cfg.sizes = {6, 8, 16};
    ModelStore unused;
    EXPECT_THROW((void)run_size_sweep(cfg, unused), UnsupportedPolicyError);
    cfg.policies = {"gcn", "orth"};
    ModelStore store;
    const auto rows = run_size_sweep(cfg, store);
    ASSERT_EQ(rows.size(), 6u);
    const auto inter = run_interference_sweep(cfg, store);
    // Same stored GCN and the same base scenario at L = 8.
    EXPECT_EQ(rows[2].value, 8.0);
    EXPECT_EQ(rows[2].eval.weighted_per, inter[0].eval.weighted_per);
    EXPECT_EQ(rows[3].eval.weighted_per, inter[1].eval.weighted_per);
}

TEST(Sweeps, CsvHeaderAndDeterminism) {
    auto cfg = tiny();
    cfg.policies = {"gcn", "rand"};
    ModelStore a, b;
    const auto ra = run_interference_sweep(cfg, a);
    const auto rb = run_interference_sweep(cfg, b);
    std::ostringstream oa, ob;
    write_sweep_csv(oa, cfg, ra);
    write_sweep_csv(ob, cfg, rb);
    EXPECT_EQ(oa.str(), ob.str());
    EXPECT_NE(oa.str().find("# epochs = 2\n"), std::string::npos);
    EXPECT_NE(oa.str().find("# master_seed = 1\n"), std::string::npos);
    EXPECT_NE(oa.str().find("factor,policy,seed,weighted_per,weighted_failure,min_power,max_power\n"),
              std::string::npos);
}

TEST(ModelStore, SavesLoadsAndRefusesMissing) {
    const auto dir = fresh_dir("fedpower_store");
    const auto cfg = tiny();
    const auto sc = make_scenario(cfg, 8, 2, 1.0, cfg.p_max_dbw);
    ModelStore store(dir);
    auto trained = learned_policy(store, cfg, PolicyKind::gcn, sc, "f1", 2);
    EXPECT_TRUE(fs::exists(dir / "gcn_f1_s2.fpm"));
    EXPECT_TRUE(fs::exists(dir / "gcn_f1_s2_train.csv"));

    ModelStore reload(dir, false);
    auto loaded = learned_policy(reload, cfg, PolicyKind::gcn, sc, "f1", 2);
    EXPECT_EQ(loaded.allocate(sc.test[0], sc.link.p_max), trained.allocate(sc.test[0], sc.link.p_max));
    EXPECT_THROW((void)learned_policy(reload, cfg, PolicyKind::mlp, sc, "f1", 2), ConfigError);
    fs::remove_all(dir);
}

TEST(FederatedExperiment, SmallRun) {
    auto cfg = tiny();
    cfg.policies = {"orth"};
    cfg.fl_rounds = 2;
    cfg.workers = 4;
    cfg.synth_samples = 1200;
    cfg.fl_test_samples = 100;
    ModelStore store;
    const auto curves = run_fl(cfg, store);
    ASSERT_EQ(curves.size(), 2u);
    EXPECT_EQ(curves[0].policy, "ideal");
    EXPECT_EQ(curves[0].error.size(), 3u);
    EXPECT_EQ(curves[0].stalls, 0u);
    std::ostringstream os;
    write_fl_csv(os, cfg, curves);
    EXPECT_NE(os.str().find("policy,seed,round,test_error\n"), std::string::npos);
    const auto means = mean_final_error(curves);
    EXPECT_EQ(means.at("ideal"), curves[0].error.back());
}

TEST(Cli, ExitCodesAndOutputs) {
    if (!kCli) GTEST_SKIP() << "CLI path not configured";
    const auto dir = fresh_dir("fedpower_cli");
    const std::string common = " --run-dir " + dir.string() +
                               " --train-channels 16 --validation-channels 8 --test-channels 16 --epochs 2 --seeds 1";
    EXPECT_EQ(run_cli("sweep-interference --factors 1" + common), 0);
    EXPECT_TRUE(fs::exists(dir / "interference.csv"));
    EXPECT_TRUE(fs::exists(dir / "config.txt"));
    EXPECT_NE(slurp(dir / "interference.csv").find("# experiment = sweep-interference"), std::string::npos);

    EXPECT_EQ(run_cli("eval --policy orth" + common), 0);
    EXPECT_TRUE(fs::exists(dir / "eval.csv"));

    EXPECT_EQ(run_cli("sweep-size --sizes 6,8" + common), 2);
    EXPECT_EQ(run_cli("sweep-interference --factors 3 --train-missing false" + common), 2);
    EXPECT_EQ(run_cli("eval --policy gcn --checkpoint " + (dir / "none.fpm").string() + common), 2);
    EXPECT_EQ(run_cli("train --workers zero" + common), 2);
    EXPECT_NE(run_cli("no-such-command"), 0);
    fs::remove_all(dir);
}
