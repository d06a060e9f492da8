#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "fedpower/config.hpp"
#include "fedpower/experiments.hpp"

namespace fs = std::filesystem;
using namespace fedpower;

namespace {

void write_eval_csv(std::ostream& os, const ExperimentConfig& cfg, const std::string& policy,
                    const PolicyEvaluation& ev, std::span<const double> rate_floor) {
    write_csv_header(os, cfg, cfg.seed);
    os << "policy,worker,transmit_fraction,conditional_rate,rate_floor\n";
    for (std::size_t i = 0; i < ev.conditional_rate.size(); ++i) {
        os << policy << "," << i << "," << format_number(ev.transmit_fraction[i]) << ","
           << format_number(ev.conditional_rate[i]) << "," << format_number(rate_floor[i]) << "\n";
    }
    os << "# weighted_per = " << format_number(ev.weighted_per) << "\n";
    os << "# weighted_failure = " << format_number(ev.weighted_failure) << "\n";
}

int run(const std::string& command, ExperimentConfig cfg) {
    cfg.experiment = command;
    const fs::path run_dir = cfg.run_dir;
    fs::create_directories(run_dir);
    {
        std::ofstream snap(run_dir / "config.txt");
        write_config(snap, cfg);
    }
    ModelStore store(run_dir / "checkpoints", cfg.train_missing);

    if (command == "train") {
        const auto kind = parse_policy_kind(cfg.policy);
        const auto sc = make_scenario(cfg, cfg.workers, cfg.seed, cfg.interference, cfg.p_max_dbw);
        auto trained = train_policy(cfg, kind, sc, cfg.seed);
        const fs::path out = cfg.checkpoint.empty()
                                 ? run_dir / "checkpoints" / (model_name(kind, factor_cell(cfg.interference), cfg.seed) + ".fpm")
                                 : fs::path(cfg.checkpoint);
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        ModelStore::save(out, trained.policy);
        std::ofstream log(run_dir / "train_log.csv");
        write_training_log(log, trained.log);
        std::cout << "best epoch " << trained.best_epoch << ", validation " << trained.best_validation << "\n"
                  << "checkpoint " << out.string() << "\n";
        return 0;
    }
    if (command == "eval") {
        const auto kind = parse_policy_kind(cfg.policy);
        const auto sc = make_scenario(cfg, cfg.workers, cfg.seed, cfg.interference, cfg.p_max_dbw);
        PowerPolicy pol = baseline_policy(PolicyKind::orth, cfg.seed);
        if (kind == PolicyKind::gcn || kind == PolicyKind::mlp) {
            if (cfg.checkpoint.empty()) throw ConfigError("eval of a learned policy needs --checkpoint");
            pol = policy_from_checkpoint(load_checkpoint(cfg.checkpoint));
        } else {
            pol = baseline_policy(kind, cfg.seed);
        }
        const auto ev = evaluate_policy(pol, sc.test, sc.weights, sc.link);
        std::ofstream os(run_dir / "eval.csv");
        write_eval_csv(os, cfg, cfg.policy, ev, sc.rate_floor);
        std::cout << "weighted PER " << ev.weighted_per << "\n";
        return 0;
    }
    if (command == "sweep-interference" || command == "sweep-pmax" || command == "sweep-size") {
        const auto rows = command == "sweep-interference" ? run_interference_sweep(cfg, store)
                          : command == "sweep-pmax"       ? run_pmax_sweep(cfg, store)
                                                          : run_size_sweep(cfg, store);
        const auto name = command.substr(6) + ".csv";
        std::ofstream os(run_dir / name);
        write_sweep_csv(os, cfg, rows);
        std::cout << rows.size() << " rows written to " << (run_dir / name).string() << "\n";
        return 0;
    }
    if (command == "fl-run") {
        const auto curves = run_fl(cfg, store, run_dir / "fl");
        std::ofstream os(run_dir / "fl.csv");
        write_fl_csv(os, cfg, curves);
        for (const auto& [name, err] : mean_final_error(curves))
            std::cout << name << " final error " << err << "\n";
        return 0;
    }
    throw ConfigError("unknown command " + command);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Power control for federated learning over wireless uplinks"};
    app.require_subcommand(1);
    std::string config_file;
    bool paper_scale = false;
    app.add_option("--config", config_file, "key = value file applied after the flags");
    app.add_flag("--paper-scale", paper_scale, "full channel counts, 1000 epochs and the small step sizes");

    std::map<std::string, std::string> given;
    const ExperimentConfig defaults = ExperimentConfig::desk();
    defaults.visit_fields([&](const char* name, const auto& ref, const char* help) {
        app.add_option(std::string("--") + name, given[name], std::string(help) + " [" + detail::format(ref) + "]");
    });

    const char* commands[][2] = {
        {"train", "train one learned policy and save its checkpoint"},
        {"eval", "evaluate one policy on the test channels"},
        {"sweep-interference", "weighted PER versus interference factor"},
        {"sweep-pmax", "weighted PER versus P_max, retraining per grid point"},
        {"sweep-size", "weighted PER versus number of workers, trained at the base size"},
        {"fl-run", "federated learning error curves per policy plus ideal FL"},
    };
    for (const auto& c : commands) app.add_subcommand(c[0], c[1])->fallthrough();

    CLI11_PARSE(app, argc, argv);
    try {
        ExperimentConfig cfg = paper_scale ? ExperimentConfig{} : ExperimentConfig::desk();
        for (const auto& [key, value] : given) {
            if (app.count("--" + key) > 0) set_field(cfg, key, value);
        }
        if (!config_file.empty()) apply_config_file(cfg, config_file);
        return run(app.get_subcommands().front()->get_name(), std::move(cfg));
    } catch (const fedpower::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
