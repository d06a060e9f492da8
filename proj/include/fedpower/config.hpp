#pragma once

// Experiment configuration: one struct, a field table used for flags,
// key=value config files and the header comments of every CSV.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "fedpower/error.hpp"

namespace fedpower {

struct ExperimentConfig {
    std::string experiment = "train";
    std::size_t workers = 8;
    double p_max_dbw = -20.0;
    std::size_t antennas = 10;
    double mean_gain_db = 30.0;
    double pathloss_spread_db = 8.0;
    double interference = 1.0;
    std::vector<double> factors{1, 2, 4, 8};
    std::vector<double> p_max_grid{-40, -30, -20, -10, 0, 10};
    std::vector<std::size_t> sizes{6, 8, 16, 24, 32};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::uint64_t seed = 1;
    std::vector<std::string> policies{"gcn", "mlp", "rand", "orth"};
    std::string policy = "gcn";
    std::string checkpoint;

    double waterfall = 0.023;
    double bandwidth_hz = 1e6;
    double rate_floor_fraction = 0.5;

    std::size_t train_channels = 1000;
    std::size_t validation_channels = 1000;
    std::size_t test_channels = 1000;
    std::size_t epochs = 1000;
    std::size_t batch_size = 64;
    double step_theta = 1e-3;
    double step_q = 1e-4;
    double step_r = 1e-4;
    double step_lambda_q = 1e-4;
    double step_lambda_r = 1e-4;
    bool adam_theta = true;
    bool literal_q_update = false;
    std::string gcn_input = "watts";
    bool gcn_log1p = false;
    bool mlp_log1p = true;

    std::size_t fl_rounds = 50;
    std::size_t local_batch = 16;
    double local_lr = 1e-3;
    std::string mnist_dir;
    std::size_t synth_samples = 5000;
    std::size_t fl_test_samples = 1000;

    std::string run_dir = "runs/default";
    bool train_missing = true;

    /// Reduced channel counts, epochs and larger steps for single-core runs.
    static ExperimentConfig desk() {
        ExperimentConfig c;
        c.train_channels = c.validation_channels = c.test_channels = 200;
        c.epochs = 200;
        c.step_theta = 1e-2;
        c.step_q = c.step_r = c.step_lambda_q = c.step_lambda_r = 1e-2;
        return c;
    }

    template <class F>
    void visit_fields(F&& f) {
        f("experiment", experiment, "experiment kind");
        f("workers", workers, "number of workers L");
        f("p-max-dbw", p_max_dbw, "maximum transmit power in dBW");
        f("antennas", antennas, "receive antennas n_R");
        f("mean-gain-db", mean_gain_db, "median per-antenna channel gain in dB");
        f("pathloss-spread-db", pathloss_spread_db, "log-normal gain spread in dB");
        f("interference", interference, "interference scale for train/eval");
        f("factors", factors, "interference factors for the sweep");
        f("p-max-grid", p_max_grid, "P_max grid in dBW");
        f("sizes", sizes, "worker counts for the size sweep");
        f("seeds", seeds, "master seeds for sweeps");
        f("seed", seed, "master seed for train/eval");
        f("policies", policies, "policies to compare (gcn, mlp, rand, orth)");
        f("policy", policy, "policy for train/eval");
        f("checkpoint", checkpoint, "checkpoint path for eval");
        f("waterfall", waterfall, "PER waterfall threshold m");
        f("bandwidth-hz", bandwidth_hz, "bandwidth B in Hz");
        f("rate-floor-fraction", rate_floor_fraction, "r_0 as a fraction of the median full-power rate");
        f("train-channels", train_channels, "training channel realizations");
        f("validation-channels", validation_channels, "validation channel realizations");
        f("test-channels", test_channels, "test channel realizations");
        f("epochs", epochs, "training epochs");
        f("batch-size", batch_size, "primal-dual minibatch size");
        f("step-theta", step_theta, "policy parameter step");
        f("step-q", step_q, "q auxiliary step");
        f("step-r", step_r, "rate auxiliary step");
        f("step-lambda-q", step_lambda_q, "success multiplier step");
        f("step-lambda-r", step_lambda_r, "rate multiplier step");
        f("adam-theta", adam_theta, "use Adam for the policy ascent");
        f("literal-q-update", literal_q_update, "drop the multiplier term from the q step");
        f("gcn-input", gcn_input, "GCN node input unit (watts, dbw, normalized)");
        f("gcn-log1p", gcn_log1p, "feed log1p(H) to the GCN");
        f("mlp-log1p", mlp_log1p, "feed log1p(H) to the MLP");
        f("fl-rounds", fl_rounds, "federated rounds");
        f("local-batch", local_batch, "local training batch size");
        f("local-lr", local_lr, "local Adam learning rate");
        f("mnist-dir", mnist_dir, "directory with IDX files; synthetic data when empty");
        f("synth-samples", synth_samples, "synthetic dataset size");
        f("fl-test-samples", fl_test_samples, "FL test set size");
        f("run-dir", run_dir, "output directory");
        f("train-missing", train_missing, "train learned policies whose checkpoint is missing");
    }

    template <class F>
    void visit_fields(F&& f) const {
        const_cast<ExperimentConfig*>(this)->visit_fields(
            [&](const char* name, auto& ref, const char* help) { f(name, std::as_const(ref), help); });
    }
};

namespace detail {

template <class T>
T parse_scalar(std::string_view s, std::string_view key) {
    if constexpr (std::is_same_v<T, std::string>) {
        return std::string(s);
    } else if constexpr (std::is_same_v<T, bool>) {
        if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
        if (s == "0" || s == "false" || s == "no" || s == "off") return false;
        throw ConfigError("'" + std::string(key) + "' expects a boolean, got '" + std::string(s) + "'");
    } else {
        T v{};
        const auto* end = s.data() + s.size();
        const auto res = std::from_chars(s.data(), end, v);
        if (res.ec != std::errc{} || res.ptr != end) {
            throw ConfigError("'" + std::string(key) + "' cannot parse '" + std::string(s) + "'");
        }
        return v;
    }
}

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
void assign(T& ref, std::string_view text, std::string_view key) {
    if constexpr (requires { typename T::value_type; } && !std::is_same_v<T, std::string>) {
        T out;
        std::size_t start = 0;
        while (start <= text.size()) {
            const auto comma = text.find(',', start);
            const auto piece = trim(text.substr(start, comma == std::string_view::npos ? text.npos : comma - start));
            if (!piece.empty()) out.push_back(parse_scalar<typename T::value_type>(piece, key));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        ref = std::move(out);
    } else {
        ref = parse_scalar<T>(text, key);
    }
}

template <class T>
std::string format(const T& v) {
    if constexpr (std::is_same_v<T, std::string>) {
        return v;
    } else if constexpr (std::is_same_v<T, bool>) {
        return v ? "true" : "false";
    } else if constexpr (requires { v.begin(); }) {
        std::string out;
        for (const auto& x : v) out += (out.empty() ? "" : ",") + format(x);
        return out;
    } else {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    }
}

} // namespace detail

/// Sets one field by its flag name; unknown keys are a config error.
inline void set_field(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
    bool found = false;
    cfg.visit_fields([&](const char* name, auto& ref, const char*) {
        if (key == name) {
            detail::assign(ref, detail::trim(value), key);
            found = true;
        }
    });
    if (!found) throw ConfigError("unknown config key '" + std::string(key) + "'");
}

/// `key = value` lines; `#` starts a comment.
inline void apply_config(ExperimentConfig& cfg, std::istream& is) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string_view s = line;
        if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
        s = detail::trim(s);
        if (s.empty()) continue;
        const auto eq = s.find('=');
        if (eq == std::string_view::npos) throw ConfigError("config line " + std::to_string(lineno) + " has no '='");
        set_field(cfg, detail::trim(s.substr(0, eq)), s.substr(eq + 1));
    }
}

inline void apply_config_file(ExperimentConfig& cfg, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    apply_config(cfg, is);
}

/// Every field as `key = value`, each line prefixed by `prefix`.
inline void write_config(std::ostream& os, const ExperimentConfig& cfg, std::string_view prefix = "") {
    cfg.visit_fields([&](const char* name, const auto& ref, const char*) {
        os << prefix << name << " = " << detail::format(ref) << "\n";
    });
}

} // namespace fedpower
