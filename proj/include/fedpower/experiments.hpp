#pragma once

// Experiment runners behind the command-line tool: training, evaluation,
// the interference / P_max / size sweeps and the FL comparison.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fedpower/channel.hpp"
#include "fedpower/config.hpp"
#include "fedpower/dataio.hpp"
#include "fedpower/flsim.hpp"
#include "fedpower/pdtrain.hpp"
#include "fedpower/policy.hpp"

namespace fedpower {

inline ChannelModel channel_model(const ExperimentConfig& cfg, std::size_t workers) {
    return ChannelModel{workers, cfg.antennas, cfg.pathloss_spread_db, cfg.mean_gain_db};
}

inline LinkParams link_params(const ExperimentConfig& cfg, double p_max_dbw) {
    return LinkParams{cfg.waterfall, cfg.bandwidth_hz, dbw_to_watts(p_max_dbw)};
}

inline TrainConfig train_config(const ExperimentConfig& cfg, const LinkParams& link, std::uint64_t seed) {
    TrainConfig t;
    t.update.steps = StepSizes{cfg.step_theta, cfg.step_q, cfg.step_r, cfg.step_lambda_q, cfg.step_lambda_r};
    t.update.adam_theta = cfg.adam_theta;
    t.update.literal_q_update = cfg.literal_q_update;
    t.link = link;
    t.batch_size = cfg.batch_size;
    t.epochs = cfg.epochs;
    t.seed = seed;
    return t;
}

inline GcnOptions::InputUnit parse_input_unit(std::string_view s) {
    if (s == "watts") return GcnOptions::InputUnit::watts;
    if (s == "dbw") return GcnOptions::InputUnit::dbw;
    if (s == "normalized") return GcnOptions::InputUnit::normalized;
    throw ConfigError("unknown GCN input unit '" + std::string(s) + "'");
}

/// Channel realizations for one (seed, L), split into train/validation/test.
/// The split depends only on (seed, L, counts), so every experiment that
/// shares these sees the same test channels.
inline DatasetSplits<ChannelRealization> channel_splits(const ExperimentConfig& cfg, std::size_t workers,
                                                        std::uint64_t seed) {
    const SplitCounts counts{cfg.train_channels, cfg.validation_channels, cfg.test_channels};
    auto all = generate_channels(counts.total(), channel_model(cfg, workers), seed);
    return split_channels(std::move(all), seed, counts);
}

inline std::vector<CSIMatrix> to_csi(std::span<const ChannelRealization> chans, double scale) {
    std::vector<CSIMatrix> out;
    out.reserve(chans.size());
    for (const auto& c : chans) out.push_back(build_csi(c, scale));
    return out;
}

/// ω_i = k_i / K from the seeded shard sizes the FL simulation uses.
inline std::vector<double> worker_weights(std::size_t workers, std::uint64_t seed) {
    const auto counts = draw_sample_counts(workers, seed);
    return aggregation_weights(counts);
}

/// CSI sets, weights and rate floor for one (seed, L, interference) cell.
struct Scenario {
    std::vector<CSIMatrix> train;
    std::vector<CSIMatrix> validation;
    std::vector<CSIMatrix> test;
    std::vector<double> weights;
    std::vector<double> rate_floor;
    LinkParams link;
};

inline Scenario make_scenario(const ExperimentConfig& cfg, std::size_t workers, std::uint64_t seed, double scale,
                              double p_max_dbw) {
    const auto sp = channel_splits(cfg, workers, seed);
    Scenario s{to_csi(sp.train, scale), to_csi(sp.validation, scale), to_csi(sp.test, scale),
               worker_weights(workers, seed), {}, link_params(cfg, p_max_dbw)};
    s.rate_floor = default_rate_floor(s.train, s.link, cfg.rate_floor_fraction);
    return s;
}

struct TrainedPolicy {
    PowerPolicy policy;
    std::size_t best_epoch = 0;
    double best_validation = 0.0;
    std::vector<EpochLog> log;
};

inline TrainedPolicy train_policy(const ExperimentConfig& cfg, PolicyKind kind, const Scenario& sc,
                                  std::uint64_t seed) {
    const auto tc = train_config(cfg, sc.link, seed);
    const std::size_t L = sc.train.front().workers;
    if (kind == PolicyKind::gcn) {
        GcnOptions opt;
        opt.log1p_input = cfg.gcn_log1p;
        opt.input_unit = parse_input_unit(cfg.gcn_input);
        auto res = train(GcnPolicy(opt, seed), sc.train, sc.validation, sc.weights, sc.rate_floor, tc);
        return {PowerPolicy(std::move(res.best_policy)), res.best_epoch, res.best_validation_per, std::move(res.log)};
    }
    if (kind == PolicyKind::mlp) {
        MlpOptions opt;
        opt.workers = L;
        opt.log1p_input = cfg.mlp_log1p;
        auto res = train(MlpPolicy(opt, seed), sc.train, sc.validation, sc.weights, sc.rate_floor, tc);
        return {PowerPolicy(std::move(res.best_policy)), res.best_epoch, res.best_validation_per, std::move(res.log)};
    }
    throw ConfigError("only gcn and mlp policies are trained");
}

inline PowerPolicy baseline_policy(PolicyKind kind, std::uint64_t seed) {
    if (kind == PolicyKind::rand) return PowerPolicy(RandPolicy(seed ^ 0x52414e44ULL));
    if (kind == PolicyKind::orth) return PowerPolicy(OrthPolicy{});
    throw ConfigError("not a baseline policy");
}

/// Learned policies keyed by name; loads from and saves to `dir` when set.
class ModelStore {
public:
    explicit ModelStore(std::optional<std::filesystem::path> dir = std::nullopt, bool train_missing = true)
        : dir_(std::move(dir)), train_missing_(train_missing) {}

    PowerPolicy get(const std::string& name, const std::function<TrainedPolicy()>& trainer) {
        if (auto it = cache_.find(name); it != cache_.end()) return it->second;
        if (dir_) {
            const auto path = *dir_ / (name + ".fpm");
            if (std::filesystem::exists(path)) {
                auto p = policy_from_checkpoint(load_checkpoint(path.string()));
                cache_.emplace(name, p);
                return p;
            }
        }
        if (!train_missing_) {
            throw ConfigError("missing checkpoint for " + name +
                              (dir_ ? " in " + dir_->string() : std::string(" (no checkpoint directory)")));
        }
        auto trained = trainer();
        if (dir_) {
            std::filesystem::create_directories(*dir_);
            save(*dir_ / (name + ".fpm"), trained.policy);
            std::ofstream log(*dir_ / (name + "_train.csv"));
            write_training_log(log, trained.log);
        }
        cache_.emplace(name, trained.policy);
        return trained.policy;
    }

    static void save(const std::filesystem::path& path, const PowerPolicy& p) {
        std::visit(
            [&](const auto& impl) {
                using T = std::decay_t<decltype(impl)>;
                if constexpr (std::is_same_v<T, GcnPolicy> || std::is_same_v<T, MlpPolicy>)
                    save_checkpoint(path.string(), to_checkpoint(impl));
                else throw ConfigError("baselines have no checkpoint");
            },
            p.impl());
    }

private:
    std::optional<std::filesystem::path> dir_;
    bool train_missing_;
    std::map<std::string, PowerPolicy> cache_;
};

inline std::string model_name(PolicyKind kind, std::string_view cell, std::uint64_t seed) {
    return std::string(to_string(kind)) + "_" + std::string(cell) + "_s" + std::to_string(seed);
}

inline std::string format_number(double v) { return detail::format(v); }

/// Learned policy for one cell, trained on `sc` if not cached.
inline PowerPolicy learned_policy(ModelStore& store, const ExperimentConfig& cfg, PolicyKind kind,
                                  const Scenario& sc, std::string_view cell, std::uint64_t seed) {
    return store.get(model_name(kind, cell, seed), [&] { return train_policy(cfg, kind, sc, seed); });
}

// ---------------------------------------------------------------------------
// Evaluation

struct PolicyEvaluation {
    double weighted_per = 0.0;       // transmitting workers only
    double weighted_failure = 0.0;   // silent workers count as failures
    std::vector<double> conditional_rate;   // mean rate given p_i > ε_p, b/s
    std::vector<double> transmit_fraction;
    double min_power = 0.0;
    double max_power = 0.0;
};

/// Raw allocations, no rate-floor selection.
inline PolicyEvaluation evaluate_policy(PowerPolicy& policy, std::span<const CSIMatrix> test,
                                        std::span<const double> weights, const LinkParams& link) {
    if (test.empty()) throw ConfigError("evaluation needs test channels");
    const std::size_t L = test.front().workers;
    const auto powers = policy.allocate_batch(test, link.p_max);
    const double eps_p = transmit_threshold(link.p_max);
    PolicyEvaluation ev;
    ev.conditional_rate.assign(L, 0.0);
    ev.transmit_fraction.assign(L, 0.0);
    ev.min_power = std::numeric_limits<double>::infinity();
    ev.max_power = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < test.size(); ++s) {
        const auto& p = powers[s];
        ev.weighted_per += weighted_per(p, test[s], weights, link.waterfall, link.p_max);
        ev.weighted_failure += weighted_failure(p, test[s], weights, link.waterfall, link.p_max);
        const auto snr = sinr(p, test[s]);
        for (std::size_t i = 0; i < L; ++i) {
            ev.min_power = std::min(ev.min_power, p[i]);
            ev.max_power = std::max(ev.max_power, p[i]);
            if (p[i] > eps_p) {
                ev.transmit_fraction[i] += 1.0;
                ev.conditional_rate[i] += link.bandwidth_hz * std::log1p(snr[i]);
            }
        }
    }
    const double n = static_cast<double>(test.size());
    ev.weighted_per /= n;
    ev.weighted_failure /= n;
    for (std::size_t i = 0; i < L; ++i) {
        if (ev.transmit_fraction[i] > 0) ev.conditional_rate[i] /= ev.transmit_fraction[i];
        ev.transmit_fraction[i] /= n;
    }
    return ev;
}

// ---------------------------------------------------------------------------
// CSV output

inline void write_csv_header(std::ostream& os, const ExperimentConfig& cfg, std::uint64_t master_seed) {
    write_config(os, cfg, "# ");
    os << "# master_seed = " << master_seed << "\n";
}

struct SweepRow {
    std::string axis;  // factor, p_max_dbw or workers
    double value = 0.0;
    std::string policy;
    std::uint64_t seed = 0;
    PolicyEvaluation eval;
};

inline void write_sweep_csv(std::ostream& os, const ExperimentConfig& cfg, std::span<const SweepRow> rows) {
    write_csv_header(os, cfg, cfg.seeds.empty() ? cfg.seed : cfg.seeds.front());
    os << (rows.empty() ? std::string("value") : rows.front().axis)
       << ",policy,seed,weighted_per,weighted_failure,min_power,max_power\n";
    for (const auto& r : rows) {
        os << format_number(r.value) << "," << r.policy << "," << r.seed << "," << format_number(r.eval.weighted_per)
           << "," << format_number(r.eval.weighted_failure) << "," << format_number(r.eval.min_power) << ","
           << format_number(r.eval.max_power) << "\n";
    }
}

inline std::vector<PolicyKind> policy_kinds(const ExperimentConfig& cfg) {
    std::vector<PolicyKind> out;
    for (const auto& s : cfg.policies) out.push_back(parse_policy_kind(s));
    return out;
}

inline std::string factor_cell(double factor) { return "f" + format_number(factor); }

/// Trains or loads the learned policy for a cell, or builds the baseline.
inline PowerPolicy policy_for(ModelStore& store, const ExperimentConfig& cfg, PolicyKind kind, const Scenario& sc,
                              std::string_view cell, std::uint64_t seed) {
    if (kind == PolicyKind::gcn || kind == PolicyKind::mlp) return learned_policy(store, cfg, kind, sc, cell, seed);
    return baseline_policy(kind, seed);
}

/// Weighted PER on test channels for every (factor, policy, seed).
inline std::vector<SweepRow> run_interference_sweep(const ExperimentConfig& cfg, ModelStore& store) {
    std::vector<SweepRow> rows;
    const auto kinds = policy_kinds(cfg);
    for (std::uint64_t seed : cfg.seeds) {
        for (double factor : cfg.factors) {
            const auto sc = make_scenario(cfg, cfg.workers, seed, factor, cfg.p_max_dbw);
            for (auto kind : kinds) {
                auto pol = policy_for(store, cfg, kind, sc, factor_cell(factor), seed);
                rows.push_back({"factor", factor, std::string(to_string(kind)), seed,
                                evaluate_policy(pol, sc.test, sc.weights, sc.link)});
            }
        }
    }
    return rows;
}

/// One learned policy per P_max grid point.
inline std::vector<SweepRow> run_pmax_sweep(const ExperimentConfig& cfg, ModelStore& store) {
    std::vector<SweepRow> rows;
    const auto kinds = policy_kinds(cfg);
    for (std::uint64_t seed : cfg.seeds) {
        for (double dbw : cfg.p_max_grid) {
            const auto sc = make_scenario(cfg, cfg.workers, seed, cfg.interference, dbw);
            const std::string cell = "f" + format_number(cfg.interference) + "_p" + format_number(dbw);
            for (auto kind : kinds) {
                auto pol = policy_for(store, cfg, kind, sc, cell, seed);
                rows.push_back({"p_max_dbw", dbw, std::string(to_string(kind)), seed,
                                evaluate_policy(pol, sc.test, sc.weights, sc.link)});
            }
        }
    }
    return rows;
}

/// GCN trained at cfg.workers, evaluated at every size without retraining.
inline std::vector<SweepRow> run_size_sweep(const ExperimentConfig& cfg, ModelStore& store) {
    const auto kinds = policy_kinds(cfg);
    for (auto kind : kinds) {
        if (kind == PolicyKind::mlp) {
            throw UnsupportedPolicyError("the MLP policy has a fixed input size and cannot run the size sweep");
        }
    }
    std::vector<SweepRow> rows;
    for (std::uint64_t seed : cfg.seeds) {
        const auto base = make_scenario(cfg, cfg.workers, seed, cfg.interference, cfg.p_max_dbw);
        std::optional<PowerPolicy> gcn;
        for (std::size_t L : cfg.sizes) {
            const auto sc = L == cfg.workers ? base : make_scenario(cfg, L, seed, cfg.interference, cfg.p_max_dbw);
            for (auto kind : kinds) {
                PowerPolicy pol = kind == PolicyKind::gcn
                                      ? (gcn ? *gcn
                                             : *(gcn = learned_policy(store, cfg, kind, base,
                                                                      factor_cell(cfg.interference), seed)))
                                      : baseline_policy(kind, seed);
                rows.push_back({"workers", static_cast<double>(L), std::string(to_string(kind)), seed,
                                evaluate_policy(pol, sc.test, sc.weights, sc.link)});
            }
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Federated learning comparison

struct FLData {
    LabeledDataset train;
    LabeledDataset test;
};

/// MNIST IDX files from `mnist_dir` (train-/t10k- prefixes) or the synthetic
/// set; the test set is subsampled to `fl_test_samples` when larger.
inline FLData load_fl_data(const ExperimentConfig& cfg, std::uint64_t seed) {
    FLData d;
    if (!cfg.mnist_dir.empty()) {
        const std::filesystem::path dir = cfg.mnist_dir;
        d.train = read_idx((dir / "train-images-idx3-ubyte").string(), (dir / "train-labels-idx1-ubyte").string());
        d.test = read_idx((dir / "t10k-images-idx3-ubyte").string(), (dir / "t10k-labels-idx1-ubyte").string());
    } else {
        const auto all = synth_dataset(cfg.synth_samples, seed);
        const std::size_t n_test = std::min(cfg.fl_test_samples, all.size() / 5);
        std::vector<std::size_t> tr(all.size() - n_test), te(n_test);
        std::iota(te.begin(), te.end(), 0);
        std::iota(tr.begin(), tr.end(), n_test);
        d.train = all.subset(tr);
        d.test = all.subset(te);
    }
    if (d.test.size() > cfg.fl_test_samples) {
        std::vector<std::size_t> idx(d.test.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::mt19937_64 rng(seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(cfg.fl_test_samples);
        d.test = d.test.subset(idx);
    }
    return d;
}

struct FLCurve {
    std::string policy;  // policy kind or "ideal"
    std::uint64_t seed = 0;
    std::vector<double> error;  // index 0 is the initial model
    std::size_t stalls = 0;
};

inline FLConfig fl_config(const ExperimentConfig& cfg, const Scenario& sc, std::uint64_t seed, bool ideal) {
    FLConfig f;
    f.workers = cfg.workers;
    f.rounds = cfg.fl_rounds;
    f.seed = seed;
    f.ideal = ideal;
    f.local = LocalTrainOptions{1, cfg.local_batch, cfg.local_lr};
    f.link = UplinkParams{sc.link.waterfall, sc.link.bandwidth_hz, sc.link.p_max, sc.rate_floor};
    f.channel = channel_model(cfg, cfg.workers);
    f.interference_scale = cfg.interference;
    return f;
}

/// Each policy plus ideal FL, for every seed. Per-round logs go to
/// `round_log_dir` when set.
inline std::vector<FLCurve> run_fl(const ExperimentConfig& cfg, ModelStore& store,
                                   const std::optional<std::filesystem::path>& round_log_dir = std::nullopt) {
    std::vector<FLCurve> curves;
    const auto kinds = policy_kinds(cfg);
    for (std::uint64_t seed : cfg.seeds) {
        const auto data = load_fl_data(cfg, seed);
        const auto sc = make_scenario(cfg, cfg.workers, seed, cfg.interference, cfg.p_max_dbw);
        auto run_one = [&](std::string name, PowerPolicy pol, bool ideal) {
            auto fc = fl_config(cfg, sc, seed, ideal);
            if (round_log_dir) fc.checkpoint_dir = *round_log_dir / (name + "_s" + std::to_string(seed));
            const auto res = run_federated(pol, data.train, data.test, fc);
            FLCurve c{name, seed, {res.initial_error}, 0};
            for (const auto& r : res.rounds) {
                c.error.push_back(r.test_error);
                c.stalls += r.stalled ? 1 : 0;
            }
            if (round_log_dir) {
                std::ofstream os(*round_log_dir / (name + "_s" + std::to_string(seed) + ".csv"));
                write_round_log(os, res.rounds);
            }
            curves.push_back(std::move(c));
        };
        run_one("ideal", PowerPolicy(OrthPolicy{}), true);
        for (auto kind : kinds)
            run_one(std::string(to_string(kind)),
                    policy_for(store, cfg, kind, sc, factor_cell(cfg.interference), seed), false);
    }
    return curves;
}

/// Per-seed rows plus a "mean" row per (policy, round).
inline void write_fl_csv(std::ostream& os, const ExperimentConfig& cfg, std::span<const FLCurve> curves) {
    write_csv_header(os, cfg, cfg.seeds.empty() ? cfg.seed : cfg.seeds.front());
    os << "policy,seed,round,test_error\n";
    std::map<std::string, std::vector<const FLCurve*>> by_policy;
    std::vector<std::string> order;
    for (const auto& c : curves) {
        if (!by_policy.contains(c.policy)) order.push_back(c.policy);
        by_policy[c.policy].push_back(&c);
        for (std::size_t r = 0; r < c.error.size(); ++r)
            os << c.policy << "," << c.seed << "," << r << "," << format_number(c.error[r]) << "\n";
    }
    for (const auto& name : order) {
        const auto& cs = by_policy[name];
        for (std::size_t r = 0; r < cs.front()->error.size(); ++r) {
            double m = 0.0;
            for (const auto* c : cs) m += c->error[r];
            os << name << ",mean," << r << "," << format_number(m / static_cast<double>(cs.size())) << "\n";
        }
    }
}

/// Mean of the final-round error per policy name.
inline std::map<std::string, double> mean_final_error(std::span<const FLCurve> curves) {
    std::map<std::string, std::pair<double, std::size_t>> acc;
    for (const auto& c : curves) {
        auto& a = acc[c.policy];
        a.first += c.error.back();
        a.second += 1;
    }
    std::map<std::string, double> out;
    for (const auto& [k, v] : acc) out[k] = v.first / static_cast<double>(v.second);
    return out;
}

} // namespace fedpower
