#pragma once

// Federated learning over the lossy uplink: data sharding, local Adam
// training, Bernoulli packet delivery, success-masked averaging.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedpower/channel.hpp"
#include "fedpower/dataio.hpp"
#include "fedpower/diffcore.hpp"
#include "fedpower/error.hpp"
#include "fedpower/policy.hpp"

namespace fedpower {

/// 784 → 50 (tanh) → 10, with biases.
class Classifier {
public:
    static constexpr std::size_t kInputs = 784;
    static constexpr std::size_t kHidden = 50;
    static constexpr std::size_t kParameters = kInputs * kHidden + kHidden + kHidden * kClasses + kClasses;
    static constexpr std::size_t kPayloadBits = kParameters * 32;

    Classifier() = default;

    explicit Classifier(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        params_.push_back(detail::glorot(kInputs, kHidden, rng));
        params_.push_back(Tensor({1, kHidden}, 0.0));
        params_.push_back(detail::glorot(kHidden, kClasses, rng));
        params_.push_back(Tensor({1, kClasses}, 0.0));
    }

    explicit Classifier(std::vector<Tensor> params) : params_(std::move(params)) {
        const Shape want[] = {{kInputs, kHidden}, {1, kHidden}, {kHidden, kClasses}, {1, kClasses}};
        if (params_.size() != 4) throw ShapeError("classifier needs 4 parameter tensors");
        for (std::size_t k = 0; k < 4; ++k)
            if (params_[k].shape() != want[k]) throw ShapeError("classifier tensor " + std::to_string(k) + " has shape " + to_string(params_[k].shape()));
    }

    std::vector<Tensor>& parameters() noexcept { return params_; }
    [[nodiscard]] const std::vector<Tensor>& parameters() const noexcept { return params_; }

    [[nodiscard]] static Var logits(std::span<const Var> w, Var x) {
        const Var h = activation(add_row(matmul(x, w[0]), w[1]), Activation::tanh());
        return add_row(matmul(h, w[2]), w[3]);
    }

    /// Mean cross-entropy on the given rows.
    [[nodiscard]] Var loss(Tape& tape, std::span<const Var> w, const LabeledDataset& data,
                           std::span<const std::size_t> rows) const {
        Tensor x({rows.size(), kInputs});
        std::vector<int> y;
        y.reserve(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            std::copy_n(data.sample(rows[r]), kInputs, x.values().begin() + static_cast<std::ptrdiff_t>(r * kInputs));
            y.push_back(data.labels[rows[r]]);
        }
        return softmax_cross_entropy(logits(w, tape.constant(std::move(x))), y);
    }

    [[nodiscard]] double mean_loss(const LabeledDataset& data) const {
        Tape tape;
        const auto w = constants(tape);
        std::vector<std::size_t> rows(data.size());
        std::iota(rows.begin(), rows.end(), 0);
        return tape.value(loss(tape, w, data, rows)).item();
    }

    /// Fraction of misclassified samples.
    [[nodiscard]] double error_rate(const LabeledDataset& data) const {
        if (data.size() == 0) throw DataError("error rate of an empty dataset");
        Tape tape;
        const auto w = constants(tape);
        const Tensor x({data.size(), kInputs}, data.inputs);
        const Tensor& z = tape.value(logits(w, tape.constant(x)));
        std::size_t wrong = 0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < kClasses; ++c)
                if (z(i, c) > z(i, best)) best = c;
            if (static_cast<int>(best) != data.labels[i]) ++wrong;
        }
        return static_cast<double>(wrong) / static_cast<double>(data.size());
    }

    friend bool operator==(const Classifier& a, const Classifier& b) {
        if (a.params_.size() != b.params_.size()) return false;
        for (std::size_t k = 0; k < a.params_.size(); ++k)
            if (a.params_[k].data() != b.params_[k].data()) return false;
        return true;
    }

private:
    std::vector<Var> constants(Tape& tape) const {
        std::vector<Var> w;
        for (const auto& p : params_) w.push_back(tape.constant(p));
        return w;
    }

    std::vector<Tensor> params_;
};

inline Checkpoint to_checkpoint(const Classifier& c) {
    return Checkpoint{ModelTag::classifier,
                      0,
                      {Classifier::kInputs, Classifier::kHidden, kClasses},
                      c.parameters()};
}

inline Classifier classifier_from_checkpoint(const Checkpoint& ck) {
    if (ck.tag != ModelTag::classifier) throw FormatError("checkpoint does not hold a classifier");
    return Classifier(ck.tensors);
}

// ---------------------------------------------------------------------------

struct FLWorker {
    std::size_t id = 0;
    std::vector<std::size_t> shard;  // indices into the training set
    double weight = 0.0;             // ω_i = k_i / K
    [[nodiscard]] std::size_t samples() const noexcept { return shard.size(); }
};

inline constexpr std::size_t kMinShard = 20;
inline constexpr std::size_t kMaxShard = 200;

/// k_i ~ U{20..200}, the same draw partition_data uses for a given seed.
inline std::vector<std::size_t> draw_sample_counts(std::size_t workers, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> k(kMinShard, kMaxShard);
    std::vector<std::size_t> out(workers);
    for (auto& v : out) v = k(rng);
    return out;
}

inline std::vector<double> aggregation_weights(std::span<const std::size_t> counts) {
    const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
    std::vector<double> w;
    for (auto k : counts) w.push_back(static_cast<double>(k) / total);
    return w;
}

/// Disjoint shards drawn without replacement from a seeded permutation.
inline std::vector<FLWorker> partition_data(const LabeledDataset& data, std::size_t workers, std::uint64_t seed) {
    if (workers < 1) throw ConfigError("need at least one worker");
    if (data.size() < workers * kMaxShard) {
        throw DataError("partition needs " + std::to_string(workers * kMaxShard) + " samples, dataset has " +
                        std::to_string(data.size()));
    }
    const auto counts = draw_sample_counts(workers, seed);
    const auto weights = aggregation_weights(counts);
    std::vector<std::size_t> perm(data.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed ^ 0x5348415244ULL);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<FLWorker> out;
    std::size_t next = 0;
    for (std::size_t i = 0; i < workers; ++i) {
        FLWorker w{i, {perm.begin() + static_cast<std::ptrdiff_t>(next),
                       perm.begin() + static_cast<std::ptrdiff_t>(next + counts[i])},
                   weights[i]};
        next += counts[i];
        out.push_back(std::move(w));
    }
    return out;
}

struct LocalTrainOptions {
    std::size_t epochs = 1;
    std::size_t batch = 16;
    double lr = 1e-3;
};

/// Shuffled minibatch cross-entropy with a fresh Adam state. Returns the
/// mean minibatch loss of the last epoch (NaN when nothing ran).
inline double local_train(Classifier& model, const LabeledDataset& data, std::span<const std::size_t> shard,
                          const LocalTrainOptions& opt, std::mt19937_64& rng) {
    if (opt.batch == 0) throw ConfigError("local batch size must be positive");
    if (opt.lr == 0.0 || shard.empty() || opt.epochs == 0) return std::numeric_limits<double>::quiet_NaN();
    AdamState adam;
    const AdamOptions adam_opt{.lr = opt.lr};
    std::vector<std::size_t> order(shard.begin(), shard.end());
    double last = 0.0;
    for (std::size_t e = 0; e < opt.epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += opt.batch) {
            const std::size_t stop = std::min(order.size(), start + opt.batch);
            Tape tape;
            std::vector<Var> w;
            for (const auto& p : model.parameters()) w.push_back(tape.parameter(p));
            const Var l = model.loss(tape, w, data, std::span(order).subspan(start, stop - start));
            tape.backward(l);
            std::vector<Tensor> grads;
            for (Var v : w) grads.push_back(tape.grad(v));
            adam_step(model.parameters(), grads, adam, adam_opt);
            total += tape.value(l).item();
            ++batches;
        }
        last = total / static_cast<double>(batches);
    }
    return last;
}

struct TransmitOutcome {
    std::vector<double> powers;
    std::vector<double> sinr;
    std::vector<double> per;
    std::vector<int> success;
};

/// S_i ~ Bernoulli(1 − per_i) for p_i > ε_p, S_i = 0 otherwise.
inline std::vector<int> draw_success(std::span<const double> powers, std::span<const double> per, double p_max,
                                     std::mt19937_64& rng) {
    const double eps_p = transmit_threshold(p_max);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<int> s(powers.size(), 0);
    for (std::size_t i = 0; i < powers.size(); ++i) {
        const double draw = u(rng);  // drawn for every worker to keep streams aligned
        if (powers[i] > eps_p) s[i] = draw >= per[i] ? 1 : 0;
    }
    return s;
}

struct UplinkParams {
    double waterfall = 0.023;
    double bandwidth_hz = 1e6;
    double p_max = 0.01;
    std::vector<double> rate_floor;  // used by the baselines' selection rule; empty disables it
};

inline TransmitOutcome transmit(PowerPolicy& policy, const CSIMatrix& H, const UplinkParams& link,
                                std::mt19937_64& rng) {
    TransmitOutcome out;
    out.powers = link.rate_floor.empty() ? policy.allocate(H, link.p_max)
                                         : policy.transmit_powers(H, link.p_max, link.rate_floor, link.bandwidth_hz);
    out.sinr = sinr(out.powers, H);
    out.per.resize(out.sinr.size());
    std::transform(out.sinr.begin(), out.sinr.end(), out.per.begin(),
                   [&](double s) { return per_from_sinr(s, link.waterfall); });
    out.success = draw_success(out.powers, out.per, link.p_max, rng);
    return out;
}

/// Σ k_i w_i S_i / Σ k_i S_i, or nullopt when nothing arrived.
inline std::optional<Classifier> aggregate(std::span<const Classifier> local, std::span<const std::size_t> counts,
                                           std::span<const int> success) {
    if (local.size() != counts.size() || local.size() != success.size()) {
        throw DimensionError("aggregate: models, counts and success flags differ in length");
    }
    double denom = 0.0;
    for (std::size_t i = 0; i < local.size(); ++i)
        if (success[i]) denom += static_cast<double>(counts[i]);
    if (denom == 0.0) return std::nullopt;
    std::vector<Tensor> acc;
    for (const auto& p : local.front().parameters()) acc.emplace_back(p.shape(), 0.0);
    for (std::size_t i = 0; i < local.size(); ++i) {
        if (!success[i]) continue;
        const double a = static_cast<double>(counts[i]) / denom;
        const auto& ps = local[i].parameters();
        for (std::size_t t = 0; t < acc.size(); ++t) {
            auto dst = acc[t].values();
            auto src = ps[t].values();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += a * src[k];
        }
    }
    return Classifier(std::move(acc));
}

// ---------------------------------------------------------------------------

struct RoundRecord {
    std::size_t round = 0;
    std::uint64_t channel_seed = 0;
    std::vector<double> powers;
    std::vector<double> sinr;
    std::vector<double> per;
    std::vector<int> success;
    std::vector<std::size_t> participants;
    bool stalled = false;
    double test_error = 0.0;
};

struct FLConfig {
    std::size_t workers = 8;
    std::size_t rounds = 50;
    std::uint64_t seed = 1;
    bool ideal = false;
    LocalTrainOptions local;
    UplinkParams link;
    ChannelModel channel;
    double interference_scale = 1.0;
    /// Global-model checkpoints every `checkpoint_every` rounds when set.
    std::optional<std::filesystem::path> checkpoint_dir;
    std::size_t checkpoint_every = 10;
};

struct FLResult {
    double initial_error = 0.0;
    std::vector<RoundRecord> rounds;
    Classifier final_model;
};

/// Stream seed for worker i's local shuffling in a given round.
inline std::uint64_t local_seed(std::uint64_t seed, std::size_t round, std::size_t worker) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(round), static_cast<std::uint32_t>(worker), 0x4c4f43u};
    std::uint32_t parts[2];
    seq.generate(parts, parts + 2);
    return (static_cast<std::uint64_t>(parts[0]) << 32) | parts[1];
}

/// Per round: fresh channel, power allocation, local training, Bernoulli
/// delivery, masked aggregation, test evaluation. Channel draws, the data
/// partition and the initial model depend only on the seed, so runs with
/// different policies share them.
inline FLResult run_federated(PowerPolicy& policy, const LabeledDataset& train, const LabeledDataset& test,
                              const FLConfig& cfg) {
    const auto workers = partition_data(train, cfg.workers, cfg.seed);
    std::vector<std::size_t> counts;
    for (const auto& w : workers) counts.push_back(w.samples());
    Classifier global(cfg.seed ^ 0x494e4954ULL);
    FLResult result;
    result.initial_error = global.error_rate(test);
    std::mt19937_64 delivery(cfg.seed ^ 0x44454c56ULL);
    ChannelModel cm = cfg.channel;
    cm.workers = cfg.workers;
    const std::uint64_t channel_seed = cfg.seed ^ 0x464c4348ULL;
    if (cfg.checkpoint_dir) std::filesystem::create_directories(*cfg.checkpoint_dir);

    for (std::size_t r = 1; r <= cfg.rounds; ++r) {
        RoundRecord rec;
        rec.round = r;
        rec.channel_seed = channel_seed;
        const CSIMatrix H = build_csi(generate_channel(cm, channel_seed, r), cfg.interference_scale);
        std::vector<Classifier> local(cfg.workers, global);
        for (std::size_t i = 0; i < cfg.workers; ++i) {
            std::mt19937_64 rng(local_seed(cfg.seed, r, i));
            local_train(local[i], train, workers[i].shard, cfg.local, rng);
        }
        auto tx = transmit(policy, H, cfg.link, delivery);
        if (cfg.ideal) std::fill(tx.success.begin(), tx.success.end(), 1);
        rec.powers = std::move(tx.powers);
        rec.sinr = std::move(tx.sinr);
        rec.per = std::move(tx.per);
        rec.success = std::move(tx.success);
        for (std::size_t i = 0; i < cfg.workers; ++i)
            if (rec.success[i]) rec.participants.push_back(i);
        if (auto agg = aggregate(local, counts, rec.success)) global = std::move(*agg);
        else rec.stalled = true;
        rec.test_error = global.error_rate(test);
        result.rounds.push_back(std::move(rec));
        if (cfg.checkpoint_dir && cfg.checkpoint_every > 0 && r % cfg.checkpoint_every == 0) {
            save_checkpoint((*cfg.checkpoint_dir / ("global_round" + std::to_string(r) + ".fpm")).string(),
                            to_checkpoint(global));
        }
    }
    result.final_model = std::move(global);
    return result;
}

/// Columns: round, p_i, sinr_i, per_i, s_i per worker, stalled, test_error.
inline void write_round_log(std::ostream& os, std::span<const RoundRecord> rounds) {
    if (rounds.empty()) return;
    const std::size_t L = rounds.front().powers.size();
    os << "round";
    for (const char* col : {"p", "sinr", "per", "s"})
        for (std::size_t i = 0; i < L; ++i) os << "," << col << "_" << i;
    os << ",stalled,test_error\n";
    os.precision(12);
    for (const auto& r : rounds) {
        os << r.round;
        for (double v : r.powers) os << "," << v;
        for (double v : r.sinr) os << "," << v;
        for (double v : r.per) os << "," << v;
        for (int v : r.success) os << "," << v;
        os << "," << (r.stalled ? 1 : 0) << "," << r.test_error << "\n";
    }
}

} // namespace fedpower
