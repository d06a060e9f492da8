#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>

#include "fedpower/flsim.hpp"
#include "oracles.hpp"

using namespace fedpower;

namespace {

const LabeledDataset& shared_data() {
    static const LabeledDataset d = synth_dataset(2000, 77);
    return d;
}

const LabeledDataset& shared_test() {
    static const LabeledDataset d = [] {
        const auto all = synth_dataset(2000, 77);
        std::vector<std::size_t> idx(500);
        std::iota(idx.begin(), idx.end(), 1500);
        return all.subset(idx);
    }();
    return d;
}

Classifier filled(double v) {
    Classifier c(1);
    for (auto& t : c.parameters()) std::fill(t.values().begin(), t.values().end(), v);
    return c;
}

MlpPolicy silent_policy(std::size_t L) {
    MlpOptions opt;
    opt.workers = L;
    opt.hidden = {4};
    MlpPolicy m(opt, 1);
    for (auto& t : m.parameters()) std::fill(t.values().begin(), t.values().end(), 0.0);
    std::fill(m.parameters().back().values().begin(), m.parameters().back().values().end(), -100.0);
    return m;
}

FLConfig small_config(std::size_t workers, std::size_t rounds) {
    FLConfig cfg;
    cfg.workers = workers;
    cfg.rounds = rounds;
    cfg.seed = 3;
    return cfg;
}

} // namespace

TEST(Classifier, ParameterCountAndPayload) {
    EXPECT_EQ(Classifier::kParameters, 39760u);
    EXPECT_EQ(Classifier::kPayloadBits, 1272320u);
    Classifier c(1);
    std::size_t n = 0;
    for (const auto& t : c.parameters()) n += t.size();
    EXPECT_EQ(n, 39760u);
    EXPECT_THROW(Classifier(std::vector<Tensor>{Tensor({2, 2})}), ShapeError);
}

TEST(Classifier, CheckpointRoundTrip) {
    Classifier c(5);
    std::stringstream ss;
    write_checkpoint(ss, to_checkpoint(c));
    EXPECT_TRUE(classifier_from_checkpoint(read_checkpoint(ss)) == c);
    EXPECT_THROW((void)classifier_from_checkpoint(to_checkpoint(GcnPolicy(GcnOptions{}, 1))), FormatError);
}

TEST(Classifier, LossMatchesOracle) {
    Classifier c(6);
    const auto& d = shared_data();
    std::vector<std::size_t> rows{0, 1, 2, 3, 4};
    const auto sub = d.subset(rows);
    Tape tape;
    std::vector<Var> w;
    for (const auto& p : c.parameters()) w.push_back(tape.constant(p));
    const Tensor x({5, Classifier::kInputs}, sub.inputs);
    const auto& z = tape.value(Classifier::logits(w, tape.constant(x)));
    // Hidden/tanh/output recomputed with plain loops.
    const auto& p = c.parameters();
    std::vector<double> h = oracle::matmul(sub.inputs, p[0].data(), 5, 784, 50);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 50; ++j) h[i * 50 + j] = std::tanh(h[i * 50 + j] + p[1].data()[j]);
    std::vector<double> o = oracle::matmul(h, p[2].data(), 5, 50, 10);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 10; ++j) {
            o[i * 10 + j] += p[3].data()[j];
            EXPECT_NEAR(z(i, j), o[i * 10 + j], 1e-12);
        }
    EXPECT_NEAR(c.mean_loss(sub), oracle::softmax_xent(o, sub.labels, 10), 1e-12);
}

TEST(Partition, SingleWorker) {
    const auto ws = partition_data(shared_data(), 1, 4);
    ASSERT_EQ(ws.size(), 1u);
    EXPECT_EQ(ws[0].weight, 1.0);
    EXPECT_EQ(ws[0].samples(), draw_sample_counts(1, 4)[0]);
    EXPECT_GE(ws[0].samples(), kMinShard);
    EXPECT_LE(ws[0].samples(), kMaxShard);
}

TEST(Partition, Deterministic) {
    const auto a = partition_data(shared_data(), 8, 9);
    const auto b = partition_data(shared_data(), 8, 9);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(a[i].shard, b[i].shard);
}

TEST(Partition, BoundsAndDisjointness) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto ws = partition_data(shared_data(), 8, seed);
        std::set<std::size_t> seen;
        std::size_t total = 0;
        double wsum = 0.0;
        for (const auto& w : ws) {
            EXPECT_GE(w.samples(), kMinShard);
            EXPECT_LE(w.samples(), kMaxShard);
            total += w.samples();
            wsum += w.weight;
            seen.insert(w.shard.begin(), w.shard.end());
        }
        EXPECT_EQ(seen.size(), total);
        EXPECT_NEAR(wsum, 1.0, 1e-15);
    }
    EXPECT_THROW((void)partition_data(shared_data(), 11, 1), DataError);
}

TEST(LocalTrain, ZeroLearningRateLeavesModel) {
    Classifier c(7);
    const Classifier before = c;
    std::vector<std::size_t> shard(64);
    std::iota(shard.begin(), shard.end(), 0);
    std::mt19937_64 rng(1);
    LocalTrainOptions opt;
    opt.lr = 0.0;
    local_train(c, shared_data(), shard, opt, rng);
    EXPECT_TRUE(c == before);
}

TEST(LocalTrain, OverfitsSingleSample) {
    Classifier c(8);
    const std::vector<std::size_t> shard{42};
    std::mt19937_64 rng(2);
    LocalTrainOptions opt;
    opt.epochs = 100;
    local_train(c, shared_data(), shard, opt, rng);
    EXPECT_LT(c.mean_loss(shared_data().subset(shard)), 0.01);
}

TEST(LocalTrain, OneEpochUsuallyLowersLoss) {
    int lower = 0;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) {
        std::vector<std::size_t> shard(200);
        std::iota(shard.begin(), shard.end(), static_cast<std::size_t>(t) * 50);
        const auto local = shared_data().subset(shard);
        Classifier c(static_cast<std::uint64_t>(t));
        const double before = c.mean_loss(local);
        std::mt19937_64 rng(static_cast<std::uint64_t>(t));
        local_train(c, shared_data(), shard, LocalTrainOptions{}, rng);
        if (c.mean_loss(local) <= before) ++lower;
    }
    EXPECT_GE(lower, 18);
}

TEST(Transmit, DeterministicCases) {
    std::mt19937_64 rng(1);
    const std::vector<double> p{0.01, 0.0, 0.01};
    const std::vector<double> per{0.0, 0.0, 1.0};
    for (int k = 0; k < 1000; ++k) EXPECT_EQ(draw_success(p, per, 0.01, rng), (std::vector<int>{1, 0, 0}));
}

TEST(Transmit, MonteCarloFailureRate) {
    std::mt19937_64 rng(2);
    const std::vector<double> p{0.01};
    const std::vector<double> per{0.25};
    std::size_t fail = 0;
    const std::size_t n = 100000;
    for (std::size_t k = 0; k < n; ++k) fail += 1 - static_cast<std::size_t>(draw_success(p, per, 0.01, rng)[0]);
    EXPECT_NEAR(static_cast<double>(fail) / static_cast<double>(n), 0.25, 0.01);
}

TEST(Transmit, RecordsLinkState) {
    PowerPolicy orth{OrthPolicy{}};
    const auto H = CSIMatrix::from_entries(2, {1e6, 1.0, 1.0, 1e6});
    std::mt19937_64 rng(3);
    const auto tx = transmit(orth, H, UplinkParams{}, rng);
    EXPECT_EQ(tx.powers, (std::vector<double>{0.01, 0.01}));
    EXPECT_NEAR(tx.sinr[0], 1e4 / 1.01, 1e-9);
    EXPECT_NEAR(tx.per[0], oracle::per(1e4 / 1.01, 0.023), 1e-15);
    UplinkParams floor;
    floor.rate_floor = {1e12, 0.0};
    const auto sel = transmit(orth, H, floor, rng);
    EXPECT_EQ(sel.powers[0], 0.0);
    EXPECT_EQ(sel.success[0], 0);
}

TEST(Aggregate, Examples) {
    const std::vector<Classifier> two{filled(1.0), filled(3.0)};
    const std::vector<std::size_t> equal{50, 50};
    const auto mean = aggregate(two, equal, std::vector<int>{1, 1});
    ASSERT_TRUE(mean.has_value());
    EXPECT_TRUE(*mean == filled(2.0));
    const auto one = aggregate(two, equal, std::vector<int>{0, 1});
    EXPECT_TRUE(*one == two[1]);
    EXPECT_FALSE(aggregate(two, equal, std::vector<int>{0, 0}).has_value());
    EXPECT_THROW((void)aggregate(two, equal, std::vector<int>{1}), DimensionError);
}

TEST(Aggregate, SampleWeighted) {
    const std::vector<Classifier> two{Classifier(10), Classifier(11)};
    const std::vector<std::size_t> k{100, 300};
    const auto agg = aggregate(two, k, std::vector<int>{1, 1});
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t j = 0; j < two[0].parameters()[t].size(); ++j) {
            const double want = 0.25 * two[0].parameters()[t].data()[j] + 0.75 * two[1].parameters()[t].data()[j];
            EXPECT_NEAR(agg->parameters()[t].data()[j], want, 1e-15);
        }
}

TEST(Aggregate, WeightsSumToOne) {
    const std::vector<std::size_t> k{23, 170, 88, 41, 200, 20};
    const std::vector<Classifier> ones(k.size(), filled(1.0));
    const std::vector<int> s{1, 0, 1, 1, 0, 1};
    const auto agg = aggregate(ones, k, s);
    for (const auto& t : agg->parameters())
        for (double v : t.values()) EXPECT_NEAR(v, 1.0, 1e-15);
    const auto w = aggregation_weights(k);
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-15);
}

TEST(RunFederated, NoRoundsIsChance) {
    PowerPolicy orth{OrthPolicy{}};
    const auto res = run_federated(orth, shared_data(), shared_test(), small_config(8, 0));
    EXPECT_TRUE(res.rounds.empty());
    EXPECT_NEAR(res.initial_error, 0.9, 0.06);
    EXPECT_DOUBLE_EQ(res.final_model.error_rate(shared_test()), res.initial_error);
}

TEST(RunFederated, IdealSingleWorkerIsCentralized) {
    PowerPolicy orth{OrthPolicy{}};
    auto cfg = small_config(1, 3);
    cfg.ideal = true;
    const auto res = run_federated(orth, shared_data(), shared_test(), cfg);
    const auto ws = partition_data(shared_data(), 1, cfg.seed);
    Classifier c(cfg.seed ^ 0x494e4954ULL);
    for (std::size_t r = 1; r <= 3; ++r) {
        std::mt19937_64 rng(local_seed(cfg.seed, r, 0));
        local_train(c, shared_data(), ws[0].shard, cfg.local, rng);
        EXPECT_DOUBLE_EQ(res.rounds[r - 1].test_error, c.error_rate(shared_test()));
    }
    EXPECT_TRUE(res.final_model == c);
}

TEST(RunFederated, AllSilentStalls) {
    PowerPolicy silent{silent_policy(4)};
    const auto res = run_federated(silent, shared_data(), shared_test(), small_config(4, 2));
    for (const auto& r : res.rounds) {
        EXPECT_TRUE(r.stalled);
        EXPECT_TRUE(r.participants.empty());
        for (int s : r.success) EXPECT_EQ(s, 0);
    }
    EXPECT_TRUE(res.final_model == Classifier(3 ^ 0x494e4954ULL));
}

TEST(RunFederated, ReproducibleAndLogged) {
    PowerPolicy a{RandPolicy(5)};
    PowerPolicy b{RandPolicy(5)};
    auto cfg = small_config(4, 4);
    const auto ra = run_federated(a, shared_data(), shared_test(), cfg);
    const auto rb = run_federated(b, shared_data(), shared_test(), cfg);
    ASSERT_EQ(ra.rounds.size(), 4u);
    for (std::size_t r = 0; r < 4; ++r) {
        EXPECT_EQ(ra.rounds[r].success, rb.rounds[r].success);
        EXPECT_EQ(ra.rounds[r].powers, rb.rounds[r].powers);
        EXPECT_EQ(ra.rounds[r].test_error, rb.rounds[r].test_error);
        for (std::size_t i = 0; i < 4; ++i)
            if (ra.rounds[r].powers[i] <= transmit_threshold(0.01)) {
                EXPECT_EQ(ra.rounds[r].success[i], 0);
            }
    }
    EXPECT_TRUE(ra.final_model == rb.final_model);

    std::ostringstream os;
    write_round_log(os, ra.rounds);
    const std::string header = os.str().substr(0, os.str().find('\n'));
    EXPECT_TRUE(header.starts_with("round,p_0,p_1,"));
    EXPECT_TRUE(header.ends_with("s_3,stalled,test_error"));
}

TEST(RunFederated, CheckpointsEveryTenRounds) {
    const auto dir = std::filesystem::temp_directory_path() / "fedpower_fl_ckpt";
    std::filesystem::remove_all(dir);
    PowerPolicy orth{OrthPolicy{}};
    auto cfg = small_config(2, 20);
    cfg.checkpoint_dir = dir;
    const auto res = run_federated(orth, shared_data(), shared_test(), cfg);
    EXPECT_TRUE(std::filesystem::exists(dir / "global_round10.fpm"));
    EXPECT_FALSE(std::filesystem::exists(dir / "global_round15.fpm"));
    const auto last = classifier_from_checkpoint(load_checkpoint((dir / "global_round20.fpm").string()));
    EXPECT_TRUE(last == res.final_model);
    std::filesystem::remove_all(dir);
}
