#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace surrocon;
namespace fs = std::filesystem;

namespace {

/// Samples whose features are ±1 per target slot (plus small noise), so a
/// linear map of the raw features separates every slot.
Dataset separable_dataset(std::size_t n, std::size_t slots, std::uint64_t seed, double unknown_p = 0.0) {
    Rng rng(seed);
    Dataset ds;
    ds.input_dim = slots;
    for (std::size_t i = 0; i < n; ++i) {
        Sample s;
        s.sample_id = static_cast<std::int64_t>(i);
        s.eye_id = static_cast<std::int64_t>(i % 10);
        s.cst = 300;
        s.bcva = 70;
        s.biomarkers.fill(Marker::Unknown);
        s.features.resize(slots);
        for (std::size_t j = 0; j < slots; ++j) {
            const bool present = rng.bernoulli(0.5);
            s.features[j] = (present ? 1.0 : -1.0) + 0.1 * rng.normal();
            s.biomarkers[j] = rng.bernoulli(unknown_p) ? Marker::Unknown : (present ? Marker::Present : Marker::Absent);
        }
        ds.samples.push_back(std::move(s));
    }
    ds.split.assign(n, Split::Train);
    for (std::size_t i = 0; i < n; ++i) {
        if (ds.samples[i].eye_id >= 7) ds.split[i] = Split::Test;
    }
    return ds;
}

/// Single-layer encoder that passes its input through unchanged.
EncoderNet identity_encoder(std::size_t d) {
    EncoderNet net({d, d}, 0);
    auto p = net.parameters();
    auto eye = Tensor::zeros({d, d});
    for (std::size_t i = 0; i < d; ++i) eye(i, i) = 1.0;
    p[0].assign(eye);
    p[1].assign(Tensor::zeros({d}));
    return net;
}

Dataset small_synthetic(std::uint64_t seed, std::size_t eyes = 8, std::size_t visits = 8) {
    GeneratorConfig cfg;
    cfg.n_eyes = eyes;
    cfg.visits_per_eye = visits;
    cfg.input_dim = 8;
    return split_by_eye(generate(cfg, seed), 0.25, seed);
}

ModelConfig tiny_model() {
    ModelConfig m;
    m.hidden = {32};
    m.repr_dim = 8;
    m.proj_hidden = 32;
    m.proj_dim = 4;
    return m;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST(Sgd, PlainStepWithoutMomentum) {
    auto p = Tensor::vector({1.0, -2.0});
    auto v = Tensor::zeros({2});
    sgd_step(p, Tensor::vector({0.5, 0.25}), v, 0.1, 0.0);
    EXPECT_EQ(p, Tensor::vector({1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.25}));
}

TEST(Sgd, TwoStepMomentumRecurrence) {
    const double lr = 0.01, m = 0.9, g = 2.0, p0 = 1.0;
    auto p = Tensor::vector({p0});
    auto v = Tensor::zeros({1});
    const auto grad = Tensor::vector({g});
    sgd_step(p, grad, v, lr, m);
    sgd_step(p, grad, v, lr, m);
    // v1 = g, v2 = m·g + g; total displacement lr·g·(1 + 1.9).
    EXPECT_NEAR(v[0], 1.9 * g, 1e-15);
    EXPECT_NEAR(p[0], p0 - lr * g * (1.0 + 1.9), 1e-15);
}

TEST(Sgd, ZeroGradient) {
    auto p = Tensor::vector({3.0});
    auto v = Tensor::zeros({1});
    sgd_step(p, Tensor::zeros({1}), v, 0.1, 0.9);
    EXPECT_EQ(p[0], 3.0);
    EXPECT_EQ(v[0], 0.0);
    v[0] = 2.0;
    sgd_step(p, Tensor::zeros({1}), v, 0.1, 0.9);
    EXPECT_EQ(v[0], 0.9 * 2.0);
}

TEST(Sgd, ShapeMismatch) {
    auto p = Tensor::vector({1.0, 2.0});
    auto v = Tensor::zeros({2});
    EXPECT_THROW(sgd_step(p, Tensor::zeros({3}), v, 0.1, 0.9), ContractError);
}

TEST(Pretrain, LossDecreasesOverTwoEpochs) {
    int passes = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto ds = small_synthetic(seed, 8, 10);  // 80 samples, ~60 train-side
        auto model = init_model(ds.input_dim, tiny_model(), seed);
        TrainConfig cfg;
        cfg.epochs = 2;
        cfg.seed = seed;
        cfg.label_key = LabelKey::parse("cst");
        const auto rec = pretrain(ds, model.encoder, model.head, cfg);
        ASSERT_EQ(rec.epoch_losses.size(), 2U);
        passes += rec.epoch_losses[1] < rec.epoch_losses[0] ? 1 : 0;
    }
    EXPECT_GE(passes, 4);
}

TEST(Pretrain, UniqueKeyRunsAsAugmentationOnly) {
    const auto ds = small_synthetic(3);
    auto model = init_model(ds.input_dim, tiny_model(), 3);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.label_key = LabelKey::parse("unique");
    const auto rec = pretrain(ds, model.encoder, model.head, cfg);
    EXPECT_EQ(rec.label_key, "unique");
    EXPECT_TRUE(std::isfinite(rec.epoch_losses[0]));
}

TEST(Pretrain, DeterministicCheckpointAndRecord) {
    const auto ds = small_synthetic(4);
    const auto dir = fs::temp_directory_path() / "surrocon_trainloop_tests";
    fs::create_directories(dir);
    std::string records[2];
    for (int run = 0; run < 2; ++run) {
        auto model = init_model(ds.input_dim, tiny_model(), 11);
        TrainConfig cfg;
        cfg.epochs = 2;
        cfg.seed = 11;
        const auto rec = pretrain(ds, model.encoder, model.head, cfg);
        records[run] = to_json(rec).dump();
        save_checkpoint({model.encoder, model.head, 11, "pretrain", "h"}, (dir / ("ck" + std::to_string(run))).string());
    }
    EXPECT_EQ(records[0], records[1]);
    EXPECT_EQ(slurp(dir / "ck0"), slurp(dir / "ck1"));
}

TEST(Pretrain, NonFiniteInputReportsBatch) {
    auto ds = small_synthetic(5);
    for (auto i : ds.indices(Split::Train)) ds.samples[i].features[0] = std::numeric_limits<double>::infinity();
    auto model = init_model(ds.input_dim, tiny_model(), 5);
    TrainConfig cfg;
    cfg.augment = AugmentSpec::identity();
    try {
        (void)pretrain(ds, model.encoder, model.head, cfg);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("epoch 0 batch 0"), std::string::npos) << msg;
        EXPECT_NE(msg.find("contributing anchors"), std::string::npos) << msg;
    }
}

TEST(Pretrain, ConfigValidation) {
    const auto ds = small_synthetic(6);
    auto model = init_model(ds.input_dim, tiny_model(), 6);
    TrainConfig cfg;
    cfg.batch_size = 1;
    EXPECT_THROW(pretrain(ds, model.encoder, model.head, cfg), ParameterError);
    cfg = TrainConfig{};
    cfg.momentum = 1.0;
    EXPECT_THROW(pretrain(ds, model.encoder, model.head, cfg), ParameterError);
}

TEST(Probe, SeparableReachesFullTrainAccuracy) {
    const auto ds = separable_dataset(200, 3, 1);
    const auto enc = identity_encoder(3);
    const std::vector<std::size_t> slots{0, 1, 2};
    ProbeConfig cfg;
    cfg.epochs = 25;
    const auto res = probe(ds, enc, cfg, slots);
    const auto logits = probe_logits(res.probe, enc.represent(ds.features(res.train_indices)));
    for (std::size_t r = 0; r < res.train_indices.size(); ++r) {
        for (std::size_t k = 0; k < 3; ++k) {
            const bool present = ds.samples[res.train_indices[r]].biomarkers[k] == Marker::Present;
            EXPECT_EQ(logits(r, k) >= 0.0, present);
        }
    }
}

TEST(Probe, EncoderUntouched) {
    const auto ds = small_synthetic(7);
    auto model = init_model(ds.input_dim, tiny_model(), 7);
    const auto before = parameter_checksum(model.encoder);
    const std::vector<std::size_t> slots{0, 1, 2, 3, 4};
    (void)probe(ds, model.encoder, ProbeConfig{}, slots);
    EXPECT_EQ(parameter_checksum(model.encoder), before);
    for (const auto& p : model.encoder.parameters()) EXPECT_EQ(p.grad(), Tensor::zeros(p.shape()));
}

TEST(Probe, UnknownSlotContributesNoGradient) {
    LinearProbe p(3, 2, 1);
    const auto reps = Tensor::matrix({{0.5, -1.0, 2.0}});
    const auto targets = Tensor::matrix({{1.0, 1.0}});
    const auto mask = Tensor::matrix({{1.0, 0.0}});  // slot 1 unknown
    backward(bce_with_logits(p.forward(reps), targets, mask));
    const auto gw = p.layer().weight.grad();
    const auto gb = p.layer().bias.grad();
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(gw(i, 1), 0.0);
        EXPECT_NE(gw(i, 0), 0.0);
    }
    EXPECT_EQ(gb[1], 0.0);
}

TEST(Probe, AllUnknownSlotIsContractError) {
    auto ds = separable_dataset(50, 2, 2);
    for (auto& s : ds.samples) s.biomarkers[1] = Marker::Unknown;
    const std::vector<std::size_t> slots{0, 1};
    EXPECT_THROW(probe(ds, identity_encoder(2), ProbeConfig{}, slots), ContractError);
}

TEST(Probe, MaxSamplesCapsPool) {
    const auto ds = separable_dataset(200, 2, 3);
    ProbeConfig cfg;
    cfg.max_samples = 40;
    const std::vector<std::size_t> slots{0, 1};
    const auto pool = probe_pool(ds, slots, cfg);
    EXPECT_EQ(pool.size(), 40U);
    for (auto i : pool) EXPECT_EQ(ds.split[i], Split::Train);
}

TEST(Evaluate, OracleProbeIsPerfect) {
    const auto ds = separable_dataset(300, 3, 4);
    const auto enc = identity_encoder(3);
    auto w = Tensor::zeros({3, 3});
    for (std::size_t i = 0; i < 3; ++i) w(i, i) = 10.0;
    const LinearProbe oracle(w, Tensor::zeros({3}));
    const std::vector<std::size_t> slots{0, 1, 2};
    const auto report = evaluate(ds, enc, oracle, slots, balanced_test_sets(ds, slots, 10, 1));
    for (const auto& s : report.slots) {
        EXPECT_EQ(s.accuracy, 1.0);
        EXPECT_EQ(s.auroc, 1.0);
    }
}

TEST(Evaluate, ConstantProbeIsChance) {
    const auto ds = separable_dataset(300, 2, 5);
    const LinearProbe constant(Tensor::zeros({2, 2}), Tensor::zeros({2}));
    const std::vector<std::size_t> slots{0, 1};
    const auto report = evaluate(ds, identity_encoder(2), constant, slots, balanced_test_sets(ds, slots, 10, 1));
    for (const auto& s : report.slots) {
        EXPECT_EQ(s.accuracy, 0.5);
        EXPECT_EQ(s.auroc, 0.5);
    }
}

TEST(Evaluate, EmptyTestSetIsContractError) {
    const auto ds = separable_dataset(50, 1, 6);
    const LinearProbe p(1, 1, 1);
    const std::vector<std::size_t> slots{0};
    EXPECT_THROW(evaluate(ds, identity_encoder(1), p, slots, {{}}), ContractError);
}

TEST(Evaluate, ThreeSeedReportDeterministic) {
    const auto ds = small_synthetic(8, 24, 10);
    auto model = init_model(ds.input_dim, tiny_model(), 8);
    const std::vector<std::size_t> slots{0, 1};
    const auto tests = balanced_test_sets(ds, slots, 3, 2);
    ProbeConfig cfg;
    cfg.epochs = 3;
    const auto a = probe_and_evaluate(ds, model.encoder, cfg, slots, tests, 3);
    const auto b = probe_and_evaluate(ds, model.encoder, cfg, slots, tests, 3);
    EXPECT_EQ(a.n_seeds, 3U);
    EXPECT_EQ(a.per_seed.size(), 3U);
    EXPECT_GE(a.seed_std.auroc, 0.0);
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

TEST(Pretrain, CollapsedProjectionReportsBatch) {
    const auto ds = small_synthetic(9);
    auto model = init_model(ds.input_dim, tiny_model(), 9);
    for (auto p : model.head.parameters()) p.assign(Tensor::zeros(p.shape()));
    try {
        (void)pretrain(ds, model.encoder, model.head, TrainConfig{});
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("epoch 0 batch 0"), std::string::npos) << msg;
        EXPECT_NE(msg.find("near-zero norm"), std::string::npos) << msg;
    }
}
