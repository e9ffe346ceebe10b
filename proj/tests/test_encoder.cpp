#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace surrocon;
using surrocon::testing::random_tensor;

namespace {

/// Forward pass of an MLP written with plain loops over the stored weights.
std::vector<double> mlp_oracle(const std::vector<Linear>& layers, std::vector<double> h) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& W = layers[l].weight.value();
        const auto& b = layers[l].bias.value();
        std::vector<double> next(W.cols(), 0.0);
        for (std::size_t j = 0; j < W.cols(); ++j) {
            double s = b[j];
            for (std::size_t i = 0; i < W.rows(); ++i) s += h[i] * W(i, j);
            next[j] = (l + 1 < layers.size() && s < 0.0) ? 0.0 : s;
        }
        h = std::move(next);
    }
    return h;
}

std::filesystem::path temp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "surrocon_encoder_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

void zero_all(const std::vector<Node>& params) {
    for (auto p : params) p.assign(Tensor::zeros(p.shape()));
}

}  // namespace

TEST(Encoder, DefaultShape) {
    auto net = EncoderNet::with_defaults(32, 1);
    EXPECT_EQ(net.dims(), (std::vector<std::size_t>{32, 256, 64}));
    EXPECT_EQ(net.parameters().size(), 4U);
    Rng rng(1);
    EXPECT_EQ(net.represent(random_tensor({5, 32}, rng)).shape(), (Shape{5, 64}));
}

TEST(Encoder, GlorotBound) {
    EncoderNet net({10, 30, 6}, 5);
    const double b0 = std::sqrt(6.0 / 40.0), b1 = std::sqrt(6.0 / 36.0);
    for (double v : net.layers()[0].weight.value().data()) EXPECT_LE(std::abs(v), b0);
    for (double v : net.layers()[1].weight.value().data()) EXPECT_LE(std::abs(v), b1);
    for (double v : net.layers()[1].bias.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Encoder, ZeroWeightsGiveZeroRows) {
    EncoderNet net({4, 8, 3}, 2);
    zero_all(net.parameters());
    Rng rng(2);
    EXPECT_EQ(net.represent(random_tensor({3, 4}, rng)), Tensor::zeros({3, 3}));
}

TEST(Encoder, BatchIndependence) {
    EncoderNet net({6, 9, 4}, 3);
    Rng rng(3);
    const auto x = random_tensor({8, 6}, rng);
    const auto all = net.represent(x);
    for (std::size_t r = 0; r < 8; ++r) {
        const std::vector<std::size_t> one{r};
        const auto single = net.represent(take_rows(x, one));
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(single(0, c), all(r, c));
    }
}

TEST(Encoder, MatchesPlainLoopOracle) {
    EncoderNet net({5, 12, 7, 3}, 17);
    Rng rng(4);
    const auto x = random_tensor({6, 5}, rng);
    const auto out = net.represent(x);
    for (std::size_t r = 0; r < 6; ++r) {
        const auto expected = mlp_oracle(net.layers(), {x.row(r).begin(), x.row(r).end()});
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out(r, c), expected[c], 1e-12);
    }
}

// Output of EncoderNet({4, 8, 3}, seed 2024) on the input row (1, -2, 0.5, 3),
// captured from a run that agreed with the plain-loop oracle above.
TEST(Encoder, GoldenOutput) {
    EncoderNet net({4, 8, 3}, 2024);
    const auto x = Tensor::matrix({{1.0, -2.0, 0.5, 3.0}});
    const auto out = net.represent(x);
    const std::array<double, 3> golden{-2.2835407105840448, 0.60585240486978797, 0.19800355513774459};
    const auto oracle = mlp_oracle(net.layers(), {1.0, -2.0, 0.5, 3.0});
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_NEAR(oracle[c], golden[c], 1e-12);
        EXPECT_EQ(out(0, c), golden[c]);
    }
}

TEST(Encoder, InputDimMismatch) {
    EncoderNet net({4, 8, 3}, 2);
    EXPECT_THROW(net.represent(Tensor::zeros({2, 5})), DimensionError);
}

TEST(Encoder, CopyDoesNotAlias) {
    EncoderNet a({3, 4, 2}, 1);
    EncoderNet b = a;
    const auto before = parameter_checksum(a);
    zero_all(b.parameters());
    EXPECT_EQ(parameter_checksum(a), before);
    EXPECT_NE(parameter_checksum(b), before);
}

TEST(Projection, RowsAreUnitNorm) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(derive_seed(77, seed));
        const std::size_t repr = 2 + rng.below(8), hid = 16 + rng.below(16), proj = 1 + rng.below(6);
        ProjectionHead head(repr, hid, proj, seed);
        auto z = head.project(Node::constant(random_tensor({5, repr}, rng, -3, 3))).value();
        for (std::size_t r = 0; r < 5; ++r) {
            double s = 0.0;
            for (double v : z.row(r)) s += v * v;
            EXPECT_NEAR(std::sqrt(s), 1.0, 1e-9);
        }
    }
}

TEST(Projection, ResNetScaleDimsAccepted) {
    ProjectionHead head(512, 512, 128, 9);
    EXPECT_EQ(head.proj_dim(), 128U);
    Rng rng(9);
    EXPECT_EQ(head.project(Node::constant(random_tensor({2, 512}, rng))).shape(), (Shape{2, 128}));
}

TEST(Projection, NonlinearUnderInputScaling) {
    ProjectionHead head(4, 6, 3, 21);
    // Give the hidden layer non-zero biases so ReLU gating depends on scale.
    auto b = head.layers()[0].bias;
    b.assign(Tensor::vector({0.5, -0.5, 0.3, -0.2, 0.1, 0.4}));
    const auto r = Tensor::matrix({{0.2, -0.1, 0.05, 0.3}});
    auto r10 = r;
    for (auto& v : r10.data()) v *= 10.0;
    const auto z1 = head.project(Node::constant(r)).value();
    const auto z10 = head.project(Node::constant(r10)).value();
    EXPECT_NE(z1, z10);
}

TEST(Projection, DegenerateRowRaises) {
    ProjectionHead head(3, 4, 2, 1);
    zero_all(head.parameters());
    EXPECT_THROW(head.project(Node::constant(Tensor::zeros({1, 3}))), DegenerateInputError);
}

TEST(Probe, ZeroWeightsGiveBias) {
    LinearProbe p(Tensor::zeros({3, 2}), Tensor::vector({0.25, -1.0}));
    Rng rng(5);
    const auto logits = probe_logits(p, random_tensor({4, 3}, rng));
    for (std::size_t r = 0; r < 4; ++r) {
        EXPECT_EQ(logits(r, 0), 0.25);
        EXPECT_EQ(logits(r, 1), -1.0);
    }
}

TEST(Probe, HandTwoByTwo) {
    LinearProbe p(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::vector({0.5, -0.5}));
    const auto logits = probe_logits(p, Tensor::matrix({{1, 1}, {2, -1}}));
    EXPECT_EQ(logits, Tensor::matrix({{4.5, 5.5}, {-0.5, -0.5}}));
}

TEST(Probe, SingleAndMultiLabelOutputs) {
    Rng rng(6);
    const auto r = random_tensor({3, 8}, rng);
    EXPECT_EQ(probe_logits(LinearProbe(8, 1, 1), r).shape(), (Shape{3, 1}));
    EXPECT_EQ(probe_logits(LinearProbe(8, 5, 1), r).shape(), (Shape{3, 5}));
    EXPECT_THROW(probe_logits(LinearProbe(8, 5, 1), Tensor::zeros({3, 7})), DimensionError);
}

TEST(Probe, JsonRoundTrip) {
    LinearProbe p(6, 3, 8);
    const auto q = probe_from_json(nlohmann::json::parse(probe_to_json(p).dump()));
    EXPECT_EQ(q.layer().weight.value(), p.layer().weight.value());
    EXPECT_EQ(q.layer().bias.value(), p.layer().bias.value());
}

TEST(Checkpoint, RoundTripAndByteStable) {
    Checkpoint ck{EncoderNet({5, 7, 3}, 1), ProjectionHead(3, 4, 2, 2), 42, "pretrain", "abc"};
    const auto a = temp_file("a.bin"), b = temp_file("b.bin");
    save_checkpoint(ck, a.string());
    save_checkpoint(Checkpoint{EncoderNet({5, 7, 3}, 1), ProjectionHead(3, 4, 2, 2), 42, "pretrain", "abc"}, b.string());
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream is(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(is), {});
    };
    EXPECT_EQ(slurp(a), slurp(b));
    const auto back = load_checkpoint(a.string());
    EXPECT_EQ(parameter_checksum(back.encoder), parameter_checksum(ck.encoder));
    EXPECT_EQ(back.head.proj_dim(), 2U);
    EXPECT_EQ(back.seed, 42U);
    EXPECT_EQ(back.config_hash, "abc");
    const auto hp = back.head.parameters(), cp = ck.head.parameters();
    for (std::size_t i = 0; i < hp.size(); ++i) EXPECT_EQ(hp[i].value(), cp[i].value());
}

TEST(Checkpoint, TruncatedOrTamperedBlobRejected) {
    Checkpoint ck{EncoderNet({5, 7, 3}, 1), ProjectionHead(3, 4, 2, 2), 1, "pretrain", ""};
    const auto p = temp_file("t.bin");
    save_checkpoint(ck, p.string());
    const auto size = std::filesystem::file_size(p);

    std::filesystem::resize_file(p, size - 8);
    EXPECT_THROW(load_checkpoint(p.string()), IntegrityError);

    save_checkpoint(ck, p.string());
    {
        std::ofstream os(p, std::ios::binary | std::ios::app);
        os << 'x';
    }
    EXPECT_THROW(load_checkpoint(p.string()), IntegrityError);

    save_checkpoint(ck, p.string());
    {
        std::fstream fs(p, std::ios::binary | std::ios::in | std::ios::out);
        std::string header;
        std::getline(fs, header);
        fs.seekp(static_cast<std::streamoff>(header.size() + 1 + 3));
        fs.put('\x7f');
    }
    EXPECT_THROW(load_checkpoint(p.string()), IntegrityError);
}
