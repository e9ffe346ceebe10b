#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "surrocon/surrocon.hpp"

namespace fs = std::filesystem;

namespace {

const char* const kSmallConfig =
    "gen.n_eyes = 12\n"
    "gen.visits_per_eye = 8\n"
    "gen.input_dim = 8\n"
    "split.test_fraction = 0.25\n"
    "model.hidden = 32\n"
    "model.repr_dim = 8\n"
    "model.proj_hidden = 32\n"
    "model.proj_dim = 4\n"
    "train.epochs = 1\n"
    "probe.epochs = 2\n"
    "eval.slots = 0,1\n"
    "eval.n_per_class = 3\n"
    "sweep.noise = 0,0.2,0.4\n"
    "sweep.n = 2000\n";

struct Result {
    int code;
    std::string err;
};

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("surrocon_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        write(dir_ / "small.cfg", kSmallConfig);
    }
    void TearDown() override { fs::remove_all(dir_); }

    static void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

    static std::string read(const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        std::stringstream ss;
        ss << is.rdbuf();
        return ss.str();
    }

    Result run(const std::string& args) const {
        const auto err = dir_ / "stderr.txt";
        const std::string cmd =
            std::string("\"") + SURROCON_CLI + "\" " + args + " > \"" + (dir_ / "stdout.txt").string() + "\" 2> \"" +
            err.string() + "\"";
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read(err)};
    }

    std::string cfg() const { return "--config " + (dir_ / "small.cfg").string(); }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    fs::path dir_;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("generate").code, 2);  // --out is required
    EXPECT_EQ(run("pretrain --data " + path("missing.csv") + " --out " + path("p")).code, 2);
}

TEST_F(Cli, ConfigErrorNamesKey) {
    write(dir_ / "bad.cfg", "train.lr = 0.1\ntrain.bogus = 1\n");
    const auto r = run("generate --config " + path("bad.cfg") + " --out " + path("d.csv"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("[train.bogus]"), std::string::npos) << r.err;
}

TEST_F(Cli, InvalidGeneratorValueRejected) {
    write(dir_ / "bad.cfg", "gen.labeled_fraction = 1.5\n");
    EXPECT_EQ(run("generate --config " + path("bad.cfg") + " --out " + path("d.csv")).code, 2);
}

TEST_F(Cli, GenerateIsByteStable) {
    ASSERT_EQ(run("generate " + cfg() + " --seed 7 --out " + path("a.csv")).code, 0);
    ASSERT_EQ(run("generate " + cfg() + " --seed 7 --out " + path("b.csv")).code, 0);
    ASSERT_EQ(run("generate " + cfg() + " --seed 8 --out " + path("c.csv")).code, 0);
    EXPECT_EQ(read(dir_ / "a.csv"), read(dir_ / "b.csv"));
    EXPECT_EQ(read(dir_ / "a.f64"), read(dir_ / "b.f64"));
    EXPECT_NE(read(dir_ / "a.f64"), read(dir_ / "c.f64"));
    const auto meta = nlohmann::json::parse(read(dir_ / "a.csv.meta.json"));
    EXPECT_EQ(meta["samples"], 96);
    EXPECT_EQ(meta["seed"], 7);
    EXPECT_EQ(meta["config_hash"], surrocon::parse_run_config(std::string(kSmallConfig) + "gen.seed = 7\n").hash());
}

TEST_F(Cli, TheorySweepMatchesGolden) {
    ASSERT_EQ(run("theory-sweep " + cfg() + " --out " + path("sweep.csv")).code, 0);
    const auto golden = read(fs::path(SURROCON_GOLDEN_DIR) / "sweep_small.csv");
    ASSERT_FALSE(golden.empty());
    EXPECT_EQ(read(dir_ / "sweep.csv"), golden);
}

TEST_F(Cli, PipelineEndToEnd) {
    ASSERT_EQ(run("generate " + cfg() + " --out " + path("d.csv")).code, 0);
    ASSERT_EQ(run("pretrain " + cfg() + " --data " + path("d.csv") + " --label-key cst --out " + path("pre")).code, 0);
    const auto ck = path("pre/checkpoint.bin");
    ASSERT_TRUE(fs::exists(ck));
    const auto rec = nlohmann::json::parse(read(dir_ / "pre" / "run.json"));
    EXPECT_EQ(rec["label_key"], "cst");
    EXPECT_EQ(rec["config_hash"], surrocon::parse_run_config(kSmallConfig).hash());

    ASSERT_EQ(run("probe " + cfg() + " --checkpoint " + ck + " --data " + path("d.csv") + " --out " + path("probe")).code,
              0);
    ASSERT_EQ(run("evaluate " + cfg() + " --checkpoint " + ck + " --data " + path("d.csv") + " --seeds 2 --out " +
                  path("metrics.json"))
                  .code,
              0);
    const auto metrics = nlohmann::json::parse(read(dir_ / "metrics.json"));
    EXPECT_EQ(metrics["slots"].size(), 2U);
    EXPECT_EQ(metrics["seeds"]["n"], 2);

    ASSERT_EQ(run("evaluate " + cfg() + " --checkpoint " + ck + " --data " + path("d.csv") + " --probe " +
                  path("probe/probe.json") + " --out " + path("fixed.json"))
                  .code,
              0);

    ASSERT_EQ(run("export-embeddings " + cfg() + " --checkpoint " + ck + " --data " + path("d.csv") +
                  " --space repr --out " + path("emb.csv"))
                  .code,
              0);
    const auto cfg_obj = surrocon::parse_run_config(kSmallConfig);
    const auto ds = surrocon::split_by_eye(surrocon::load_manifest(dir_ / "d.csv"), cfg_obj.split.test_fraction,
                                           cfg_obj.split.seed);
    std::ifstream is(dir_ / "emb.csv");
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line.rfind("sample_id,e0,", 0), 0U);
    const auto header_cols = std::count(line.begin(), line.end(), ',') + 1;
    EXPECT_EQ(header_cols, 1 + 8 + 16);
    std::size_t rows = 0;
    while (std::getline(is, line)) ++rows;
    EXPECT_EQ(rows, ds.indices(surrocon::Split::Test).size());
}

TEST_F(Cli, DimensionMismatchNamesBothDims) {
    ASSERT_EQ(run("generate " + cfg() + " --out " + path("d8.csv")).code, 0);
    write(dir_ / "wide.cfg", std::string(kSmallConfig) + "gen.input_dim = 12\n");
    ASSERT_EQ(run("generate --config " + path("wide.cfg") + " --out " + path("d12.csv")).code, 0);
    ASSERT_EQ(run("pretrain " + cfg() + " --data " + path("d8.csv") + " --out " + path("pre")).code, 0);
    const auto r = run("probe " + cfg() + " --checkpoint " + path("pre/checkpoint.bin") + " --data " +
                       path("d12.csv") + " --out " + path("probe"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("input_dim 8"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("input_dim 12"), std::string::npos) << r.err;
}

TEST_F(Cli, BadLabelKeyAndSpace) {
    ASSERT_EQ(run("generate " + cfg() + " --out " + path("d.csv")).code, 0);
    EXPECT_EQ(run("pretrain " + cfg() + " --data " + path("d.csv") + " --label-key weight --out " + path("p")).code, 2);
    ASSERT_EQ(run("pretrain " + cfg() + " --data " + path("d.csv") + " --out " + path("p")).code, 0);
    EXPECT_EQ(run("export-embeddings " + cfg() + " --checkpoint " + path("p/checkpoint.bin") + " --data " +
                  path("d.csv") + " --space latent --out " + path("e.csv"))
                  .code,
              2);
}
