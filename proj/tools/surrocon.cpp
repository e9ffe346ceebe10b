// surrocon: generate data, pretrain, probe, evaluate, run theory sweeps and
// export embeddings. Exit codes: 0 success, 2 usage/config/data error,
// 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "surrocon/surrocon.hpp"

namespace fs = std::filesystem;
using namespace surrocon;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

RunConfig read_config(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ContractError("cannot write " + path.string());
    os << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

/// Load a manifest and apply the configured eye-level split.
Dataset load_split(const std::string& data, const RunConfig& cfg) {
    if (!fs::exists(data)) throw ContractError("data file not found: " + data);
    return split_by_eye(load_manifest(data), cfg.split.test_fraction, cfg.split.seed);
}

Checkpoint load_checked_checkpoint(const std::string& path, const Dataset& ds) {
    if (!fs::exists(path)) throw ContractError("checkpoint not found: " + path);
    auto ck = load_checkpoint(path);
    if (ck.encoder.input_dim() != ds.input_dim) {
        throw DimensionError("checkpoint encoder expects input_dim " + std::to_string(ck.encoder.input_dim()) +
                             " but data has input_dim " + std::to_string(ds.input_dim));
    }
    return ck;
}

std::vector<std::size_t> slots_or_default(const std::vector<std::size_t>& cli, const RunConfig& cfg) {
    return cli.empty() ? cfg.eval.slots : cli;
}

struct Options {
    std::string config, out, data, checkpoint, label_key, probe_file, space = "repr";
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::vector<std::size_t> slots;
    std::size_t seeds = 0;
};

int cmd_generate(const Options& o) {
    auto cfg = read_config(o.config);
    if (o.seed_set) cfg.gen_seed = o.seed;
    const auto ds = generate(cfg.gen, cfg.gen_seed);
    const fs::path out(o.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_manifest(ds, out);
    const auto hash = hex64(dataset_hash(ds));
    write_json(fs::path(o.out + ".meta.json"), {{"config_hash", cfg.hash()},
                                                {"generator_hash", cfg.gen.hash()},
                                                {"dataset_hash", hash},
                                                {"seed", cfg.gen_seed},
                                                {"samples", ds.samples.size()},
                                                {"input_dim", ds.input_dim}});
    std::cout << hash << '\n';
    return kExitOk;
}

int cmd_pretrain(const Options& o) {
    auto cfg = read_config(o.config);
    if (!o.label_key.empty()) cfg.train.label_key = LabelKey::parse(o.label_key, cfg.train.label_key.bin_width);
    if (o.seed_set) cfg.train.seed = o.seed;
    const auto ds = load_split(o.data, cfg);
    auto model = init_model(ds.input_dim, cfg.model, cfg.train.seed);
    auto rec = pretrain(ds, model.encoder, model.head, cfg.train);

    const fs::path dir(o.out);
    fs::create_directories(dir);
    Checkpoint ck{model.encoder, model.head, cfg.train.seed, "pretrain", cfg.hash()};
    save_checkpoint(ck, (dir / "checkpoint.bin").string());
    rec.config_hash = cfg.hash();
    rec.checkpoint = "checkpoint.bin";
    write_json(dir / "run.json", to_json(rec));
    std::cerr << "pretrain: " << rec.steps << " steps, final loss " << format_double(rec.epoch_losses.back()) << ", "
              << format_double(rec.wall_time_s) << " s\n";
    return kExitOk;
}

int cmd_probe(const Options& o) {
    auto cfg = read_config(o.config);
    if (o.seed_set) cfg.probe.seed = o.seed;
    const auto ds = load_split(o.data, cfg);
    const auto ck = load_checked_checkpoint(o.checkpoint, ds);
    const auto slots = slots_or_default(o.slots, cfg);
    auto res = probe(ds, ck.encoder, cfg.probe, slots);
    res.record.config_hash = cfg.hash();
    const fs::path dir(o.out);
    fs::create_directories(dir);
    auto pj = probe_to_json(res.probe);
    pj["slots"] = slots;
    pj["config_hash"] = cfg.hash();
    pj["encoder_checksum"] = hex64(parameter_checksum(ck.encoder));
    write_json(dir / "probe.json", pj);
    write_json(dir / "run.json", to_json(res.record));
    return kExitOk;
}

int cmd_evaluate(const Options& o) {
    auto cfg = read_config(o.config);
    if (o.seed_set) cfg.probe.seed = o.seed;
    const auto ds = load_split(o.data, cfg);
    const auto ck = load_checked_checkpoint(o.checkpoint, ds);
    auto slots = slots_or_default(o.slots, cfg);
    const auto n_seeds = o.seeds > 0 ? o.seeds : cfg.eval.seeds;

    MetricsReport report;
    if (!o.probe_file.empty()) {
        std::ifstream is(o.probe_file);
        if (!is) throw ContractError("probe file not found: " + o.probe_file);
        const auto pj = nlohmann::json::parse(is);
        const auto p = probe_from_json(pj);
        if (p.repr_dim() != ck.encoder.repr_dim()) {
            throw DimensionError("probe expects repr_dim " + std::to_string(p.repr_dim()) + " but encoder produces " +
                                 std::to_string(ck.encoder.repr_dim()));
        }
        slots = pj.at("slots").get<std::vector<std::size_t>>();
        const auto tests = balanced_test_sets(ds, slots, cfg.eval.n_per_class, cfg.eval.seed);
        report = evaluate(ds, ck.encoder, p, slots, tests);
    } else {
        const auto tests = balanced_test_sets(ds, slots, cfg.eval.n_per_class, cfg.eval.seed);
        report = probe_and_evaluate(ds, ck.encoder, cfg.probe, slots, tests, n_seeds);
    }
    auto j = to_json(report);
    j["config_hash"] = cfg.hash();
    write_json(o.out, j);
    return kExitOk;
}

int cmd_theory_sweep(const Options& o) {
    auto cfg = read_config(o.config);
    if (o.seed_set) cfg.sweep.seed = o.seed;
    const auto model = theory::LatentClassModel::from_generator(cfg.gen, cfg.gen_seed);
    const auto rows = theory::sweep_surrogate_fidelity(model, cfg.sweep.noise, cfg.sweep.n, cfg.sweep.seed, cfg.sweep.k);
    std::ostringstream os;
    theory::write_sweep_csv(os, rows);
    write_text(o.out, os.str());
    write_json(fs::path(o.out + ".meta.json"), {{"config_hash", cfg.hash()}, {"rows", rows.size()}});
    return kExitOk;
}

int cmd_export_embeddings(const Options& o) {
    auto cfg = read_config(o.config);
    const auto ds = load_split(o.data, cfg);
    const auto ck = load_checked_checkpoint(o.checkpoint, ds);
    const auto idx = ds.indices(Split::Test);
    if (idx.empty()) throw ContractError("export: test side is empty");
    Tensor emb;
    if (o.space == "repr") {
        emb = ck.encoder.represent(ds.features(idx));
    } else if (o.space == "proj") {
        if (ck.head.layers().empty()) throw ContractError("export: checkpoint has no projection head");
        emb = ck.head.project(ck.encoder.encode(ds.features(idx))).value();
    } else {
        throw ParameterError("export: --space must be repr or proj");
    }
    std::ostringstream os;
    os << "sample_id";
    for (std::size_t d = 0; d < emb.cols(); ++d) os << ",e" << d;
    for (std::size_t j = 0; j < kBiomarkerSlots; ++j) os << ",b" << j;
    os << '\n';
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto& s = ds.samples[idx[r]];
        os << s.sample_id;
        for (double v : emb.row(r)) os << ',' << format_double(v);
        for (auto m : s.biomarkers) os << ',' << static_cast<int>(m);
        os << '\n';
    }
    write_text(o.out, os.str());
    write_json(fs::path(o.out + ".meta.json"),
               {{"config_hash", cfg.hash()}, {"checkpoint_config_hash", ck.config_hash}, {"space", o.space},
                {"rows", idx.size()}});
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Surrogate-label supervised contrastive learning toolkit"};
    app.require_subcommand(1);
    Options o;

    auto seed_opt = [&](CLI::App* sc, const char* what) {
        sc->add_option_function<std::uint64_t>(
            "--seed",
            [&](const std::uint64_t& s) {
                o.seed = s;
                o.seed_set = true;
            },
            what);
    };

    auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset (manifest + .f64 sidecar)");
    gen->add_option("--config", o.config, "Run config file");
    gen->add_option("--out", o.out, "Manifest path")->required();
    seed_opt(gen, "Generator seed (overrides gen.seed)");

    auto* pre = app.add_subcommand("pretrain", "Contrastive pretraining on a surrogate label");
    pre->add_option("--data", o.data, "Manifest path")->required();
    pre->add_option("--label-key", o.label_key, "eye|bcva|cst|unique")
        ->check(CLI::IsMember({"eye", "bcva", "cst", "unique"}));
    pre->add_option("--config", o.config, "Run config file");
    pre->add_option("--out", o.out, "Output directory")->required();
    seed_opt(pre, "Training seed (overrides train.seed)");

    auto* prb = app.add_subcommand("probe", "Train a linear probe on a frozen encoder");
    prb->add_option("--checkpoint", o.checkpoint, "Encoder checkpoint")->required();
    prb->add_option("--data", o.data, "Manifest path")->required();
    prb->add_option("--slots", o.slots, "Biomarker slots")->delimiter(',');
    prb->add_option("--config", o.config, "Run config file");
    prb->add_option("--out", o.out, "Output directory")->required();
    seed_opt(prb, "Probe seed (overrides probe.seed)");

    auto* ev = app.add_subcommand("evaluate", "Probe and evaluate on balanced test sets");
    ev->add_option("--checkpoint", o.checkpoint, "Encoder checkpoint")->required();
    ev->add_option("--data", o.data, "Manifest path")->required();
    ev->add_option("--slots", o.slots, "Biomarker slots")->delimiter(',');
    ev->add_option("--seeds", o.seeds, "Number of probe seeds to average");
    ev->add_option("--probe", o.probe_file, "Evaluate this probe instead of training new ones");
    ev->add_option("--config", o.config, "Run config file");
    ev->add_option("--out", o.out, "MetricsReport JSON path")->required();
    seed_opt(ev, "Probe seed (overrides probe.seed)");

    auto* sw = app.add_subcommand("theory-sweep", "Collision/loss sweep over surrogate noise");
    sw->add_option("--config", o.config, "Run config file");
    sw->add_option("--out", o.out, "CSV path")->required();
    seed_opt(sw, "Sweep seed (overrides sweep.seed)");

    auto* ex = app.add_subcommand("export-embeddings", "Write test-set embeddings and biomarker labels as CSV");
    ex->add_option("--checkpoint", o.checkpoint, "Encoder checkpoint")->required();
    ex->add_option("--data", o.data, "Manifest path")->required();
    ex->add_option("--config", o.config, "Run config file");
    ex->add_option("--space", o.space, "repr (encoder output) or proj (projection head output)")
        ->check(CLI::IsMember({"repr", "proj"}));
    ex->add_option("--out", o.out, "CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*gen) return cmd_generate(o);
        if (*pre) return cmd_pretrain(o);
        if (*prb) return cmd_probe(o);
        if (*ev) return cmd_evaluate(o);
        if (*sw) return cmd_theory_sweep(o);
        if (*ex) return cmd_export_embeddings(o);
    } catch (const ConfigError& e) {
        std::cerr << "config error" << (e.key.empty() ? "" : " [" + e.key + "]") << ": " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const surrocon::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}
