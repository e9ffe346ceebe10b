// End-to-end walk through the library at a small scale: generate a dataset,
// pretrain on the CST surrogate label, probe five biomarker slots and print
// the averaged test metrics.

#include <iostream>

#include "surrocon/surrocon.hpp"

int main() {
    using namespace surrocon;

    GeneratorConfig gen;
    gen.n_eyes = 32;
    gen.visits_per_eye = 24;
    const auto ds = split_by_eye(generate(gen, 7), 0.25, 7);
    std::cout << "dataset " << hex64(dataset_hash(ds)) << ": " << ds.samples.size() << " samples, "
              << ds.indices(Split::Test).size() << " on the test side\n";

    TrainConfig train;
    train.label_key = LabelKey::parse("cst");
    train.epochs = 3;
    train.seed = 7;
    auto model = init_model(ds.input_dim, ModelConfig{}, train.seed);
    const auto rec = pretrain(ds, model.encoder, model.head, train);
    for (std::size_t e = 0; e < rec.epoch_losses.size(); ++e) {
        std::cout << "epoch " << e + 1 << " loss " << format_double(rec.epoch_losses[e]) << '\n';
    }

    const std::vector<std::size_t> slots{0, 1, 2, 3, 4};
    ProbeConfig pc;
    pc.seed = 7;
    const auto tests = balanced_test_sets(ds, slots, 20, 7);
    const auto report = probe_and_evaluate(ds, model.encoder, pc, slots, tests, 1);
    std::cout << to_json(report).dump(2) << '\n';
    return 0;
}
