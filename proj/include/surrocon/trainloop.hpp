#pragma once

// Two-stage pipeline: contrastive pretraining of encoder + projection head on a
// surrogate label key, then a linear probe trained with masked sigmoid BCE on
// frozen representations, then balanced-set evaluation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "surrocon/autodiff.hpp"
#include "surrocon/contrastive.hpp"
#include "surrocon/dataforge.hpp"
#include "surrocon/encoder.hpp"
#include "surrocon/errors.hpp"
#include "surrocon/metrics.hpp"
#include "surrocon/rng.hpp"

namespace surrocon {

// Stream ids under a run seed.
namespace stream {
inline constexpr std::uint64_t kEncoderInit = 1;
inline constexpr std::uint64_t kHeadInit = 2;
inline constexpr std::uint64_t kEpochShuffle = 3;
inline constexpr std::uint64_t kViews = 4;
inline constexpr std::uint64_t kProbeInit = 5;
inline constexpr std::uint64_t kProbePool = 6;
}  // namespace stream

struct ModelConfig {
    std::vector<std::size_t> hidden{256};
    std::size_t repr_dim = 64;
    std::size_t proj_hidden = 64;
    std::size_t proj_dim = 32;

    [[nodiscard]] std::vector<std::size_t> encoder_dims(std::size_t input_dim) const {
        std::vector<std::size_t> d{input_dim};
        d.insert(d.end(), hidden.begin(), hidden.end());
        d.push_back(repr_dim);
        return d;
    }
};

struct TrainConfig {
    LabelKey label_key{};
    double temperature = kDefaultTemperature;
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    double lr = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    AugmentSpec augment{};

    void validate() const {
        if (!(lr > 0.0)) throw ParameterError("train.lr must be > 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("train.momentum must be in [0,1)");
        if (batch_size < 2) throw ParameterError("train.batch_size must be >= 2");
        if (epochs < 1) throw ParameterError("train.epochs must be >= 1");
        if (!(temperature > 0.0)) throw ParameterError("train.temperature must be > 0");
    }
};

struct ProbeConfig {
    std::size_t batch_size = 32;
    std::size_t epochs = 25;
    double lr = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    std::size_t max_samples = 0;  // 0: whole probe pool

    void validate() const {
        if (!(lr > 0.0)) throw ParameterError("probe.lr must be > 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("probe.momentum must be in [0,1)");
        if (batch_size < 1) throw ParameterError("probe.batch_size must be >= 1");
        if (epochs < 1) throw ParameterError("probe.epochs must be >= 1");
    }
};

inline std::string canonical(const ModelConfig& m) {
    std::ostringstream os;
    os << "model.hidden = ";
    for (std::size_t i = 0; i < m.hidden.size(); ++i) os << (i ? "," : "") << m.hidden[i];
    os << "\nmodel.repr_dim = " << m.repr_dim << "\nmodel.proj_hidden = " << m.proj_hidden
       << "\nmodel.proj_dim = " << m.proj_dim << '\n';
    return os.str();
}

inline std::string canonical(const TrainConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "train.label_key = " << c.label_key.name() << "\ntrain.bin_width = " << c.label_key.bin_width
       << "\ntrain.temperature = " << c.temperature << "\ntrain.batch_size = " << c.batch_size
       << "\ntrain.epochs = " << c.epochs << "\ntrain.lr = " << c.lr << "\ntrain.momentum = " << c.momentum
       << "\ntrain.seed = " << c.seed << "\naugment.sigma = " << c.augment.sigma
       << "\naugment.mask_p = " << c.augment.mask_p << "\naugment.flip = " << c.augment.flip
       << "\naugment.crop_pad = " << c.augment.crop_pad << "\naugment.grid_width = " << c.augment.grid_width << '\n';
    return os.str();
}

inline std::string canonical(const ProbeConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "probe.batch_size = " << c.batch_size << "\nprobe.epochs = " << c.epochs << "\nprobe.lr = " << c.lr
       << "\nprobe.momentum = " << c.momentum << "\nprobe.seed = " << c.seed
       << "\nprobe.max_samples = " << c.max_samples << '\n';
    return os.str();
}

inline std::string text_hash(const std::string& s) {
    Fnv1a h;
    h.update(s);
    return hex64(h.digest());
}

// ---------------------------------------------------------------------------
// Optimizer

/// v ← momentum·v + g;  p ← p − lr·v
inline void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double momentum) {
    if (grad.shape() != param.shape() || velocity.shape() != param.shape()) {
        throw ContractError("sgd_step: shape mismatch " + shape_str(param.shape()) + " / " + shape_str(grad.shape()) +
                            " / " + shape_str(velocity.shape()));
    }
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grad[i];
        param[i] -= lr * velocity[i];
    }
}

/// SGD with momentum over a fixed list of parameter nodes.
class SgdMomentum {
public:
    SgdMomentum(std::vector<Node> params, double lr, double momentum)
        : params_(std::move(params)), lr_(lr), momentum_(momentum) {
        for (const auto& p : params_) velocity_.push_back(Tensor::zeros(p.shape()));
    }

    /// Apply one update from the accumulated gradients, then clear them.
    void step() {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor p = params_[i].value();
            sgd_step(p, params_[i].grad(), velocity_[i], lr_, momentum_);
            params_[i].assign(std::move(p));
            params_[i].zero_grad();
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    [[nodiscard]] const std::vector<Tensor>& velocity() const { return velocity_; }

private:
    std::vector<Node> params_;
    std::vector<Tensor> velocity_;
    double lr_;
    double momentum_;
};

// ---------------------------------------------------------------------------
// Run records

struct RunRecord {
    std::string stage;
    std::string label_key;  // pretrain only
    std::vector<double> epoch_losses;
    std::string config_hash;
    std::string dataset_hash;
    std::string checkpoint;
    std::size_t steps = 0;
    double wall_time_s = 0.0;  // not serialized; timing would break byte-identical reruns
};

inline nlohmann::json to_json(const RunRecord& r) {
    nlohmann::json j;
    j["stage"] = r.stage;
    if (!r.label_key.empty()) j["label_key"] = r.label_key;
    j["epochs"] = r.epoch_losses.size();
    j["losses"] = r.epoch_losses;
    j["steps"] = r.steps;
    j["config_hash"] = r.config_hash;
    j["dataset_hash"] = r.dataset_hash;
    if (!r.checkpoint.empty()) j["checkpoint"] = r.checkpoint;
    return j;
}

namespace detail {

inline std::vector<std::vector<std::size_t>> epoch_batches(std::vector<std::size_t> pool, std::size_t batch_size,
                                                           std::size_t min_batch, std::uint64_t seed) {
    Rng(seed).shuffle(pool);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < pool.size(); start += batch_size) {
        const auto end = std::min(pool.size(), start + batch_size);
        if (end - start < min_batch) break;
        out.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(start),
                         pool.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: contrastive pretraining

struct Pretrained {
    EncoderNet encoder;
    ProjectionHead head;
};

/// Fresh encoder and head for a dataset, initialized from the run seed.
inline Pretrained init_model(std::size_t input_dim, const ModelConfig& m, std::uint64_t seed) {
    return {EncoderNet(m.encoder_dims(input_dim), derive_seed(seed, stream::kEncoderInit)),
            ProjectionHead(m.repr_dim, m.proj_hidden, m.proj_dim, derive_seed(seed, stream::kHeadInit))};
}

/// SGD-with-momentum on supcon_loss over the train side of `ds`. Each epoch
/// is a fresh permutation seeded by (seed, epoch); a final batch smaller than
/// 2 samples is dropped.
inline RunRecord pretrain(const Dataset& ds, EncoderNet& encoder, ProjectionHead& head, const TrainConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const auto pool = ds.pretrain_indices();
    if (pool.size() < 2) throw ContractError("pretrain: fewer than 2 train-side samples");
    if (encoder.input_dim() != ds.input_dim) {
        throw DimensionError("pretrain: encoder input " + std::to_string(encoder.input_dim()) + " vs data " +
                             std::to_string(ds.input_dim));
    }

    auto params = encoder.parameters();
    for (auto& p : head.parameters()) params.push_back(p);
    SgdMomentum opt(params, cfg.lr, cfg.momentum);

    RunRecord rec;
    rec.stage = "pretrain";
    rec.label_key = cfg.label_key.name();
    rec.dataset_hash = hex64(dataset_hash(ds));
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = detail::epoch_batches(pool, cfg.batch_size, 2, derive_seed(cfg.seed, stream::kEpochShuffle, epoch));
        double total = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto vb = make_views(ds, batches[b], cfg.label_key, cfg.augment,
                                       derive_seed(cfg.seed, stream::kViews, epoch, b));
            const auto sets = build_sets(vb);
            auto diagnose = [&](const char* what) {
                return NumericError("pretrain: epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                                    " (views=" + std::to_string(vb.size()) + ", contributing anchors=" +
                                    std::to_string(sets.contributing_anchors()) + "): " + what);
            };
            double value = 0.0;
            try {
                Node z = head.project(encoder.encode(vb.views));
                Node loss = supcon_loss(z, sets, cfg.temperature);
                value = loss.value().item();
                backward(loss);
            } catch (const NumericError& e) {
                throw diagnose(e.what());
            } catch (const DegenerateInputError& e) {
                // A projection row collapsed to zero (all hidden units inactive).
                throw diagnose(e.what());
            }
            opt.step();
            total += value;
            ++rec.steps;
        }
        rec.epoch_losses.push_back(total / static_cast<double>(batches.size()));
    }
    rec.wall_time_s = detail::seconds_since(t0);
    return rec;
}

// ---------------------------------------------------------------------------
// Stage 2: linear probe

struct ProbeResult {
    LinearProbe probe;
    RunRecord record;
    std::vector<std::size_t> train_indices;
};

/// Targets and mask (1 = known) for `slots` over samples `idx`.
inline std::pair<Tensor, Tensor> probe_targets(const Dataset& ds, std::span<const std::size_t> idx,
                                               std::span<const std::size_t> slots) {
    auto targets = Tensor::zeros({idx.size(), slots.size()});
    auto mask = Tensor::zeros({idx.size(), slots.size()});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t k = 0; k < slots.size(); ++k) {
            const auto m = ds.samples[idx[r]].biomarkers.at(slots[k]);
            if (m == Marker::Unknown) continue;
            mask(r, k) = 1.0;
            targets(r, k) = m == Marker::Present ? 1.0 : 0.0;
        }
    }
    return {std::move(targets), std::move(mask)};
}

/// Train-side samples with at least one of `slots` known, optionally subsampled.
inline std::vector<std::size_t> probe_pool(const Dataset& ds, std::span<const std::size_t> slots,
                                           const ProbeConfig& cfg) {
    std::vector<std::size_t> pool;
    for (auto i : ds.indices(Split::Train)) {
        if (std::any_of(slots.begin(), slots.end(), [&](std::size_t j) { return ds.samples[i].labeled(j); })) {
            pool.push_back(i);
        }
    }
    if (cfg.max_samples > 0 && pool.size() > cfg.max_samples) {
        Rng(derive_seed(cfg.seed, stream::kProbePool)).shuffle(pool);
        pool.resize(cfg.max_samples);
        std::sort(pool.begin(), pool.end());
    }
    return pool;
}

/// Fit a LinearProbe with one output per slot on frozen representations.
/// The encoder is only read; its parameters never enter the probe's graph.
inline ProbeResult probe(const Dataset& ds, const EncoderNet& encoder, const ProbeConfig& cfg,
                         std::span<const std::size_t> slots) {
    cfg.validate();
    if (slots.empty()) throw ContractError("probe: no target slots");
    for (auto j : slots) {
        if (j >= kBiomarkerSlots) throw ParameterError("probe: slot " + std::to_string(j) + " out of range");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto pool = probe_pool(ds, slots, cfg);
    auto [targets, mask] = probe_targets(ds, pool, slots);
    for (std::size_t k = 0; k < slots.size(); ++k) {
        bool any = false;
        for (std::size_t r = 0; r < pool.size() && !any; ++r) any = mask(r, k) != 0.0;
        if (!any) throw ContractError("probe: slot " + std::to_string(slots[k]) + " has no known labels");
    }
    const Tensor reps = encoder.represent(ds.features(pool));

    ProbeResult res{LinearProbe(encoder.repr_dim(), slots.size(), derive_seed(cfg.seed, stream::kProbeInit)), {},
                    pool};
    SgdMomentum opt(res.probe.parameters(), cfg.lr, cfg.momentum);
    res.record.stage = "probe";
    res.record.dataset_hash = hex64(dataset_hash(ds));

    std::vector<std::size_t> rows(pool.size());
    for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = r;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = detail::epoch_batches(rows, cfg.batch_size, 1, derive_seed(cfg.seed, stream::kEpochShuffle, epoch));
        double total = 0.0;
        std::size_t used = 0;
        for (const auto& b : batches) {
            const auto m = take_rows(mask, b);
            double known = 0.0;
            for (double v : m.data()) known += v;
            if (known == 0.0) continue;
            Node loss = bce_with_logits(res.probe.forward(take_rows(reps, b)), take_rows(targets, b), m);
            backward(loss);
            opt.step();
            total += loss.value().item();
            ++used;
            ++res.record.steps;
        }
        res.record.epoch_losses.push_back(used ? total / static_cast<double>(used) : 0.0);
    }
    res.record.wall_time_s = detail::seconds_since(t0);
    return res;
}

inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

inline std::string slot_name(std::size_t slot) { return "b" + std::to_string(slot); }

/// Metrics of probe column k on test_sets[k] (indices into ds) for slot slots[k].
inline MetricsReport evaluate(const Dataset& ds, const EncoderNet& encoder, const LinearProbe& p,
                              std::span<const std::size_t> slots,
                              const std::vector<std::vector<std::size_t>>& test_sets) {
    if (slots.size() != test_sets.size() || slots.size() != p.num_outputs()) {
        throw ContractError("evaluate: slots, test sets and probe outputs must correspond one to one");
    }
    std::vector<SlotMetrics> out;
    for (std::size_t k = 0; k < slots.size(); ++k) {
        const auto& idx = test_sets[k];
        if (idx.empty()) throw ContractError("evaluate: empty test set for slot " + std::to_string(slots[k]));
        const auto logits = probe_logits(p, encoder.represent(ds.features(idx)));
        std::vector<int> labels;
        std::vector<double> probs;
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const auto m = ds.samples[idx[r]].biomarkers.at(slots[k]);
            if (m == Marker::Unknown) throw ContractError("evaluate: test sample with unknown label");
            labels.push_back(m == Marker::Present ? 1 : 0);
            probs.push_back(sigmoid(logits(r, k)));
        }
        out.push_back(slot_metrics(slot_name(slots[k]), labels, probs));
    }
    return make_report(std::move(out));
}

/// Balanced test set per slot, seeded per slot.
inline std::vector<std::vector<std::size_t>> balanced_test_sets(const Dataset& ds, std::span<const std::size_t> slots,
                                                                std::size_t n_per_class, std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> sets;
    for (auto j : slots) sets.push_back(balanced_test_set(ds, j, n_per_class, seed));
    return sets;
}

/// Train a probe per seed (seed s uses derive_seed(cfg.seed, s)) and aggregate the reports.
inline MetricsReport probe_and_evaluate(const Dataset& ds, const EncoderNet& encoder, const ProbeConfig& cfg,
                                        std::span<const std::size_t> slots,
                                        const std::vector<std::vector<std::size_t>>& test_sets, std::size_t n_seeds) {
    if (n_seeds == 0) throw ParameterError("probe_and_evaluate: need at least one seed");
    std::vector<MetricsReport> runs;
    for (std::size_t s = 0; s < n_seeds; ++s) {
        ProbeConfig c = cfg;
        c.seed = n_seeds == 1 ? cfg.seed : derive_seed(cfg.seed, s);
        const auto res = probe(ds, encoder, c, slots);
        runs.push_back(evaluate(ds, encoder, res.probe, slots, test_sets));
    }
    return n_seeds == 1 ? runs.front() : aggregate_seeds(std::move(runs));
}

}  // namespace surrocon
