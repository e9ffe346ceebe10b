#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "surrocon/autodiff.hpp"
#include "surrocon/dataforge.hpp"
#include "surrocon/errors.hpp"
#include "surrocon/rng.hpp"
#include "surrocon/tensor.hpp"

namespace surrocon {

inline constexpr double kDefaultTemperature = 0.07;

/// Which surrogate value decides that two views are positives.
struct LabelKey {
    enum class Kind { EyeId, Bcva, Cst, UniqueId };

    Kind kind = Kind::Cst;
    std::int64_t bin_width = 1;  // applies to Bcva and Cst

    [[nodiscard]] std::int64_t of(const Sample& s) const {
        if (bin_width < 1) throw ParameterError("LabelKey: bin_width must be >= 1");
        switch (kind) {
            case Kind::EyeId: return s.eye_id;
            case Kind::Bcva: return floor_div(s.bcva, bin_width);
            case Kind::Cst: return floor_div(s.cst, bin_width);
            case Kind::UniqueId: return s.sample_id;
        }
        return 0;
    }

    [[nodiscard]] std::string name() const {
        switch (kind) {
            case Kind::EyeId: return "eye";
            case Kind::Bcva: return "bcva";
            case Kind::Cst: return "cst";
            case Kind::UniqueId: return "unique";
        }
        return "?";
    }

    static LabelKey parse(std::string_view s, std::int64_t bin_width = 1) {
        if (s == "eye") return {Kind::EyeId, 1};
        if (s == "bcva") return {Kind::Bcva, bin_width};
        if (s == "cst") return {Kind::Cst, bin_width};
        if (s == "unique") return {Kind::UniqueId, 1};
        throw ParameterError("unknown label key '" + std::string(s) + "' (expected eye|bcva|cst|unique)");
    }

private:
    static std::int64_t floor_div(std::int64_t v, std::int64_t w) {
        auto q = v / w;
        if ((v % w != 0) && ((v < 0) != (w < 0))) --q;
        return q;
    }
};

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentSpec {
    double sigma = 0.1;    // additive Gaussian noise
    double mask_p = 0.1;   // per-coordinate zeroing probability
    bool flip = false;     // grid only: horizontal flip with probability 1/2
    std::size_t crop_pad = 0;   // grid only: zero-pad then crop back at a random offset
    std::size_t grid_width = 0; // 0: plain vector; otherwise rows of this width

    static AugmentSpec identity() { return {0.0, 0.0, false, 0, 0}; }

    void validate(std::size_t dim) const {
        if (!(sigma >= 0.0)) throw ParameterError("augment: sigma must be >= 0");
        if (!(mask_p >= 0.0 && mask_p < 1.0)) throw ParameterError("augment: mask_p must be in [0,1)");
        if ((flip || crop_pad > 0) && grid_width == 0) {
            throw ParameterError("augment: flip/crop_pad need grid_width > 0");
        }
        if (grid_width > 0 && dim % grid_width != 0) {
            throw ParameterError("augment: input dim " + std::to_string(dim) + " is not a multiple of grid_width");
        }
    }
};

/// Noise, then masking, then (grid data) flip and pad-crop.
inline std::vector<double> augment(std::span<const double> x, const AugmentSpec& spec, Rng& rng) {
    spec.validate(x.size());
    std::vector<double> out(x.begin(), x.end());
    if (spec.sigma > 0.0) {
        for (auto& v : out) v += spec.sigma * rng.normal();
    }
    if (spec.mask_p > 0.0) {
        for (auto& v : out) {
            if (rng.bernoulli(spec.mask_p)) v = 0.0;
        }
    }
    if (spec.grid_width == 0) return out;

    const std::size_t w = spec.grid_width;
    const std::size_t h = out.size() / w;
    if (spec.flip && rng.bernoulli(0.5)) {
        for (std::size_t r = 0; r < h; ++r) std::reverse(out.begin() + static_cast<std::ptrdiff_t>(r * w),
                                                         out.begin() + static_cast<std::ptrdiff_t>((r + 1) * w));
    }
    if (spec.crop_pad > 0) {
        const std::size_t p = spec.crop_pad;
        const auto dy = static_cast<std::ptrdiff_t>(rng.below(2 * p + 1)) - static_cast<std::ptrdiff_t>(p);
        const auto dx = static_cast<std::ptrdiff_t>(rng.below(2 * p + 1)) - static_cast<std::ptrdiff_t>(p);
        std::vector<double> cropped(out.size(), 0.0);
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
                const auto sr = static_cast<std::ptrdiff_t>(r) + dy;
                const auto sc = static_cast<std::ptrdiff_t>(c) + dx;
                if (sr >= 0 && sc >= 0 && sr < static_cast<std::ptrdiff_t>(h) && sc < static_cast<std::ptrdiff_t>(w)) {
                    cropped[r * w + c] = out[static_cast<std::size_t>(sr) * w + static_cast<std::size_t>(sc)];
                }
            }
        }
        out = std::move(cropped);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Two-view batches

/// 2N views; views 2k and 2k+1 both come from batch sample k and share its label.
struct ViewBatch {
    Tensor views;
    std::vector<std::int64_t> labels;
    std::vector<std::size_t> origin;

    [[nodiscard]] std::size_t size() const { return labels.size(); }

    friend bool operator==(const ViewBatch&, const ViewBatch&) = default;
};

inline constexpr std::size_t twin_of(std::size_t view) noexcept { return view ^ 1U; }

/// Each view is augmented with its own stream derived from (seed, sample, view),
/// so the result does not depend on the label key.
inline ViewBatch make_views(std::span<const Sample* const> batch, const LabelKey& key, const AugmentSpec& aug,
                            std::uint64_t seed) {
    if (batch.size() < 2) {
        throw BatchTooSmallError("make_views: need at least 2 samples, got " + std::to_string(batch.size()));
    }
    const std::size_t dim = batch.front()->features.size();
    aug.validate(dim);
    ViewBatch vb;
    std::vector<double> data;
    data.reserve(2 * batch.size() * dim);
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const Sample& s = *batch[k];
        if (s.features.size() != dim) throw DimensionError("make_views: ragged feature lengths in batch");
        const auto label = key.of(s);
        for (std::uint64_t v = 0; v < 2; ++v) {
            Rng rng(derive_seed(seed, k, v));
            auto x = augment(s.features, aug, rng);
            data.insert(data.end(), x.begin(), x.end());
            vb.labels.push_back(label);
            vb.origin.push_back(k);
        }
    }
    vb.views = Tensor::matrix(2 * batch.size(), dim, std::move(data));
    return vb;
}

inline ViewBatch make_views(const Dataset& ds, std::span<const std::size_t> idx, const LabelKey& key,
                            const AugmentSpec& aug, std::uint64_t seed) {
    std::vector<const Sample*> batch;
    batch.reserve(idx.size());
    for (auto i : idx) batch.push_back(&ds.samples.at(i));
    return make_views(batch, key, aug, seed);
}

// ---------------------------------------------------------------------------
// Positive / candidate sets

struct PosNegSets {
    std::vector<std::vector<std::size_t>> positives;   // C(i)
    std::vector<std::vector<std::size_t>> candidates;  // A(i)

    [[nodiscard]] std::size_t size() const { return positives.size(); }
    [[nodiscard]] bool has_positive(std::size_t i) const { return !positives[i].empty(); }

    [[nodiscard]] std::size_t contributing_anchors() const {
        return static_cast<std::size_t>(
            std::count_if(positives.begin(), positives.end(), [](const auto& c) { return !c.empty(); }));
    }
};

struct SetOptions {
    /// Ablation: do not count the augmented twin as a positive. Anchors can then
    /// end up with no positives and are skipped by the loss.
    bool drop_twins = false;
};

/// C(i): other views with the same label. A(i): every view except i.
inline PosNegSets build_sets(std::span<const std::int64_t> labels, SetOptions opt = {}) {
    const std::size_t n = labels.size();
    PosNegSets sets;
    sets.positives.resize(n);
    sets.candidates.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        sets.candidates[i].reserve(n - 1);
        for (std::size_t a = 0; a < n; ++a) {
            if (a == i) continue;
            sets.candidates[i].push_back(a);
            if (labels[a] != labels[i]) continue;
            if (opt.drop_twins && a == twin_of(i)) continue;
            sets.positives[i].push_back(a);
        }
    }
    return sets;
}

inline PosNegSets build_sets(const ViewBatch& vb, SetOptions opt = {}) { return build_sets(vb.labels, opt); }

/// Sets of the augmentation-only objective: the twin is the only positive.
inline PosNegSets twin_sets(std::size_t n_views) {
    if (n_views < 2 || n_views % 2 != 0) throw DimensionError("twin_sets: view count must be even and >= 2");
    PosNegSets sets;
    sets.positives.resize(n_views);
    sets.candidates.resize(n_views);
    for (std::size_t i = 0; i < n_views; ++i) {
        sets.positives[i] = {twin_of(i)};
        for (std::size_t a = 0; a < n_views; ++a) {
            if (a != i) sets.candidates[i].push_back(a);
        }
    }
    return sets;
}

// ---------------------------------------------------------------------------
// Losses

/// Supervised contrastive loss over embedding rows z (expected unit-norm):
///
///   mean over anchors i with C(i) ≠ ∅ of
///     (−1/|C(i)|) Σ_{c∈C(i)} log( exp(z_i·z_c/τ) / Σ_{a∈A(i)} exp(z_i·z_a/τ) )
///
/// which equals log Σ_{a∈A(i)} exp(s_ia) − mean_{c∈C(i)} s_ic with s = z zᵀ/τ.
/// Anchors without positives are skipped.
inline Node supcon_loss(const Node& z, const PosNegSets& sets, double temperature = kDefaultTemperature) {
    if (!(temperature > 0.0)) throw ParameterError("supcon_loss: temperature must be > 0");
    if (z.value().rank() != 2) throw DimensionError("supcon_loss: embeddings must be a matrix");
    const std::size_t n = z.value().rows();
    if (sets.size() != n) {
        throw DimensionError("supcon_loss: " + std::to_string(sets.size()) + " anchor sets for " +
                             std::to_string(n) + " embeddings");
    }
    const std::size_t contributing = sets.contributing_anchors();
    if (contributing == 0) throw EmptyLossError("supcon_loss: no anchor has a positive");

    Node sim = scale(matmul(z, transpose(z)), 1.0 / temperature);

    // Positive part as one weighted sum: Σ_i (1/|C(i)|) Σ_c s_ic.
    Tensor weights = Tensor::zeros({n, n});
    Node denominators;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& pos = sets.positives[i];
        if (pos.empty()) continue;
        const auto& cand = sets.candidates[i];
        if (cand.empty()) throw DimensionError("supcon_loss: anchor with positives but no candidates");
        for (auto c : pos) weights(i, c) += 1.0 / static_cast<double>(pos.size());
        std::vector<std::size_t> flat;
        flat.reserve(cand.size());
        for (auto a : cand) flat.push_back(i * n + a);
        Node lse = log_sum_exp(gather(sim, std::move(flat)));
        denominators = denominators.valid() ? add(denominators, lse) : lse;
    }
    Node positives = dot(sim, Node::constant(std::move(weights)));
    return scale(sub(denominators, positives), 1.0 / static_cast<double>(contributing));
}

/// Augmentation-only (NT-Xent) loss: supcon_loss where each view's only positive is its twin.
inline Node ntxent_loss(const Node& z, double temperature = kDefaultTemperature) {
    return supcon_loss(z, twin_sets(z.value().rows()), temperature);
}

}  // namespace surrocon
