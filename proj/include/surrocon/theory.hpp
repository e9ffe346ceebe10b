#pragma once

// Monte-Carlo simulator of the latent-class view of contrastive learning.
//
// Classes c ~ ρ each carry a spherical Gaussian feature law D_c. Positive pairs
// come from D_sim (two draws sharing a label) and negatives from D_neg (the
// marginal). Labels are either the true class or a surrogate value v emitted
// by a noisy channel P(v|c); pairing by surrogate label then samples both
// classes from the posterior ρ_clin(·|v), which is how surrogate supervision
// lets same-class negatives ("collisions") leak into the loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "surrocon/dataforge.hpp"
#include "surrocon/errors.hpp"
#include "surrocon/format.hpp"
#include "surrocon/rng.hpp"

namespace surrocon::theory {

struct LatentClassModel {
    std::vector<double> prior;               // ρ
    std::vector<std::vector<double>> means;  // μ_c
    std::vector<double> sigmas;              // σ_c

    [[nodiscard]] std::size_t num_classes() const { return prior.size(); }
    [[nodiscard]] std::size_t dim() const { return means.empty() ? 0 : means.front().size(); }

    void validate() const {
        if (prior.empty()) throw ParameterError("LatentClassModel: no classes");
        if (means.size() != prior.size() || sigmas.size() != prior.size()) {
            throw DimensionError("LatentClassModel: prior, means and sigmas must have one entry per class");
        }
        double s = 0.0;
        for (double p : prior) {
            if (!(p >= 0.0)) throw ParameterError("LatentClassModel: negative prior mass");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-12) throw ParameterError("LatentClassModel: prior must sum to 1");
        for (double sd : sigmas) {
            if (!(sd > 0.0)) throw ParameterError("LatentClassModel: sigma must be > 0");
        }
        for (const auto& m : means) {
            if (m.size() != dim()) throw DimensionError("LatentClassModel: ragged class means");
        }
    }

    [[nodiscard]] std::vector<double> draw(std::size_t c, Rng& rng) const {
        std::vector<double> x(dim());
        for (std::size_t k = 0; k < x.size(); ++k) x[k] = rng.normal(means[c][k], sigmas[c]);
        return x;
    }

    /// Classes of a synthetic generator: same prior and means, per-visit spread
    /// from per-sample and per-eye variance combined.
    static LatentClassModel from_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
        LatentClassModel m;
        m.prior = cfg.prior();
        m.means = class_means(cfg, seed);
        m.sigmas.assign(cfg.num_classes, std::sqrt(cfg.feature_sd * cfg.feature_sd + cfg.eye_sd * cfg.eye_sd));
        return m;
    }
};

/// Noisy channel from true class c to surrogate value v (values share the class index space).
struct SurrogateAssignment {
    std::vector<std::vector<double>> emission;  // emission[c][v] = P(v | c)

    /// P(v|c) = 1−η for v = c, η/(K−1) otherwise. η = 0 recovers the true labels.
    static SurrogateAssignment symmetric(std::size_t num_classes, double noise) {
        if (num_classes == 0) throw ParameterError("SurrogateAssignment: no classes");
        if (!(noise >= 0.0 && noise <= 1.0)) throw ParameterError("SurrogateAssignment: noise must be in [0,1]");
        SurrogateAssignment a;
        a.emission.assign(num_classes, std::vector<double>(num_classes, 0.0));
        for (std::size_t c = 0; c < num_classes; ++c) {
            for (std::size_t v = 0; v < num_classes; ++v) {
                if (num_classes == 1) {
                    a.emission[c][v] = 1.0;
                } else {
                    a.emission[c][v] = v == c ? 1.0 - noise : noise / static_cast<double>(num_classes - 1);
                }
            }
        }
        return a;
    }

    [[nodiscard]] std::size_t num_values() const { return emission.empty() ? 0 : emission.front().size(); }

    /// P(v) = Σ_c ρ(c) P(v|c).
    [[nodiscard]] std::vector<double> value_marginal(std::span<const double> prior) const {
        std::vector<double> pv(num_values(), 0.0);
        for (std::size_t c = 0; c < prior.size(); ++c)
            for (std::size_t v = 0; v < pv.size(); ++v) pv[v] += prior[c] * emission[c][v];
        return pv;
    }

    /// ρ_clin(c | v) = ρ(c) P(v|c) / P(v); rows with P(v) = 0 fall back to ρ.
    [[nodiscard]] std::vector<std::vector<double>> posterior(std::span<const double> prior) const {
        const auto pv = value_marginal(prior);
        std::vector<std::vector<double>> post(pv.size(), std::vector<double>(prior.size(), 0.0));
        for (std::size_t v = 0; v < pv.size(); ++v) {
            for (std::size_t c = 0; c < prior.size(); ++c) {
                post[v][c] = pv[v] > 0.0 ? prior[c] * emission[c][v] / pv[v] : prior[c];
            }
        }
        return post;
    }

    /// Joint law of (anchor class, positive class) when positives share a surrogate value:
    /// P(c, c') = Σ_v P(v) ρ_clin(c|v) ρ_clin(c'|v).
    [[nodiscard]] std::vector<std::vector<double>> pairing_joint(std::span<const double> prior) const {
        const auto pv = value_marginal(prior);
        const auto post = posterior(prior);
        const std::size_t k = prior.size();
        std::vector<std::vector<double>> joint(k, std::vector<double>(k, 0.0));
        for (std::size_t v = 0; v < pv.size(); ++v)
            for (std::size_t c = 0; c < k; ++c)
                for (std::size_t d = 0; d < k; ++d) joint[c][d] += pv[v] * post[v][c] * post[v][d];
        return joint;
    }

    /// Probability that a surrogate-matched positive pair shares its true class:
    /// Σ_v P(v) Σ_c ρ_clin(c|v)².
    [[nodiscard]] double same_class_pair_rate(std::span<const double> prior) const {
        const auto joint = pairing_joint(prior);
        double s = 0.0;
        for (std::size_t c = 0; c < joint.size(); ++c) s += joint[c][c];
        return s;
    }
};

/// Where the labels that define positives and negatives come from.
struct LabelSource {
    std::optional<SurrogateAssignment> surrogate;  // empty: true class labels

    static LabelSource truth() { return {}; }
    static LabelSource clinical(SurrogateAssignment a) { return {std::move(a)}; }
};

struct DrawnPoint {
    std::vector<double> x;  // empty when features were not requested
    std::size_t cls = 0;    // hidden true class
    std::size_t label = 0;  // label the selector saw (true class or surrogate value)
};

struct PositivePair {
    DrawnPoint anchor;
    DrawnPoint positive;
};

namespace detail {

struct Sampler {
    const LatentClassModel& model;
    const LabelSource& source;
    std::vector<double> value_marginal;
    std::vector<std::vector<double>> posterior;
    bool features;

    Sampler(const LatentClassModel& m, const LabelSource& s, bool with_features)
        : model(m), source(s), features(with_features) {
        model.validate();
        if (source.surrogate) {
            if (source.surrogate->emission.size() != model.num_classes()) {
                throw DimensionError("surrogate assignment does not match the number of classes");
            }
            value_marginal = source.surrogate->value_marginal(model.prior);
            posterior = source.surrogate->posterior(model.prior);
        }
    }

    std::size_t draw_label(Rng& rng) const {
        return source.surrogate ? rng.categorical(value_marginal) : rng.categorical(model.prior);
    }

    DrawnPoint draw_given_label(std::size_t label, Rng& rng) const {
        DrawnPoint p;
        p.label = label;
        p.cls = source.surrogate ? rng.categorical(posterior[label]) : label;
        if (features) p.x = model.draw(p.cls, rng);
        return p;
    }
};

}  // namespace detail

/// n draws from D_sim: a label is drawn, then two points that carry it.
inline std::vector<PositivePair> sample_dsim(const LatentClassModel& model, const LabelSource& source, std::size_t n,
                                             Rng& rng, bool with_features = true) {
    if (n == 0) throw ContractError("sample_dsim: n must be >= 1");
    detail::Sampler s(model, source, with_features);
    std::vector<PositivePair> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto label = s.draw_label(rng);
        auto a = s.draw_given_label(label, rng);
        auto b = s.draw_given_label(label, rng);
        out.push_back({std::move(a), std::move(b)});
    }
    return out;
}

/// n draws from D_neg, the marginal of D_sim.
inline std::vector<DrawnPoint> sample_dneg(const LatentClassModel& model, const LabelSource& source, std::size_t n,
                                           Rng& rng, bool with_features = true) {
    detail::Sampler s(model, source, with_features);
    std::vector<DrawnPoint> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(s.draw_given_label(s.draw_label(rng), rng));
    return out;
}

enum class NegativePolicy {
    Iid,           // negatives straight from D_neg
    DistinctLabel  // negatives from D_neg conditioned on a label different from the anchor's
};

struct ContrastiveTuple {
    DrawnPoint anchor;
    DrawnPoint positive;
    std::vector<DrawnPoint> negatives;
};

struct ContrastiveSampleSet {
    std::vector<ContrastiveTuple> tuples;
    std::size_t k = 1;
};

inline ContrastiveSampleSet sample_tuples(const LatentClassModel& model, const LabelSource& source, std::size_t n,
                                          std::size_t k, NegativePolicy policy, Rng& rng, bool with_features = true) {
    if (n == 0 || k == 0) throw ContractError("sample_tuples: n and k must be >= 1");
    detail::Sampler s(model, source, with_features);
    ContrastiveSampleSet set;
    set.k = k;
    set.tuples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        ContrastiveTuple t;
        const auto label = s.draw_label(rng);
        t.anchor = s.draw_given_label(label, rng);
        t.positive = s.draw_given_label(label, rng);
        for (std::size_t j = 0; j < k; ++j) {
            std::size_t neg_label = s.draw_label(rng);
            if (policy == NegativePolicy::DistinctLabel) {
                std::size_t tries = 0;
                while (neg_label == label) {
                    if (++tries > 10000) throw ContractError("sample_tuples: no label distinct from the anchor's");
                    neg_label = s.draw_label(rng);
                }
            }
            t.negatives.push_back(s.draw_given_label(neg_label, rng));
        }
        set.tuples.push_back(std::move(t));
    }
    return set;
}

/// Fraction of (anchor, negative) pairs whose hidden classes coincide.
inline double collision_rate(const ContrastiveSampleSet& set) {
    std::size_t pairs = 0, hits = 0;
    for (const auto& t : set.tuples) {
        for (const auto& neg : t.negatives) {
            ++pairs;
            hits += neg.cls == t.anchor.cls ? 1 : 0;
        }
    }
    if (pairs == 0) throw ContractError("collision_rate: empty sample set");
    return static_cast<double>(hits) / static_cast<double>(pairs);
}

using EmbeddingFn = std::function<std::vector<double>(std::span<const double>)>;

inline std::vector<double> identity_embedding(std::span<const double> x) { return {x.begin(), x.end()}; }

inline double inner(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// log(1 + Σ_j exp(f(x)·f(x⁻_j) − f(x)·f(x⁺))); the logistic loss when k = 1.
inline double tuple_loss(const EmbeddingFn& f, const ContrastiveTuple& t) {
    const auto fx = f(t.anchor.x);
    const double pos = inner(fx, f(t.positive.x));
    std::vector<double> terms{0.0};
    for (const auto& n : t.negatives) terms.push_back(inner(fx, f(n.x)) - pos);
    const double mx = *std::max_element(terms.begin(), terms.end());
    double s = 0.0;
    for (double v : terms) s += std::exp(v - mx);
    return mx + std::log(s);
}

struct Decomposition {
    double l_un = 0.0;
    double l_neq = std::numeric_limits<double>::quiet_NaN();  // NaN when no tuple is collision-free
    double l_eq = std::numeric_limits<double>::quiet_NaN();   // NaN when no tuple collides
    double collision_rate = 0.0;  // fraction of tuples with at least one colliding negative
    std::size_t n = 0;
    std::size_t n_eq = 0;

    [[nodiscard]] bool neq_defined() const { return n_eq < n; }
    [[nodiscard]] bool eq_defined() const { return n_eq > 0; }

    /// (1−τ̂) L≠ + τ̂ L=, over the non-empty strata only.
    [[nodiscard]] double recombined() const {
        double r = 0.0;
        if (neq_defined()) r += (1.0 - collision_rate) * l_neq;
        if (eq_defined()) r += collision_rate * l_eq;
        return r;
    }
};

/// Split the mean tuple loss into collision-free and colliding strata. A tuple
/// collides when any of its negatives shares the anchor's hidden class; for
/// k = 1 this fraction equals collision_rate().
inline Decomposition decompose_loss(const EmbeddingFn& f, const ContrastiveSampleSet& set) {
    if (set.tuples.empty()) throw ContractError("decompose_loss: empty sample set");
    double sum_all = 0.0, sum_eq = 0.0, sum_neq = 0.0;
    Decomposition d;
    d.n = set.tuples.size();
    for (const auto& t : set.tuples) {
        const double l = tuple_loss(f, t);
        const bool collides = std::any_of(t.negatives.begin(), t.negatives.end(),
                                          [&](const DrawnPoint& p) { return p.cls == t.anchor.cls; });
        sum_all += l;
        if (collides) {
            sum_eq += l;
            ++d.n_eq;
        } else {
            sum_neq += l;
        }
    }
    const auto n = static_cast<double>(d.n);
    d.l_un = sum_all / n;
    d.collision_rate = static_cast<double>(d.n_eq) / n;
    if (d.eq_defined()) d.l_eq = sum_eq / static_cast<double>(d.n_eq);
    if (d.neq_defined()) d.l_neq = sum_neq / static_cast<double>(d.n - d.n_eq);
    return d;
}

/// Σ p ln(p/q) in nats.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size() || p.empty()) throw DimensionError("kl_divergence: supports must have equal, non-zero size");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0.0 || q[i] < 0.0) throw ParameterError("kl_divergence: negative probability");
        if (p[i] == 0.0) continue;
        if (q[i] == 0.0) throw DivergenceUndefinedError("kl_divergence: q(" + std::to_string(i) + ") = 0 where p > 0");
        s += p[i] * std::log(p[i] / q[i]);
    }
    return s;
}

/// KL from the ideal pairing (positives always share the class) to the pairing
/// induced by matching surrogate values. Zero exactly when the surrogate is noiseless.
inline double pairing_kl(std::span<const double> prior, const SurrogateAssignment& a) {
    const auto joint = a.pairing_joint(prior);
    std::vector<double> ideal, induced;
    for (std::size_t c = 0; c < prior.size(); ++c) {
        for (std::size_t d = 0; d < prior.size(); ++d) {
            ideal.push_back(c == d ? prior[c] : 0.0);
            induced.push_back(joint[c][d]);
        }
    }
    return kl_divergence(ideal, induced);
}

struct SweepRow {
    double noise = 0.0;
    double kl_nats = 0.0;
    double collision_rate = 0.0;
    double l_un = 0.0;
    double l_neq = 0.0;
    double l_eq = 0.0;
    std::size_t n = 0;
};

/// One Monte-Carlo row per noise level: positives paired by surrogate value,
/// k negatives drawn from surrogate values different from the anchor's.
inline std::vector<SweepRow> sweep_surrogate_fidelity(const LatentClassModel& model, std::span<const double> noise_grid,
                                                      std::size_t n, std::uint64_t seed, std::size_t k = 1,
                                                      const EmbeddingFn& f = identity_embedding) {
    if (!std::is_sorted(noise_grid.begin(), noise_grid.end())) {
        throw ParameterError("sweep: noise grid must be sorted");
    }
    std::vector<SweepRow> rows;
    for (std::size_t r = 0; r < noise_grid.size(); ++r) {
        const auto assign = SurrogateAssignment::symmetric(model.num_classes(), noise_grid[r]);
        Rng rng(derive_seed(seed, r));
        const auto set = sample_tuples(model, LabelSource::clinical(assign), n, k,
                                       model.num_classes() > 1 ? NegativePolicy::DistinctLabel : NegativePolicy::Iid,
                                       rng);
        const auto d = decompose_loss(f, set);
        rows.push_back({noise_grid[r], pairing_kl(model.prior, assign), collision_rate(set), d.l_un, d.l_neq, d.l_eq,
                        n});
    }
    return rows;
}

inline constexpr const char* kSweepHeader = "noise,kl_nats,collision_rate,l_un,l_neq,l_eq,n";

/// Undefined strata are written as `nan`.
inline void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows) {
    os << kSweepHeader << '\n';
    for (const auto& r : rows) {
        os << format_double(r.noise) << ',' << format_double(r.kl_nats) << ',' << format_double(r.collision_rate)
           << ',' << format_double(r.l_un) << ',' << format_double(r.l_neq) << ',' << format_double(r.l_eq) << ','
           << r.n << '\n';
    }
}

}  // namespace surrocon::theory
