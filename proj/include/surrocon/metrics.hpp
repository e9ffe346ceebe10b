#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "surrocon/errors.hpp"

namespace surrocon {

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    [[nodiscard]] std::size_t total() const { return tp + fp + tn + fn; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Counts over binary (0/1) labels and predictions.
inline ConfusionCounts confusion(std::span<const int> labels, std::span<const int> predictions) {
    if (labels.size() != predictions.size()) {
        throw ContractError("confusion: " + std::to_string(labels.size()) + " labels vs " +
                            std::to_string(predictions.size()) + " predictions");
    }
    ConfusionCounts c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i], p = predictions[i];
        if ((y != 0 && y != 1) || (p != 0 && p != 1)) throw ContractError("confusion: values must be 0 or 1");
        if (y == 1) {
            (p == 1 ? c.tp : c.fn)++;
        } else {
            (p == 1 ? c.fp : c.tn)++;
        }
    }
    return c;
}

inline double accuracy(const ConfusionCounts& c) {
    if (c.total() == 0) throw UndefinedMetricError("accuracy: no samples");
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

/// 2tp/(2tp+fp+fn). A predictor that made no errors and found nothing (all zero) scores 1.
inline double f1(const ConfusionCounts& c) {
    const auto denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return 1.0;
    return static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

inline double sensitivity(const ConfusionCounts& c) {
    if (c.tp + c.fn == 0) throw UndefinedMetricError("sensitivity: no positive samples");
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

inline double specificity(const ConfusionCounts& c) {
    if (c.tn + c.fp == 0) throw UndefinedMetricError("specificity: no negative samples");
    return static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
}

/// Midranks (1-based) with ties sharing the average of their positions.
inline std::vector<double> midranks(std::span<const double> x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> rank(x.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i + 1;
        while (j < order.size() && x[order[j]] == x[order[i]]) ++j;
        // positions i+1 .. j share the mean rank
        const double r = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) rank[order[k]] = r;
        i = j;
    }
    return rank;
}

/// Mann-Whitney AUROC: P(s⁺ > s⁻) + ½ P(s⁺ = s⁻), via midranks.
inline double auroc(std::span<const int> labels, std::span<const double> scores) {
    if (labels.size() != scores.size()) throw ContractError("auroc: labels and scores differ in length");
    for (double s : scores) {
        if (std::isnan(s)) throw ContractError("auroc: NaN score");
    }
    const auto ranks = midranks(scores);
    double n_pos = 0.0, n_neg = 0.0, rank_sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) {
            n_pos += 1.0;
            rank_sum += ranks[i];
        } else if (labels[i] == 0) {
            n_neg += 1.0;
        } else {
            throw ContractError("auroc: labels must be 0 or 1");
        }
    }
    if (n_pos == 0.0 || n_neg == 0.0) throw UndefinedMetricError("auroc: both classes must be present");
    const double u = rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    return u / (n_pos * n_neg);
}

// ---------------------------------------------------------------------------
// Reports

struct SlotMetrics {
    std::string name;
    double accuracy = 0.0;
    double f1 = 0.0;
    double auroc = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
};

/// Slot-averaged headline numbers.
struct MetricSummary {
    double accuracy = 0.0;
    double f1 = 0.0;
    double auroc = 0.0;
    double specificity = 0.0;
    double sensitivity = 0.0;
};

struct MetricsReport {
    std::vector<SlotMetrics> slots;
    MetricSummary averages;
    std::size_t n_seeds = 1;
    MetricSummary seed_mean;
    MetricSummary seed_std;
    std::vector<MetricsReport> per_seed;  // filled when n_seeds > 1
};

/// Metrics from 0/1 labels and sigmoid outputs; predictions use the 0.5 threshold.
inline SlotMetrics slot_metrics(std::string name, std::span<const int> labels, std::span<const double> probabilities) {
    if (labels.empty()) throw ContractError("slot_metrics: empty test set");
    std::vector<int> preds(probabilities.size());
    for (std::size_t i = 0; i < preds.size(); ++i) preds[i] = probabilities[i] >= 0.5 ? 1 : 0;
    const auto c = confusion(labels, preds);
    return {std::move(name), accuracy(c), f1(c), auroc(labels, probabilities), sensitivity(c), specificity(c)};
}

inline MetricSummary summarize(std::span<const SlotMetrics> slots) {
    if (slots.empty()) throw ContractError("summarize: no slots");
    MetricSummary s;
    for (const auto& m : slots) {
        s.accuracy += m.accuracy;
        s.f1 += m.f1;
        s.auroc += m.auroc;
        s.specificity += m.specificity;
        s.sensitivity += m.sensitivity;
    }
    const auto n = static_cast<double>(slots.size());
    s.accuracy /= n;
    s.f1 /= n;
    s.auroc /= n;
    s.specificity /= n;
    s.sensitivity /= n;
    return s;
}

inline MetricsReport make_report(std::vector<SlotMetrics> slots) {
    MetricsReport r;
    r.averages = summarize(slots);
    r.slots = std::move(slots);
    r.n_seeds = 1;
    r.seed_mean = r.averages;
    return r;
}

namespace detail {

template <typename Get>
std::pair<double, double> mean_std(std::span<const MetricsReport> runs, Get get) {
    double m = 0.0;
    for (const auto& r : runs) m += get(r);
    m /= static_cast<double>(runs.size());
    if (runs.size() < 2) return {m, 0.0};
    double ss = 0.0;
    for (const auto& r : runs) ss += (get(r) - m) * (get(r) - m);
    return {m, std::sqrt(ss / static_cast<double>(runs.size() - 1))};
}

}  // namespace detail

/// Mean over seeds of every number, plus sample standard deviation (n−1) of the
/// slot-averaged summary. Runs must cover the same slots in the same order.
inline MetricsReport aggregate_seeds(std::vector<MetricsReport> runs) {
    if (runs.empty()) throw ContractError("aggregate_seeds: no runs");
    MetricsReport out;
    out.n_seeds = runs.size();
    for (std::size_t s = 0; s < runs.front().slots.size(); ++s) {
        SlotMetrics m;
        m.name = runs.front().slots[s].name;
        for (const auto& r : runs) {
            if (r.slots.size() != runs.front().slots.size() || r.slots[s].name != m.name) {
                throw ContractError("aggregate_seeds: runs disagree on slots");
            }
        }
        m.accuracy = detail::mean_std(runs, [s](const MetricsReport& r) { return r.slots[s].accuracy; }).first;
        m.f1 = detail::mean_std(runs, [s](const MetricsReport& r) { return r.slots[s].f1; }).first;
        m.auroc = detail::mean_std(runs, [s](const MetricsReport& r) { return r.slots[s].auroc; }).first;
        m.sensitivity = detail::mean_std(runs, [s](const MetricsReport& r) { return r.slots[s].sensitivity; }).first;
        m.specificity = detail::mean_std(runs, [s](const MetricsReport& r) { return r.slots[s].specificity; }).first;
        out.slots.push_back(std::move(m));
    }
    out.averages = summarize(out.slots);
    auto fill = [&](double MetricSummary::*field) {
        auto [m, sd] = detail::mean_std(runs, [field](const MetricsReport& r) { return r.averages.*field; });
        out.seed_mean.*field = m;
        out.seed_std.*field = sd;
    };
    fill(&MetricSummary::accuracy);
    fill(&MetricSummary::f1);
    fill(&MetricSummary::auroc);
    fill(&MetricSummary::specificity);
    fill(&MetricSummary::sensitivity);
    if (runs.size() > 1) out.per_seed = std::move(runs);
    return out;
}

inline nlohmann::json summary_json(const MetricSummary& s) {
    return {{"accuracy", s.accuracy},
            {"f1", s.f1},
            {"auroc", s.auroc},
            {"specificity", s.specificity},
            {"sensitivity", s.sensitivity}};
}

/// `{slots: [{name, accuracy, f1, auroc}], averages: {auroc, specificity, sensitivity}, seeds: {n, mean, std}}`
inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["slots"] = nlohmann::json::array();
    for (const auto& s : r.slots) {
        j["slots"].push_back({{"name", s.name}, {"accuracy", s.accuracy}, {"f1", s.f1}, {"auroc", s.auroc}});
    }
    j["averages"] = {{"auroc", r.averages.auroc},
                     {"specificity", r.averages.specificity},
                     {"sensitivity", r.averages.sensitivity}};
    j["seeds"] = {{"n", r.n_seeds}, {"mean", summary_json(r.seed_mean)}, {"std", summary_json(r.seed_std)}};
    if (!r.per_seed.empty()) {
        j["per_seed"] = nlohmann::json::array();
        for (const auto& p : r.per_seed) j["per_seed"].push_back(to_json(p));
    }
    return j;
}

}  // namespace surrocon
