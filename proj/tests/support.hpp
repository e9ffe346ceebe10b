#pragma once

// Independent oracles shared by the unit tests and the acceptance runner.
// Everything here is written with plain loops over std::vector so it does not
// reuse the library code it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "surrocon/surrocon.hpp"

namespace surrocon::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    auto t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

/// Rows of Gaussian draws scaled to unit length.
inline Tensor random_unit_rows(std::size_t n, std::size_t d, Rng& rng) {
    auto t = Tensor::zeros({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (auto& v : t.row(i)) {
            v = rng.normal();
            s += v * v;
        }
        for (auto& v : t.row(i)) v /= std::sqrt(s);
    }
    return t;
}

/// Norm-wise relative error ‖a − n‖ / max(‖a‖, ‖n‖) between the backward
/// gradients of `params` and central finite differences of `loss`.
/// `loss` must rebuild its graph from the current parameter values.
inline double gradient_error(std::vector<Node> params, const std::function<Node()>& loss, double h = 1e-5) {
    for (auto& p : params) p.zero_grad();
    backward(loss());
    double diff2 = 0.0, an2 = 0.0, fd2 = 0.0;
    for (auto& p : params) {
        const Tensor analytic = p.grad();
        const Tensor base = p.value();
        for (std::size_t i = 0; i < base.size(); ++i) {
            Tensor plus = base, minus = base;
            plus[i] += h;
            minus[i] -= h;
            p.assign(plus);
            const double fp = loss().value().item();
            p.assign(minus);
            const double fm = loss().value().item();
            const double fd = (fp - fm) / (2.0 * h);
            diff2 += (analytic[i] - fd) * (analytic[i] - fd);
            an2 += analytic[i] * analytic[i];
            fd2 += fd * fd;
        }
        p.assign(base);
    }
    const double denom = std::max({std::sqrt(an2), std::sqrt(fd2), 1e-300});
    return std::sqrt(diff2) / denom;
}

/// The clinical supervised contrastive loss summed term by term
/// with direct loops, normalized by the number of anchors that have positives.
inline double supcon_oracle(const Tensor& z, const std::vector<std::int64_t>& labels, double tau,
                            bool twins_only = false) {
    const std::size_t n = labels.size();
    const std::size_t d = z.cols();
    auto sim = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += z(i, k) * z(j, k);
        return s / tau;
    };
    double total = 0.0;
    std::size_t anchors = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> pos;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const bool is_pos = twins_only ? j == (i ^ 1U) : labels[j] == labels[i];
            if (is_pos) pos.push_back(j);
        }
        if (pos.empty()) continue;
        double denom = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
            if (a != i) denom += std::exp(sim(i, a));
        }
        double term = 0.0;
        for (auto c : pos) term += std::log(std::exp(sim(i, c)) / denom);
        total += -term / static_cast<double>(pos.size());
        ++anchors;
    }
    return total / static_cast<double>(anchors);
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counted half.
inline double auroc_pairwise(const std::vector<int>& labels, const std::vector<double>& scores) {
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < labels.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) {
                wins += 1.0;
            } else if (scores[i] == scores[j]) {
                wins += 0.5;
            }
        }
    }
    return wins / static_cast<double>(pairs);
}

/// Random AUROC instance with both classes present and deliberate ties.
inline void random_auroc_instance(Rng& rng, std::size_t max_n, std::vector<int>& labels, std::vector<double>& scores) {
    const std::size_t n = 2 + rng.below(max_n - 1);
    const std::size_t levels = 1 + rng.below(n);  // few levels force ties
    labels.assign(n, 0);
    scores.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = rng.bernoulli(0.5) ? 1 : 0;
        scores[i] = static_cast<double>(rng.below(levels)) / static_cast<double>(levels);
    }
    labels[0] = 1;
    labels[1] = 0;
}

/// Average ranks (1-based) with ties shared, computed by sorting pairs.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> order(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < order.size();) {
            std::size_t j = i;
            while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
            for (std::size_t k = i; k <= j; ++k) r[order[k]] = (static_cast<double>(i + j) / 2.0) + 1.0;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i] / n;
        my += ry[i] / n;
    }
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

/// Half-width of a 4σ binomial band around p for n trials.
inline double binomial_band(double p, double n, double sigmas = 4.0) { return sigmas * std::sqrt(p * (1.0 - p) / n); }

}  // namespace surrocon::testing
