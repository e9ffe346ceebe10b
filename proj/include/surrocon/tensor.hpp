#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "surrocon/errors.hpp"

namespace surrocon {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array of doubles. A scalar is a rank-1 tensor of length 1.
class Tensor {
public:
    Tensor() : shape_{1}, data_(1, 0.0) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_.empty()) throw DimensionError("Tensor: shape must have at least one dimension");
        for (auto d : shape_) {
            if (d == 0) throw DimensionError("Tensor: zero-sized dimension in " + shape_str(shape_));
        }
        if (data_.size() != shape_size(shape_)) {
            throw DimensionError("Tensor: data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

    static Tensor filled(Shape shape, double v) {
        auto n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, v));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor vector(std::vector<double> v) {
        auto n = v.size();
        return Tensor({n}, std::move(v));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
        return Tensor({rows, cols}, std::move(v));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        std::vector<double> v;
        std::size_t cols = rows.size() ? rows.begin()->size() : 0;
        for (const auto& r : rows) {
            if (r.size() != cols) throw DimensionError("Tensor::matrix: ragged rows");
            v.insert(v.end(), r.begin(), r.end());
        }
        return Tensor({rows.size(), cols}, std::move(v));
    }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool is_scalar() const noexcept { return data_.size() == 1; }

    /// Rows of a rank-2 tensor; a rank-1 tensor counts as a single row.
    [[nodiscard]] std::size_t rows() const noexcept { return rank() == 2 ? shape_[0] : 1; }
    [[nodiscard]] std::size_t cols() const noexcept { return shape_.back(); }

    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] std::span<double> data() noexcept { return data_; }

    [[nodiscard]] double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    [[nodiscard]] double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

    [[nodiscard]] std::span<const double> row(std::size_t r) const {
        return std::span<const double>(data_).subspan(r * cols(), cols());
    }
    [[nodiscard]] std::span<double> row(std::size_t r) {
        return std::span<double>(data_).subspan(r * cols(), cols());
    }

    [[nodiscard]] double item() const {
        if (!is_scalar()) throw DimensionError("Tensor::item on non-scalar " + shape_str(shape_));
        return data_[0];
    }

    [[nodiscard]] bool all_finite() const noexcept {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Rows `idx` of a rank-2 tensor, in order.
inline Tensor take_rows(const Tensor& t, std::span<const std::size_t> idx) {
    std::vector<double> out;
    out.reserve(idx.size() * t.cols());
    for (auto i : idx) {
        if (i >= t.rows()) throw DimensionError("take_rows: row index out of range");
        auto r = t.row(i);
        out.insert(out.end(), r.begin(), r.end());
    }
    return Tensor::matrix(idx.size(), t.cols(), std::move(out));
}

}  // namespace surrocon
