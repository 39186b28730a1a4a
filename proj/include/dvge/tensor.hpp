#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "dvge/errors.hpp"

namespace dvge {

// Dense row-major tensor of 64-bit floats. Rank 0 is a scalar (empty shape,
// one value). All numeric code in the library flows through this type.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> v)
        : shape(std::move(s)), values(std::move(v)) {
        if (numel_of(shape) != values.size())
            throw ShapeError("tensor: shape/value length mismatch (" + shape_str() + " vs " +
                             std::to_string(values.size()) + " values)");
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        std::size_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }

    static Tensor full(std::vector<std::size_t> s, double v) {
        std::size_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<double>(n, v));
    }

    static Tensor scalar(double v) { return Tensor({}, {v}); }

    static Tensor vec(std::vector<double> v) {
        std::size_t n = v.size();
        return Tensor({n}, std::move(v));
    }

    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
        return Tensor({r, c}, std::move(v));
    }

    std::size_t numel() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t rows() const {
        if (rank() != 2) throw ShapeError("rows(): tensor is not rank-2 (" + shape_str() + ")");
        return shape[0];
    }
    std::size_t cols() const {
        if (rank() != 2) throw ShapeError("cols(): tensor is not rank-2 (" + shape_str() + ")");
        return shape[1];
    }

    double& at(std::size_t i, std::size_t j) { return values[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return values[i * shape[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        if (shape.empty()) return "scalar";
        std::string s;
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += 'x';
            s += std::to_string(shape[i]);
        }
        return s;
    }
};

// Extract row i of a rank-2 tensor as a plain vector.
inline std::vector<double> tensor_row(const Tensor& t, std::size_t i) {
    const std::size_t c = t.cols();
    return std::vector<double>(t.values.begin() + static_cast<std::ptrdiff_t>(i * c),
                               t.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
}

// Gather rows of a rank-2 tensor in the given order.
inline Tensor tensor_rows(const Tensor& t, const std::vector<std::size_t>& idx) {
    const std::size_t c = t.cols();
    Tensor out = Tensor::zeros({idx.size(), c});
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) out.values[i * c + j] = t.values[idx[i] * c + j];
    return out;
}

}  // namespace dvge
