#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace clv {

// Dense n-dimensional array of 64-bit floats, row-major. The single value
// carrier for all model math; graph ops interpret rank-1/2 tensors as
// row vectors / matrices.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int64_t> s, std::vector<double> d);

    static Tensor zeros(std::vector<int64_t> s);
    static Tensor full(std::vector<int64_t> s, double v);
    static Tensor scalar(double v);
    static Tensor matrix(int64_t rows, int64_t cols, std::vector<double> d);
    static Tensor identity(int64_t n);

    int64_t size() const;
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }

    // rank-2 accessors; a rank-1 tensor of length n is viewed as 1 x n
    int64_t rows() const;
    int64_t cols() const;
    double& at(int64_t r, int64_t c);
    double at(int64_t r, int64_t c) const;

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;
    double item() const; // requires size()==1
};

int64_t shape_size(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

} // namespace clv
