#include "clv/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace clv {

int64_t shape_size(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw std::invalid_argument("tensor dimension must be non-negative");
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != shape_size(shape)) {
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    }
}

Tensor Tensor::zeros(std::vector<int64_t> s) {
    const int64_t n = shape_size(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<int64_t> s, double v) {
    const int64_t n = shape_size(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), v));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::matrix(int64_t rows, int64_t cols, std::vector<double> d) {
    return Tensor({rows, cols}, std::move(d));
}

Tensor Tensor::identity(int64_t n) {
    Tensor t = zeros({n, n});
    for (int64_t i = 0; i < n; ++i) t.data[static_cast<size_t>(i * n + i)] = 1.0;
    return t;
}

int64_t Tensor::size() const { return static_cast<int64_t>(data.size()); }

int64_t Tensor::rows() const {
    if (shape.size() == 2) return shape[0];
    if (shape.size() == 1) return 1;
    if (shape.empty()) return 1;
    throw std::logic_error("rows(): tensor rank " + std::to_string(shape.size()) + " not viewable as matrix");
}

int64_t Tensor::cols() const {
    if (shape.size() == 2) return shape[1];
    if (shape.size() == 1) return shape[0];
    if (shape.empty()) return 1;
    throw std::logic_error("cols(): tensor rank " + std::to_string(shape.size()) + " not viewable as matrix");
}

double& Tensor::at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
double Tensor::at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor::item() const {
    if (data.size() != 1) throw std::logic_error("item(): tensor has " + std::to_string(data.size()) + " elements");
    return data[0];
}

} // namespace clv
