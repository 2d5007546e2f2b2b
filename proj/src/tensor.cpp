#include "refnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "refnet/errors.hpp"

namespace refnet {

std::size_t shape_size(const Tensor::Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Tensor::Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.size() > 2) throw DimensionError("tensor rank must be <= 2, got shape " + refnet::shape_str(shape_));
    for (auto d : shape_) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got shape " + refnet::shape_str(shape_));
    }
    if (shape_size(shape_) != data_.size()) {
        throw DimensionError("shape " + refnet::shape_str(shape_) + " needs " + std::to_string(shape_size(shape_)) +
                             " values, got " + std::to_string(data_.size()));
    }
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
    auto n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged rows in matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

double Tensor::item() const {
    if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str());
    return data_[0];
}

std::vector<double> Tensor::row(std::size_t r) const {
    auto c = cols();
    return {data_.begin() + static_cast<std::ptrdiff_t>(r * c), data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c)};
}

Tensor Tensor::transposed() const {
    if (rank() != 2) throw DimensionError("transpose needs a matrix, got " + shape_str());
    auto r = rows(), c = cols();
    Tensor out = zeros({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out(j, i) = (*this)(i, j);
    return out;
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool Tensor::operator==(const Tensor& other) const {
    return shape_ == other.shape_ &&
           std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

std::string Tensor::shape_str() const { return refnet::shape_str(shape_); }

double frobenius_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v * v;
    return std::sqrt(s);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw DimensionError("max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace refnet
