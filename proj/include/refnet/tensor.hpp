#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace refnet {

/// Dense row-major array of doubles with rank 0 (scalar), 1 (vector) or 2 (matrix).
class Tensor {
   public:
    using Shape = std::vector<std::size_t>;

    Tensor() : shape_{}, data_{0.0} {}
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape);
    static Tensor filled(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    // Matrix view: a vector of length d is treated as 1 x d.
    std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
    std::size_t cols() const { return shape_.size() == 2 ? shape_[1] : shape_.size() == 1 ? shape_[0] : 1; }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

    /// Value of a single-element tensor.
    double item() const;

    std::vector<double> row(std::size_t r) const;
    Tensor transposed() const;
    Tensor reshaped(Shape shape) const;

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    /// Bitwise equality of shape and contents.
    bool operator==(const Tensor& other) const;

    std::string shape_str() const;

   private:
    Shape shape_;
    std::vector<double> data_;
};

std::string shape_str(const Tensor::Shape& shape);
std::size_t shape_size(const Tensor::Shape& shape);

double frobenius_norm(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace refnet
