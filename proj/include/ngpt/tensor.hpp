#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ngpt {

using Shape = std::vector<std::size_t>;

/// Dense row-major array of doubles. Rank 0 is a scalar, rank 1 a vector,
/// rank 2 a matrix; nothing in this project needs more.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> data);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double item() const;

  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  bool all_finite() const noexcept;
  double norm() const noexcept;  // Frobenius / L2
  double rms() const noexcept;

  bool operator==(const Tensor& o) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const Shape& s) noexcept;
std::string shape_string(const Shape& s);

// Non-differentiable helpers used by the optimizer, probes and oracles.
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator*(double c, const Tensor& a);
Tensor transposed(const Tensor& a);
Tensor matmul_plain(const Tensor& a, const Tensor& b);
/// y = M x for M [m x n], x of length n.
std::vector<double> matvec(const Tensor& m, std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b) noexcept;
double l2(std::span<const double> a) noexcept;

}  // namespace ngpt
