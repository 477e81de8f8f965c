#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace xmodal {

using Shape = std::vector<std::size_t>;

// Dense row-major array of doubles. A rank-0 tensor (empty shape) is a scalar.
// Rank-1 tensors are vectors, rank-2 tensors matrices; nothing here needs more.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool is_scalar() const noexcept { return data_.size() == 1; }

  // Matrix view helpers; a vector counts as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> row(std::size_t r) const;
  std::span<double> row(std::size_t r);

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  double item() const;
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  Tensor reshaped(Shape shape) const;

  // In-place accumulate; used by gradient accumulation.
  Tensor& operator+=(const Tensor& other);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Value-level helpers; no tape involved.

// Sum of squares left to right, then sqrt.
double euclidean_norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

// Euclidean distance between two equal-length vectors.
double euclidean_distance(std::span<const double> u, std::span<const double> v);
double euclidean_distance(const Tensor& u, const Tensor& v);

// Cosine similarity dot(u,v) / sqrt(|u|^2 |v|^2). Throws DegenerateInputError when either
// norm is at or below kNormFloor.
double cosine_similarity(std::span<const double> u, std::span<const double> v);
double cosine_similarity(const Tensor& u, const Tensor& v);

inline constexpr double kNormFloor = 1e-12;

struct NormalizeResult {
  Tensor value;
  bool degenerate = false;
};

// Unit-norm copy of v. Returns v unchanged and flags it when |v| <= kNormFloor.
NormalizeResult l2_normalize(const Tensor& v);

// Same, in place on a raw span. Returns false for degenerate input.
bool l2_normalize_inplace(std::span<double> v);

}  // namespace xmodal
