#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedproto {

/// Raised when two operands disagree on shape.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major dense matrix of doubles. Used for raw inputs, features,
/// classifier weights and gradients alike.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  /// New matrix holding the listed rows, in the listed order.
  Matrix select_rows(std::span<const std::size_t> indices) const;
  /// Appends rows of `other` below this matrix.
  void append_rows(const Matrix& other);

  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Feature representations: one row per sample.
using FeatureMatrix = Matrix;

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);

/// a (n×k) · b (k×m)
Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ (k×n)ᵀ · b (k×m) without materialising the transpose.
Matrix matmul_at_b(const Matrix& a, const Matrix& b);
/// a (n×k) · bᵀ (m×k)ᵀ
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);

/// output(i, j) = Σ_c (x(i, c) − y(j, c))²
Matrix pairwise_sq_dist(const FeatureMatrix& x, const FeatureMatrix& y);

enum class KernelKind { Linear, PolyDegree2, Gaussian };

struct KernelSpec {
  KernelKind kind = KernelKind::Gaussian;
  /// Gaussian σ; ignored by the other kinds. Non-positive values are
  /// rejected unless `median_heuristic` is set.
  double bandwidth = 1.0;
  bool median_heuristic = false;
  double poly_offset = 1.0;

  static KernelSpec linear() { return {KernelKind::Linear, 1.0, false, 0.0}; }
  static KernelSpec poly2(double offset = 1.0) { return {KernelKind::PolyDegree2, 1.0, false, offset}; }
  static KernelSpec gaussian(double sigma) { return {KernelKind::Gaussian, sigma, false, 0.0}; }
  static KernelSpec gaussian_median() { return {KernelKind::Gaussian, 1.0, true, 0.0}; }
};

std::string to_string(KernelKind kind);

/// σ with σ² the median of the nonzero pairwise squared distances over the
/// stacked rows of x and y (mean of the two middle values for an even
/// count). Falls back to 1 when every distance is zero.
double median_heuristic_bandwidth(const FeatureMatrix& x, const FeatureMatrix& y);

/// Replaces the median-heuristic sentinel with a concrete bandwidth computed
/// from x and y, and validates the result.
KernelSpec resolve_kernel(const KernelSpec& k, const FeatureMatrix& x, const FeatureMatrix& y);

Matrix kernel_gram(const FeatureMatrix& x, const FeatureMatrix& y, const KernelSpec& k);

/// Biased (V-statistic) squared MMD: mean(Kxx) + mean(Kyy) − 2·mean(Kxy).
double mmd2(const FeatureMatrix& x, const FeatureMatrix& y, const KernelSpec& k);

/// ∂mmd2/∂x with the bandwidth held fixed.
Matrix mmd2_grad_wrt_x(const FeatureMatrix& x, const FeatureMatrix& y, const KernelSpec& k);

}  // namespace fedproto
