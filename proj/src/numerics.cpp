#include "fedproto/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedproto {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) throw std::out_of_range("row index out of range");
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(indices[i] * cols_), cols_,
                out.data_.begin() + static_cast<std::ptrdiff_t>(i * cols_));
  }
  return out;
}

void Matrix::append_rows(const Matrix& other) {
  if (rows_ == 0 && cols_ == 0) {
    *this = other;
    return;
  }
  if (other.cols_ != cols_) throw DimensionError("append_rows: column count mismatch");
  data_.insert(data_.end(), other.data_.begin(), other.data_.end());
  rows_ += other.rows_;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto br = b.row(k);
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw DimensionError("matmul_at_b: row counts differ");
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto ar = a.row(k);
    auto br = b.row(k);
    for (std::size_t i = 0; i < ar.size(); ++i) {
      if (ar[i] == 0.0) continue;
      auto o = out.row(i);
      for (std::size_t j = 0; j < br.size(); ++j) o[j] += ar[i] * br[j];
    }
  }
  return out;
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw DimensionError("matmul_a_bt: column counts differ");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  }
  return out;
}

Matrix pairwise_sq_dist(const FeatureMatrix& x, const FeatureMatrix& y) {
  if (x.cols() != y.cols()) {
    throw DimensionError("pairwise_sq_dist: incompatible feature dimensions " + std::to_string(x.cols()) +
                         " and " + std::to_string(y.cols()));
  }
  Matrix out(x.rows(), y.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xi = x.row(i);
    for (std::size_t j = 0; j < y.rows(); ++j) {
      auto yj = y.row(j);
      double s = 0.0;
      for (std::size_t c = 0; c < xi.size(); ++c) {
        const double d = xi[c] - yj[c];
        s += d * d;
      }
      out(i, j) = s;
    }
  }
  return out;
}

std::string to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::Linear:
      return "linear";
    case KernelKind::PolyDegree2:
      return "poly2";
    case KernelKind::Gaussian:
      return "gaussian";
  }
  return "unknown";
}

double median_heuristic_bandwidth(const FeatureMatrix& x, const FeatureMatrix& y) {
  if (x.rows() + y.rows() < 2) throw std::invalid_argument("median heuristic needs at least two rows");
  Matrix stacked = x;
  stacked.append_rows(y);
  std::vector<double> d2;
  d2.reserve(stacked.rows() * (stacked.rows() - 1) / 2);
  for (std::size_t i = 0; i < stacked.rows(); ++i) {
    for (std::size_t j = i + 1; j < stacked.rows(); ++j) {
      double s = 0.0;
      auto a = stacked.row(i);
      auto b = stacked.row(j);
      for (std::size_t c = 0; c < a.size(); ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
      if (s > 0.0) d2.push_back(s);
    }
  }
  if (d2.empty()) return 1.0;
  const std::size_t mid = d2.size() / 2;
  std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(mid), d2.end());
  double median = d2[mid];
  if (d2.size() % 2 == 0) {
    const double lower = *std::max_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (lower + median);
  }
  return std::sqrt(median);
}

KernelSpec resolve_kernel(const KernelSpec& k, const FeatureMatrix& x, const FeatureMatrix& y) {
  KernelSpec out = k;
  if (k.kind == KernelKind::Gaussian) {
    if (k.median_heuristic) {
      out.bandwidth = median_heuristic_bandwidth(x, y);
      out.median_heuristic = false;
    }
    if (!(out.bandwidth > 0.0) || !std::isfinite(out.bandwidth)) {
      throw std::invalid_argument("gaussian kernel bandwidth must be positive and finite");
    }
  }
  if (k.kind == KernelKind::PolyDegree2 && !std::isfinite(k.poly_offset)) {
    throw std::invalid_argument("polynomial kernel offset must be finite");
  }
  return out;
}

namespace {

double kernel_value(std::span<const double> a, std::span<const double> b, const KernelSpec& k) {
  switch (k.kind) {
    case KernelKind::Linear:
      return dot(a, b);
    case KernelKind::PolyDegree2: {
      const double t = dot(a, b) + k.poly_offset;
      return t * t;
    }
    case KernelKind::Gaussian: {
      double s = 0.0;
      for (std::size_t c = 0; c < a.size(); ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
      return std::exp(-s / (2.0 * k.bandwidth * k.bandwidth));
    }
  }
  return 0.0;
}

// out += scale · ∇_a k(a, b)
void accumulate_kernel_grad(std::span<const double> a, std::span<const double> b, const KernelSpec& k,
                            double scale, std::span<double> out) {
  switch (k.kind) {
    case KernelKind::Linear:
      for (std::size_t c = 0; c < a.size(); ++c) out[c] += scale * b[c];
      return;
    case KernelKind::PolyDegree2: {
      const double f = 2.0 * (dot(a, b) + k.poly_offset) * scale;
      for (std::size_t c = 0; c < a.size(); ++c) out[c] += f * b[c];
      return;
    }
    case KernelKind::Gaussian: {
      const double inv_s2 = 1.0 / (k.bandwidth * k.bandwidth);
      const double kv = kernel_value(a, b, k);
      const double f = -kv * inv_s2 * scale;
      for (std::size_t c = 0; c < a.size(); ++c) out[c] += f * (a[c] - b[c]);
      return;
    }
  }
}

void check_mmd_inputs(const FeatureMatrix& x, const FeatureMatrix& y) {
  if (x.empty() || y.empty()) throw std::invalid_argument("mmd2: both samples must be non-empty");
  if (x.cols() != y.cols()) throw DimensionError("mmd2: incompatible feature dimensions");
  if (!x.all_finite() || !y.all_finite()) throw std::invalid_argument("mmd2: non-finite input");
}

double gram_mean(const FeatureMatrix& x, const FeatureMatrix& y, const KernelSpec& k) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < y.rows(); ++j) s += kernel_value(x.row(i), y.row(j), k);
  }
  return s / static_cast<double>(x.rows() * y.rows());
}

}  // namespace

Matrix kernel_gram(const FeatureMatrix& x, const FeatureMatrix& y, const KernelSpec& k) {
  if (x.cols() != y.cols()) throw DimensionError("kernel_gram: incompatible feature dimensions");
  if (!x.all_finite() || !y.all_finite()) throw std::invalid_argument("kernel_gram: non-finite input");
  const KernelSpec rk = resolve_kernel(k, x, y);
  Matrix out(x.rows(), y.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < y.rows(); ++j) out(i, j) = kernel_value(x.row(i), y.row(j), rk);
  }
  return out;
}

double mmd2(const FeatureMatrix& x, const FeatureMatrix& y, const KernelSpec& k) {
  check_mmd_inputs(x, y);
  const KernelSpec rk = resolve_kernel(k, x, y);
  return gram_mean(x, x, rk) + gram_mean(y, y, rk) - 2.0 * gram_mean(x, y, rk);
}

Matrix mmd2_grad_wrt_x(const FeatureMatrix& x, const FeatureMatrix& y, const KernelSpec& k) {
  check_mmd_inputs(x, y);
  const KernelSpec rk = resolve_kernel(k, x, y);
  const auto m = static_cast<double>(x.rows());
  const auto n = static_cast<double>(y.rows());
  const double self_scale = 2.0 / (m * m);
  const double cross_scale = -2.0 / (m * n);
  Matrix grad(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto g = grad.row(i);
    for (std::size_t j = 0; j < x.rows(); ++j) accumulate_kernel_grad(x.row(i), x.row(j), rk, self_scale, g);
    for (std::size_t j = 0; j < y.rows(); ++j) accumulate_kernel_grad(x.row(i), y.row(j), rk, cross_scale, g);
  }
  return grad;
}

}  // namespace fedproto
