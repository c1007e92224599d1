#include "fedproto/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

namespace fedproto {

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto z = logits.row(i);
    auto p = out.row(i);
    const double zmax = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
      p[c] = std::exp(z[c] - zmax);
      total += p[c];
    }
    for (double& v : p) v /= total;
  }
  return out;
}

namespace {

void check_head_inputs(const ClassifierHead& head, const FeatureMatrix& features) {
  if (features.empty()) throw std::invalid_argument("cross-entropy: empty batch");
  if (features.cols() != head.feature_dim()) throw DimensionError("cross-entropy: feature dimension mismatch");
  if (head.num_classes() == 0) throw std::invalid_argument("cross-entropy: head has no classes");
}

// log σ(x) and log(1 − σ(x)) without overflow.
double log_sigmoid(double x) { return -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)))); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

HeadLoss finish_head_loss(const ClassifierHead& head, const FeatureMatrix& features, double loss,
                          const Matrix& grad_logits) {
  HeadLoss out;
  out.loss = loss;
  out.grad_head = matmul_at_b(features, grad_logits);
  out.grad_features = matmul_a_bt(grad_logits, head.w);
  return out;
}

Matrix euclidean(const FeatureMatrix& f) {
  Matrix d = pairwise_sq_dist(f, f);
  for (double& v : d.values()) v = std::sqrt(v);
  return d;
}

struct HardPair {
  std::size_t positive;
  std::size_t negative;
};

std::optional<HardPair> hardest_pair(const Matrix& d, std::span<const int> labels, std::size_t a) {
  std::optional<std::size_t> pos;
  std::optional<std::size_t> neg;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (j == a) continue;
    if (labels[j] == labels[a]) {
      if (!pos || d(a, j) > d(a, *pos)) pos = j;
    } else {
      if (!neg || d(a, j) < d(a, *neg)) neg = j;
    }
  }
  if (!pos || !neg) return std::nullopt;
  return HardPair{*pos, *neg};
}

// grad(a) += scale·∂d(a,b)/∂f_a, grad(b) −= the same; zero at coincident points.
void add_distance_grad(const FeatureMatrix& f, std::size_t a, std::size_t b, double dist, double scale,
                       Matrix& grad) {
  if (dist <= 0.0) return;
  auto fa = f.row(a);
  auto fb = f.row(b);
  auto ga = grad.row(a);
  auto gb = grad.row(b);
  for (std::size_t c = 0; c < fa.size(); ++c) {
    const double g = scale * (fa[c] - fb[c]) / dist;
    ga[c] += g;
    gb[c] -= g;
  }
}

void check_labels(const FeatureMatrix& features, std::span<const int> labels) {
  if (features.rows() != labels.size()) throw DimensionError("triplet: label count differs from batch size");
  if (!has_valid_triplet_anchor(labels)) {
    throw std::invalid_argument("triplet: degenerate batch, no anchor has both a positive and a negative");
  }
}

}  // namespace

HeadLoss ce_loss_grad(const ClassifierHead& head, const FeatureMatrix& features, std::span<const int> labels) {
  check_head_inputs(head, features);
  if (labels.size() != features.rows()) throw DimensionError("cross-entropy: label count differs from batch size");
  const auto classes = static_cast<int>(head.num_classes());
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw std::out_of_range("cross-entropy: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
  }
  const Matrix logits = head.logits(features);
  Matrix grad = softmax_rows(logits);
  const auto n = static_cast<double>(features.rows());
  double loss = 0.0;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    auto z = logits.row(i);
    const double zmax = *std::max_element(z.begin(), z.end());
    double lse = 0.0;
    for (double v : z) lse += std::exp(v - zmax);
    lse = zmax + std::log(lse);
    const auto y = static_cast<std::size_t>(labels[i]);
    loss += lse - z[y];
    grad(i, y) -= 1.0;
  }
  for (double& v : grad.values()) v /= n;
  return finish_head_loss(head, features, loss / n, grad);
}

HeadLoss ce_loss_grad_soft(const ClassifierHead& head, const FeatureMatrix& features, const Matrix& soft_targets) {
  check_head_inputs(head, features);
  if (soft_targets.rows() != features.rows() || soft_targets.cols() != head.num_classes()) {
    throw DimensionError("cross-entropy: soft target shape mismatch");
  }
  for (std::size_t i = 0; i < soft_targets.rows(); ++i) {
    double s = 0.0;
    for (double v : soft_targets.row(i)) {
      if (v < 0.0) throw std::invalid_argument("cross-entropy: negative soft target");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("cross-entropy: soft targets must sum to 1");
  }
  const Matrix logits = head.logits(features);
  const Matrix probs = softmax_rows(logits);
  const auto n = static_cast<double>(features.rows());
  Matrix grad(probs.rows(), probs.cols());
  double loss = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto z = logits.row(i);
    const double zmax = *std::max_element(z.begin(), z.end());
    double lse = 0.0;
    for (double v : z) lse += std::exp(v - zmax);
    lse = zmax + std::log(lse);
    for (std::size_t c = 0; c < z.size(); ++c) {
      const double q = soft_targets(i, c);
      loss += q * (lse - z[c]);
      grad(i, c) = (probs(i, c) - q) / n;
    }
  }
  return finish_head_loss(head, features, loss / n, grad);
}

bool has_valid_triplet_anchor(std::span<const int> labels) {
  for (std::size_t a = 0; a < labels.size(); ++a) {
    bool pos = false;
    bool neg = false;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (j == a) continue;
      (labels[j] == labels[a] ? pos : neg) = true;
    }
    if (pos && neg) return true;
  }
  return false;
}

FeatureLoss triplet_loss_grad(const FeatureMatrix& features, std::span<const int> labels, double margin) {
  check_labels(features, labels);
  const Matrix d = euclidean(features);
  std::vector<std::pair<std::size_t, HardPair>> anchors;
  for (std::size_t a = 0; a < labels.size(); ++a) {
    if (auto hp = hardest_pair(d, labels, a)) anchors.emplace_back(a, *hp);
  }
  const double inv = 1.0 / static_cast<double>(anchors.size());
  FeatureLoss out{0.0, Matrix(features.rows(), features.cols())};
  for (const auto& [a, hp] : anchors) {
    const double l = margin + d(a, hp.positive) - d(a, hp.negative);
    if (l <= 0.0) continue;
    out.loss += l * inv;
    add_distance_grad(features, a, hp.positive, d(a, hp.positive), inv, out.grad_features);
    add_distance_grad(features, a, hp.negative, d(a, hp.negative), -inv, out.grad_features);
  }
  return out;
}

FeatureLoss soft_triplet_loss_grad(const FeatureMatrix& student, const FeatureMatrix& teacher,
                                   std::span<const int> labels) {
  if (student.rows() != teacher.rows() || student.cols() != teacher.cols()) {
    throw DimensionError("soft triplet: student and teacher feature shapes differ");
  }
  check_labels(student, labels);
  const Matrix ds = euclidean(student);
  const Matrix dt = euclidean(teacher);
  std::vector<std::pair<std::size_t, HardPair>> anchors;
  for (std::size_t a = 0; a < labels.size(); ++a) {
    if (auto hp = hardest_pair(ds, labels, a)) anchors.emplace_back(a, *hp);
  }
  const double inv = 1.0 / static_cast<double>(anchors.size());
  FeatureLoss out{0.0, Matrix(student.rows(), student.cols())};
  for (const auto& [a, hp] : anchors) {
    // p = exp(−d_ap) / (exp(−d_ap) + exp(−d_an)) = σ(d_an − d_ap)
    const double z = ds(a, hp.negative) - ds(a, hp.positive);
    const double target = sigmoid(dt(a, hp.negative) - dt(a, hp.positive));
    out.loss -= inv * (target * log_sigmoid(z) + (1.0 - target) * log_sigmoid(-z));
    const double dz = inv * (sigmoid(z) - target);
    add_distance_grad(student, a, hp.negative, ds(a, hp.negative), dz, out.grad_features);
    add_distance_grad(student, a, hp.positive, ds(a, hp.positive), -dz, out.grad_features);
  }
  return out;
}

}  // namespace fedproto
