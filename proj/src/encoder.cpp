#include "fedproto/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "binary_io.hpp"

namespace fedproto {

ModelParams::ModelParams(EncoderDims dims) : dims_(dims), values_(dims.param_count(), 0.0) {}

ModelParams ModelParams::random(EncoderDims dims, std::mt19937_64& rng) {
  ModelParams p(dims);
  std::normal_distribution<double> w1_dist(0.0, std::sqrt(2.0 / static_cast<double>(dims.input)));
  std::normal_distribution<double> w2_dist(0.0, std::sqrt(1.0 / static_cast<double>(dims.hidden)));
  for (double& v : p.w1()) v = w1_dist(rng);
  for (double& v : p.w2()) v = w2_dist(rng);
  return p;
}

bool ModelParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void LossWeights::validate() const {
  constexpr double kSumTol = 1e-9;
  if (std::abs(beta1 + beta2 - 1.0) > kSumTol) throw std::invalid_argument("beta1 + beta2 must equal 1");
  if (std::abs(gamma1 + gamma2 - 1.0) > kSumTol) throw std::invalid_argument("gamma1 + gamma2 must equal 1");
  if (beta1 < 0 || beta2 < 0) throw std::invalid_argument("beta weights must be non-negative");
  if (gamma1 < 0 || gamma2 < 0) throw std::invalid_argument("gamma weights must be non-negative");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  if (!(tau >= 0.0 && tau < 1.0)) throw std::invalid_argument("tau must lie in [0, 1)");
}

ForwardCache forward_cached(const ModelParams& params, const FeatureMatrix& batch) {
  const auto& d = params.dims();
  if (batch.cols() != d.input) {
    throw DimensionError("forward: batch has " + std::to_string(batch.cols()) + " columns, encoder expects " +
                         std::to_string(d.input));
  }
  ForwardCache c;
  c.input = batch;
  const Matrix w1(d.input, d.hidden, std::vector<double>(params.w1().begin(), params.w1().end()));
  const Matrix w2(d.hidden, d.feature, std::vector<double>(params.w2().begin(), params.w2().end()));

  c.pre_activation = matmul(batch, w1);
  c.hidden = Matrix(batch.rows(), d.hidden);
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    auto pre = c.pre_activation.row(i);
    auto h = c.hidden.row(i);
    for (std::size_t j = 0; j < d.hidden; ++j) {
      pre[j] += params.b1()[j];
      h[j] = pre[j] > 0.0 ? pre[j] : 0.0;
    }
  }

  c.raw_output = matmul(c.hidden, w2);
  c.norms.resize(batch.rows());
  c.features = Matrix(batch.rows(), d.feature);
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    auto u = c.raw_output.row(i);
    for (std::size_t j = 0; j < d.feature; ++j) u[j] += params.b2()[j];
    const double norm = std::sqrt(squared_norm(u));
    c.norms[i] = norm;
    if (norm > 0.0) {
      auto f = c.features.row(i);
      for (std::size_t j = 0; j < d.feature; ++j) f[j] = u[j] / norm;
    }
  }
  return c;
}

FeatureMatrix forward(const ModelParams& params, const FeatureMatrix& batch) {
  return forward_cached(params, batch).features;
}

ModelParams backward(const ModelParams& params, const ForwardCache& cache, const Matrix& grad_features) {
  const auto& d = params.dims();
  const std::size_t n = cache.features.rows();
  if (grad_features.rows() != n || grad_features.cols() != d.feature) {
    throw DimensionError("backward: gradient shape does not match cached features");
  }

  // Through the L2 normalisation: du = (g − f (f·g)) / ‖u‖.
  Matrix grad_raw(n, d.feature);
  for (std::size_t i = 0; i < n; ++i) {
    if (cache.norms[i] <= 0.0) continue;
    auto f = cache.features.row(i);
    auto g = grad_features.row(i);
    const double fg = dot(f, g);
    auto out = grad_raw.row(i);
    for (std::size_t j = 0; j < d.feature; ++j) out[j] = (g[j] - f[j] * fg) / cache.norms[i];
  }

  ModelParams grads(d);
  const Matrix gw2 = matmul_at_b(cache.hidden, grad_raw);
  std::copy(gw2.values().begin(), gw2.values().end(), grads.w2().begin());
  for (std::size_t i = 0; i < n; ++i) {
    auto r = grad_raw.row(i);
    for (std::size_t j = 0; j < d.feature; ++j) grads.b2()[j] += r[j];
  }

  const Matrix w2(d.hidden, d.feature, std::vector<double>(params.w2().begin(), params.w2().end()));
  Matrix grad_pre = matmul_a_bt(grad_raw, w2);
  for (std::size_t i = 0; i < n; ++i) {
    auto pre = cache.pre_activation.row(i);
    auto g = grad_pre.row(i);
    for (std::size_t j = 0; j < d.hidden; ++j) {
      if (pre[j] <= 0.0) g[j] = 0.0;
      grads.b1()[j] += g[j];
    }
  }
  const Matrix gw1 = matmul_at_b(cache.input, grad_pre);
  std::copy(gw1.values().begin(), gw1.values().end(), grads.w1().begin());
  return grads;
}

ModelParams sgd_step(const ModelParams& params, const ModelParams& grads, double lr) {
  if (params.dims() != grads.dims()) throw DimensionError("sgd_step: parameter and gradient shapes differ");
  ModelParams out = params;
  auto v = out.values();
  auto g = grads.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  return out;
}

ClassifierHead sgd_step(const ClassifierHead& head, const Matrix& grads, double lr) {
  if (head.w.rows() != grads.rows() || head.w.cols() != grads.cols()) {
    throw DimensionError("sgd_step: head and gradient shapes differ");
  }
  ClassifierHead out = head;
  auto v = out.w.values();
  auto g = grads.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  return out;
}

namespace {

void ema_into(std::span<double> teacher, std::span<const double> student, double tau) {
  const double rate = 1.0 - tau;
  for (std::size_t i = 0; i < teacher.size(); ++i) teacher[i] += rate * (student[i] - teacher[i]);
}

void check_tau(double tau) {
  if (!(tau >= 0.0 && tau < 1.0)) throw std::invalid_argument("ema_update: tau must lie in [0, 1)");
}

}  // namespace

ModelParams ema_update(const ModelParams& teacher, const ModelParams& student, double tau) {
  check_tau(tau);
  if (teacher.dims() != student.dims()) throw DimensionError("ema_update: teacher and student shapes differ");
  ModelParams out = teacher;
  ema_into(out.values(), student.values(), tau);
  return out;
}

ClassifierHead ema_update(const ClassifierHead& teacher, const ClassifierHead& student, double tau) {
  check_tau(tau);
  if (teacher.w.rows() != student.w.rows() || teacher.w.cols() != student.w.cols()) {
    throw DimensionError("ema_update: teacher and student heads differ in shape");
  }
  ClassifierHead out = teacher;
  ema_into(out.w.values(), student.w.values(), tau);
  return out;
}

std::vector<std::uint8_t> serialize(const ModelParams& params, const ClassifierHead* head) {
  const auto& d = params.dims();
  if (head != nullptr && head->feature_dim() != d.feature) {
    throw DimensionError("serialize: head feature dimension does not match encoder output");
  }
  detail::ByteWriter w;
  w.u32(static_cast<std::uint32_t>(d.input));
  w.u32(static_cast<std::uint32_t>(d.hidden));
  w.u32(static_cast<std::uint32_t>(d.feature));
  w.u32(head != nullptr ? static_cast<std::uint32_t>(head->num_classes()) : 0U);
  w.f64s(params.values());
  if (head != nullptr) w.f64s(head->w.values());
  return std::move(w.bytes());
}

DecodedModel deserialize(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  EncoderDims d;
  d.input = r.u32();
  d.hidden = r.u32();
  d.feature = r.u32();
  const std::uint32_t classes = r.u32();
  if (d.input == 0 || d.hidden == 0 || d.feature == 0) throw std::runtime_error("deserialize: zero dimension");
  DecodedModel out{ModelParams(d), std::nullopt};
  r.f64s(out.params.values());
  if (classes > 0) {
    ClassifierHead head(d.feature, classes);
    r.f64s(head.w.values());
    out.head = std::move(head);
  }
  if (!r.at_end()) throw std::runtime_error("deserialize: trailing bytes");
  return out;
}

void save_model(const std::filesystem::path& path, const ModelParams& params, const ClassifierHead* head) {
  const auto bytes = serialize(params, head);
  detail::write_file_bytes(path, bytes);
}

DecodedModel load_model(const std::filesystem::path& path) { return deserialize(detail::read_file_bytes(path)); }

}  // namespace fedproto
