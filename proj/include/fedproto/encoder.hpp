#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "fedproto/numerics.hpp"

namespace fedproto {

struct EncoderDims {
  std::size_t input = 0;
  std::size_t hidden = 0;
  std::size_t feature = 0;

  std::size_t param_count() const { return input * hidden + hidden + hidden * feature + feature; }
  friend bool operator==(const EncoderDims&, const EncoderDims&) = default;
};

/// Parameters of the two-layer feature extractor, stored flat in the order
/// w1 (row-major, input×hidden), b1, w2 (row-major, hidden×feature), b2.
/// The same type carries gradients.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(EncoderDims dims);

  /// He-style initialisation for w1, 1/sqrt(hidden) scaling for w2, zero biases.
  static ModelParams random(EncoderDims dims, std::mt19937_64& rng);

  const EncoderDims& dims() const { return dims_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::span<const double> w1() const { return values().subspan(0, dims_.input * dims_.hidden); }
  std::span<const double> b1() const { return values().subspan(dims_.input * dims_.hidden, dims_.hidden); }
  std::span<const double> w2() const {
    return values().subspan(dims_.input * dims_.hidden + dims_.hidden, dims_.hidden * dims_.feature);
  }
  std::span<const double> b2() const {
    return values().subspan(dims_.param_count() - dims_.feature, dims_.feature);
  }
  std::span<double> w1() { return values().subspan(0, dims_.input * dims_.hidden); }
  std::span<double> b1() { return values().subspan(dims_.input * dims_.hidden, dims_.hidden); }
  std::span<double> w2() {
    return values().subspan(dims_.input * dims_.hidden + dims_.hidden, dims_.hidden * dims_.feature);
  }
  std::span<double> b2() { return values().subspan(dims_.param_count() - dims_.feature, dims_.feature); }

  bool all_finite() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  EncoderDims dims_;
  std::vector<double> values_;
};

/// Linear head without bias: logits = features · w, w is feature×classes.
struct ClassifierHead {
  Matrix w;

  ClassifierHead() = default;
  explicit ClassifierHead(Matrix weights) : w(std::move(weights)) {}
  ClassifierHead(std::size_t feature_dim, std::size_t num_classes) : w(feature_dim, num_classes) {}

  std::size_t num_classes() const { return w.cols(); }
  std::size_t feature_dim() const { return w.rows(); }
  Matrix logits(const FeatureMatrix& features) const { return matmul(features, w); }

  friend bool operator==(const ClassifierHead&, const ClassifierHead&) = default;
};

struct LossWeights {
  double beta1 = 0.5;
  double beta2 = 0.5;
  double gamma1 = 0.5;
  double gamma2 = 0.5;
  double lambda = 0.1;
  double alpha = 0.5;
  double tau = 0.5;

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
};

/// Intermediate values kept from a forward pass for backpropagation.
struct ForwardCache {
  FeatureMatrix input;
  Matrix pre_activation;
  Matrix hidden;
  Matrix raw_output;
  std::vector<double> norms;
  FeatureMatrix features;
};

/// Rows of relu(batch·w1 + b1)·w2 + b2, L2-normalised. All-zero rows stay zero.
FeatureMatrix forward(const ModelParams& params, const FeatureMatrix& batch);
ForwardCache forward_cached(const ModelParams& params, const FeatureMatrix& batch);

/// Parameter gradient given ∂L/∂features for the cached forward pass.
ModelParams backward(const ModelParams& params, const ForwardCache& cache, const Matrix& grad_features);

ModelParams sgd_step(const ModelParams& params, const ModelParams& grads, double lr);
ClassifierHead sgd_step(const ClassifierHead& head, const Matrix& grads, double lr);

/// teacher ← τ·teacher + (1−τ)·student, evaluated as teacher + (1−τ)(student − teacher)
/// so that equal inputs are an exact fixed point.
ModelParams ema_update(const ModelParams& teacher, const ModelParams& student, double tau);
ClassifierHead ema_update(const ClassifierHead& teacher, const ClassifierHead& student, double tau);

struct DecodedModel {
  ModelParams params;
  std::optional<ClassifierHead> head;
};

/// Little-endian layout: u32 d_in, u32 d_hidden, u32 d_feat, u32 num_classes
/// (0 without a head), then f64 w1, b1, w2, b2 and finally the head weights
/// (row-major feature×classes) when present.
std::vector<std::uint8_t> serialize(const ModelParams& params, const ClassifierHead* head = nullptr);
DecodedModel deserialize(std::span<const std::uint8_t> bytes);

void save_model(const std::filesystem::path& path, const ModelParams& params, const ClassifierHead* head = nullptr);
DecodedModel load_model(const std::filesystem::path& path);

}  // namespace fedproto
