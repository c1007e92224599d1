#pragma once

#include <span>

#include "fedproto/encoder.hpp"
#include "fedproto/numerics.hpp"

namespace fedproto {

struct HeadLoss {
  double loss = 0.0;
  Matrix grad_head;      // feature×classes
  Matrix grad_features;  // batch×feature
};

struct FeatureLoss {
  double loss = 0.0;
  Matrix grad_features;
};

Matrix softmax_rows(const Matrix& logits);

/// Mean over the batch of −log softmax(features·w)[label].
HeadLoss ce_loss_grad(const ClassifierHead& head, const FeatureMatrix& features, std::span<const int> labels);

/// Mean cross-entropy against per-row target distributions (rows summing to 1).
HeadLoss ce_loss_grad_soft(const ClassifierHead& head, const FeatureMatrix& features, const Matrix& soft_targets);

/// True when some anchor has both a positive (same label, other row) and a negative.
bool has_valid_triplet_anchor(std::span<const int> labels);

/// Batch-hard triplet loss on Euclidean distances, averaged over anchors that
/// have both a positive and a negative in the batch.
FeatureLoss triplet_loss_grad(const FeatureMatrix& features, std::span<const int> labels, double margin);

/// Binary cross-entropy between softmax-triplet probabilities of the student
/// and of the teacher, with hardest positive/negative chosen by student
/// distances. Gradient flows into the student features only.
FeatureLoss soft_triplet_loss_grad(const FeatureMatrix& student, const FeatureMatrix& teacher,
                                   std::span<const int> labels);

}  // namespace fedproto
