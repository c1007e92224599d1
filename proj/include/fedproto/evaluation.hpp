#pragma once

#include <vector>

#include "fedproto/encoder.hpp"
#include "fedproto/numerics.hpp"
#include "fedproto/synthgen.hpp"

namespace fedproto {

/// Query and gallery samples for cross-camera retrieval. Construction fails
/// unless every query has a gallery entry with the same id on another camera.
class RetrievalSplit {
 public:
  RetrievalSplit(LabeledSet query, LabeledSet gallery);

  const LabeledSet& query() const { return query_; }
  const LabeledSet& gallery() const { return gallery_; }

 private:
  LabeledSet query_;
  LabeledSet gallery_;
};

struct RetrievalScores {
  double map = 0.0;
  double rank1 = 0.0;
};

/// mAP and CMC Rank-1 over already-extracted features. Gallery entries sharing
/// both id and camera with the query are ignored; ranking is by ascending
/// Euclidean distance with ties resolved by gallery order.
RetrievalScores evaluate_features(const FeatureMatrix& query_features, const FeatureMatrix& gallery_features,
                                  const RetrievalSplit& split);

RetrievalScores evaluate(const ModelParams& model, const RetrievalSplit& split);

}  // namespace fedproto
