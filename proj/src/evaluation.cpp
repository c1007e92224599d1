#include "fedproto/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace fedproto {

namespace {

void check_set(const LabeledSet& s, const char* name) {
  if (s.ids.size() != s.size() || s.cameras.size() != s.size()) {
    throw DimensionError(std::string("retrieval split: ") + name + " annotations do not match its rows");
  }
}

}  // namespace

RetrievalSplit::RetrievalSplit(LabeledSet query, LabeledSet gallery)
    : query_(std::move(query)), gallery_(std::move(gallery)) {
  check_set(query_, "query");
  check_set(gallery_, "gallery");
  if (query_.size() == 0) throw std::invalid_argument("retrieval split: no queries");
  if (query_.x.cols() != gallery_.x.cols()) throw DimensionError("retrieval split: query and gallery dims differ");
  for (std::size_t q = 0; q < query_.size(); ++q) {
    bool found = false;
    for (std::size_t g = 0; g < gallery_.size() && !found; ++g) {
      found = gallery_.ids[g] == query_.ids[q] && gallery_.cameras[g] != query_.cameras[q];
    }
    if (!found) {
      throw std::invalid_argument("retrieval split: query " + std::to_string(q) + " (id " +
                                  std::to_string(query_.ids[q]) + ") has no cross-camera match in the gallery");
    }
  }
}

RetrievalScores evaluate_features(const FeatureMatrix& query_features, const FeatureMatrix& gallery_features,
                                  const RetrievalSplit& split) {
  const auto& q = split.query();
  const auto& g = split.gallery();
  if (query_features.rows() != q.size() || gallery_features.rows() != g.size()) {
    throw DimensionError("evaluate: feature rows do not match the split");
  }
  const Matrix dist = pairwise_sq_dist(query_features, gallery_features);

  double ap_sum = 0.0;
  double rank1_hits = 0.0;
  std::vector<std::size_t> order;
  for (std::size_t qi = 0; qi < q.size(); ++qi) {
    order.clear();
    for (std::size_t gi = 0; gi < g.size(); ++gi) {
      if (g.ids[gi] == q.ids[qi] && g.cameras[gi] == q.cameras[qi]) continue;  // junk
      order.push_back(gi);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dist(qi, a) < dist(qi, b); });

    std::size_t hits = 0;
    double precision_sum = 0.0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      if (g.ids[order[rank]] != q.ids[qi]) continue;
      ++hits;
      precision_sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
    ap_sum += precision_sum / static_cast<double>(hits);
    if (g.ids[order.front()] == q.ids[qi]) rank1_hits += 1.0;
  }
  const auto nq = static_cast<double>(q.size());
  return {ap_sum / nq, rank1_hits / nq};
}

RetrievalScores evaluate(const ModelParams& model, const RetrievalSplit& split) {
  return evaluate_features(forward(model, split.query().x), forward(model, split.gallery().x), split);
}

}  // namespace fedproto
