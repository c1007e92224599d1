#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "fedproto/numerics.hpp"

namespace fedproto {

inline constexpr int kNoise = -1;

/// Density clustering on Euclidean distance. A row is core when at least
/// `min_pts` rows (itself included) lie within `eps`. Clusters are numbered
/// from 0 in order of discovery while scanning rows in order; a border row
/// joins the first cluster whose expansion reaches it. Unclustered rows get
/// kNoise.
std::vector<int> dbscan(const FeatureMatrix& features, double eps, std::size_t min_pts);

/// Clustered samples of one client: indices into its raw data plus dense
/// pseudo-labels in [0, num_clusters).
struct PseudoDataset {
  std::vector<std::size_t> sample_indices;
  std::vector<int> pseudo_labels;
  std::size_t num_clusters = 0;

  std::size_t size() const { return sample_indices.size(); }
  bool empty() const { return sample_indices.empty(); }
  /// Positions (into sample_indices) of the members of each cluster.
  std::vector<std::vector<std::size_t>> members() const;
};

/// Drops noise rows and renumbers the remaining cluster ids densely,
/// preserving their relative order.
PseudoDataset build_pseudo_dataset(std::span<const int> labels);

struct BatchEntry {
  std::size_t index;  // into the client's raw data
  int pseudo_label;

  friend bool operator==(const BatchEntry&, const BatchEntry&) = default;
};

/// Draws min(I, K) distinct clusters uniformly, then B members from each
/// (with replacement only when the cluster has fewer than B members).
std::vector<BatchEntry> pk_sample(const PseudoDataset& ds, std::size_t ids_per_batch, std::size_t images_per_id,
                                  std::mt19937_64& rng);

/// Samples B members from each of the given clusters, in the given order.
std::vector<BatchEntry> sample_clusters(const PseudoDataset& ds, std::span<const int> clusters,
                                        std::size_t images_per_id, std::mt19937_64& rng);

/// ceil(K / I): iterations needed to present every pseudo-identity once.
std::size_t ppe_iterations(std::size_t num_clusters, std::size_t ids_per_batch);

/// Cluster schedule for one personalised pseudo-epoch: a random permutation
/// of all clusters cut into ppe_iterations() chunks of I. A short final chunk
/// is topped up with distinct clusters drawn from the rest, so every batch
/// holds min(I, K) identities and every cluster appears at least once.
std::vector<std::vector<int>> ppe_schedule(std::size_t num_clusters, std::size_t ids_per_batch,
                                           std::mt19937_64& rng);

}  // namespace fedproto
