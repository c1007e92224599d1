#include "fedproto/pseudolabel.hpp"

#include <algorithm>
#include <deque>
#include <numeric>
#include <stdexcept>

namespace fedproto {

namespace {

constexpr int kUnvisited = -2;

std::vector<std::vector<std::size_t>> neighbourhoods(const FeatureMatrix& features, double eps) {
  const Matrix d2 = pairwise_sq_dist(features, features);
  const double eps2 = eps * eps;
  std::vector<std::vector<std::size_t>> out(features.rows());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    for (std::size_t j = 0; j < features.rows(); ++j) {
      if (d2(i, j) <= eps2) out[i].push_back(j);
    }
  }
  return out;
}

// Uniform draw of `count` distinct values from [0, n) via partial Fisher-Yates.
std::vector<std::size_t> choose_without_replacement(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace

std::vector<int> dbscan(const FeatureMatrix& features, double eps, std::size_t min_pts) {
  if (features.empty()) throw std::invalid_argument("dbscan: empty input");
  if (!(eps > 0.0)) throw std::invalid_argument("dbscan: eps must be positive");
  if (min_pts < 1) throw std::invalid_argument("dbscan: min_pts must be at least 1");

  const auto nbrs = neighbourhoods(features, eps);
  std::vector<int> labels(features.rows(), kUnvisited);
  int next_cluster = 0;
  for (std::size_t p = 0; p < features.rows(); ++p) {
    if (labels[p] != kUnvisited) continue;
    if (nbrs[p].size() < min_pts) {
      labels[p] = kNoise;
      continue;
    }
    const int cluster = next_cluster++;
    labels[p] = cluster;
    std::deque<std::size_t> frontier(nbrs[p].begin(), nbrs[p].end());
    while (!frontier.empty()) {
      const std::size_t q = frontier.front();
      frontier.pop_front();
      if (labels[q] == kNoise) labels[q] = cluster;  // border point
      if (labels[q] != kUnvisited) continue;
      labels[q] = cluster;
      if (nbrs[q].size() >= min_pts) frontier.insert(frontier.end(), nbrs[q].begin(), nbrs[q].end());
    }
  }
  return labels;
}

std::vector<std::vector<std::size_t>> PseudoDataset::members() const {
  std::vector<std::vector<std::size_t>> out(num_clusters);
  for (std::size_t i = 0; i < pseudo_labels.size(); ++i) out[static_cast<std::size_t>(pseudo_labels[i])].push_back(i);
  return out;
}

PseudoDataset build_pseudo_dataset(std::span<const int> labels) {
  std::vector<int> ids;
  for (int l : labels) {
    if (l == kNoise) continue;
    if (l < 0) throw std::invalid_argument("build_pseudo_dataset: invalid cluster label");
    ids.push_back(l);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  PseudoDataset ds;
  ds.num_clusters = ids.size();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kNoise) continue;
    const auto rank = std::lower_bound(ids.begin(), ids.end(), labels[i]) - ids.begin();
    ds.sample_indices.push_back(i);
    ds.pseudo_labels.push_back(static_cast<int>(rank));
  }
  return ds;
}

std::vector<BatchEntry> sample_clusters(const PseudoDataset& ds, std::span<const int> clusters,
                                        std::size_t images_per_id, std::mt19937_64& rng) {
  const auto members = ds.members();
  std::vector<BatchEntry> batch;
  batch.reserve(clusters.size() * images_per_id);
  for (int c : clusters) {
    if (c < 0 || static_cast<std::size_t>(c) >= ds.num_clusters) {
      throw std::out_of_range("sample_clusters: cluster id out of range");
    }
    const auto& m = members[static_cast<std::size_t>(c)];
    if (m.size() < images_per_id) {
      std::uniform_int_distribution<std::size_t> pick(0, m.size() - 1);
      for (std::size_t b = 0; b < images_per_id; ++b) batch.push_back({ds.sample_indices[m[pick(rng)]], c});
    } else {
      for (std::size_t pos : choose_without_replacement(m.size(), images_per_id, rng)) {
        batch.push_back({ds.sample_indices[m[pos]], c});
      }
    }
  }
  return batch;
}

std::vector<BatchEntry> pk_sample(const PseudoDataset& ds, std::size_t ids_per_batch, std::size_t images_per_id,
                                  std::mt19937_64& rng) {
  if (ds.num_clusters == 0) throw std::invalid_argument("pk_sample: client has no clusters (unclusterable)");
  if (ids_per_batch == 0 || images_per_id == 0) throw std::invalid_argument("pk_sample: I and B must be positive");
  const std::size_t take = std::min(ids_per_batch, ds.num_clusters);
  std::vector<int> clusters;
  for (std::size_t c : choose_without_replacement(ds.num_clusters, take, rng)) clusters.push_back(static_cast<int>(c));
  return sample_clusters(ds, clusters, images_per_id, rng);
}

std::size_t ppe_iterations(std::size_t num_clusters, std::size_t ids_per_batch) {
  if (num_clusters == 0) throw std::invalid_argument("ppe_iterations: no clusters");
  if (ids_per_batch == 0) throw std::invalid_argument("ppe_iterations: I must be positive");
  return (num_clusters + ids_per_batch - 1) / ids_per_batch;
}

std::vector<std::vector<int>> ppe_schedule(std::size_t num_clusters, std::size_t ids_per_batch,
                                           std::mt19937_64& rng) {
  const std::size_t iterations = ppe_iterations(num_clusters, ids_per_batch);
  const std::size_t width = std::min(ids_per_batch, num_clusters);
  const auto order = choose_without_replacement(num_clusters, num_clusters, rng);
  std::vector<std::vector<int>> schedule(iterations);
  for (std::size_t it = 0; it < iterations; ++it) {
    auto& chunk = schedule[it];
    for (std::size_t k = it * ids_per_batch; k < std::min(num_clusters, (it + 1) * ids_per_batch); ++k) {
      chunk.push_back(static_cast<int>(order[k]));
    }
    if (chunk.size() < width) {
      std::vector<std::size_t> rest;
      for (std::size_t c = 0; c < num_clusters; ++c) {
        if (std::find(chunk.begin(), chunk.end(), static_cast<int>(c)) == chunk.end()) rest.push_back(c);
      }
      for (std::size_t pos : choose_without_replacement(rest.size(), width - chunk.size(), rng)) {
        chunk.push_back(static_cast<int>(rest[pos]));
      }
    }
  }
  return schedule;
}

}  // namespace fedproto
