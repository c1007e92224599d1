#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "fedproto/numerics.hpp"

namespace fedproto {

struct SynthSpec {
  std::size_t num_source_ids = 64;
  std::size_t num_target_ids = 30;
  std::size_t cameras = 6;
  std::size_t samples_per_id_per_camera = 8;
  /// Held-out samples per (identity, camera) for retrieval: the first is a
  /// query, the rest go to the gallery. Must be at least 2.
  std::size_t eval_samples_per_id_per_camera = 2;
  std::size_t latent_dim = 16;
  double shift_strength = 1.0;
  double noise_std = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Samples with identity and camera annotations.
struct LabeledSet {
  FeatureMatrix x;
  std::vector<int> ids;
  std::vector<int> cameras;

  std::size_t size() const { return x.rows(); }
  friend bool operator==(const LabeledSet&, const LabeledSet&) = default;
};

/// Source domain plus one training set per target camera. Source identities
/// are 0..K-1 and target identities K..K+T-1. Client `ids` are ground truth
/// kept for diagnostics and evaluation only; training never reads them.
struct SyntheticData {
  LabeledSet source;
  std::vector<LabeledSet> clients;
  LabeledSet query;
  LabeledSet gallery;

  friend bool operator==(const SyntheticData&, const SyntheticData&) = default;
};

/// Samples x = A_c·z_k + b_c + ε. Identity latents z_k ~ N(0, I); source
/// cameras use A = I, b = 0; each target camera has A_c = I + s·G_c with
/// G_c ~ N(0, 1/d) entries and b_c = s·u_c with u_c ~ N(0, I); ε ~ N(0, σ²I).
SyntheticData generate(const SynthSpec& spec);

/// Flat little-endian dump: a header of u32 counts (clients, latent dim)
/// followed by one block per set (source, clients..., query, gallery). Each
/// block is u32 rows, rows·dim f64 values, rows i32 ids, rows i32 cameras.
void save_dataset(const std::filesystem::path& path, const SyntheticData& data);
SyntheticData load_dataset(const std::filesystem::path& path);

}  // namespace fedproto
