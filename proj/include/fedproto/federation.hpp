#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "fedproto/config.hpp"
#include "fedproto/encoder.hpp"
#include "fedproto/evaluation.hpp"
#include "fedproto/pseudolabel.hpp"
#include "fedproto/synthgen.hpp"

namespace fedproto {

/// Mean feature of each source identity, rows in ascending identity order.
struct PrototypeSet {
  FeatureMatrix prototypes;
  std::vector<int> identity_ids;

  std::size_t size() const { return prototypes.rows(); }
};

PrototypeSet compute_prototypes(const ModelParams& model, const FeatureMatrix& source_x,
                                std::span<const int> source_labels);

/// Keeps max(1, round(fraction·K)) prototypes chosen uniformly without
/// replacement; kept rows stay in their original order.
PrototypeSet subsample_prototypes(const PrototypeSet& ps, double fraction, std::mt19937_64& rng);

struct LossTerms {
  double ce = 0.0;
  double soft_ce = 0.0;
  double triplet = 0.0;
  double soft_triplet = 0.0;
  double mmd = 0.0;
  double total = 0.0;

  LossTerms& operator+=(const LossTerms& o);
  LossTerms scaled(double s) const;
};

struct ClientRoundStats {
  int client_id = 0;
  std::size_t num_clusters = 0;
  std::size_t clustered_samples = 0;
  std::size_t steps = 0;
  bool skipped = false;
  /// Unweighted per-term means over the round's steps; `total` is the weighted objective.
  LossTerms losses;
};

struct ClientState {
  int client_id = 0;
  FeatureMatrix raw_data;
  ModelParams student;
  ModelParams teacher;
  ClassifierHead head;
  ClassifierHead teacher_head;
  PseudoDataset pseudo;
  std::uint64_t rng_seed = 0;
};

struct ClientRoundResult {
  ModelParams params;
  ClientRoundStats stats;
};

/// Called after every optimiser step with the 1-based step count.
using StepObserver = std::function<void(std::size_t)>;

/// Local training on one camera: reset student and teacher to the global
/// model, re-cluster, rebuild the head from cluster centroids, run ppe_count
/// pseudo-epochs and return the teacher (or student, per cfg.transmit).
ClientRoundResult client_round(ClientState& cs, const ModelParams& global, const PrototypeSet& protos,
                               const ExperimentConfig& cfg, std::uint64_t round_seed,
                               const StepObserver& observer = {});

/// Server-side participant trained on the labelled source domain.
struct PseudoClient {
  FeatureMatrix x;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  ClassifierHead head;
  ModelParams last_model;
};

struct PseudoClientResult {
  ModelParams params;
  LossTerms losses;
  std::size_t steps = 0;
  double first_ce = 0.0;
};

PseudoClientResult pseudo_client_round(const ModelParams& global, PseudoClient& pc, const ExperimentConfig& cfg,
                                       std::uint64_t round_seed, const StepObserver& observer = {});

/// Supervised pre-training of `global` and the pseudo-client head on the source domain.
ModelParams warmup(const ModelParams& global, PseudoClient& pc, const ExperimentConfig& cfg, std::uint64_t seed);

struct ClientUpdate {
  ModelParams params;
  std::size_t num_samples = 0;
};

/// θ = α·θ_s + (1 − α)·Σ w_i θ_i with w_i = N_i / Σ N_j. Heads never take part.
ModelParams aggregate(const ModelParams& pseudo_client, std::span<const ClientUpdate> clients, double alpha);

/// Bytes moved in one round under the 8-bytes-per-value cost model.
struct RoundTraffic {
  std::uint64_t uploaded_bytes = 0;
  std::uint64_t downloaded_bytes = 0;
  std::uint64_t prototype_bytes = 0;  // one copy of the prototype payload
  std::uint64_t parameter_bytes = 0;  // one copy of the backbone
};

/// Fed-Protoid: each client downloads one backbone plus the prototypes and
/// uploads one backbone. The MMT baseline moves four backbones each way and
/// no prototypes. The pseudo-client lives on the server and costs nothing.
RoundTraffic round_traffic(CommModel model, std::size_t clients, std::size_t param_count, std::size_t prototypes_sent,
                           std::size_t feature_dim);

class CommLedger {
 public:
  void record(const RoundTraffic& t);
  const std::vector<RoundTraffic>& rounds() const { return rounds_; }
  std::uint64_t total_uploaded() const { return total_up_; }
  std::uint64_t total_downloaded() const { return total_down_; }
  std::uint64_t total_bytes() const { return total_up_ + total_down_; }

 private:
  std::vector<RoundTraffic> rounds_;
  std::uint64_t total_up_ = 0;
  std::uint64_t total_down_ = 0;
};

struct RoundReport {
  std::size_t round = 0;
  std::vector<ClientRoundStats> clients;
  double pseudo_client_loss = 0.0;
  RoundTraffic traffic;
  std::size_t prototypes_sent = 0;
  double map = 0.0;
  double rank1 = 0.0;
};

nlohmann::json to_json(const RoundReport& r);

/// Raised when a round fails; carries the reports completed before it.
class FederationAborted : public std::runtime_error {
 public:
  FederationAborted(const std::string& what, std::vector<RoundReport> partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const std::vector<RoundReport>& partial() const { return partial_; }

 private:
  std::vector<RoundReport> partial_;
};

/// Coordinator state for one experiment: data, server, clients and ledger.
class Simulation {
 public:
  explicit Simulation(ExperimentConfig cfg);
  Simulation(ExperimentConfig cfg, SyntheticData data);

  void run_warmup();
  RoundReport run_round();

  const ExperimentConfig& config() const { return cfg_; }
  const SyntheticData& data() const { return data_; }
  const ModelParams& global() const { return global_; }
  const PseudoClient& pseudo_client() const { return pseudo_; }
  const CommLedger& ledger() const { return ledger_; }
  const RetrievalSplit& split() const { return split_; }
  std::size_t rounds_completed() const { return round_; }

 private:
  std::uint64_t derive_seed(std::uint64_t stream, std::uint64_t index) const;

  ExperimentConfig cfg_;
  SyntheticData data_;
  RetrievalSplit split_;
  ModelParams global_;
  PseudoClient pseudo_;
  std::vector<ClientState> clients_;
  CommLedger ledger_;
  std::size_t round_ = 0;
};

struct FederationResult {
  std::vector<RoundReport> reports;
  ModelParams global;
  CommLedger ledger;
};

using RoundCallback = std::function<void(const RoundReport&)>;

/// Warm-up followed by cfg.rounds rounds. Deterministic given the config.
FederationResult run_federation(const ExperimentConfig& cfg, const RoundCallback& on_round = {});

}  // namespace fedproto
