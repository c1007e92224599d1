#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fedproto/encoder.hpp"
#include "fedproto/numerics.hpp"
#include "fedproto/synthgen.hpp"

namespace fedproto {

/// Invalid or missing configuration; `key()` names the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error("config key '" + key + "': " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

enum class MmdKernel { None, Linear, Poly2, Gaussian };
enum class PrototypeSource { Global, PseudoClient };
enum class Transmit { Teacher, Student };
enum class MmdMode { Minibatch, Full };
enum class CommModel { FedProtoid, Mmt };

std::string to_string(MmdKernel v);
std::string to_string(PrototypeSource v);
std::string to_string(Transmit v);
std::string to_string(MmdMode v);
std::string to_string(CommModel v);

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output = "report.jsonl";
  std::size_t workers = 1;

  SynthSpec synth;
  std::size_t hidden_dim = 64;
  std::size_t feature_dim = 32;

  LossWeights weights;
  double lr = 0.5;
  double margin = 0.3;
  std::size_t ids_per_batch = 4;
  std::size_t images_per_id = 4;
  std::size_t ppe_count = 1;
  std::size_t warmup_steps = 1000;

  double dbscan_eps = 0.6;
  std::size_t dbscan_min_pts = 4;

  std::size_t rounds = 60;
  MmdKernel kernel = MmdKernel::Gaussian;
  /// Fixed Gaussian σ; empty means median heuristic per mini-batch.
  std::optional<double> bandwidth;
  double poly_offset = 1.0;
  double proto_fraction = 1.0;
  PrototypeSource proto_source = PrototypeSource::Global;
  Transmit transmit = Transmit::Teacher;
  MmdMode mmd_mode = MmdMode::Minibatch;
  CommModel comm_model = CommModel::FedProtoid;

  EncoderDims encoder_dims() const { return {synth.latent_dim, hidden_dim, feature_dim}; }
  /// Kernel for the MMD term, or nullopt when the term is disabled.
  std::optional<KernelSpec> kernel_spec() const;

  /// Throws ConfigError naming the first offending key.
  void validate() const;
};

/// Every key understood by the parser, as "section.key" (top-level keys bare).
const std::vector<std::string>& config_keys();

/// Sets one dotted key from its textual value. Unknown keys and unparsable
/// values raise ConfigError.
void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value);

/// Parses flat `[section]` / `key = value` text. `seed` is mandatory.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace fedproto
