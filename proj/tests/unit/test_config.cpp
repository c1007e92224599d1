#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>

#include "fedproto/config.hpp"

using namespace fedproto;

namespace {

std::string error_key(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "";
}

}  // namespace

TEST_CASE("parses sections and values") {
  const ExperimentConfig cfg = parse_config(R"(
seed = 42   # master seed
output = "out/run.jsonl"

[synth]
cameras = 3
shift_strength = 0.5

[federation]
kernel = poly2
bandwidth = 0.8
proto_fraction = 0.25
transmit = student
mmd_mode = full
comm_model = mmt
proto_source = pseudo_client

[train]
beta1 = 1.0
beta2 = 0
)");
  CHECK(cfg.seed == 42);
  CHECK(cfg.output == "out/run.jsonl");
  CHECK(cfg.synth.cameras == 3);
  CHECK(cfg.synth.shift_strength == 0.5);
  CHECK(cfg.synth.seed == 42);
  CHECK(cfg.kernel == MmdKernel::Poly2);
  CHECK(cfg.bandwidth == 0.8);
  CHECK(cfg.proto_fraction == 0.25);
  CHECK(cfg.transmit == Transmit::Student);
  CHECK(cfg.mmd_mode == MmdMode::Full);
  CHECK(cfg.comm_model == CommModel::Mmt);
  CHECK(cfg.proto_source == PrototypeSource::PseudoClient);
  CHECK(cfg.weights.beta1 == 1.0);
}

TEST_CASE("defaults") {
  const ExperimentConfig cfg = parse_config("seed = 1");
  CHECK(cfg.rounds == 60);
  CHECK(cfg.weights.alpha == 0.5);
  CHECK(cfg.weights.lambda == 0.1);
  CHECK(cfg.kernel == MmdKernel::Gaussian);
  CHECK_FALSE(cfg.bandwidth.has_value());
  CHECK(cfg.ppe_count == 1);
  CHECK(cfg.kernel_spec().has_value());
  CHECK_FALSE(parse_config("seed = 1\n[federation]\nkernel = none").kernel_spec().has_value());
}

TEST_CASE("explicit synth seed wins") {
  CHECK(parse_config("seed = 1\n[synth]\nseed = 9").synth.seed == 9);
}

TEST_CASE("errors name the key") {
  CHECK(error_key("") == "seed");
  CHECK(error_key("[synth]\ncameras = 2") == "seed");
  CHECK(error_key("seed = 1\ncolour = red") == "colour");
  CHECK(error_key("seed = 1\n[train]\nlr = 0.1\nlr = 0.2") == "train.lr");
  CHECK(error_key("seed = 1\n[train]\nlr = fast") == "train.lr");
  CHECK(error_key("seed = 1\n[train]\ntau = 1.0") == "train.tau");
  CHECK(error_key("seed = 1\n[train]\nbeta1 = 0.7") == "train.beta1");
  CHECK(error_key("seed = 1\n[federation]\nkernel = cubic") == "federation.kernel");
  CHECK(error_key("seed = 1\n[federation]\nproto_fraction = 0") == "federation.proto_fraction");
  CHECK(error_key("seed = 1\n[federation]\nalpha = 2") == "federation.alpha");
  CHECK(error_key("seed = -3") == "seed");
  CHECK(error_key("seed = 1\njust text") == "just text");
}

TEST_CASE("every documented key validates its value") {
  for (const auto& key : config_keys()) {
    if (key == "output") continue;  // any string is a path
    ExperimentConfig cfg;
    CHECK_THROWS_AS(apply_setting(cfg, key, "not-a-value"), ConfigError);
  }
  ExperimentConfig cfg;
  apply_setting(cfg, "federation.bandwidth", "median");
  CHECK_FALSE(cfg.bandwidth.has_value());
  apply_setting(cfg, "dbscan.min_pts", "7");
  CHECK(cfg.dbscan_min_pts == 7);
}

TEST_CASE("enum names round-trip") {
  CHECK(to_string(MmdKernel::Gaussian) == "gaussian");
  CHECK(to_string(PrototypeSource::PseudoClient) == "pseudo_client");
  CHECK(to_string(Transmit::Teacher) == "teacher");
  CHECK(to_string(MmdMode::Full) == "full");
  CHECK(to_string(CommModel::Mmt) == "mmt");
}
