#include "fedproto/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace fedproto {

std::string to_string(MmdKernel v) {
  switch (v) {
    case MmdKernel::None:
      return "none";
    case MmdKernel::Linear:
      return "linear";
    case MmdKernel::Poly2:
      return "poly2";
    case MmdKernel::Gaussian:
      return "gaussian";
  }
  return "?";
}
std::string to_string(PrototypeSource v) { return v == PrototypeSource::Global ? "global" : "pseudo_client"; }
std::string to_string(Transmit v) { return v == Transmit::Teacher ? "teacher" : "student"; }
std::string to_string(MmdMode v) { return v == MmdMode::Minibatch ? "minibatch" : "full"; }
std::string to_string(CommModel v) { return v == CommModel::FedProtoid ? "fedprotoid" : "mmt"; }

std::optional<KernelSpec> ExperimentConfig::kernel_spec() const {
  if (weights.lambda == 0.0) return std::nullopt;
  switch (kernel) {
    case MmdKernel::None:
      return std::nullopt;
    case MmdKernel::Linear:
      return KernelSpec::linear();
    case MmdKernel::Poly2:
      return KernelSpec::poly2(poly_offset);
    case MmdKernel::Gaussian:
      return bandwidth ? KernelSpec::gaussian(*bandwidth) : KernelSpec::gaussian_median();
  }
  return std::nullopt;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string unquote(std::string_view s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
    return std::string(s.substr(1, s.size() - 2));
  }
  return std::string(s);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  const std::string v = unquote(trim(text));
  T out{};
  const auto* first = v.data();
  const auto* last = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || v.empty()) {
    throw ConfigError(std::string(key), "cannot parse '" + v + "' as a number");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(out)) throw ConfigError(std::string(key), "value must be finite");
  }
  return out;
}

template <typename E>
E parse_enum(std::string_view key, std::string_view text, std::initializer_list<std::pair<const char*, E>> options) {
  const std::string v = unquote(trim(text));
  std::string allowed;
  for (const auto& [name, value] : options) {
    if (v == name) return value;
    allowed += allowed.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(std::string(key), "unknown value '" + v + "' (expected one of: " + allowed + ")");
}

using Setter = std::function<void(ExperimentConfig&, std::string_view key, std::string_view value)>;

template <typename T, typename Ptr>
Setter number_setter(Ptr member) {
  return [member](ExperimentConfig& c, std::string_view k, std::string_view v) {
    std::invoke(member, c) = parse_number<T>(k, v);
  };
}

const std::map<std::string, Setter, std::less<>>& setters() {
  using C = ExperimentConfig;
  static const std::map<std::string, Setter, std::less<>> table = {
      {"seed", number_setter<std::uint64_t>([](C& c) -> auto& { return c.seed; })},
      {"output", [](C& c, std::string_view, std::string_view v) { c.output = unquote(trim(v)); }},
      {"workers", number_setter<std::size_t>([](C& c) -> auto& { return c.workers; })},

      {"synth.source_ids", number_setter<std::size_t>([](C& c) -> auto& { return c.synth.num_source_ids; })},
      {"synth.target_ids", number_setter<std::size_t>([](C& c) -> auto& { return c.synth.num_target_ids; })},
      {"synth.cameras", number_setter<std::size_t>([](C& c) -> auto& { return c.synth.cameras; })},
      {"synth.samples_per_id_per_camera",
       number_setter<std::size_t>([](C& c) -> auto& { return c.synth.samples_per_id_per_camera; })},
      {"synth.eval_samples_per_id_per_camera",
       number_setter<std::size_t>([](C& c) -> auto& { return c.synth.eval_samples_per_id_per_camera; })},
      {"synth.latent_dim", number_setter<std::size_t>([](C& c) -> auto& { return c.synth.latent_dim; })},
      {"synth.shift_strength", number_setter<double>([](C& c) -> auto& { return c.synth.shift_strength; })},
      {"synth.noise_std", number_setter<double>([](C& c) -> auto& { return c.synth.noise_std; })},
      {"synth.seed", number_setter<std::uint64_t>([](C& c) -> auto& { return c.synth.seed; })},

      {"model.hidden_dim", number_setter<std::size_t>([](C& c) -> auto& { return c.hidden_dim; })},
      {"model.feature_dim", number_setter<std::size_t>([](C& c) -> auto& { return c.feature_dim; })},

      {"train.lr", number_setter<double>([](C& c) -> auto& { return c.lr; })},
      {"train.margin", number_setter<double>([](C& c) -> auto& { return c.margin; })},
      {"train.beta1", number_setter<double>([](C& c) -> auto& { return c.weights.beta1; })},
      {"train.beta2", number_setter<double>([](C& c) -> auto& { return c.weights.beta2; })},
      {"train.gamma1", number_setter<double>([](C& c) -> auto& { return c.weights.gamma1; })},
      {"train.gamma2", number_setter<double>([](C& c) -> auto& { return c.weights.gamma2; })},
      {"train.tau", number_setter<double>([](C& c) -> auto& { return c.weights.tau; })},
      {"train.ids_per_batch", number_setter<std::size_t>([](C& c) -> auto& { return c.ids_per_batch; })},
      {"train.images_per_id", number_setter<std::size_t>([](C& c) -> auto& { return c.images_per_id; })},
      {"train.ppe_count", number_setter<std::size_t>([](C& c) -> auto& { return c.ppe_count; })},
      {"train.warmup_steps", number_setter<std::size_t>([](C& c) -> auto& { return c.warmup_steps; })},

      {"dbscan.eps", number_setter<double>([](C& c) -> auto& { return c.dbscan_eps; })},
      {"dbscan.min_pts", number_setter<std::size_t>([](C& c) -> auto& { return c.dbscan_min_pts; })},

      {"federation.rounds", number_setter<std::size_t>([](C& c) -> auto& { return c.rounds; })},
      {"federation.alpha", number_setter<double>([](C& c) -> auto& { return c.weights.alpha; })},
      {"federation.lambda", number_setter<double>([](C& c) -> auto& { return c.weights.lambda; })},
      {"federation.kernel",
       [](C& c, std::string_view k, std::string_view v) {
         c.kernel = parse_enum<MmdKernel>(k, v,
                                          {{"none", MmdKernel::None},
                                           {"linear", MmdKernel::Linear},
                                           {"poly2", MmdKernel::Poly2},
                                           {"gaussian", MmdKernel::Gaussian}});
       }},
      {"federation.bandwidth",
       [](C& c, std::string_view k, std::string_view v) {
         if (unquote(trim(v)) == "median") {
           c.bandwidth.reset();
         } else {
           c.bandwidth = parse_number<double>(k, v);
         }
       }},
      {"federation.poly_offset", number_setter<double>([](C& c) -> auto& { return c.poly_offset; })},
      {"federation.proto_fraction", number_setter<double>([](C& c) -> auto& { return c.proto_fraction; })},
      {"federation.proto_source",
       [](C& c, std::string_view k, std::string_view v) {
         c.proto_source = parse_enum<PrototypeSource>(
             k, v, {{"global", PrototypeSource::Global}, {"pseudo_client", PrototypeSource::PseudoClient}});
       }},
      {"federation.transmit",
       [](C& c, std::string_view k, std::string_view v) {
         c.transmit = parse_enum<Transmit>(k, v, {{"teacher", Transmit::Teacher}, {"student", Transmit::Student}});
       }},
      {"federation.mmd_mode",
       [](C& c, std::string_view k, std::string_view v) {
         c.mmd_mode = parse_enum<MmdMode>(k, v, {{"minibatch", MmdMode::Minibatch}, {"full", MmdMode::Full}});
       }},
      {"federation.comm_model",
       [](C& c, std::string_view k, std::string_view v) {
         c.comm_model = parse_enum<CommModel>(k, v, {{"fedprotoid", CommModel::FedProtoid}, {"mmt", CommModel::Mmt}});
       }},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& [k, _] : setters()) out.push_back(k);
    return out;
  }();
  return keys;
}

void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError(std::string(key), "unknown key");
  it->second(cfg, key, value);
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(key, what);
  };
  require(workers >= 1, "workers", "must be at least 1");
  require(!output.empty(), "output", "must not be empty");
  try {
    synth.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("synth", e.what());
  }
  require(hidden_dim >= 1, "model.hidden_dim", "must be at least 1");
  require(feature_dim >= 1, "model.feature_dim", "must be at least 1");
  require(std::abs(weights.beta1 + weights.beta2 - 1.0) <= 1e-9, "train.beta1", "beta1 + beta2 must equal 1");
  require(weights.beta1 >= 0 && weights.beta2 >= 0, "train.beta1", "beta weights must be non-negative");
  require(std::abs(weights.gamma1 + weights.gamma2 - 1.0) <= 1e-9, "train.gamma1", "gamma1 + gamma2 must equal 1");
  require(weights.gamma1 >= 0 && weights.gamma2 >= 0, "train.gamma1", "gamma weights must be non-negative");
  require(weights.tau >= 0.0 && weights.tau < 1.0, "train.tau", "must lie in [0, 1)");
  require(lr >= 0.0, "train.lr", "must be non-negative");
  require(margin >= 0.0, "train.margin", "must be non-negative");
  require(ids_per_batch >= 1, "train.ids_per_batch", "must be at least 1");
  require(images_per_id >= 1, "train.images_per_id", "must be at least 1");
  require(ppe_count >= 1, "train.ppe_count", "must be at least 1");
  require(dbscan_eps > 0.0, "dbscan.eps", "must be positive");
  require(dbscan_min_pts >= 1, "dbscan.min_pts", "must be at least 1");
  require(weights.alpha >= 0.0 && weights.alpha <= 1.0, "federation.alpha", "must lie in [0, 1]");
  require(weights.lambda >= 0.0, "federation.lambda", "must be non-negative");
  require(!bandwidth || *bandwidth > 0.0, "federation.bandwidth", "must be positive or 'median'");
  require(proto_fraction > 0.0 && proto_fraction <= 1.0, "federation.proto_fraction", "must lie in (0, 1]");
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = line;
    bool quoted = false;
    for (std::size_t i = 0; i < view.size(); ++i) {
      if (view[i] == '"') quoted = !quoted;
      if (view[i] == '#' && !quoted) {
        view = view.substr(0, i);
        break;
      }
    }
    const std::string body = trim(view);
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError(body, "malformed section header on line " + std::to_string(lineno));
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(body, "expected 'key = value' on line " + std::to_string(lineno));
    }
    const std::string name = trim(std::string_view(body).substr(0, eq));
    const std::string key = section.empty() ? name : section + "." + name;
    if (!seen.insert(key).second) throw ConfigError(key, "duplicate key");
    apply_setting(cfg, key, std::string_view(body).substr(eq + 1));
  }
  if (!seen.contains("seed")) throw ConfigError("seed", "missing mandatory key");
  if (!seen.contains("synth.seed")) cfg.synth.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace fedproto
