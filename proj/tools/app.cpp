#include "app.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>

#include <spdlog/spdlog.h>

#include "fedproto/config.hpp"

namespace fedproto::app {

namespace fs = std::filesystem;

nlohmann::json summarize(const std::vector<RoundReport>& reports, const CommLedger& ledger) {
  nlohmann::json scores = nlohmann::json::array();
  const RoundReport* best_map = nullptr;
  const RoundReport* best_rank1 = nullptr;
  for (const auto& r : reports) {
    scores.push_back({{"round", r.round}, {"map", r.map}, {"rank1", r.rank1}});
    if (best_map == nullptr || r.map > best_map->map) best_map = &r;
    if (best_rank1 == nullptr || r.rank1 > best_rank1->rank1) best_rank1 = &r;
  }
  nlohmann::json out = {{"rounds", reports.size()},
                        {"round_scores", scores},
                        {"total_uploaded_bytes", ledger.total_uploaded()},
                        {"total_downloaded_bytes", ledger.total_downloaded()},
                        {"total_bytes", ledger.total_bytes()},
                        {"best_map", nullptr},
                        {"best_map_round", nullptr},
                        {"best_rank1", nullptr},
                        {"best_rank1_round", nullptr}};
  if (best_map != nullptr) {
    out["best_map"] = best_map->map;
    out["best_map_round"] = best_map->round;
    out["best_rank1"] = best_rank1->rank1;
    out["best_rank1_round"] = best_rank1->round;
  }
  return out;
}

fs::path summary_path(const fs::path& report) {
  fs::path p = report;
  return p.replace_extension(".summary.json");
}

fs::path model_path(const fs::path& report) {
  fs::path p = report;
  return p.replace_extension(".model.bin");
}

namespace {

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

ExperimentConfig read_config(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ConfigError("<file>", "cannot read config file " + path.string());
  ExperimentConfig cfg = load_config(path);
  cfg.validate();
  return cfg;
}

// Runs one configuration and writes its artifacts; returns the summary.
nlohmann::json execute(const ExperimentConfig& cfg) {
  const fs::path report = cfg.output;
  std::ofstream lines = open_output(report);
  spdlog::info("running {} rounds, report at {}", cfg.rounds, report.string());
  auto on_round = [&](const RoundReport& r) {
    lines << to_json(r).dump() << '\n';
    lines.flush();
    spdlog::info("round {}/{}: mAP {:.4f} rank-1 {:.4f}", r.round, cfg.rounds, r.map, r.rank1);
  };
  FederationResult result = run_federation(cfg, on_round);
  const nlohmann::json summary = summarize(result.reports, result.ledger);
  open_output(summary_path(report)) << summary.dump(2) << '\n';
  save_model(model_path(report), result.global);
  return summary;
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    fn();
    return kOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const FederationAborted& e) {
    err << "federation aborted after " << e.partial().size() << " rounds: " << e.what() << '\n';
    return kRuntimeFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
}

const std::map<std::string, std::string>& axis_keys() {
  static const std::map<std::string, std::string> keys = {{"kernel", "federation.kernel"},
                                                          {"proto_fraction", "federation.proto_fraction"},
                                                          {"transmit", "federation.transmit"},
                                                          {"mmd_mode", "federation.mmd_mode"}};
  return keys;
}

std::string csv_number(const nlohmann::json& v) {
  if (v.is_null()) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v.get<double>());
  return buf;
}

}  // namespace

int run_command(const fs::path& config_path, std::ostream& err) {
  return guarded(err, [&] { execute(read_config(config_path)); });
}

const std::vector<std::string>& sweep_axes() {
  static const std::vector<std::string> axes = [] {
    std::vector<std::string> out;
    for (const auto& [axis, key] : axis_keys()) out.push_back(axis);
    return out;
  }();
  return axes;
}

int sweep_command(const fs::path& config_path, const std::string& axis, const std::vector<std::string>& values,
                  std::ostream& err) {
  return guarded(err, [&] {
    const auto it = axis_keys().find(axis);
    if (it == axis_keys().end()) throw ConfigError(axis, "unknown sweep axis");
    if (values.empty()) throw ConfigError(axis, "sweep needs at least one value");
    const ExperimentConfig base = read_config(config_path);

    // Parse every value up front so a typo fails before any run starts.
    std::vector<ExperimentConfig> runs;
    const fs::path base_out = base.output;
    for (const auto& value : values) {
      ExperimentConfig cfg = base;
      apply_setting(cfg, it->second, value);
      cfg.validate();
      fs::path out = base_out;
      out.replace_extension();
      cfg.output = out.string() + "." + axis + "-" + value + ".jsonl";
      runs.push_back(std::move(cfg));
    }

    fs::path csv_path = base_out;
    csv_path.replace_extension("." + axis + ".csv");
    std::string csv = axis + ",best_map,best_rank1,best_round,total_bytes\n";
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const nlohmann::json s = execute(runs[i]);
      csv += values[i] + "," + csv_number(s["best_map"]) + "," + csv_number(s["best_rank1"]) + "," +
             (s["best_map_round"].is_null() ? "" : s["best_map_round"].dump()) + "," + s["total_bytes"].dump() + "\n";
    }
    open_output(csv_path) << csv;
  });
}

void configure_logging() {
  spdlog::set_level(spdlog::level::warn);
  if (const char* level = std::getenv("FEDPROTO_LOG")) spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace fedproto::app
