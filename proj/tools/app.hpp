#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedproto/federation.hpp"

namespace fedproto::app {

enum ExitCode : int { kOk = 0, kRuntimeFailure = 1, kConfigFailure = 2 };

/// Best scores and the rounds reaching them, per-round scores, and traffic totals.
nlohmann::json summarize(const std::vector<RoundReport>& reports, const CommLedger& ledger);

/// Files written next to the configured report path.
std::filesystem::path summary_path(const std::filesystem::path& report);
std::filesystem::path model_path(const std::filesystem::path& report);

/// Runs one experiment: JSON-lines report at cfg.output, summary and final
/// model beside it. Diagnostics go to `err`.
int run_command(const std::filesystem::path& config_path, std::ostream& err);

const std::vector<std::string>& sweep_axes();

/// One run per value of `axis` with otherwise identical config, then a CSV
/// (value, best_map, best_rank1, best_round, total_bytes) at
/// `<output stem>.<axis>.csv`.
int sweep_command(const std::filesystem::path& config_path, const std::string& axis,
                  const std::vector<std::string>& values, std::ostream& err);

/// Applies FEDPROTO_LOG (trace, debug, info, warn, error, off) to the default logger.
void configure_logging();

}  // namespace fedproto::app
