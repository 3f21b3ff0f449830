#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfc/config.hpp"
#include "hfc/metrics.hpp"

namespace hfc {

/// Shortest round-trip decimal text of `value`, independent of locale.
std::string format_number(double value);

/// task_index,seen_classes,top1_acc,avg_incremental_acc,fh,epoch_losses
/// with LF line endings; epoch losses are joined by ';'.
std::string metrics_csv(const RunReport& report);
void write_metrics_csv(const std::filesystem::path& path, const RunReport& report);

nlohmann::json summary_json(const RunConfig& config, const RunReport& report);
void write_summary_json(const std::filesystem::path& path, const RunConfig& config, const RunReport& report);

/// One row of a cross-run comparison.
struct ComparisonRow {
  std::string variant;
  std::string run_dir;
  double avg_incremental = 0.0;
  double fh = 0.0;
};

/// Reads `<dir>/summary.json`; throws std::runtime_error when unreadable.
ComparisonRow read_comparison_row(const std::filesystem::path& run_dir);
/// Rows sorted by average incremental accuracy, highest first (stable).
std::vector<ComparisonRow> compare_runs(const std::vector<std::filesystem::path>& run_dirs);
std::string comparison_csv(const std::vector<ComparisonRow>& rows);

}  // namespace hfc
