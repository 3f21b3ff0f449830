#include "hfc/report.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <stdexcept>

namespace hfc {

using nlohmann::json;

std::string format_number(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string metrics_csv(const RunReport& report) {
  std::string out = "task_index,seen_classes,top1_acc,avg_incremental_acc,fh,epoch_losses\n";
  for (const TaskMetrics& t : report.tasks) {
    out += std::to_string(t.task_index) + ',' + std::to_string(t.seen_classes) + ',' + format_number(t.top1) + ',' +
           format_number(t.avg_incremental) + ',' + format_number(t.fh) + ',';
    for (std::size_t e = 0; e < t.epoch_losses.size(); ++e) {
      if (e) out += ';';
      out += format_number(t.epoch_losses[e]);
    }
    out += '\n';
  }
  return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const RunReport& report) {
  write_text(path, metrics_csv(report));
}

json summary_json(const RunConfig& config, const RunReport& report) {
  json tasks = json::array();
  for (const TaskMetrics& t : report.tasks) {
    tasks.push_back({{"task_index", t.task_index},
                     {"seen_classes", t.seen_classes},
                     {"top1_acc", t.top1},
                     {"avg_incremental_acc", t.avg_incremental},
                     {"fh_term", t.fh_term},
                     {"fh", t.fh},
                     {"per_class_accuracy", t.per_class_accuracy},
                     {"epoch_losses", t.epoch_losses},
                     {"epoch_train_accuracy", t.epoch_train_accuracy}});
  }
  return json{{"config", to_json(config)},
              {"tasks", tasks},
              {"avg_incremental_acc", report.avg_incremental},
              {"fh", report.fh},
              {"wall_clock_seconds", report.wall_clock_seconds}};
}

void write_summary_json(const std::filesystem::path& path, const RunConfig& config, const RunReport& report) {
  write_text(path, summary_json(config, report).dump(2) + "\n");
}

ComparisonRow read_comparison_row(const std::filesystem::path& run_dir) {
  const std::filesystem::path file = run_dir / "summary.json";
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  try {
    const json j = json::parse(in);
    ComparisonRow row;
    row.run_dir = run_dir.string();
    row.variant = j.at("config").at("name").get<std::string>();
    row.avg_incremental = j.at("avg_incremental_acc").get<double>();
    row.fh = j.at("fh").get<double>();
    return row;
  } catch (const json::exception& e) {
    throw std::runtime_error(file.string() + ": " + e.what());
  }
}

std::vector<ComparisonRow> compare_runs(const std::vector<std::filesystem::path>& run_dirs) {
  std::vector<ComparisonRow> rows;
  for (const auto& dir : run_dirs) rows.push_back(read_comparison_row(dir));
  std::stable_sort(rows.begin(), rows.end(),
                   [](const ComparisonRow& a, const ComparisonRow& b) { return a.avg_incremental > b.avg_incremental; });
  return rows;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = "variant,avg_incremental_acc,fh,run_dir\n";
  for (const ComparisonRow& r : rows) {
    out += r.variant + ',' + format_number(r.avg_incremental) + ',' + format_number(r.fh) + ',' + r.run_dir + '\n';
  }
  return out;
}

}  // namespace hfc
