// Command-line driver: train, gradcheck, compare.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hfc/config.hpp"
#include "hfc/continual.hpp"
#include "hfc/gradcheck_suite.hpp"
#include "hfc/report.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct TrainArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& args) {
  hfc::RunConfig config;
  try {
    config = hfc::load_run_config(args.config);
    if (args.seed) {
      config.seed = *args.seed;
      config.trainer.seed = *args.seed;
    }
    if (!args.out.empty()) config.output_dir = args.out;
    if (config.output_dir.empty()) throw hfc::ConfigError("output_dir", "required (set it or pass --out)");
    config.trainer.eval_threads = hfc::eval_threads_from_env();
  } catch (const hfc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    const fs::path out = config.output_dir;
    fs::create_directories(out / "checkpoints");
    config.trainer.checkpoint_dir = out / "checkpoints";

    const hfc::TrainTestPair data = hfc::load_datasets(config);
    const hfc::TaskStream stream = hfc::split_tasks(data.train.num_classes, config.stream.tasks,
                                                    config.stream.base_percent, config.seed);
    hfc::ModelConfig model_config = config.model;
    model_config.num_classes = stream.tasks.front().size();
    hfc::Rng init = hfc::make_rng(config.seed, "init");
    hfc::Model model(model_config, init);

    std::cout << "training " << config.name << ": " << stream.num_tasks() << " tasks, " << stream.num_classes()
              << " classes, seed " << config.seed << "\n";
    hfc::StreamObserver observer;
    observer.on_task_end = [](std::size_t t, const hfc::Model& live, const hfc::FrozenModel&,
                              const hfc::ExemplarMemory& memory) {
      std::cout << "  task " << t + 1 << " done: " << live.num_classes() << " classes, " << memory.total()
                << " exemplars\n";
    };
    const hfc::RunReport report = hfc::run_stream(stream, data.train, data.test, model, config.trainer, observer);
    config.trainer.checkpoint_dir.clear();
    hfc::write_metrics_csv(out / "metrics.csv", report);
    hfc::write_summary_json(out / "summary.json", config, report);
    std::cout << "avg incremental top-1 " << hfc::format_number(report.avg_incremental) << ", FH "
              << hfc::format_number(report.fh) << "\nwrote " << (out / "metrics.csv").string() << "\n";
    return kExitOk;
  } catch (const hfc::TaskError& e) {
    std::cerr << "run failed at task " << e.task_index() << ": " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return kExitFailure;
  }
}

struct GradcheckArgs {
  double tolerance = 1e-4;
  std::uint64_t seed = 7;
  std::string inject_fault;
  double fault_scale = 1.5;
};

int cmd_gradcheck(const GradcheckArgs& args) {
  if (!args.inject_fault.empty()) hfc::testing::inject_backward_fault(args.inject_fault, args.fault_scale);
  const std::vector<hfc::GradCheckResult> results = hfc::run_gradcheck_suite(args.seed);
  hfc::testing::clear_backward_fault();

  std::vector<std::string> offenders;
  std::printf("%-34s %-14s %-6s %s\n", "check", "max rel err", "status", "worst coordinate");
  for (const auto& r : results) {
    const bool ok = r.max_relative_error < args.tolerance;
    std::printf("%-34s %-14.3e %-6s %s[%zu] analytic %.6e numeric %.6e\n", r.name.c_str(), r.max_relative_error,
                ok ? "ok" : "FAIL", r.worst_input.c_str(), r.worst_index, r.analytic, r.numeric);
    if (!ok) offenders.push_back(r.name);
  }
  if (offenders.empty()) {
    std::printf("all %zu checks below tolerance %g\n", results.size(), args.tolerance);
    return kExitOk;
  }
  std::printf("%zu of %zu checks exceeded tolerance %g:", offenders.size(), results.size(), args.tolerance);
  for (const auto& name : offenders) std::printf(" %s", name.c_str());
  std::printf("\n");
  return kExitFailure;
}

struct CompareArgs {
  std::vector<std::string> runs;
  std::string out;
};

int cmd_compare(const CompareArgs& args) {
  std::vector<hfc::ComparisonRow> rows;
  try {
    rows = hfc::compare_runs(std::vector<fs::path>(args.runs.begin(), args.runs.end()));
  } catch (const std::exception& e) {
    std::cerr << "compare: " << e.what() << "\n";
    return kExitFailure;
  }
  std::printf("%-24s %-22s %-22s\n", "variant", "avg_incremental_acc", "fh");
  for (const auto& r : rows) {
    std::printf("%-24s %-22s %-22s\n", r.variant.c_str(), hfc::format_number(r.avg_incremental).c_str(),
                hfc::format_number(r.fh).c_str());
  }
  if (!args.out.empty()) {
    std::ofstream file(args.out, std::ios::binary | std::ios::trunc);
    file << hfc::comparison_csv(rows);
    if (!file) {
      std::cerr << "compare: cannot write " << args.out << "\n";
      return kExitFailure;
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heterogeneous forgetting compensation laboratory"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Run a class-incremental stream");
  train_cmd->add_option("--config", train.config, "Run configuration (JSON)")->required();
  train_cmd->add_option("--out", train.out, "Output directory (overrides output_dir)");
  train_cmd->add_option("--seed", train.seed, "Base seed for every random stream");

  GradcheckArgs grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  grad_cmd->add_option("--tolerance", grad.tolerance, "Maximum relative error")->check(CLI::NonNegativeNumber);
  grad_cmd->add_option("--seed", grad.seed, "Seed for the random inputs");
  grad_cmd->add_option("--inject-fault", grad.inject_fault, "Scale the backward rule of this op (test fixture)");
  grad_cmd->add_option("--fault-scale", grad.fault_scale, "Gradient scale used by --inject-fault");

  CompareArgs compare;
  auto* compare_cmd = app.add_subcommand("compare", "Tabulate finished runs");
  compare_cmd->add_option("--runs", compare.runs, "Run directories holding summary.json")->required();
  compare_cmd->add_option("--out", compare.out, "Write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (*train_cmd) return cmd_train(train);
  if (*grad_cmd) return cmd_gradcheck(grad);
  return cmd_compare(compare);
}
