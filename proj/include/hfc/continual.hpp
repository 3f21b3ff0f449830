#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hfc/data.hpp"
#include "hfc/losses.hpp"
#include "hfc/metrics.hpp"
#include "hfc/model.hpp"

namespace hfc {

/// Greedy herding over the rows of `features` [n, D]: step j picks the unpicked
/// row minimizing ||mean - (row + sum of picked) / j||, lowest index on ties.
/// Returns `m` row indices in priority order.
std::vector<std::size_t> herding_select(const Tensor& features, std::size_t m);

enum class MemoryMode {
  fixed_total,      ///< capacity shared equally across all seen classes
  per_class_quota,  ///< a fixed number of exemplars per class
};

std::string_view to_string(MemoryMode mode);
MemoryMode parse_memory_mode(std::string_view text);

struct MemoryConfig {
  MemoryMode mode = MemoryMode::fixed_total;
  std::size_t capacity = 100;
  std::size_t per_class = 20;

  friend bool operator==(const MemoryConfig&, const MemoryConfig&) = default;
};

/// Candidates for one new class: dataset sample indices and their features.
struct ClassCandidates {
  std::size_t class_index = 0;
  std::vector<std::size_t> samples;
  Tensor features;  ///< [samples.size(), D]
};

/// Per-class exemplar lists in herding priority order.
class ExemplarMemory {
 public:
  explicit ExemplarMemory(MemoryConfig config = {}) : config_(config) {}

  const MemoryConfig& config() const noexcept { return config_; }

  /// Exemplars per class once `total_classes` classes are stored.
  std::size_t quota(std::size_t total_classes) const;

  /// Shrinks existing lists to the new quota (keeping prefixes) and herds
  /// exemplars for each new class.
  void update(std::span<const ClassCandidates> new_classes, std::size_t total_classes);

  const std::map<std::size_t, std::vector<std::size_t>>& classes() const noexcept { return lists_; }
  const std::vector<std::size_t>& exemplars(std::size_t cls) const { return lists_.at(cls); }
  /// Every stored sample index, class by class in ascending class order.
  std::vector<std::size_t> all() const;
  std::size_t total() const;

 private:
  MemoryConfig config_;
  std::map<std::size_t, std::vector<std::size_t>> lists_;
};

/// Raised when an optimizer step sees a NaN or infinite gradient.
class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// v <- momentum·v + g; p <- p - lr·v. `velocity` is resized on first use.
void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, std::vector<Tensor>& velocity, double lr,
              double momentum, std::span<const std::string> names = {});

struct TrainerConfig {
  double alpha1 = 1.0;
  double alpha2 = 1.0;
  double lr = 0.003;
  double momentum = 0.9;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  LossSwitches losses;
  MemoryConfig memory;
  /// Evaluation workers; results are identical for any value.
  std::size_t eval_threads = 1;
  /// When set, `task_<t>.ckpt` is written here after every task.
  std::filesystem::path checkpoint_dir;

  void validate() const;
};

/// Hooks for inspecting a run between tasks.
struct StreamObserver {
  /// After the classifier has grown for task `t` (0-based), before training.
  std::function<void(std::size_t t, const Model& live, const FrozenModel* old)> on_task_begin;
  /// After evaluation, memory update and snapshot of task `t`.
  std::function<void(std::size_t t, const Model& live, const FrozenModel& snapshot, const ExemplarMemory& memory)>
      on_task_end;
};

/// Raised for any failure inside the stream; carries the 1-based task index.
class TaskError : public std::runtime_error {
 public:
  TaskError(std::size_t task_index, const std::string& what)
      : std::runtime_error("task " + std::to_string(task_index) + ": " + what), task_index_(task_index) {}
  std::size_t task_index() const noexcept { return task_index_; }

 private:
  std::size_t task_index_;
};

/// Trains `model` over the stream. `train` and `test` carry dataset labels;
/// the model's classifier must start with exactly the first task's classes.
RunReport run_stream(const TaskStream& stream, const Dataset& train, const Dataset& test, Model& model,
                     const TrainerConfig& config, const StreamObserver& observer = {});

}  // namespace hfc
