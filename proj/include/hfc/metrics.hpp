#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hfc/data.hpp"
#include "hfc/model.hpp"
#include "hfc/tensor.hpp"

namespace hfc {

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(std::span<const double> row);

/// Fraction of rows of `scores` [n, K] whose argmax equals the label.
double top1(const Tensor& scores, std::span<const std::size_t> labels);

/// Per-class accuracy over `num_classes` classes; classes without samples get 0.
std::vector<double> per_class_accuracy(const Tensor& scores, std::span<const std::size_t> labels,
                                       std::size_t num_classes);

double avg_incremental(std::span<const double> accuracies);

/// One checkpoint's term of the forgetting-heterogeneity statistic: the mean
/// squared deviation of |P_i[y_i] - 1| from its task mean, with task means
/// taken over all samples given. `probs` is [S, K].
double fh_checkpoint_term(const Tensor& probs, std::span<const std::size_t> labels,
                          std::span<const std::size_t> class_task);

/// Mean of the checkpoint terms.
double forgetting_heterogeneity(std::span<const double> checkpoint_terms);

/// Softmax rows of `model` over the given samples, evaluated in fixed chunks
/// spread across `threads` workers. Results do not depend on `threads`.
Tensor predict_probabilities(const Model& model, const Dataset& data, std::span<const std::size_t> indices,
                             std::size_t threads = 1, std::size_t chunk = 64);

/// Evaluation-parallelism cap from HFC_THREADS (default 1).
std::size_t eval_threads_from_env();

struct TaskMetrics {
  std::size_t task_index = 0;  ///< 1-based
  std::size_t seen_classes = 0;
  double top1 = 0.0;
  /// Running mean of top1 over checkpoints 1..task_index.
  double avg_incremental = 0.0;
  /// This checkpoint's FH term.
  double fh_term = 0.0;
  /// Running FH over checkpoints 1..task_index.
  double fh = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<double> epoch_losses;
  std::vector<double> epoch_train_accuracy;
};

struct RunReport {
  std::vector<TaskMetrics> tasks;
  double avg_incremental = 0.0;
  double fh = 0.0;
  double wall_clock_seconds = 0.0;
};

}  // namespace hfc
