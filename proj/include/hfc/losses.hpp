#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "hfc/autodiff.hpp"
#include "hfc/tensor.hpp"

namespace hfc {

/// How the relation target row is finished after the old block is replaced
/// by the teacher's probabilities.
enum class RelationTarget {
  renormalized,  ///< rescale each row to sum 1
  literal,       ///< keep the raw row (new-class rows sum to 2)
};

/// Argument order of the distillation divergence.
enum class KlDirection {
  student_first,  ///< KL(prototype || relation target)
  teacher_first,  ///< KL(relation target || prototype)
};

std::string_view to_string(RelationTarget target);
std::string_view to_string(KlDirection direction);
RelationTarget parse_relation_target(std::string_view text);
KlDirection parse_kl_direction(std::string_view text);

struct LossSwitches {
  RelationTarget relation_target = RelationTarget::renormalized;
  KlDirection kl_direction = KlDirection::teacher_first;
  /// Treat the balancing weights as constants during backward.
  bool weight_stop_gradient = true;
  /// Force every balancing weight to 1 (plain CE / unweighted distillation).
  bool uniform_weights = false;
};

/// Read-only view of one mini-batch's predictions and labels.
struct BatchView {
  Tensor probs;                          ///< [b, K_o + K_t] live-model softmax rows
  Tensor old_probs;                      ///< [b, K_o] teacher softmax rows; empty on the first task
  std::vector<std::size_t> labels;       ///< global class index per sample
  std::vector<std::size_t> class_task;   ///< task index of every class in [0, K_o + K_t)
  std::size_t old_classes = 0;           ///< K_o
  std::size_t new_classes = 0;           ///< K_t

  std::size_t batch_size() const noexcept { return labels.size(); }
  std::size_t total_classes() const noexcept { return old_classes + new_classes; }
  std::size_t num_tasks() const;
  std::size_t task_of_sample(std::size_t i) const { return class_task[labels[i]]; }

  /// Throws std::invalid_argument when shapes, labels, or row sums are off.
  void validate() const;
};

/// Per-mini-batch gradient statistics. Entries for tasks or classes without
/// samples in the batch are empty, never zero.
struct GradientStats {
  std::vector<double> per_sample;                       ///< Γ_i = P_i[y_i] - 1
  std::vector<double> sharpened;                        ///< log(|Γ_i|^(K_o/(K_o+K_t)) + 1)
  std::vector<std::optional<double>> task_mean;         ///< mean |Γ_i| per task
  std::vector<std::optional<double>> task_sharpened;    ///< mean sharpened value per task
  std::vector<std::optional<double>> class_sharpened;   ///< mean sharpened value per class
  std::vector<std::size_t> task_count;
  std::vector<std::size_t> class_count;
};

double per_sample_gradient(std::span<const double> prob_row, std::size_t label);
std::vector<double> per_sample_gradients(const BatchView& batch);

double sharpening_exponent(std::size_t old_classes, std::size_t new_classes);
/// log(|Γ|^(K_o/(K_o+K_t)) + 1), natural log, with 0^0 = 1.
double sharpened_stat(double abs_gradient, std::size_t old_classes, std::size_t new_classes);

GradientStats gradient_stats(const BatchView& batch);

/// Per-sample GFC weights: sharpened_i / task_sharpened[τ(i)], or 1 when that
/// task mean is zero.
std::vector<double> gfc_weights(const BatchView& batch, const GradientStats& stats);
/// Per-class GRD weights: class_sharpened[k] / task_sharpened[τ(k)], or 1 when
/// that task mean is zero. Empty for classes absent from the batch.
std::vector<std::optional<double>> grd_class_weights(const BatchView& batch, const GradientStats& stats);

/// Mean over samples of -log P_i[y_i]; `probs` is [b, K].
Var ce_loss(Var probs, std::span<const std::size_t> labels);

/// Cross-entropy reweighted per sample by the GFC weights.
Var gfc_loss(Var probs, const BatchView& batch, const GradientStats& stats, const LossSwitches& switches = {});

/// One-hot labels with the first K_o entries replaced by the teacher's
/// probabilities; [b, K_o + K_t]. Throws std::logic_error without a teacher.
Tensor relation_groundtruth(const BatchView& batch, RelationTarget mode = RelationTarget::renormalized);

/// Class-wise means of student rows and relation-target rows for the classes
/// present in the batch, in ascending class order.
struct RelationPrototypes {
  std::vector<std::size_t> classes;
  Var student;    ///< [C, K], differentiable through the student probabilities
  Tensor target;  ///< [C, K]
  Var source;     ///< the student probabilities the prototypes were built from
};

RelationPrototypes relation_prototypes(Var probs, const BatchView& batch, const Tensor& relation_targets);

/// (1/(K_o+K_t)) Σ_k w_k KL(student_k, target_k) over present classes.
Var grd_loss(const RelationPrototypes& prototypes, const BatchView& batch, const GradientStats& stats,
             const LossSwitches& switches = {});

struct ObjectiveTerms {
  Var total;
  Var forgetting_compensation;
  Var relation_distillation;
};

/// α₁·L_FC + α₂·L_RD. Requires a teacher (second task onward).
ObjectiveTerms objective(Var probs, const BatchView& batch, const GradientStats& stats, double alpha1, double alpha2,
                         const LossSwitches& switches = {});

}  // namespace hfc
