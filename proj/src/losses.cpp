#include "hfc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "hfc/ops.hpp"

namespace hfc {

std::string_view to_string(RelationTarget target) {
  return target == RelationTarget::literal ? "literal" : "renormalized";
}

std::string_view to_string(KlDirection direction) {
  return direction == KlDirection::teacher_first ? "teacher_first" : "student_first";
}

RelationTarget parse_relation_target(std::string_view text) {
  if (text == "renormalized") return RelationTarget::renormalized;
  if (text == "literal") return RelationTarget::literal;
  throw std::invalid_argument("unknown relation_target '" + std::string(text) + "'");
}

KlDirection parse_kl_direction(std::string_view text) {
  if (text == "student_first") return KlDirection::student_first;
  if (text == "teacher_first") return KlDirection::teacher_first;
  throw std::invalid_argument("unknown kl_direction '" + std::string(text) + "'");
}

std::size_t BatchView::num_tasks() const {
  std::size_t n = 0;
  for (std::size_t t : class_task) n = std::max(n, t + 1);
  return n;
}

void BatchView::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("batch: " + what); };
  const std::size_t b = labels.size();
  const std::size_t k = total_classes();
  if (b == 0) fail("empty batch");
  if (probs.shape() != Shape{b, k}) fail("probs " + to_string(probs.shape()) + " but expected " + to_string(Shape{b, k}));
  if (class_task.size() != k) fail("class->task map covers " + std::to_string(class_task.size()) + " of " + std::to_string(k) + " classes");
  if (!old_probs.empty() && old_probs.shape() != Shape{b, old_classes}) {
    fail("old_probs " + to_string(old_probs.shape()) + " but expected " + to_string(Shape{b, old_classes}));
  }
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= k) fail("label " + std::to_string(labels[i]) + " outside " + std::to_string(k) + " classes");
    double row = 0.0;
    for (std::size_t j = 0; j < k; ++j) row += probs[i * k + j];
    if (std::abs(row - 1.0) > 1e-9) fail("prediction row " + std::to_string(i) + " sums to " + std::to_string(row));
  }
}

double per_sample_gradient(std::span<const double> prob_row, std::size_t label) {
  if (label >= prob_row.size()) throw std::out_of_range("per_sample_gradient: label outside row");
  return prob_row[label] - 1.0;
}

std::vector<double> per_sample_gradients(const BatchView& batch) {
  const std::size_t k = batch.total_classes();
  std::vector<double> out(batch.batch_size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = per_sample_gradient(batch.probs.data().subspan(i * k, k), batch.labels[i]);
  }
  return out;
}

double sharpening_exponent(std::size_t old_classes, std::size_t new_classes) {
  const std::size_t total = old_classes + new_classes;
  if (total == 0) throw std::invalid_argument("sharpening_exponent: no classes");
  return static_cast<double>(old_classes) / static_cast<double>(total);
}

double sharpened_stat(double abs_gradient, std::size_t old_classes, std::size_t new_classes) {
  const double p = sharpening_exponent(old_classes, new_classes);
  const double powered = p == 0.0 ? 1.0 : std::pow(abs_gradient, p);
  return std::log(powered + 1.0);
}

GradientStats gradient_stats(const BatchView& batch) {
  GradientStats s;
  const std::size_t b = batch.batch_size();
  const std::size_t tasks = batch.num_tasks();
  const std::size_t k = batch.total_classes();
  s.per_sample = per_sample_gradients(batch);
  s.sharpened.resize(b);
  std::vector<double> task_abs(tasks, 0.0), task_sharp(tasks, 0.0), class_sharp(k, 0.0);
  s.task_count.assign(tasks, 0);
  s.class_count.assign(k, 0);
  for (std::size_t i = 0; i < b; ++i) {
    const double a = std::abs(s.per_sample[i]);
    s.sharpened[i] = sharpened_stat(a, batch.old_classes, batch.new_classes);
    const std::size_t t = batch.task_of_sample(i);
    const std::size_t c = batch.labels[i];
    task_abs[t] += a;
    task_sharp[t] += s.sharpened[i];
    class_sharp[c] += s.sharpened[i];
    ++s.task_count[t];
    ++s.class_count[c];
  }
  s.task_mean.resize(tasks);
  s.task_sharpened.resize(tasks);
  for (std::size_t t = 0; t < tasks; ++t) {
    if (s.task_count[t] == 0) continue;
    const double n = static_cast<double>(s.task_count[t]);
    s.task_mean[t] = task_abs[t] / n;
    s.task_sharpened[t] = task_sharp[t] / n;
  }
  s.class_sharpened.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    if (s.class_count[c]) s.class_sharpened[c] = class_sharp[c] / static_cast<double>(s.class_count[c]);
  }
  return s;
}

std::vector<double> gfc_weights(const BatchView& batch, const GradientStats& stats) {
  std::vector<double> w(batch.batch_size(), 1.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double denom = stats.task_sharpened.at(batch.task_of_sample(i)).value();
    if (denom != 0.0) w[i] = stats.sharpened[i] / denom;
  }
  return w;
}

std::vector<std::optional<double>> grd_class_weights(const BatchView& batch, const GradientStats& stats) {
  std::vector<std::optional<double>> w(batch.total_classes());
  for (std::size_t c = 0; c < w.size(); ++c) {
    if (!stats.class_sharpened[c]) continue;
    const double denom = stats.task_sharpened.at(batch.class_task[c]).value();
    w[c] = denom != 0.0 ? *stats.class_sharpened[c] / denom : 1.0;
  }
  return w;
}

Var ce_loss(Var probs, std::span<const std::size_t> labels) {
  return scale(mean(log(pick(probs, labels))), -1.0);
}

namespace {

// Differentiable sharpened values log((1 - P_i[y_i])^p + 1), shape [b].
Var sharpened_values(Var probs, const BatchView& batch) {
  Graph& g = probs.graph();
  const std::size_t b = batch.batch_size();
  Var abs_grad = sub(g.constant(Tensor({b}, 1.0)), pick(probs, batch.labels));
  const double p = sharpening_exponent(batch.old_classes, batch.new_classes);
  return log(add_scalar(pow_scalar(abs_grad, p), 1.0));
}

// numer / denom elementwise, with rows whose denominator is zero set to 1.
Var safe_ratio(Graph& g, Var numer, Var denom) {
  const Tensor& dv = denom.value();
  Tensor mask(dv.shape(), 0.0);
  bool any = false;
  for (std::size_t i = 0; i < dv.size(); ++i) {
    if (dv[i] == 0.0) {
      mask[i] = 1.0;
      any = true;
    }
  }
  if (!any) return div(numer, denom);
  Tensor keep(dv.shape(), 1.0);
  for (std::size_t i = 0; i < dv.size(); ++i) keep[i] -= mask[i];
  Var m = g.constant(mask);
  Var ratio = div(numer, add(denom, m));
  return add(mul(ratio, g.constant(keep)), m);
}

// Row-averaging matrix [groups.size(), b]: row r averages samples whose key is groups[r].
Tensor averaging_matrix(std::span<const std::size_t> groups, std::span<const std::size_t> key_of_sample) {
  const std::size_t b = key_of_sample.size();
  Tensor m({groups.size(), b}, 0.0);
  for (std::size_t r = 0; r < groups.size(); ++r) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < b; ++i) count += key_of_sample[i] == groups[r];
    if (count == 0) throw std::logic_error("averaging_matrix: empty group");
    for (std::size_t i = 0; i < b; ++i) {
      if (key_of_sample[i] == groups[r]) m[r * b + i] = 1.0 / static_cast<double>(count);
    }
  }
  return m;
}

std::vector<std::size_t> sample_tasks(const BatchView& batch) {
  std::vector<std::size_t> t(batch.batch_size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = batch.task_of_sample(i);
  return t;
}

}  // namespace

Var gfc_loss(Var probs, const BatchView& batch, const GradientStats& stats, const LossSwitches& switches) {
  Graph& g = probs.graph();
  const std::size_t b = batch.batch_size();
  if (probs.value().shape() != Shape{b, batch.total_classes()}) {
    throw ShapeError("gfc_loss: probs " + to_string(probs.value().shape()) + " do not match the batch");
  }
  Var nll = scale(log(pick(probs, batch.labels)), -1.0);
  if (switches.uniform_weights) return mean(nll);

  Var weights;
  if (switches.weight_stop_gradient) {
    std::vector<double> w = gfc_weights(batch, stats);
    weights = g.constant(Tensor({b}, std::move(w)));
  } else {
    // Each sample's weight is its sharpened value over the mean of its task.
    Var sharp = sharpened_values(probs, batch);
    const std::vector<std::size_t> tasks = sample_tasks(batch);
    Tensor same_task({b, b}, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
      const double n = static_cast<double>(stats.task_count.at(tasks[i]));
      for (std::size_t j = 0; j < b; ++j) {
        if (tasks[j] == tasks[i]) same_task[i * b + j] = 1.0 / n;
      }
    }
    Var task_mean = reshape(matmul(g.constant(same_task), reshape(sharp, {b, 1})), {b});
    weights = safe_ratio(g, sharp, task_mean);
  }
  return mean(mul(weights, nll));
}

Tensor relation_groundtruth(const BatchView& batch, RelationTarget mode) {
  if (batch.old_classes == 0 || batch.old_probs.empty()) {
    throw std::logic_error("relation_groundtruth: no old model predictions (first task)");
  }
  const std::size_t b = batch.batch_size();
  const std::size_t k = batch.total_classes();
  const std::size_t ko = batch.old_classes;
  Tensor y({b, k}, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    double* row = y.data().data() + i * k;
    row[batch.labels[i]] = 1.0;
    for (std::size_t j = 0; j < ko; ++j) row[j] = batch.old_probs[i * ko + j];
    if (mode == RelationTarget::renormalized) {
      double total = 0.0;
      for (std::size_t j = 0; j < k; ++j) total += row[j];
      for (std::size_t j = 0; j < k; ++j) row[j] /= total;
    }
  }
  return y;
}

RelationPrototypes relation_prototypes(Var probs, const BatchView& batch, const Tensor& relation_targets) {
  const std::size_t b = batch.batch_size();
  const std::size_t k = batch.total_classes();
  if (relation_targets.shape() != Shape{b, k}) {
    throw ShapeError("relation_prototypes: targets " + to_string(relation_targets.shape()) + " for batch " +
                     to_string(Shape{b, k}));
  }
  RelationPrototypes out;
  std::vector<std::size_t> sorted = batch.labels;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  out.classes = sorted;

  const Tensor avg = averaging_matrix(out.classes, batch.labels);
  Graph& g = probs.graph();
  out.student = matmul(g.constant(avg), probs);
  out.target = Tensor({out.classes.size(), k}, 0.0);
  for (std::size_t r = 0; r < out.classes.size(); ++r) {
    for (std::size_t i = 0; i < b; ++i) {
      const double a = avg[r * b + i];
      if (a == 0.0) continue;
      for (std::size_t j = 0; j < k; ++j) out.target[r * k + j] += a * relation_targets[i * k + j];
    }
  }
  out.source = probs;
  return out;
}

Var grd_loss(const RelationPrototypes& proto, const BatchView& batch, const GradientStats& stats,
             const LossSwitches& switches) {
  Graph& g = proto.student.graph();
  const std::size_t c = proto.classes.size();
  const double inv_k = 1.0 / static_cast<double>(batch.total_classes());

  Tensor log_target = proto.target;
  for (double& v : log_target.data()) v = std::log(std::max(v, kLogFloor));
  Var kl_rows;
  if (switches.kl_direction == KlDirection::student_first) {
    kl_rows = sum_axis(mul(proto.student, sub(log(proto.student), g.constant(log_target))), 1);
  } else {
    Tensor plogp(proto.target.shape());
    for (std::size_t i = 0; i < plogp.size(); ++i) plogp[i] = proto.target[i] * log_target[i];
    kl_rows = sum_axis(sub(g.constant(plogp), mul(g.constant(proto.target), log(proto.student))), 1);
  }

  if (switches.uniform_weights) return scale(sum(kl_rows), inv_k);

  Var weights;
  if (switches.weight_stop_gradient) {
    const auto w = grd_class_weights(batch, stats);
    Tensor wt({c});
    for (std::size_t r = 0; r < c; ++r) wt[r] = w.at(proto.classes[r]).value();
    weights = g.constant(std::move(wt));
  } else {
    if (!proto.source.valid()) throw std::logic_error("grd_loss: prototypes carry no source probabilities");
    const std::size_t b = batch.batch_size();
    Var sharp = reshape(sharpened_values(proto.source, batch), {b, 1});
    const Tensor class_avg = averaging_matrix(proto.classes, batch.labels);
    std::vector<std::size_t> class_tasks(c);
    for (std::size_t r = 0; r < c; ++r) class_tasks[r] = batch.class_task[proto.classes[r]];
    const std::vector<std::size_t> tasks = sample_tasks(batch);
    Tensor task_avg({c, b}, 0.0);
    for (std::size_t r = 0; r < c; ++r) {
      const double n = static_cast<double>(stats.task_count.at(class_tasks[r]));
      for (std::size_t i = 0; i < b; ++i) {
        if (tasks[i] == class_tasks[r]) task_avg[r * b + i] = 1.0 / n;
      }
    }
    Var numer = reshape(matmul(g.constant(class_avg), sharp), {c});
    Var denom = reshape(matmul(g.constant(task_avg), sharp), {c});
    weights = safe_ratio(g, numer, denom);
  }
  return scale(sum(mul(weights, kl_rows)), inv_k);
}

ObjectiveTerms objective(Var probs, const BatchView& batch, const GradientStats& stats, double alpha1, double alpha2,
                         const LossSwitches& switches) {
  Graph& g = probs.graph();
  ObjectiveTerms terms;
  terms.forgetting_compensation = gfc_loss(probs, batch, stats, switches);
  if (alpha2 != 0.0) {
    const Tensor targets = relation_groundtruth(batch, switches.relation_target);
    terms.relation_distillation = grd_loss(relation_prototypes(probs, batch, targets), batch, stats, switches);
  } else {
    terms.relation_distillation = g.constant(Tensor::scalar(0.0));
  }
  terms.total = add(scale(terms.forgetting_compensation, alpha1), scale(terms.relation_distillation, alpha2));
  return terms;
}

}  // namespace hfc
