#include <algorithm>
#include <chrono>
#include <optional>
#include <string>

#include "hfc/continual.hpp"
#include "hfc/ops.hpp"
#include "hfc/rng.hpp"

namespace hfc {

void TrainerConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("trainer: " + what); };
  if (!(alpha1 >= 0.0) || !(alpha2 >= 0.0)) fail("alpha1 and alpha2 must be nonnegative");
  if (!(lr >= 0.0)) fail("lr must be nonnegative");
  if (!(momentum >= 0.0) || momentum >= 1.0) fail("momentum must lie in [0, 1)");
  if (batch_size == 0) fail("batch_size must be at least 1");
  if (eval_threads == 0) fail("eval_threads must be at least 1");
  if (memory.mode == MemoryMode::fixed_total && memory.capacity == 0) fail("memory capacity must be positive");
}

namespace {

Tensor features_of(const Model& model, const Dataset& data, std::span<const std::size_t> indices) {
  constexpr std::size_t kChunk = 64;
  const std::size_t f = model.config().feature_dim();
  Tensor out({indices.size(), f});
  for (std::size_t begin = 0; begin < indices.size(); begin += kChunk) {
    const std::size_t len = std::min(kChunk, indices.size() - begin);
    const Tensor part = model.features(data.batch(indices.subspan(begin, len)));
    std::copy(part.data().begin(), part.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(begin * f));
  }
  return out;
}

struct EpochResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

class TaskTrainer {
 public:
  TaskTrainer(const TaskStream& stream, const Dataset& train, Model& model, const TrainerConfig& config, Rng& batch_rng)
      : stream_(stream), train_(train), model_(model), config_(config), batch_rng_(batch_rng) {}

  EpochResult epoch(std::vector<std::size_t>& pool, std::size_t t, const FrozenModel* old,
                    std::vector<Tensor>& velocity) {
    shuffle(pool, batch_rng_);
    const std::size_t k_total = model_.num_classes();
    const std::size_t k_new = stream_.tasks[t].size();
    const std::vector<std::size_t> class_task(stream_.class_task.begin(),
                                              stream_.class_task.begin() + static_cast<std::ptrdiff_t>(k_total));
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t begin = 0; begin < pool.size(); begin += config_.batch_size) {
      const std::size_t len = std::min(config_.batch_size, pool.size() - begin);
      const std::span<const std::size_t> idx(pool.data() + begin, len);
      const Tensor images = train_.batch(idx);
      std::vector<std::size_t> labels(len);
      for (std::size_t i = 0; i < len; ++i) labels[i] = train_.labels[idx[i]];

      Graph g;
      const BoundParameters bound = model_.bind(g);
      const ForwardResult fwd = model_.forward(g, bound, images);
      Var probs = softmax(fwd.logits, 1);
      Var loss;
      if (old == nullptr) {
        loss = ce_loss(probs, labels);
      } else {
        BatchView view;
        view.probs = probs.value();
        view.old_probs = old->probabilities(images);
        view.labels = labels;
        view.class_task = class_task;
        view.old_classes = k_total - k_new;
        view.new_classes = k_new;
        const GradientStats stats = gradient_stats(view);
        loss = objective(probs, view, stats, config_.alpha1, config_.alpha2, config_.losses).total;
      }
      g.backward(loss);

      std::vector<Tensor> grads;
      grads.reserve(bound.vars.size());
      for (const Var& v : bound.vars) grads.push_back(v.grad());
      sgd_step(model_.parameters().values(), grads, velocity, config_.lr, config_.momentum, model_.parameters().names());

      loss_sum += loss.value().item() * static_cast<double>(len);
      const std::size_t k = probs.value().dim(1);
      for (std::size_t i = 0; i < len; ++i) hits += argmax(probs.value().data().subspan(i * k, k)) == labels[i];
    }
    const double n = static_cast<double>(pool.size());
    return {loss_sum / n, static_cast<double>(hits) / n};
  }

 private:
  const TaskStream& stream_;
  const Dataset& train_;
  Model& model_;
  const TrainerConfig& config_;
  Rng& batch_rng_;
};

}  // namespace

RunReport run_stream(const TaskStream& stream, const Dataset& train_raw, const Dataset& test_raw, Model& model,
                     const TrainerConfig& config, const StreamObserver& observer) {
  const auto started = std::chrono::steady_clock::now();
  config.validate();
  if (stream.num_tasks() == 0) throw std::invalid_argument("run_stream: empty task stream");
  if (model.num_classes() != stream.tasks[0].size()) {
    throw std::invalid_argument("run_stream: model has " + std::to_string(model.num_classes()) +
                                " classes but the first task has " + std::to_string(stream.tasks[0].size()));
  }
  const Dataset train = relabel(train_raw, stream);
  const Dataset test = relabel(test_raw, stream);
  const auto train_by_class = train.indices_by_class();
  const auto test_by_class = test.indices_by_class();

  Rng batch_rng = make_rng(config.seed, "batching");
  Rng grow_rng = make_rng(config.seed, "init/classifier");
  TaskTrainer trainer(stream, train, model, config, batch_rng);
  ExemplarMemory memory(config.memory);
  std::optional<FrozenModel> old;
  RunReport report;
  std::vector<double> accuracies, fh_terms;

  for (std::size_t t = 0; t < stream.num_tasks(); ++t) {
    try {
      const std::vector<std::size_t>& classes = stream.tasks[t];
      if (t > 0) model.expand_classifier(classes.size(), grow_rng);
      if (observer.on_task_begin) observer.on_task_begin(t, model, old ? &*old : nullptr);

      std::vector<std::size_t> pool;
      for (std::size_t c : classes) pool.insert(pool.end(), train_by_class[c].begin(), train_by_class[c].end());
      const std::vector<std::size_t> replay = memory.all();
      pool.insert(pool.end(), replay.begin(), replay.end());

      TaskMetrics m;
      m.task_index = t + 1;
      m.seen_classes = model.num_classes();
      std::vector<Tensor> velocity;
      for (std::size_t e = 0; e < config.epochs; ++e) {
        const EpochResult r = trainer.epoch(pool, t, old ? &*old : nullptr, velocity);
        m.epoch_losses.push_back(r.loss);
        m.epoch_train_accuracy.push_back(r.accuracy);
      }

      std::vector<std::size_t> seen_test;
      for (std::size_t c = 0; c < m.seen_classes; ++c) {
        seen_test.insert(seen_test.end(), test_by_class[c].begin(), test_by_class[c].end());
      }
      const Tensor probs = predict_probabilities(model, test, seen_test, config.eval_threads);
      std::vector<std::size_t> labels(seen_test.size());
      for (std::size_t i = 0; i < seen_test.size(); ++i) labels[i] = test.labels[seen_test[i]];
      m.top1 = top1(probs, labels);
      m.per_class_accuracy = per_class_accuracy(probs, labels, m.seen_classes);
      m.fh_term = fh_checkpoint_term(probs, labels, stream.class_task);
      accuracies.push_back(m.top1);
      fh_terms.push_back(m.fh_term);
      m.avg_incremental = avg_incremental(accuracies);
      m.fh = forgetting_heterogeneity(fh_terms);

      std::vector<ClassCandidates> candidates;
      for (std::size_t c : classes) {
        candidates.push_back({c, train_by_class[c], features_of(model, train, train_by_class[c])});
      }
      memory.update(candidates, m.seen_classes);
      old.emplace(snapshot_old_model(model));
      if (!config.checkpoint_dir.empty()) {
        save_checkpoint(config.checkpoint_dir / ("task_" + std::to_string(t + 1) + ".ckpt"), model, t + 1);
      }
      if (observer.on_task_end) observer.on_task_end(t, model, *old, memory);
      report.tasks.push_back(std::move(m));
    } catch (const TaskError&) {
      throw;
    } catch (const std::exception& e) {
      throw TaskError(t + 1, e.what());
    }
  }
  report.avg_incremental = accuracies.empty() ? 0.0 : avg_incremental(accuracies);
  report.fh = fh_terms.empty() ? 0.0 : forgetting_heterogeneity(fh_terms);
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace hfc
