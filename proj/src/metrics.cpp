#include "hfc/metrics.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <stdexcept>
#include <string>
#include <thread>

#include "hfc/ops.hpp"

namespace hfc {

std::size_t argmax(std::span<const double> row) {
  if (row.empty()) throw std::invalid_argument("argmax: empty row");
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

namespace {

void check_scores(const Tensor& scores, std::span<const std::size_t> labels, const char* who) {
  if (scores.rank() != 2 || scores.dim(0) != labels.size()) {
    throw ShapeError(std::string(who) + ": scores " + to_string(scores.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw std::invalid_argument(std::string(who) + ": empty evaluation set");
}

}  // namespace

double top1(const Tensor& scores, std::span<const std::size_t> labels) {
  check_scores(scores, labels, "top1");
  const std::size_t k = scores.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += argmax(scores.data().subspan(i * k, k)) == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<double> per_class_accuracy(const Tensor& scores, std::span<const std::size_t> labels,
                                       std::size_t num_classes) {
  check_scores(scores, labels, "per_class_accuracy");
  const std::size_t k = scores.dim(1);
  std::vector<double> hits(num_classes, 0.0), counts(num_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    counts.at(labels[i]) += 1.0;
    hits[labels[i]] += argmax(scores.data().subspan(i * k, k)) == labels[i];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] > 0) hits[c] /= counts[c];
  }
  return hits;
}

double avg_incremental(std::span<const double> accuracies) {
  if (accuracies.empty()) throw std::invalid_argument("avg_incremental: no checkpoints");
  double s = 0.0;
  for (double a : accuracies) s += a;
  return s / static_cast<double>(accuracies.size());
}

double fh_checkpoint_term(const Tensor& probs, std::span<const std::size_t> labels,
                          std::span<const std::size_t> class_task) {
  check_scores(probs, labels, "fh_checkpoint_term");
  const std::size_t k = probs.dim(1);
  std::size_t tasks = 0;
  for (std::size_t t : class_task) tasks = std::max(tasks, t + 1);
  std::vector<double> mag(labels.size()), task_sum(tasks, 0.0), task_n(tasks, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    mag[i] = 1.0 - probs[i * k + labels[i]];
    if (labels[i] >= class_task.size()) throw std::out_of_range("fh_checkpoint_term: label without a task");
    const std::size_t t = class_task[labels[i]];
    task_sum[t] += mag[i];
    task_n[t] += 1.0;
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t t = class_task[labels[i]];
    const double dev = mag[i] - task_sum[t] / task_n[t];
    acc += dev * dev;
  }
  return acc / static_cast<double>(labels.size());
}

double forgetting_heterogeneity(std::span<const double> checkpoint_terms) {
  if (checkpoint_terms.empty()) throw std::invalid_argument("forgetting_heterogeneity: no checkpoints");
  double s = 0.0;
  for (double v : checkpoint_terms) s += v;
  return s / static_cast<double>(checkpoint_terms.size());
}

Tensor predict_probabilities(const Model& model, const Dataset& data, std::span<const std::size_t> indices,
                             std::size_t threads, std::size_t chunk) {
  const std::size_t k = model.num_classes();
  Tensor out({indices.size(), k});
  if (indices.empty()) return out;
  chunk = std::max<std::size_t>(chunk, 1);
  const std::size_t chunks = (indices.size() + chunk - 1) / chunk;
  auto work = [&](std::size_t first_chunk, std::size_t stride) {
    for (std::size_t c = first_chunk; c < chunks; c += stride) {
      const std::size_t begin = c * chunk;
      const std::size_t len = std::min(chunk, indices.size() - begin);
      const Tensor p = model.probabilities(data.batch(indices.subspan(begin, len)));
      std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(begin * k));
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, chunks);
  if (workers == 1) {
    work(0, 1);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          work(w, workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::size_t eval_threads_from_env() {
  const char* raw = std::getenv("HFC_THREADS");
  if (raw == nullptr || *raw == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(raw, &end, 10);
  if (*end != '\0' || v < 1) throw std::invalid_argument("HFC_THREADS must be a positive integer, got '" + std::string(raw) + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace hfc
