#include <cmath>
#include <limits>
#include <string>

#include "hfc/continual.hpp"

namespace hfc {

std::vector<std::size_t> herding_select(const Tensor& features, std::size_t m) {
  if (features.rank() != 2) throw ShapeError("herding_select: features " + to_string(features.shape()) + " not 2-D");
  const std::size_t n = features.dim(0);
  const std::size_t d = features.dim(1);
  if (n == 0) throw std::invalid_argument("herding_select: empty class");
  if (m > n) throw std::invalid_argument("herding_select: quota " + std::to_string(m) + " exceeds " + std::to_string(n));

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) mean[k] += features[i * d + k];
  }
  for (double& v : mean) v /= static_cast<double>(n);

  std::vector<double> running(d, 0.0);
  std::vector<bool> taken(n, false);
  std::vector<std::size_t> order;
  order.reserve(m);
  for (std::size_t j = 1; j <= m; ++j) {
    std::size_t best = n;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = mean[k] - (running[k] + features[i * d + k]) / static_cast<double>(j);
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = i;
      }
    }
    taken[best] = true;
    order.push_back(best);
    for (std::size_t k = 0; k < d; ++k) running[k] += features[best * d + k];
  }
  return order;
}

std::string_view to_string(MemoryMode mode) {
  return mode == MemoryMode::per_class_quota ? "per_class_quota" : "fixed_total";
}

MemoryMode parse_memory_mode(std::string_view text) {
  if (text == "fixed_total") return MemoryMode::fixed_total;
  if (text == "per_class_quota") return MemoryMode::per_class_quota;
  throw std::invalid_argument("unknown memory mode '" + std::string(text) + "'");
}

std::size_t ExemplarMemory::quota(std::size_t total_classes) const {
  if (config_.mode == MemoryMode::per_class_quota) return config_.per_class;
  if (total_classes == 0) throw std::invalid_argument("memory quota: no classes");
  return config_.capacity / total_classes;
}

void ExemplarMemory::update(std::span<const ClassCandidates> new_classes, std::size_t total_classes) {
  const std::size_t m = quota(total_classes);
  if (config_.mode == MemoryMode::fixed_total) {
    for (auto& [cls, list] : lists_) {
      if (list.size() > m) list.resize(m);
    }
  }
  for (const ClassCandidates& c : new_classes) {
    if (c.features.rank() != 2 || c.features.dim(0) != c.samples.size()) {
      throw ShapeError("memory update: class " + std::to_string(c.class_index) + " has " +
                       std::to_string(c.samples.size()) + " samples but features " + to_string(c.features.shape()));
    }
    const std::vector<std::size_t> picked = herding_select(c.features, std::min(m, c.samples.size()));
    std::vector<std::size_t>& list = lists_[c.class_index];
    list.clear();
    for (std::size_t row : picked) list.push_back(c.samples[row]);
  }
}

std::vector<std::size_t> ExemplarMemory::all() const {
  std::vector<std::size_t> out;
  for (const auto& [cls, list] : lists_) out.insert(out.end(), list.begin(), list.end());
  return out;
}

std::size_t ExemplarMemory::total() const {
  std::size_t n = 0;
  for (const auto& [cls, list] : lists_) n += list.size();
  return n;
}

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, std::vector<Tensor>& velocity, double lr,
              double momentum, std::span<const std::string> names) {
  if (params.size() != grads.size()) throw std::invalid_argument("sgd_step: parameter and gradient counts differ");
  auto label = [&](std::size_t i) { return i < names.size() ? names[i] : "#" + std::to_string(i); };
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) {
      throw ShapeError("sgd_step: " + label(i) + " is " + to_string(params[i].shape()) + " but its gradient is " +
                       to_string(grads[i].shape()));
    }
    for (double g : grads[i].data()) {
      if (!std::isfinite(g)) throw NonFiniteGradient("non-finite gradient for parameter " + label(i));
    }
  }
  if (velocity.size() != params.size()) {
    velocity.clear();
    for (const Tensor& p : params) velocity.emplace_back(p.shape(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    // Grown parameters (the classifier) restart their velocity.
    if (velocity[i].shape() != params[i].shape()) velocity[i] = Tensor(params[i].shape(), 0.0);
    auto p = params[i].data();
    auto v = velocity[i].data();
    const auto g = grads[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = momentum * v[k] + g[k];
      p[k] -= lr * v[k];
    }
  }
}

}  // namespace hfc
