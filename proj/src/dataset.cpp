#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <string>

#include "hfc/data.hpp"

namespace hfc {

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t n = image_size();
  Tensor out({indices.size(), channels, side, side});
  double* dst = out.data().data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) {
      throw std::out_of_range("dataset batch: sample " + std::to_string(indices[i]) + " of " + std::to_string(size()));
    }
    std::memcpy(dst + i * n, pixels.data() + indices[i] * n, n * sizeof(double));
  }
  return out;
}

std::vector<std::vector<std::size_t>> Dataset::indices_by_class() const {
  std::vector<std::vector<std::size_t>> groups(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) groups.at(labels[i]).push_back(i);
  return groups;
}

void Dataset::validate() const {
  auto fail = [this](const std::string& what) {
    throw std::invalid_argument("dataset '" + provenance + "': " + what);
  };
  if (channels == 0 || side == 0) fail("empty image extents");
  if (pixels.size() != labels.size() * image_size()) {
    fail(std::to_string(pixels.size()) + " pixel values for " + std::to_string(labels.size()) + " images of " +
         std::to_string(image_size()));
  }
  if (!coarse_labels.empty() && coarse_labels.size() != labels.size()) fail("coarse label count mismatch");
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      fail("label " + std::to_string(labels[i]) + " at sample " + std::to_string(i) + " outside " +
           std::to_string(num_classes) + " classes");
    }
    ++counts[labels[i]];
  }
  const auto empty = std::find(counts.begin(), counts.end(), 0);
  if (empty != counts.end()) fail("class " + std::to_string(empty - counts.begin()) + " has no samples");
}

}  // namespace hfc
