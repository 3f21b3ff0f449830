#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hfc/tensor.hpp"

namespace hfc {

/// Images stored sample-major as channels × side × side reals in [0, 1].
struct Dataset {
  std::size_t channels = 1;
  std::size_t side = 16;
  std::size_t num_classes = 0;
  std::vector<double> pixels;
  std::vector<std::size_t> labels;
  /// CIFAR-100 superclass byte per record; empty for other sources.
  std::vector<std::uint8_t> coarse_labels;
  std::string provenance;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t image_size() const noexcept { return channels * side * side; }

  /// [indices.size(), C, S, S] copy of the selected images.
  Tensor batch(std::span<const std::size_t> indices) const;
  /// Sample indices grouped by label, ascending within each class.
  std::vector<std::vector<std::size_t>> indices_by_class() const;

  /// Throws std::invalid_argument on inconsistent extents or labels.
  void validate() const;
};

struct SyntheticSpec {
  std::size_t num_classes = 10;
  std::size_t samples_per_class = 40;
  std::size_t side = 16;
  std::size_t channels = 1;
  /// Per-class noise level σ_c; scales pixel noise and geometric jitter.
  std::vector<double> noise;
  std::uint64_t seed = 0;
  /// Name of the sample stream. Train and test sets share templates (they
  /// depend only on `seed`) and differ in this name.
  std::string sample_stream = "train";
};

/// n evenly spaced values from first to last inclusive.
std::vector<double> linspace(double first, double last, std::size_t n);

/// The noise-free pattern of class `cls`, [C, S, S].
Tensor synthetic_template(const SyntheticSpec& spec, std::size_t cls);
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Flat binary export of a dataset; pixels are quantized to bytes.
void write_flat_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_flat_dataset(const std::filesystem::path& path);

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarChannels = 3;
inline constexpr std::size_t kCifarClasses = 100;
inline constexpr std::size_t kCifarRecordBytes = 2 + kCifarChannels * kCifarSide * kCifarSide;

/// Parses CIFAR-100 binary records. Throws std::runtime_error naming the byte
/// offset of the first bad record, or the size when it is not a multiple of
/// the record length.
Dataset parse_cifar100(std::span<const std::uint8_t> bytes, std::string provenance = "cifar100");
Dataset load_cifar100_file(const std::filesystem::path& path);

struct TrainTestPair {
  Dataset train;
  Dataset test;
};
TrainTestPair load_cifar100_binary(const std::filesystem::path& train_path, const std::filesystem::path& test_path);

/// Inverse of parse_cifar100: pixels become round(x·255).
std::vector<std::uint8_t> serialize_cifar100(const Dataset& data);

/// Mirrors every image left to right.
Dataset horizontal_flip(const Dataset& data);

/// Class-incremental split of a label space.
///
/// Global class index g is the position of a dataset label in the seeded
/// class order, so the first task owns indices 0..K1-1, the second the next
/// block, and so on.
struct TaskStream {
  std::vector<std::vector<std::size_t>> tasks;  ///< global class indices per task
  std::vector<std::size_t> order;               ///< dataset label at each global index
  std::vector<std::size_t> global_of;           ///< global index of each dataset label
  std::vector<std::size_t> class_task;          ///< task of each global index
  unsigned base_percent = 0;
  std::uint64_t seed = 0;

  std::size_t num_tasks() const noexcept { return tasks.size(); }
  std::size_t num_classes() const noexcept { return order.size(); }
  /// Classes seen after finishing task `t` (0-based).
  std::size_t classes_through(std::size_t t) const;
};

/// `base_percent` is 0 (T equal tasks) or 50 (half the classes first, then T
/// equal tasks). Throws std::invalid_argument when the classes do not divide.
TaskStream split_tasks(std::size_t num_classes, std::size_t tasks, unsigned base_percent, std::uint64_t seed);

/// Copy of `data` with labels rewritten to global class indices.
Dataset relabel(const Dataset& data, const TaskStream& stream);

}  // namespace hfc
