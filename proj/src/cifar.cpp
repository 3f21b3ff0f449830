#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

#include "hfc/data.hpp"

namespace hfc {

Dataset parse_cifar100(std::span<const std::uint8_t> bytes, std::string provenance) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw std::runtime_error(provenance + ": size " + std::to_string(bytes.size()) + " is not a multiple of " +
                             std::to_string(kCifarRecordBytes) + " (trailing record at offset " +
                             std::to_string(bytes.size() - bytes.size() % kCifarRecordBytes) + ")");
  }
  const std::size_t count = bytes.size() / kCifarRecordBytes;
  const std::size_t pixels = kCifarRecordBytes - 2;
  Dataset d;
  d.channels = kCifarChannels;
  d.side = kCifarSide;
  d.num_classes = kCifarClasses;
  d.provenance = std::move(provenance);
  d.labels.resize(count);
  d.coarse_labels.resize(count);
  d.pixels.resize(count * pixels);
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t offset = r * kCifarRecordBytes;
    const std::uint8_t fine = bytes[offset + 1];
    if (fine >= kCifarClasses) {
      throw std::runtime_error(d.provenance + ": fine label " + std::to_string(fine) + " at byte offset " +
                               std::to_string(offset + 1) + " (record " + std::to_string(r) + ")");
    }
    d.coarse_labels[r] = bytes[offset];
    d.labels[r] = fine;
    for (std::size_t i = 0; i < pixels; ++i) d.pixels[r * pixels + i] = bytes[offset + 2 + i] / 255.0;
  }
  return d;
}

Dataset load_cifar100_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_cifar100(bytes, path.string());
}

TrainTestPair load_cifar100_binary(const std::filesystem::path& train_path, const std::filesystem::path& test_path) {
  return {load_cifar100_file(train_path), load_cifar100_file(test_path)};
}

std::vector<std::uint8_t> serialize_cifar100(const Dataset& data) {
  if (data.channels != kCifarChannels || data.side != kCifarSide) {
    throw std::invalid_argument("serialize_cifar100: images must be 3x32x32");
  }
  const std::size_t pixels = kCifarRecordBytes - 2;
  std::vector<std::uint8_t> out;
  out.reserve(data.size() * kCifarRecordBytes);
  for (std::size_t r = 0; r < data.size(); ++r) {
    if (data.labels[r] >= kCifarClasses) throw std::invalid_argument("serialize_cifar100: label out of range");
    out.push_back(data.coarse_labels.empty() ? 0 : data.coarse_labels[r]);
    out.push_back(static_cast<std::uint8_t>(data.labels[r]));
    for (std::size_t i = 0; i < pixels; ++i) {
      const double v = std::clamp(data.pixels[r * pixels + i], 0.0, 1.0);
      out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
  }
  return out;
}

Dataset horizontal_flip(const Dataset& data) {
  Dataset out = data;
  const std::size_t s = data.side;
  for (std::size_t img = 0; img < data.size() * data.channels; ++img) {
    double* plane = out.pixels.data() + img * s * s;
    for (std::size_t y = 0; y < s; ++y) std::reverse(plane + y * s, plane + (y + 1) * s);
  }
  return out;
}

}  // namespace hfc
