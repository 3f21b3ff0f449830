#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>

#include "hfc/data.hpp"
#include "hfc/rng.hpp"

namespace hfc {

namespace {

constexpr std::size_t kWaves = 3;
constexpr double kLow = 0.15;
constexpr double kHigh = 0.85;

struct Wave {
  double fx, fy, phase, amplitude;
};

// Procedural pattern of one class: a few low-frequency plane waves per
// channel, rescaled so the identity grid spans [kLow, kHigh].
struct Pattern {
  std::vector<std::vector<Wave>> channels;
  std::vector<double> offset, gain;

  double raw(std::size_t c, double u, double v) const {
    double s = 0.0;
    for (const Wave& w : channels[c]) {
      s += w.amplitude * std::cos(2.0 * std::numbers::pi * (w.fx * u + w.fy * v) + w.phase);
    }
    return s;
  }
  double at(std::size_t c, double u, double v) const { return kLow + gain[c] * (raw(c, u, v) - offset[c]); }
};

double grid_coord(std::size_t i, std::size_t side) {
  return (static_cast<double>(i) + 0.5) / static_cast<double>(side) - 0.5;
}

Pattern make_pattern(const SyntheticSpec& spec, std::size_t cls) {
  Rng rng = make_rng(spec.seed, "dataset/template/" + std::to_string(cls));
  Pattern p;
  p.channels.resize(spec.channels);
  for (auto& waves : p.channels) {
    for (std::size_t k = 0; k < kWaves; ++k) {
      Wave w{};
      do {
        w.fx = static_cast<double>(uniform_index(rng, 5)) - 2.0;
        w.fy = static_cast<double>(uniform_index(rng, 5)) - 2.0;
      } while (w.fx == 0.0 && w.fy == 0.0);
      w.phase = 2.0 * std::numbers::pi * uniform01(rng);
      w.amplitude = 0.5 + 0.5 * uniform01(rng);
      waves.push_back(w);
    }
  }
  for (std::size_t c = 0; c < spec.channels; ++c) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t y = 0; y < spec.side; ++y) {
      for (std::size_t x = 0; x < spec.side; ++x) {
        const double r = p.raw(c, grid_coord(x, spec.side), grid_coord(y, spec.side));
        lo = std::min(lo, r);
        hi = std::max(hi, r);
      }
    }
    p.offset.push_back(lo);
    p.gain.push_back(hi > lo ? (kHigh - kLow) / (hi - lo) : 0.0);
  }
  return p;
}

void check_spec(const SyntheticSpec& spec) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("synthetic spec: " + what); };
  if (spec.num_classes == 0) fail("num_classes must be positive");
  if (spec.samples_per_class == 0) fail("samples_per_class must be positive");
  if (spec.side == 0 || spec.channels == 0) fail("image extents must be positive");
  if (spec.noise.size() != spec.num_classes) {
    fail("noise has " + std::to_string(spec.noise.size()) + " entries for " + std::to_string(spec.num_classes) +
         " classes");
  }
  for (double s : spec.noise) {
    if (!(s >= 0.0) || !std::isfinite(s)) fail("noise levels must be finite and nonnegative");
  }
}

}  // namespace

std::vector<double> linspace(double first, double last, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = n == 1 ? first : first + (last - first) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return out;
}

Tensor synthetic_template(const SyntheticSpec& spec, std::size_t cls) {
  check_spec(spec);
  const Pattern p = make_pattern(spec, cls);
  Tensor out({spec.channels, spec.side, spec.side});
  std::size_t i = 0;
  for (std::size_t c = 0; c < spec.channels; ++c) {
    for (std::size_t y = 0; y < spec.side; ++y) {
      for (std::size_t x = 0; x < spec.side; ++x) {
        out[i++] = std::clamp(p.at(c, grid_coord(x, spec.side), grid_coord(y, spec.side)), 0.0, 1.0);
      }
    }
  }
  return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  check_spec(spec);
  Dataset d;
  d.channels = spec.channels;
  d.side = spec.side;
  d.num_classes = spec.num_classes;
  d.provenance = "synthetic:" + std::to_string(spec.seed) + ":" + spec.sample_stream;
  const std::size_t n = d.image_size();
  d.pixels.reserve(spec.num_classes * spec.samples_per_class * n);

  for (std::size_t cls = 0; cls < spec.num_classes; ++cls) {
    const Pattern p = make_pattern(spec, cls);
    const double sigma = spec.noise[cls];
    Rng rng = make_rng(spec.seed, "dataset/" + spec.sample_stream + "/" + std::to_string(cls));
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      // Inverse affine map from output pixel to pattern coordinates.
      const double angle = normal(rng, 0.0, sigma);
      const double zoom = 1.0 + normal(rng, 0.0, 0.5 * sigma);
      const double shift_x = normal(rng, 0.0, 0.25 * sigma);
      const double shift_y = normal(rng, 0.0, 0.25 * sigma);
      const double cs = std::cos(angle) / zoom, sn = std::sin(angle) / zoom;
      for (std::size_t c = 0; c < spec.channels; ++c) {
        for (std::size_t y = 0; y < spec.side; ++y) {
          for (std::size_t x = 0; x < spec.side; ++x) {
            const double gx = grid_coord(x, spec.side), gy = grid_coord(y, spec.side);
            const double u = cs * gx - sn * gy + shift_x;
            const double v = sn * gx + cs * gy + shift_y;
            d.pixels.push_back(std::clamp(p.at(c, u, v) + normal(rng, 0.0, sigma), 0.0, 1.0));
          }
        }
      }
      d.labels.push_back(cls);
    }
  }
  return d;
}

// Flat layout, little-endian:
//   "HFCD" | u32 version | u32 count | u32 num_classes | u32 side | u32 channels
//   | u32 labels[count] | u8 pixels[count * channels * side * side]
namespace {

constexpr char kFlatMagic[4] = {'H', 'F', 'C', 'D'};
constexpr std::uint32_t kFlatVersion = 1;

static_assert(std::endian::native == std::endian::little, "flat dataset IO assumes a little-endian host");

void put_u32(std::ostream& out, std::size_t v) {
  const auto x = static_cast<std::uint32_t>(v);
  out.write(reinterpret_cast<const char*>(&x), 4);
}

std::uint32_t get_u32(std::istream& in, const std::filesystem::path& path) {
  std::uint32_t x = 0;
  if (!in.read(reinterpret_cast<char*>(&x), 4)) throw std::runtime_error(path.string() + ": truncated header");
  return x;
}

}  // namespace

void write_flat_dataset(const std::filesystem::path& path, const Dataset& data) {
  data.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kFlatMagic, 4);
  put_u32(out, kFlatVersion);
  put_u32(out, data.size());
  put_u32(out, data.num_classes);
  put_u32(out, data.side);
  put_u32(out, data.channels);
  for (std::size_t label : data.labels) put_u32(out, label);
  std::vector<char> bytes(data.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<char>(static_cast<std::uint8_t>(std::lround(std::clamp(data.pixels[i], 0.0, 1.0) * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Dataset read_flat_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kFlatMagic)) {
    throw std::runtime_error(path.string() + ": not a flat dataset (bad magic)");
  }
  const std::uint32_t version = get_u32(in, path);
  if (version != kFlatVersion) throw std::runtime_error(path.string() + ": unsupported version " + std::to_string(version));
  Dataset d;
  const std::uint32_t count = get_u32(in, path);
  d.num_classes = get_u32(in, path);
  d.side = get_u32(in, path);
  d.channels = get_u32(in, path);
  d.provenance = "flat:" + path.filename().string();
  d.labels.resize(count);
  for (auto& label : d.labels) label = get_u32(in, path);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(count) * d.image_size());
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw std::runtime_error(path.string() + ": truncated pixel block");
  }
  d.pixels.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) d.pixels[i] = bytes[i] / 255.0;
  d.validate();
  return d;
}

}  // namespace hfc
