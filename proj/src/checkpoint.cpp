#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>

#include "hfc/config.hpp"
#include "hfc/model.hpp"

// Layout (all integers little-endian):
//   "HFCM" | u32 version | u32 task_index | u32 config_len | config JSON bytes
//   | u32 param_count | per param: u32 name_len, name bytes, u32 rank,
//   u64 dims[rank], f64 values[prod(dims)]

namespace hfc {

namespace {

constexpr char kMagic[4] = {'H', 'F', 'C', 'M'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::istream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw std::runtime_error("checkpoint " + path.string() + ": truncated at byte " + std::to_string(in.tellg()));
  }
  return value;
}

std::string take_string(std::istream& in, std::size_t length, const std::filesystem::path& path) {
  std::string s(length, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(length))) {
    throw std::runtime_error("checkpoint " + path.string() + ": truncated string");
  }
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, std::size_t task_index) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(task_index));
  const std::string config = model_config_to_json(model.config()).dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(config.size()));
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  const ParameterStore& params = model.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.names()[i];
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Tensor& t = params[i];
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) {
    throw std::runtime_error("checkpoint " + path.string() + ": bad magic");
  }
  const auto version = take<std::uint32_t>(in, path);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  }
  const auto task_index = take<std::uint32_t>(in, path);
  const auto config_len = take<std::uint32_t>(in, path);
  const ModelConfig config = model_config_from_json(nlohmann::json::parse(take_string(in, config_len, path)), "model");
  ParameterStore params;
  const auto count = take<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = take_string(in, take<std::uint32_t>(in, path), path);
    const auto rank = take<std::uint32_t>(in, path);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<std::size_t>(take<std::uint64_t>(in, path)));
    Tensor t(shape);
    if (!in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw std::runtime_error("checkpoint " + path.string() + ": truncated values for '" + name + "'");
    }
    params.add(std::move(name), std::move(t));
  }
  return Checkpoint{load_model_parameters(config, std::move(params)), task_index};
}

}  // namespace hfc
