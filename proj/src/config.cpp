#include "hfc/config.hpp"

#include <fstream>
#include <set>

namespace hfc {

using nlohmann::json;

namespace {

// Reads the members of one JSON object and rejects anything left unread.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(display(), "expected an object");
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    const json* v = find(key);
    if (v == nullptr) return;
    out = convert<T>(*v, child(key));
  }

  void read_string(const std::string& key, std::string& out) { read(key, out); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(child(key), "unknown key");
    }
  }

  template <typename T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path, "expected a number");
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
      if (v.is_number_unsigned()) return static_cast<T>(v.get<std::uint64_t>());
      const auto x = v.get<std::int64_t>();
      if constexpr (std::is_unsigned_v<T>) {
        if (x < 0) throw ConfigError(path, "expected a nonnegative integer");
      }
      return static_cast<T>(x);
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Enum, typename Parse>
void read_enum(ObjectReader& r, const std::string& key, Enum& out, Parse parse) {
  std::string text;
  const json* v = r.find(key);
  if (v == nullptr) return;
  text = ObjectReader::convert<std::string>(*v, r.child(key));
  try {
    out = parse(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(r.child(key), e.what());
  }
}

DatasetConfig parse_dataset(const json& j) {
  DatasetConfig d;
  ObjectReader r(j, "dataset");
  r.read("kind", d.kind);
  r.read("num_classes", d.num_classes);
  r.read("train_per_class", d.train_per_class);
  r.read("test_per_class", d.test_per_class);
  r.read("side", d.side);
  r.read("channels", d.channels);
  r.read("noise_min", d.noise_min);
  r.read("noise_max", d.noise_max);
  if (const json* n = r.find("noise")) {
    if (!n->is_array()) throw ConfigError("dataset.noise", "expected an array");
    for (std::size_t i = 0; i < n->size(); ++i) {
      d.noise.push_back(ObjectReader::convert<double>((*n)[i], "dataset.noise[" + std::to_string(i) + "]"));
    }
  }
  r.read("train_path", d.train_path);
  r.read("test_path", d.test_path);
  r.read("hflip", d.hflip);
  r.finish();

  if (d.kind == "synthetic") {
    if (d.num_classes == 0) throw ConfigError("dataset.num_classes", "must be positive");
    if (d.train_per_class == 0) throw ConfigError("dataset.train_per_class", "must be positive");
    if (d.test_per_class == 0) throw ConfigError("dataset.test_per_class", "must be positive");
    if (d.side == 0) throw ConfigError("dataset.side", "must be positive");
    if (d.channels == 0) throw ConfigError("dataset.channels", "must be positive");
    if (!(d.noise_min >= 0.0)) throw ConfigError("dataset.noise_min", "must be nonnegative");
    if (!(d.noise_max >= d.noise_min)) throw ConfigError("dataset.noise_max", "must be at least noise_min");
    if (!d.noise.empty() && d.noise.size() != d.num_classes) {
      throw ConfigError("dataset.noise", "needs one entry per class");
    }
    for (double s : d.noise) {
      if (!(s >= 0.0)) throw ConfigError("dataset.noise", "entries must be nonnegative");
    }
    if (d.hflip) throw ConfigError("dataset.hflip", "only available for cifar100");
  } else if (d.kind == "cifar100") {
    if (d.train_path.empty()) throw ConfigError("dataset.train_path", "required for cifar100");
    if (d.test_path.empty()) throw ConfigError("dataset.test_path", "required for cifar100");
    d.num_classes = kCifarClasses;
    d.side = kCifarSide;
    d.channels = kCifarChannels;
  } else {
    throw ConfigError("dataset.kind", "expected \"synthetic\" or \"cifar100\", got \"" + d.kind + "\"");
  }
  return d;
}

}  // namespace

std::vector<double> DatasetConfig::noise_levels() const {
  return noise.empty() ? linspace(noise_min, noise_max, num_classes) : noise;
}

json model_config_to_json(const ModelConfig& c) {
  return json{{"image_side", c.image_side},   {"channels", c.channels},
              {"patch", c.patch},             {"dim", c.dim},
              {"heads", c.heads},             {"msa_blocks", c.msa_blocks},
              {"tsa_blocks", c.tsa_blocks},   {"mlp_ratio", c.mlp_ratio},
              {"num_classes", c.num_classes}, {"feature_source", std::string(to_string(c.feature_source))},
              {"init_std", c.init_std}};
}

ModelConfig model_config_from_json(const json& j, const std::string& path, ModelConfig c) {
  ObjectReader r(j, path);
  r.read("image_side", c.image_side);
  r.read("channels", c.channels);
  r.read("patch", c.patch);
  r.read("dim", c.dim);
  r.read("heads", c.heads);
  r.read("msa_blocks", c.msa_blocks);
  r.read("tsa_blocks", c.tsa_blocks);
  r.read("mlp_ratio", c.mlp_ratio);
  r.read("num_classes", c.num_classes);
  read_enum(r, "feature_source", c.feature_source, parse_feature_source);
  r.read("init_std", c.init_std);
  r.finish();
  ModelConfig probe = c;
  if (probe.num_classes == 0) probe.num_classes = 1;
  try {
    probe.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
  return c;
}

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  ObjectReader root(j, "");
  const json* version = root.find("version");
  if (version == nullptr) throw ConfigError("version", "required");
  c.version = ObjectReader::convert<int>(*version, "version");
  if (c.version != kConfigVersion) {
    throw ConfigError("version", "unsupported version " + std::to_string(c.version) + " (expected " +
                                     std::to_string(kConfigVersion) + ")");
  }
  root.read("name", c.name);
  root.read("seed", c.seed);
  root.read("output_dir", c.output_dir);
  if (const json* d = root.find("dataset")) c.dataset = parse_dataset(*d);
  if (const json* s = root.find("stream")) {
    ObjectReader r(*s, "stream");
    r.read("tasks", c.stream.tasks);
    r.read("base_percent", c.stream.base_percent);
    r.finish();
    if (c.stream.tasks == 0) throw ConfigError("stream.tasks", "must be positive");
    if (c.stream.base_percent != 0 && c.stream.base_percent != 50) {
      throw ConfigError("stream.base_percent", "must be 0 or 50");
    }
  }
  if (c.dataset.kind == "cifar100") {
    c.model.image_side = kCifarSide;
    c.model.channels = kCifarChannels;
    c.model.patch = 8;
  }
  if (const json* m = root.find("model")) c.model = model_config_from_json(*m, "model", c.model);
  if (const json* t = root.find("trainer")) {
    TrainerConfig& tr = c.trainer;
    ObjectReader r(*t, "trainer");
    r.read("alpha1", tr.alpha1);
    r.read("alpha2", tr.alpha2);
    r.read("lr", tr.lr);
    r.read("momentum", tr.momentum);
    r.read("epochs", tr.epochs);
    r.read("batch_size", tr.batch_size);
    if (const json* m = r.find("memory")) {
      ObjectReader mr(*m, "trainer.memory");
      read_enum(mr, "mode", tr.memory.mode, parse_memory_mode);
      mr.read("capacity", tr.memory.capacity);
      mr.read("per_class", tr.memory.per_class);
      mr.finish();
    }
    r.finish();
    try {
      tr.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("trainer", e.what());
    }
  }
  if (const json* l = root.find("losses")) {
    LossSwitches& s = c.trainer.losses;
    ObjectReader r(*l, "losses");
    read_enum(r, "relation_target", s.relation_target, parse_relation_target);
    read_enum(r, "kl_direction", s.kl_direction, parse_kl_direction);
    r.read("weight_stop_gradient", s.weight_stop_gradient);
    r.read("uniform_weights", s.uniform_weights);
    r.finish();
  }
  root.finish();

  if (c.model.image_side != c.dataset.side) {
    throw ConfigError("model.image_side", "is " + std::to_string(c.model.image_side) + " but the dataset side is " +
                                              std::to_string(c.dataset.side));
  }
  if (c.model.channels != c.dataset.channels) {
    throw ConfigError("model.channels", "is " + std::to_string(c.model.channels) + " but the dataset has " +
                                            std::to_string(c.dataset.channels));
  }
  c.trainer.seed = c.seed;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("malformed JSON: ") + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& c) {
  const DatasetConfig& d = c.dataset;
  json dataset{{"kind", d.kind}};
  if (d.kind == "synthetic") {
    dataset.update(json{{"num_classes", d.num_classes},
                        {"train_per_class", d.train_per_class},
                        {"test_per_class", d.test_per_class},
                        {"side", d.side},
                        {"channels", d.channels},
                        {"noise_min", d.noise_min},
                        {"noise_max", d.noise_max}});
    if (!d.noise.empty()) dataset["noise"] = d.noise;
  } else {
    dataset.update(json{{"train_path", d.train_path}, {"test_path", d.test_path}, {"hflip", d.hflip}});
  }
  const TrainerConfig& t = c.trainer;
  return json{
      {"version", c.version},
      {"name", c.name},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"dataset", dataset},
      {"stream", {{"tasks", c.stream.tasks}, {"base_percent", c.stream.base_percent}}},
      {"model", model_config_to_json(c.model)},
      {"trainer",
       {{"alpha1", t.alpha1},
        {"alpha2", t.alpha2},
        {"lr", t.lr},
        {"momentum", t.momentum},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"memory",
         {{"mode", std::string(to_string(t.memory.mode))},
          {"capacity", t.memory.capacity},
          {"per_class", t.memory.per_class}}}}},
      {"losses",
       {{"relation_target", std::string(to_string(t.losses.relation_target))},
        {"kl_direction", std::string(to_string(t.losses.kl_direction))},
        {"weight_stop_gradient", t.losses.weight_stop_gradient},
        {"uniform_weights", t.losses.uniform_weights}}},
  };
}

bool equivalent(const RunConfig& a, const RunConfig& b) {
  const TrainerConfig& x = a.trainer;
  const TrainerConfig& y = b.trainer;
  const bool losses_equal = x.losses.relation_target == y.losses.relation_target &&
                            x.losses.kl_direction == y.losses.kl_direction &&
                            x.losses.weight_stop_gradient == y.losses.weight_stop_gradient &&
                            x.losses.uniform_weights == y.losses.uniform_weights;
  const bool trainer_equal = x.alpha1 == y.alpha1 && x.alpha2 == y.alpha2 && x.lr == y.lr &&
                             x.momentum == y.momentum && x.epochs == y.epochs && x.batch_size == y.batch_size &&
                             x.seed == y.seed && x.memory == y.memory && losses_equal;
  return a.version == b.version && a.name == b.name && a.seed == b.seed && a.dataset == b.dataset &&
         a.stream == b.stream && a.model == b.model && trainer_equal && a.output_dir == b.output_dir;
}

TrainTestPair load_datasets(const RunConfig& c) {
  const DatasetConfig& d = c.dataset;
  if (d.kind == "cifar100") {
    TrainTestPair pair = load_cifar100_binary(d.train_path, d.test_path);
    if (d.hflip) {
      Dataset flipped = horizontal_flip(pair.train);
      pair.train.pixels.insert(pair.train.pixels.end(), flipped.pixels.begin(), flipped.pixels.end());
      pair.train.labels.insert(pair.train.labels.end(), flipped.labels.begin(), flipped.labels.end());
      pair.train.coarse_labels.insert(pair.train.coarse_labels.end(), flipped.coarse_labels.begin(),
                                      flipped.coarse_labels.end());
    }
    pair.train.validate();
    pair.test.validate();
    return pair;
  }
  SyntheticSpec spec;
  spec.num_classes = d.num_classes;
  spec.side = d.side;
  spec.channels = d.channels;
  spec.noise = d.noise_levels();
  spec.seed = derive_seed(c.seed, "dataset");
  spec.samples_per_class = d.train_per_class;
  spec.sample_stream = "train";
  TrainTestPair pair{generate_synthetic(spec), {}};
  spec.samples_per_class = d.test_per_class;
  spec.sample_stream = "test";
  pair.test = generate_synthetic(spec);
  return pair;
}

}  // namespace hfc
