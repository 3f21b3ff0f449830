#include "hfc/model.hpp"

#include <cmath>
#include <stdexcept>

#include "hfc/ops.hpp"

namespace hfc {

std::string_view to_string(FeatureSource source) {
  switch (source) {
    case FeatureSource::task_embedding: return "task_embedding";
    case FeatureSource::class_token: return "class_token";
    case FeatureSource::concat: return "concat";
  }
  return "task_embedding";
}

FeatureSource parse_feature_source(std::string_view text) {
  if (text == "task_embedding") return FeatureSource::task_embedding;
  if (text == "class_token") return FeatureSource::class_token;
  if (text == "concat") return FeatureSource::concat;
  throw std::invalid_argument("unknown feature source '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (image_side == 0 || channels == 0 || patch == 0) fail("image_side, channels and patch must be positive");
  if (image_side % patch != 0) fail("image_side " + std::to_string(image_side) + " not divisible by patch " + std::to_string(patch));
  if (dim == 0 || heads == 0) fail("dim and heads must be positive");
  if (dim % heads != 0) fail("dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  if (mlp_ratio == 0) fail("mlp_ratio must be positive");
  if (num_classes == 0) fail("num_classes must be positive");
  if (feature_source != FeatureSource::class_token && tsa_blocks == 0) fail("tsa_blocks must be positive");
  if (!(init_std >= 0.0)) fail("init_std must be nonnegative");
}

std::size_t ParameterStore::add(std::string name, Tensor value) {
  if (lookup_.contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  lookup_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::size_t ParameterStore::index(std::string_view name) const {
  auto it = lookup_.find(std::string(name));
  if (it == lookup_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return it->second;
}

bool ParameterStore::contains(std::string_view name) const { return lookup_.contains(std::string(name)); }

namespace {

Tensor random_normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = normal(rng, 0.0, stddev);
  return t;
}

}  // namespace

Var mlp_block(const MlpVars& p, Var x) {
  Var h = layer_norm(x, p.norm_gain, p.norm_bias);
  h = gelu(linear(h, p.fc1_weight, p.fc1_bias));
  return linear(h, p.fc2_weight, p.fc2_bias);
}

namespace {

// Multi-head attention of queries q [B, R, D] over keys/values [B, T, D].
Var attend(Var q, Var k, Var v, std::size_t heads, AttentionTrace* trace) {
  const std::size_t dim = q.value().shape().back();
  if (dim % heads != 0) throw ShapeError("attention: dim " + std::to_string(dim) + " not divisible by heads");
  const std::size_t d = dim / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Var> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? q : slice(q, 2, h * d, d);
    Var kh = heads == 1 ? k : slice(k, 2, h * d, d);
    Var vh = heads == 1 ? v : slice(v, 2, h * d, d);
    Var weights = softmax(scale(bmm(qh, kh, true), inv_sqrt_d), 2);
    if (trace) trace->push_back(weights.value());
    outputs.push_back(bmm(weights, vh));
  }
  return heads == 1 ? outputs.front() : concat(outputs, 2);
}

void require_tokens(const char* block, const Shape& shape, std::size_t dim) {
  if (shape.size() != 3 || shape[2] != dim) {
    throw ShapeError(std::string(block) + ": expected [B, T, " + std::to_string(dim) + "], got " + to_string(shape));
  }
}

}  // namespace

Var msa_block(const MsaVars& p, Var z, std::size_t heads, AttentionTrace* trace) {
  const std::size_t dim = p.query.value().dim(0);
  require_tokens("msa_block", z.value().shape(), dim);
  Var h = layer_norm(z, p.norm_gain, p.norm_bias);
  Var attended = attend(linear(h, p.query), linear(h, p.key), linear(h, p.value), heads, trace);
  Var m = add(z, linear(attended, p.output));
  return add(m, mlp_block(p.mlp, m));
}

Var tsa_block(const TsaVars& p, Var e, Var z, std::size_t heads, AttentionTrace* trace) {
  const std::size_t dim = p.query.value().dim(0);
  require_tokens("tsa_block", z.value().shape(), dim);
  const Shape& es = e.value().shape();
  if (es.size() != 3 || es[0] != z.value().dim(0) || es[1] != 1 || es[2] != dim) {
    throw ShapeError("tsa_block: embedding " + to_string(es) + " does not match tokens " + to_string(z.value().shape()));
  }
  Var en = layer_norm(e, p.embed_norm_gain, p.embed_norm_bias);
  Var zn = layer_norm(z, p.token_norm_gain, p.token_norm_bias);
  Var attended = attend(linear(en, p.query), linear(zn, p.key), linear(zn, p.value), heads, trace);
  Var t = linear(attended, p.output);
  return add(t, mlp_block(p.mlp, t));
}

Tensor patchify(const Tensor& images, const ModelConfig& config) {
  const Shape expected{images.rank() == 4 ? images.dim(0) : 0, config.channels, config.image_side, config.image_side};
  if (images.rank() != 4 || images.shape() != expected) {
    throw ShapeError("patchify: images " + to_string(images.shape()) + " do not match [B, " +
                     std::to_string(config.channels) + ", " + std::to_string(config.image_side) + ", " +
                     std::to_string(config.image_side) + "]");
  }
  const std::size_t batch = images.dim(0), c = config.channels, s = config.image_side, p = config.patch;
  const std::size_t grid = config.grid(), pd = config.patch_dim();
  Tensor out(Shape{batch, grid * grid, pd});
  double* dst = out.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t gy = 0; gy < grid; ++gy) {
      for (std::size_t gx = 0; gx < grid; ++gx) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t y = 0; y < p; ++y) {
            const double* src = images.data().data() + ((b * c + ch) * s + gy * p + y) * s + gx * p;
            for (std::size_t x = 0; x < p; ++x) *dst++ = src[x];
          }
        }
      }
    }
  }
  return out;
}

Model::Model(ModelConfig config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t d = config_.dim;
  const double sd = config_.init_std;
  params_.add("patch_embed.weight", random_normal({config_.patch_dim(), d}, sd, rng));
  params_.add("patch_embed.bias", Tensor({d}, 0.0));
  params_.add("class_token", random_normal({d}, sd, rng));
  params_.add("position", random_normal({config_.tokens(), d}, sd, rng));
  params_.add("task_embedding", random_normal({d}, sd, rng));
  for (std::size_t i = 0; i < config_.msa_blocks; ++i) {
    const std::string pre = "msa." + std::to_string(i) + ".";
    params_.add(pre + "norm.gain", Tensor({d}, 1.0));
    params_.add(pre + "norm.bias", Tensor({d}, 0.0));
    for (const char* w : {"query", "key", "value", "output"}) params_.add(pre + w, random_normal({d, d}, sd, rng));
    add_mlp(pre + "mlp.", rng);
  }
  for (std::size_t i = 0; i < config_.tsa_blocks; ++i) {
    const std::string pre = "tsa." + std::to_string(i) + ".";
    params_.add(pre + "embed_norm.gain", Tensor({d}, 1.0));
    params_.add(pre + "embed_norm.bias", Tensor({d}, 0.0));
    params_.add(pre + "token_norm.gain", Tensor({d}, 1.0));
    params_.add(pre + "token_norm.bias", Tensor({d}, 0.0));
    for (const char* w : {"query", "key", "value", "output"}) params_.add(pre + w, random_normal({d, d}, sd, rng));
    add_mlp(pre + "mlp.", rng);
  }
  params_.add("classifier.weight", random_normal({config_.num_classes, config_.feature_dim()}, sd, rng));
  params_.add("classifier.bias", Tensor({config_.num_classes}, 0.0));
  rebuild_slots();
}

Model::Model(ModelConfig config, ParameterStore params) : config_(config), params_(std::move(params)) {
  config_.validate();
  rebuild_slots();
}

void Model::add_mlp(const std::string& prefix, Rng& rng) {
  const std::size_t d = config_.dim, hidden = config_.dim * config_.mlp_ratio;
  params_.add(prefix + "norm.gain", Tensor({d}, 1.0));
  params_.add(prefix + "norm.bias", Tensor({d}, 0.0));
  params_.add(prefix + "fc1.weight", random_normal({d, hidden}, config_.init_std, rng));
  params_.add(prefix + "fc1.bias", Tensor({hidden}, 0.0));
  params_.add(prefix + "fc2.weight", random_normal({hidden, d}, config_.init_std, rng));
  params_.add(prefix + "fc2.bias", Tensor({d}, 0.0));
}

void Model::rebuild_slots() {
  auto at = [this](const std::string& name) { return params_.index(name); };
  auto mlp = [&](const std::string& pre) {
    return MlpSlots{at(pre + "norm.gain"),  at(pre + "norm.bias"),  at(pre + "fc1.weight"),
                    at(pre + "fc1.bias"),   at(pre + "fc2.weight"), at(pre + "fc2.bias")};
  };
  slot_ = Slots{};
  slot_.patch_weight = at("patch_embed.weight");
  slot_.patch_bias = at("patch_embed.bias");
  slot_.class_token = at("class_token");
  slot_.position = at("position");
  slot_.task_embedding = at("task_embedding");
  for (std::size_t i = 0; i < config_.msa_blocks; ++i) {
    const std::string pre = "msa." + std::to_string(i) + ".";
    slot_.msa.push_back(MsaSlots{at(pre + "norm.gain"), at(pre + "norm.bias"), at(pre + "query"), at(pre + "key"),
                                 at(pre + "value"), at(pre + "output"), mlp(pre + "mlp.")});
  }
  for (std::size_t i = 0; i < config_.tsa_blocks; ++i) {
    const std::string pre = "tsa." + std::to_string(i) + ".";
    slot_.tsa.push_back(TsaSlots{at(pre + "embed_norm.gain"), at(pre + "embed_norm.bias"), at(pre + "token_norm.gain"),
                                 at(pre + "token_norm.bias"), at(pre + "query"), at(pre + "key"), at(pre + "value"),
                                 at(pre + "output"), mlp(pre + "mlp.")});
  }
  slot_.classifier_weight = at("classifier.weight");
  slot_.classifier_bias = at("classifier.bias");

  // Shapes must agree with the configuration; a fresh model built from the
  // same config is the reference.
  const std::size_t d = config_.dim;
  auto expect = [&](std::size_t slot, const Shape& shape) {
    if (params_[slot].shape() != shape) {
      throw ShapeError("parameter '" + std::string(params_.names()[slot]) + "' has shape " +
                       to_string(params_[slot].shape()) + ", config implies " + to_string(shape));
    }
  };
  expect(slot_.patch_weight, {config_.patch_dim(), d});
  expect(slot_.position, {config_.tokens(), d});
  expect(slot_.classifier_weight, {config_.num_classes, config_.feature_dim()});
  expect(slot_.classifier_bias, {config_.num_classes});
}

BoundParameters Model::bind(Graph& graph) const {
  BoundParameters bound;
  bound.vars.reserve(params_.size());
  for (const Tensor& t : params_.values()) {
    bound.vars.push_back(graph.recording() ? graph.parameter(t) : graph.constant(t));
  }
  return bound;
}

MlpVars Model::mlp_vars(const BoundParameters& b, const MlpSlots& s) {
  return MlpVars{b.vars[s.norm_gain],  b.vars[s.norm_bias],  b.vars[s.fc1_weight],
                 b.vars[s.fc1_bias],   b.vars[s.fc2_weight], b.vars[s.fc2_bias]};
}

MsaVars Model::msa_vars(const BoundParameters& b, std::size_t block) const {
  const MsaSlots& s = slot_.msa.at(block);
  return MsaVars{b.vars[s.norm_gain], b.vars[s.norm_bias], b.vars[s.query], b.vars[s.key],
                 b.vars[s.value],     b.vars[s.output],    mlp_vars(b, s.mlp)};
}

TsaVars Model::tsa_vars(const BoundParameters& b, std::size_t block) const {
  const TsaSlots& s = slot_.tsa.at(block);
  return TsaVars{b.vars[s.embed_norm_gain], b.vars[s.embed_norm_bias], b.vars[s.token_norm_gain],
                 b.vars[s.token_norm_bias], b.vars[s.query],           b.vars[s.key],
                 b.vars[s.value],           b.vars[s.output],          mlp_vars(b, s.mlp)};
}

Var Model::embed(Graph& graph, const BoundParameters& b, const Tensor& images) const {
  const std::size_t batch = images.rank() == 4 ? images.dim(0) : 0;
  Var patches = graph.constant(patchify(images, config_));
  Var ze = linear(patches, b.vars[slot_.patch_weight], b.vars[slot_.patch_bias]);
  Var cls = broadcast_to(reshape(b.vars[slot_.class_token], {1, config_.dim}), batch);
  return add_broadcast(concat({ze, cls}, 1), b.vars[slot_.position]);
}

ForwardResult Model::forward(Graph& graph, const BoundParameters& b, const Tensor& images,
                             AttentionTrace* trace) const {
  if (b.vars.size() != params_.size()) throw std::invalid_argument("forward: parameters bound for another model");
  const std::size_t batch = images.rank() == 4 ? images.dim(0) : 0;
  const std::size_t d = config_.dim;
  Var z = embed(graph, b, images);
  for (std::size_t i = 0; i < config_.msa_blocks; ++i) z = msa_block(msa_vars(b, i), z, config_.heads, trace);

  Var feature;
  if (config_.feature_source == FeatureSource::class_token) {
    feature = reshape(slice(z, 1, config_.num_patches(), 1), {batch, d});
  } else {
    Var e = broadcast_to(reshape(b.vars[slot_.task_embedding], {1, d}), batch);
    for (std::size_t i = 0; i < config_.tsa_blocks; ++i) e = tsa_block(tsa_vars(b, i), e, z, config_.heads, trace);
    feature = reshape(e, {batch, d});
    if (config_.feature_source == FeatureSource::concat) {
      feature = concat({feature, reshape(slice(z, 1, config_.num_patches(), 1), {batch, d})}, 1);
    }
  }
  Var logits = add_broadcast(matmul(feature, b.vars[slot_.classifier_weight], true), b.vars[slot_.classifier_bias]);
  return ForwardResult{logits, feature, z};
}

Tensor Model::logits(const Tensor& images) const {
  Graph graph(Graph::Mode::inference);
  return forward(graph, bind(graph), images).logits.value();
}

Tensor Model::probabilities(const Tensor& images) const {
  Graph graph(Graph::Mode::inference);
  return softmax(forward(graph, bind(graph), images).logits, 1).value();
}

Tensor Model::features(const Tensor& images) const {
  Graph graph(Graph::Mode::inference);
  return forward(graph, bind(graph), images).feature.value();
}

void Model::expand_classifier(std::size_t count, Rng& rng) {
  if (count == 0) throw std::invalid_argument("expand_classifier: class count must be at least 1");
  const std::size_t f = config_.feature_dim();
  const std::size_t old_k = config_.num_classes;
  Tensor& weight = params_[slot_.classifier_weight];
  Tensor& bias = params_[slot_.classifier_bias];
  Tensor new_weight({old_k + count, f});
  Tensor new_bias({old_k + count}, 0.0);
  std::copy(weight.data().begin(), weight.data().end(), new_weight.data().begin());
  std::copy(bias.data().begin(), bias.data().end(), new_bias.data().begin());
  for (std::size_t i = old_k * f; i < new_weight.size(); ++i) new_weight[i] = normal(rng, 0.0, config_.init_std);
  weight = std::move(new_weight);
  bias = std::move(new_bias);
  config_.num_classes = old_k + count;
}

Model load_model_parameters(ModelConfig config, ParameterStore params) {
  Rng unused = make_rng(0, "init");
  const Model reference(config, unused);
  const ParameterStore& expected = reference.parameters();
  if (params.size() != expected.size()) {
    throw std::invalid_argument("expected " + std::to_string(expected.size()) + " parameters, got " +
                                std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const std::string& name = expected.names()[i];
    if (params.get(name).shape() != expected[i].shape()) {
      throw std::invalid_argument("parameter '" + name + "' has the wrong shape");
    }
  }
  return Model(config, std::move(params));
}

FrozenModel snapshot_old_model(const Model& model) { return FrozenModel(model); }

}  // namespace hfc
