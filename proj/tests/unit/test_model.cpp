#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "hfc/gradcheck.hpp"
#include "hfc/gradcheck_suite.hpp"
#include "hfc/model.hpp"
#include "hfc/ops.hpp"

namespace {

using namespace hfc;

Tensor random_images(std::size_t b, const ModelConfig& c, Rng& rng) {
  Tensor t({b, c.channels, c.image_side, c.image_side});
  for (double& v : t.data()) v = uniform01(rng);
  return t;
}

ModelConfig small_config(std::size_t classes = 3) {
  ModelConfig c;
  c.num_classes = classes;
  c.init_std = 0.1;
  return c;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("hfc_test_model_" + name);
}

TEST(ModelConfig, ValidatesDivisibility) {
  ModelConfig c = small_config();
  c.heads = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.patch = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_NO_THROW(small_config().validate());
}

TEST(PatchEmbed, ShapeFollowsConfig) {
  const ModelConfig c = small_config();
  EXPECT_EQ(c.num_patches(), 16u);
  Rng rng = make_rng(1, "init");
  const Model model(c, rng);
  Rng data = make_rng(1, "data");
  Graph g(Graph::Mode::inference);
  const Var z = model.embed(g, model.bind(g), random_images(2, c, data));
  EXPECT_EQ(z.value().shape(), (Shape{2, 17, 32}));
}

TEST(PatchEmbed, ZeroImageGivesClassAndPositionTokens) {
  const ModelConfig c = small_config();
  Rng rng = make_rng(2, "init");
  const Model model(c, rng);
  Graph g(Graph::Mode::inference);
  const Tensor z = model.embed(g, model.bind(g), Tensor({1, 1, 16, 16}, 0.0)).value();
  const Tensor& pos = model.parameters().get("position");
  const Tensor& cls = model.parameters().get("class_token");
  for (std::size_t row = 0; row < 16; ++row) {
    for (std::size_t k = 0; k < 32; ++k) EXPECT_EQ(z.at({0, row, k}), pos.at({row, k}));
  }
  for (std::size_t k = 0; k < 32; ++k) EXPECT_EQ(z.at({0, 16, k}), cls[k] + pos.at({16, k}));
}

TEST(PatchEmbed, IdenticalPatchesEmbedIdentically) {
  const ModelConfig c = small_config();
  Rng rng = make_rng(3, "init");
  const Model model(c, rng);
  Tensor img({1, 1, 16, 16}, 0.0);
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) img.at({0, 0, y, x}) = img.at({0, 0, y + 8, x + 12}) = 0.1 * (y + 4 * x);
  }
  Graph g(Graph::Mode::inference);
  const Tensor z = model.embed(g, model.bind(g), img).value();
  const Tensor& pos = model.parameters().get("position");
  const std::size_t a = 0, b = 2 * 4 + 3;  // patch grid (0,0) and (2,3)
  for (std::size_t k = 0; k < 32; ++k) {
    EXPECT_NEAR(z.at({0, a, k}) - pos.at({a, k}), z.at({0, b, k}) - pos.at({b, k}), 1e-15);
  }
}

TEST(PatchEmbed, RejectsWrongExtent) {
  Rng rng = make_rng(4, "init");
  const Model model(small_config(), rng);
  EXPECT_THROW(model.logits(Tensor({1, 1, 8, 8})), ShapeError);
  EXPECT_THROW(model.logits(Tensor({1, 3, 16, 16})), ShapeError);
}

TEST(MsaBlock, AttentionRowsSumToOne) {
  const ModelConfig c = small_config();
  Rng rng = make_rng(5, "init");
  const Model model(c, rng);
  Rng data = make_rng(5, "data");
  AttentionTrace trace;
  Graph g(Graph::Mode::inference);
  model.forward(g, model.bind(g), random_images(3, c, data), &trace);
  ASSERT_FALSE(trace.empty());
  for (const Tensor& a : trace) {
    const std::size_t cols = a.dim(a.rank() - 1);
    for (std::size_t r = 0; r < a.size() / cols; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += a[r * cols + j];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(MsaBlock, ZeroOutputWeightsIsPureResidual) {
  ModelConfig c = small_config();
  Rng rng = make_rng(6, "init");
  Model model(c, rng);
  model.parameters().get("msa.0.output").fill(0.0);
  model.parameters().get("msa.0.mlp.fc2.weight").fill(0.0);
  Graph g(Graph::Mode::inference);
  const BoundParameters bound = model.bind(g);
  Rng data = make_rng(6, "data");
  const Var z = g.constant(random_images(2, c, data).reshaped({2, 8, 32}));
  const Var out = msa_block(model.msa_vars(bound, 0), z, c.heads);
  EXPECT_EQ(out.value(), z.value());
}

TEST(TsaBlock, OutputExtentIndependentOfTokenCount) {
  for (std::size_t side : {8u, 16u, 32u}) {
    ModelConfig c = small_config();
    c.image_side = side;
    Rng rng = make_rng(7, "init");
    const Model model(c, rng);
    Rng data = make_rng(7, "data");
    EXPECT_EQ(model.features(random_images(2, c, data)).shape(), (Shape{2, 32})) << "side " << side;
  }
}

TEST(TsaBlock, IdenticalTokensGiveUniformAttention) {
  const ModelConfig c = small_config();
  Rng rng = make_rng(8, "init");
  const Model model(c, rng);
  Graph g(Graph::Mode::inference);
  const BoundParameters bound = model.bind(g);
  Tensor row({1, 1, 32});
  for (std::size_t k = 0; k < 32; ++k) row[k] = std::sin(0.3 * k);
  Tensor tokens({1, 6, 32});
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t k = 0; k < 32; ++k) tokens[t * 32 + k] = row[k];
  }
  Rng e_rng = make_rng(8, "e");
  Tensor e1({1, 1, 32}), e2({1, 1, 32});
  for (double& v : e1.data()) v = standard_normal(e_rng);
  for (double& v : e2.data()) v = standard_normal(e_rng);
  AttentionTrace trace;
  const Tensor out1 = tsa_block(model.tsa_vars(bound, 0), g.constant(e1), g.constant(tokens), c.heads, &trace).value();
  const Tensor out2 = tsa_block(model.tsa_vars(bound, 0), g.constant(e2), g.constant(tokens), c.heads).value();
  for (const Tensor& a : trace) {
    for (double p : a.data()) EXPECT_NEAR(p, 1.0 / 6.0, 1e-12);
  }
  EXPECT_LT(max_abs_difference(out1, out2), 1e-12);
}

TEST(Forward, DeterministicAndLogitWidth) {
  const ModelConfig c = small_config(4);
  Rng rng = make_rng(9, "init");
  Model model(c, rng);
  Rng data = make_rng(9, "data");
  const Tensor img = random_images(1, c, data);
  Tensor pair({2, 1, 16, 16});
  std::copy(img.data().begin(), img.data().end(), pair.data().begin());
  std::copy(img.data().begin(), img.data().end(), pair.data().begin() + 256);
  const Tensor logits = model.logits(pair);
  EXPECT_EQ(logits.shape(), (Shape{2, 4}));
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(logits.at({0, k}), logits.at({1, k}));
  Rng grow = make_rng(9, "init/classifier");
  model.expand_classifier(3, grow);
  model.expand_classifier(1, grow);
  EXPECT_EQ(model.logits(pair).shape(), (Shape{2, 8}));
}

TEST(Forward, FeatureSources) {
  for (auto source : {FeatureSource::task_embedding, FeatureSource::class_token, FeatureSource::concat}) {
    ModelConfig c = small_config();
    c.feature_source = source;
    Rng rng = make_rng(10, "init");
    const Model model(c, rng);
    Rng data = make_rng(10, "data");
    EXPECT_EQ(model.features(random_images(2, c, data)).dim(1), c.feature_dim());
    EXPECT_EQ(parse_feature_source(to_string(source)), source);
  }
}

TEST(Forward, MicroModelGradientMatchesFiniteDifferences) {
  for (const GradCheckResult& r : run_gradcheck_suite(7)) {
    if (r.name == "model_forward" || r.name == "msa_block" || r.name == "tsa_block") {
      EXPECT_LT(r.max_relative_error, 1e-4) << r.name;
    }
  }
}

TEST(ExpandClassifier, PreservesOldLogitsExactly) {
  const ModelConfig c = small_config(3);
  Rng rng = make_rng(11, "init");
  Model model(c, rng);
  Rng data = make_rng(11, "data");
  const Tensor img = random_images(5, c, data);
  const Tensor before = model.logits(img);
  Rng grow = make_rng(11, "init/classifier");
  model.expand_classifier(2, grow);
  const Tensor after = model.logits(img);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(after.at({i, k}), before.at({i, k}));
  }
  EXPECT_THROW(model.expand_classifier(0, grow), std::invalid_argument);
}

TEST(ExpandClassifier, TwoStepsMatchOneForOldRows) {
  Rng r1 = make_rng(12, "init"), r2 = make_rng(12, "init");
  Model a(small_config(2), r1), b(small_config(2), r2);
  Rng ga = make_rng(12, "grow"), gb = make_rng(12, "grow");
  a.expand_classifier(5, ga);
  a.expand_classifier(5, ga);
  b.expand_classifier(10, gb);
  EXPECT_EQ(a.parameters().get("classifier.weight"), b.parameters().get("classifier.weight"));
  EXPECT_EQ(a.num_classes(), 12u);
}

TEST(ExpandClassifier, NewRowsAreCentred) {
  const ModelConfig c = small_config(1);
  const std::size_t added = 5;
  double grand = 0.0;
  const int seeds = 40;
  for (int s = 0; s < seeds; ++s) {
    Rng rng = make_rng(static_cast<std::uint64_t>(s), "init");
    Model model(c, rng);
    Rng grow = make_rng(static_cast<std::uint64_t>(s), "init/classifier");
    model.expand_classifier(added, grow);
    const Tensor& w = model.parameters().get("classifier.weight");
    double m = 0.0;
    for (std::size_t i = c.dim; i < w.size(); ++i) m += w[i];
    m /= static_cast<double>(added * c.dim);
    EXPECT_LT(std::abs(m), 3.0 * c.init_std / std::sqrt(static_cast<double>(added * c.dim)));
    grand += m;
  }
  EXPECT_LT(std::abs(grand / seeds), 3.0 * c.init_std / std::sqrt(static_cast<double>(added * c.dim * seeds)));
}

TEST(FrozenModel, UnaffectedByFurtherTraining) {
  const ModelConfig c = small_config(2);
  Rng rng = make_rng(13, "init");
  Model model(c, rng);
  const FrozenModel frozen = snapshot_old_model(model);
  Rng data = make_rng(13, "data");
  const Tensor img = random_images(4, c, data);
  const Tensor before = frozen.logits(img);
  for (Tensor& p : model.parameters().values()) {
    for (double& v : p.data()) v += 0.01;
  }
  Rng grow = make_rng(13, "init/classifier");
  model.expand_classifier(2, grow);
  EXPECT_EQ(frozen.logits(img), before);
  EXPECT_EQ(frozen.num_classes(), 2u);
  const Tensor p = frozen.probabilities(img);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p.at({i, 0}) + p.at({i, 1}), 1.0, 1e-12);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ModelConfig c = small_config(3);
  c.feature_source = FeatureSource::concat;
  Rng rng = make_rng(14, "init");
  Model model(c, rng);
  Rng grow = make_rng(14, "init/classifier");
  model.expand_classifier(2, grow);
  const auto path = temp_file("roundtrip.ckpt");
  save_checkpoint(path, model, 2);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.task_index, 2u);
  EXPECT_TRUE(back.model == model);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsTruncatedFile) {
  Rng rng = make_rng(15, "init");
  const Model model(small_config(2), rng);
  const auto path = temp_file("truncated.ckpt");
  save_checkpoint(path, model, 1);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);
  EXPECT_ANY_THROW(load_checkpoint(path));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsMismatchedShapes) {
  Rng rng = make_rng(15, "init");
  const Model model(small_config(2), rng);
  ParameterStore params = model.parameters();
  params.get("classifier.bias") = Tensor({3}, 0.0);
  EXPECT_THROW(load_model_parameters(model.config(), params), std::invalid_argument);
  ParameterStore missing;
  missing.add("class_token", model.parameters().get("class_token"));
  EXPECT_ANY_THROW(load_model_parameters(model.config(), missing));
  EXPECT_TRUE(load_model_parameters(model.config(), model.parameters()) == model);
}

TEST(ParameterStore, NamesAreUnique) {
  Rng rng = make_rng(16, "init");
  const Model model(small_config(2), rng);
  const auto names = model.parameters().names();
  for (std::size_t i = 0; i < names.size(); ++i) EXPECT_EQ(model.parameters().index(names[i]), i);
  EXPECT_FALSE(model.parameters().contains("no.such.parameter"));
}

}  // namespace
