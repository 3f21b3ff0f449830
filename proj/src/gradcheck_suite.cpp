#include "hfc/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>

#include "hfc/gradcheck.hpp"
#include "hfc/losses.hpp"
#include "hfc/ops.hpp"
#include "hfc/rng.hpp"

namespace hfc {

namespace {

constexpr double kStep = 1e-5;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

// Reduces any output to a scalar through fixed random weights, so every
// output coordinate contributes a distinct gradient.
class Projector {
 public:
  explicit Projector(std::uint64_t seed) : seed_(seed) {}
  Var operator()(Graph& g, Var y) const {
    Rng rng = make_rng(seed_, "projection");
    const Tensor w = random_tensor(y.value().shape(), rng, 0.5, 1.5);
    return sum(mul(y, g.constant(w)));
  }

 private:
  std::uint64_t seed_;
};

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : seed_(seed), rng_(make_rng(seed, "gradcheck")), project_(seed) {}

  void check(std::string name, std::vector<Tensor> inputs, const MultiScalarFn& f, double step = kStep,
             std::span<const std::string> input_names = {}) {
    const FiniteDiffReport r = finite_diff_report(f, inputs, step);
    const std::string where = r.input < input_names.size() ? input_names[r.input] : "input " + std::to_string(r.input);
    results_.push_back({std::move(name), r.max_error, where, r.index, r.analytic, r.numeric});
  }

  // Checks y = op(inputs) through the random projection.
  void check_op(std::string name, std::vector<Tensor> inputs,
                const std::function<Var(std::span<const Var>)>& op) {
    check(std::move(name), std::move(inputs),
          [this, op](Graph& g, std::span<const Var> v) { return project_(g, op(v)); });
  }

  Tensor rand(Shape shape, double lo = -1.0, double hi = 1.0) { return random_tensor(std::move(shape), rng_, lo, hi); }

  void ops();
  void blocks();
  void model_and_losses();

  std::vector<GradCheckResult> take() { return std::move(results_); }

 private:
  std::uint64_t seed_;
  Rng rng_;
  Projector project_;
  std::vector<GradCheckResult> results_;
};

void Suite::ops() {
  check_op("matmul", {rand({3, 4}), rand({4, 2})}, [](auto v) { return matmul(v[0], v[1]); });
  check_op("matmul_transposed", {rand({3, 4}), rand({2, 4})}, [](auto v) { return matmul(v[0], v[1], true); });
  check_op("bmm", {rand({2, 3, 4}), rand({2, 4, 2})}, [](auto v) { return bmm(v[0], v[1]); });
  check_op("bmm_transposed", {rand({2, 3, 4}), rand({2, 5, 4})}, [](auto v) { return bmm(v[0], v[1], true); });
  check_op("add", {rand({2, 3}), rand({2, 3})}, [](auto v) { return add(v[0], v[1]); });
  check_op("sub", {rand({2, 3}), rand({2, 3})}, [](auto v) { return sub(v[0], v[1]); });
  check_op("mul", {rand({2, 3}), rand({2, 3})}, [](auto v) { return mul(v[0], v[1]); });
  check_op("div", {rand({2, 3}), rand({2, 3}, 0.5, 2.0)}, [](auto v) { return div(v[0], v[1]); });
  check_op("add_broadcast", {rand({2, 3, 4}), rand({4})}, [](auto v) { return add_broadcast(v[0], v[1]); });
  check_op("broadcast_to", {rand({3, 2})}, [](auto v) { return broadcast_to(v[0], 3); });
  check_op("scale", {rand({5})}, [](auto v) { return scale(v[0], -2.5); });
  check_op("add_scalar", {rand({5})}, [](auto v) { return add_scalar(v[0], 0.75); });
  check_op("log", {rand({5}, 0.2, 2.0)}, [](auto v) { return log(v[0]); });
  check_op("exp", {rand({5})}, [](auto v) { return exp(v[0]); });
  check_op("gelu", {rand({6}, -3.0, 3.0)}, [](auto v) { return gelu(v[0]); });
  check_op("pow_scalar", {rand({5}, 0.1, 1.0)}, [](auto v) { return pow_scalar(v[0], 0.6); });
  check_op("softmax", {rand({3, 5}, -2.0, 2.0)}, [](auto v) { return softmax(v[0], 1); });
  check_op("softmax_axis0", {rand({3, 5}, -2.0, 2.0)}, [](auto v) { return softmax(v[0], 0); });
  check_op("layer_norm", {rand({3, 6}), rand({6}, 0.5, 1.5), rand({6})},
           [](auto v) { return layer_norm(v[0], v[1], v[2]); });
  check_op("concat", {rand({2, 3}), rand({2, 2})}, [](auto v) { return concat({v[0], v[1]}, 1); });
  check_op("slice", {rand({4, 3})}, [](auto v) { return slice(v[0], 0, 1, 2); });
  check_op("split", {rand({2, 5})}, [](auto v) {
    const std::size_t sizes[] = {2, 3};
    auto parts = split(v[0], 1, sizes);
    return concat({scale(parts[0], 2.0), parts[1]}, 1);
  });
  check_op("reshape", {rand({2, 6})}, [](auto v) { return reshape(v[0], {3, 4}); });
  check_op("sum", {rand({2, 3})}, [](auto v) { return sum(v[0]); });
  check_op("mean", {rand({2, 3})}, [](auto v) { return mean(v[0]); });
  check_op("sum_axis", {rand({2, 3, 4})}, [](auto v) { return sum_axis(v[0], 1); });
  check_op("pick", {rand({3, 4})}, [](auto v) {
    const std::size_t idx[] = {2, 0, 3};
    return pick(v[0], idx);
  });
  check_op("linear", {rand({2, 3, 4}), rand({4, 5}), rand({5})}, [](auto v) { return linear(v[0], v[1], v[2]); });
}

MlpVars mlp_from(std::span<const Var> v, std::size_t at) {
  return {v[at], v[at + 1], v[at + 2], v[at + 3], v[at + 4], v[at + 5]};
}

void Suite::blocks() {
  constexpr std::size_t d = 8, hidden = 32, heads = 2;
  auto mlp_inputs = [this] {
    return std::vector<Tensor>{rand({d}, 0.5, 1.5), rand({d}, -0.2, 0.2), rand({d, hidden}, -0.5, 0.5),
                               rand({hidden}, -0.2, 0.2), rand({hidden, d}, -0.5, 0.5), rand({d}, -0.2, 0.2)};
  };

  // msa inputs: z, gain, bias, q, k, v, o, mlp (6)
  std::vector<Tensor> msa{rand({1, 3, d}), rand({d}, 0.5, 1.5), rand({d}, -0.2, 0.2)};
  for (int i = 0; i < 4; ++i) msa.push_back(rand({d, d}, -0.6, 0.6));
  for (Tensor& t : mlp_inputs()) msa.push_back(std::move(t));
  check_op("msa_block", msa, [](std::span<const Var> v) {
    MsaVars p{v[1], v[2], v[3], v[4], v[5], v[6], mlp_from(v, 7)};
    return msa_block(p, v[0], heads);
  });

  // tsa inputs: e, z, embed norm (2), token norm (2), q, k, v, o, mlp (6)
  std::vector<Tensor> tsa{rand({1, 1, d}), rand({1, 5, d}), rand({d}, 0.5, 1.5), rand({d}, -0.2, 0.2),
                          rand({d}, 0.5, 1.5), rand({d}, -0.2, 0.2)};
  for (int i = 0; i < 4; ++i) tsa.push_back(rand({d, d}, -0.6, 0.6));
  for (Tensor& t : mlp_inputs()) tsa.push_back(std::move(t));
  check_op("tsa_block", tsa, [](std::span<const Var> v) {
    TsaVars p{v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], mlp_from(v, 10)};
    return tsa_block(p, v[0], v[1], heads);
  });
}

void Suite::model_and_losses() {
  ModelConfig config = micro_model_config();
  config.num_classes = 2;
  Rng init = make_rng(seed_, "init");
  Model teacher_source(config, init);
  const FrozenModel teacher = snapshot_old_model(teacher_source);
  Model model = teacher_source;
  model.expand_classifier(1, init);

  const std::size_t b = 6;
  const Tensor images = rand({b, config.channels, config.image_side, config.image_side}, 0.0, 1.0);
  BatchView base;
  base.labels = {0, 1, 2, 2, 0, 2};
  base.class_task = {0, 0, 1};
  base.old_classes = 2;
  base.new_classes = 1;
  base.old_probs = teacher.probabilities(images);
  base.probs = model.probabilities(images);
  const GradientStats stats = gradient_stats(base);

  std::vector<Tensor> params(model.parameters().values().begin(), model.parameters().values().end());
  auto probs_of = [&model, &images](std::span<const Var> v) {
    BoundParameters bound{std::vector<Var>(v.begin(), v.end())};
    return softmax(model.forward(v[0].graph(), bound, images).logits, 1);
  };

  auto check_model = [&](std::string name, const MultiScalarFn& f) {
    check(std::move(name), params, f, kStep, model.parameters().names());
  };
  check_model("model_forward", [&](Graph& g, std::span<const Var> v) {
    BoundParameters bound{std::vector<Var>(v.begin(), v.end())};
    return project_(g, model.forward(g, bound, images).logits);
  });
  check_model("ce_loss", [&](Graph&, std::span<const Var> v) { return ce_loss(probs_of(v), base.labels); });
  check_model("gfc_loss", [&](Graph&, std::span<const Var> v) { return gfc_loss(probs_of(v), base, stats); });

  LossSwitches live_weights;
  live_weights.weight_stop_gradient = false;
  check_model("gfc_loss_live_weights",
        [&](Graph&, std::span<const Var> v) { return gfc_loss(probs_of(v), base, stats, live_weights); });

  const Tensor targets = relation_groundtruth(base);
  LossSwitches forward_kl;
  forward_kl.kl_direction = KlDirection::student_first;
  check_model("grd_loss", [&](Graph&, std::span<const Var> v) {
    return grd_loss(relation_prototypes(probs_of(v), base, targets), base, stats, forward_kl);
  });
  LossSwitches reversed;
  reversed.kl_direction = KlDirection::teacher_first;
  reversed.relation_target = RelationTarget::literal;
  check_model("grd_loss_teacher_first_literal", [&](Graph&, std::span<const Var> v) {
    const Tensor literal = relation_groundtruth(base, RelationTarget::literal);
    return grd_loss(relation_prototypes(probs_of(v), base, literal), base, stats, reversed);
  });
  check_model("grd_loss_live_weights", [&](Graph&, std::span<const Var> v) {
    return grd_loss(relation_prototypes(probs_of(v), base, targets), base, stats, live_weights);
  });
  check_model("objective",
        [&](Graph&, std::span<const Var> v) { return objective(probs_of(v), base, stats, 0.7, 1.3).total; });
}

}  // namespace

ModelConfig micro_model_config() {
  ModelConfig c;
  c.image_side = 4;
  c.channels = 1;
  c.patch = 2;
  c.dim = 8;
  c.heads = 2;
  c.msa_blocks = 1;
  c.tsa_blocks = 1;
  c.num_classes = 3;
  c.init_std = 0.4;
  return c;
}

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed) {
  Suite suite(seed);
  suite.ops();
  suite.blocks();
  suite.model_and_losses();
  return suite.take();
}

}  // namespace hfc
