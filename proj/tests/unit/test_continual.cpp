#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "hfc/continual.hpp"
#include "hfc/data.hpp"
#include "hfc/metrics.hpp"

namespace {

using namespace hfc;

Tensor random_features(std::size_t n, std::size_t d, Rng& rng) {
  Tensor t({n, d});
  for (double& v : t.data()) v = standard_normal(rng);
  return t;
}

ClassCandidates candidates(std::size_t cls, std::size_t n, std::size_t first_sample, Rng& rng) {
  ClassCandidates c;
  c.class_index = cls;
  for (std::size_t i = 0; i < n; ++i) c.samples.push_back(first_sample + i);
  c.features = random_features(n, 4, rng);
  return c;
}

// Brute-force herding oracle: recompute every candidate distance from scratch.
std::vector<std::size_t> herding_oracle(const Tensor& f, std::size_t m) {
  const std::size_t n = f.dim(0), d = f.dim(1);
  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) mu[k] += f.at({i, k}) / static_cast<double>(n);
  }
  std::vector<std::size_t> picked;
  for (std::size_t j = 1; j <= m; ++j) {
    std::size_t best = n;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t x = 0; x < n; ++x) {
      if (std::find(picked.begin(), picked.end(), x) != picked.end()) continue;
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        double s = f.at({x, k});
        for (std::size_t p : picked) s += f.at({p, k});
        dist += (mu[k] - s / j) * (mu[k] - s / j);
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = x;
      }
    }
    picked.push_back(best);
  }
  return picked;
}

TEST(Herding, PicksTheCentralPoint) {
  const Tensor f = Tensor::matrix({{1, 0}, {0, 1}, {1, 1}});
  EXPECT_EQ(herding_select(f, 1), std::vector<std::size_t>{2});
  const double picked = std::sqrt(2.0) / 3.0;
  const double other = std::sqrt(std::pow(1.0 / 3.0, 2) + std::pow(2.0 / 3.0, 2));
  EXPECT_NEAR(picked, 0.471, 1e-3);
  EXPECT_NEAR(other, 0.745, 1e-3);
}

TEST(Herding, FullQuotaReturnsEveryIndex) {
  Rng rng = make_rng(1, "test/herding");
  const Tensor f = random_features(12, 3, rng);
  std::vector<std::size_t> order = herding_select(f, 12);
  EXPECT_EQ(order, herding_oracle(f, 12));
  std::sort(order.begin(), order.end());
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(order[i], i);
}

TEST(Herding, IdenticalFeaturesKeepIndexOrder) {
  const Tensor f({5, 3}, 0.25);
  EXPECT_EQ(herding_select(f, 5), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Herding, MatchesBruteForceOracle) {
  Rng rng = make_rng(2, "test/herding-oracle");
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 25);
    const Tensor f = random_features(n, 1 + uniform_index(rng, 6), rng);
    const std::size_t m = 1 + uniform_index(rng, n);
    EXPECT_EQ(herding_select(f, m), herding_oracle(f, m));
  }
}

TEST(Herding, RejectsBadRequests) {
  EXPECT_THROW(herding_select(Tensor({0, 3}), 0), std::invalid_argument);
  EXPECT_THROW(herding_select(Tensor({2, 3}), 3), std::invalid_argument);
  EXPECT_THROW(herding_select(Tensor({6}), 1), ShapeError);
}

TEST(ExemplarMemory, FixedTotalQuotaAndPrefixes) {
  Rng rng = make_rng(3, "test/memory");
  ExemplarMemory memory({MemoryMode::fixed_total, 2000, 20});
  std::vector<ClassCandidates> first;
  for (std::size_t c = 0; c < 20; ++c) first.push_back(candidates(c, 500, c * 500, rng));
  memory.update(first, 20);
  for (const auto& [cls, list] : memory.classes()) EXPECT_EQ(list.size(), 100u);
  EXPECT_EQ(memory.total(), 2000u);
  const auto before = memory.classes();

  std::vector<ClassCandidates> second;
  for (std::size_t c = 20; c < 40; ++c) second.push_back(candidates(c, 500, c * 500, rng));
  memory.update(second, 40);
  EXPECT_LE(memory.total(), 2000u);
  for (const auto& [cls, list] : memory.classes()) {
    EXPECT_EQ(list.size(), 50u);
    if (cls < 20) {
      const auto& old = before.at(cls);
      EXPECT_TRUE(std::equal(list.begin(), list.end(), old.begin())) << "class " << cls;
    }
  }
}

TEST(ExemplarMemory, QuotaFloorsAndSmallClasses) {
  Rng rng = make_rng(4, "test/memory-small");
  ExemplarMemory memory({MemoryMode::fixed_total, 100, 20});
  EXPECT_EQ(memory.quota(3), 33u);
  std::vector<ClassCandidates> c{candidates(0, 10, 0, rng), candidates(1, 40, 10, rng), candidates(2, 40, 50, rng)};
  memory.update(c, 3);
  EXPECT_EQ(memory.exemplars(0).size(), 10u);
  EXPECT_EQ(memory.exemplars(1).size(), 33u);
  EXPECT_EQ(memory.total(), 76u);
  const std::vector<std::size_t> all = memory.all();
  EXPECT_EQ(all.size(), 76u);
  EXPECT_EQ(all.front(), memory.exemplars(0).front());
}

TEST(ExemplarMemory, PerClassQuotaLeavesOldListsAlone) {
  Rng rng = make_rng(5, "test/memory-quota");
  ExemplarMemory memory({MemoryMode::per_class_quota, 100, 20});
  std::vector<ClassCandidates> a{candidates(0, 50, 0, rng), candidates(1, 8, 50, rng)};
  memory.update(a, 2);
  const auto first = memory.exemplars(0);
  std::vector<ClassCandidates> b{candidates(2, 50, 100, rng), candidates(3, 50, 150, rng)};
  memory.update(b, 4);
  EXPECT_EQ(memory.exemplars(0), first);
  EXPECT_EQ(memory.exemplars(1).size(), 8u);
  EXPECT_EQ(memory.exemplars(3).size(), 20u);
  EXPECT_EQ(parse_memory_mode(to_string(MemoryMode::per_class_quota)), MemoryMode::per_class_quota);
  EXPECT_THROW(parse_memory_mode("ring"), std::invalid_argument);
}

TEST(Sgd, Examples) {
  std::vector<Tensor> params{Tensor::vector({1.0, -2.0})};
  std::vector<Tensor> velocity;
  sgd_step(params, std::vector<Tensor>{Tensor::vector({3.0, 4.0})}, velocity, 0.0, 0.9);
  EXPECT_EQ(params[0], Tensor::vector({1.0, -2.0}));

  std::vector<Tensor> p{Tensor::scalar(1.0)};
  velocity.clear();
  sgd_step(p, std::vector<Tensor>{Tensor::scalar(1.0)}, velocity, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(p[0].item(), 0.9);
}

TEST(Sgd, MomentumMatchesScalarOracle) {
  // f(p) = ½p², so g = p.
  std::vector<Tensor> p{Tensor::scalar(1.0)};
  std::vector<Tensor> velocity;
  double po = 1.0, vo = 0.0;
  for (int step = 0; step < 5; ++step) {
    sgd_step(p, std::vector<Tensor>{Tensor::scalar(p[0].item())}, velocity, 0.1, 0.9);
    vo = 0.9 * vo + po;
    po -= 0.1 * vo;
    EXPECT_DOUBLE_EQ(p[0].item(), po) << "step " << step;
  }
  EXPECT_NEAR(po, -0.02916, 1e-12);
}

TEST(Sgd, RejectsNonFiniteAndMismatchedGradients) {
  std::vector<Tensor> p{Tensor::vector({1.0, 2.0})};
  std::vector<Tensor> velocity;
  const std::vector<std::string> names{"layer.weight"};
  try {
    sgd_step(p, std::vector<Tensor>{Tensor::vector({0.0, std::numeric_limits<double>::quiet_NaN()})}, velocity, 0.1,
             0.9, names);
    FAIL() << "expected NonFiniteGradient";
  } catch (const NonFiniteGradient& e) {
    EXPECT_NE(std::string(e.what()).find("layer.weight"), std::string::npos);
  }
  EXPECT_EQ(p[0], Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(sgd_step(p, std::vector<Tensor>{Tensor::scalar(1.0)}, velocity, 0.1, 0.9), ShapeError);
}

TEST(Sgd, GrownParameterRestartsVelocity) {
  std::vector<Tensor> p{Tensor::vector({1.0})};
  std::vector<Tensor> velocity;
  sgd_step(p, std::vector<Tensor>{Tensor::vector({1.0})}, velocity, 1.0, 0.5);
  p[0] = Tensor::vector({0.0, 0.0});
  sgd_step(p, std::vector<Tensor>{Tensor::vector({1.0, 1.0})}, velocity, 1.0, 0.5);
  EXPECT_EQ(p[0], Tensor::vector({-1.0, -1.0}));
}

TEST(TrainerConfig, Validation) {
  TrainerConfig c;
  EXPECT_NO_THROW(c.validate());
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.alpha2 = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

struct TinyRun {
  Dataset train, test;
  TaskStream stream;
  ModelConfig model_config;
  TrainerConfig trainer;

  explicit TinyRun(std::size_t tasks = 2, std::uint64_t seed = 5) {
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.samples_per_class = 8;
    spec.side = 8;
    spec.noise = linspace(0.02, 0.3, 4);
    spec.seed = seed;
    train = generate_synthetic(spec);
    spec.samples_per_class = 4;
    spec.sample_stream = "test";
    test = generate_synthetic(spec);
    stream = split_tasks(4, tasks, 0, seed);
    model_config.image_side = 8;
    model_config.patch = 4;
    model_config.dim = 8;
    model_config.heads = 2;
    model_config.msa_blocks = 1;
    model_config.num_classes = stream.tasks[0].size();
    trainer.epochs = 2;
    trainer.batch_size = 5;
    trainer.seed = seed;
    trainer.memory.capacity = 6;
  }

  Model fresh_model() const {
    Rng rng = make_rng(trainer.seed, "init");
    return Model(model_config, rng);
  }
};

TEST(RunStream, ProtocolInvariants) {
  TinyRun run(2);
  Model model = run.fresh_model();
  std::optional<Model> end_of_previous;
  std::map<std::size_t, std::vector<std::size_t>> previous_lists;
  std::size_t begins = 0, ends = 0;
  StreamObserver obs;
  obs.on_task_begin = [&](std::size_t t, const Model& live, const FrozenModel* old) {
    ++begins;
    EXPECT_EQ(live.num_classes(), run.stream.classes_through(t));
    if (t == 0) {
      EXPECT_EQ(old, nullptr);
      return;
    }
    ASSERT_NE(old, nullptr);
    ASSERT_TRUE(end_of_previous.has_value());
    EXPECT_TRUE(old->model() == *end_of_previous);
    EXPECT_EQ(old->num_classes(), run.stream.classes_through(t - 1));
    EXPECT_EQ(live.task_embedding(), end_of_previous->task_embedding());
  };
  obs.on_task_end = [&](std::size_t t, const Model& live, const FrozenModel& snapshot, const ExemplarMemory& memory) {
    ++ends;
    EXPECT_TRUE(snapshot.model() == live);
    const std::size_t seen = run.stream.classes_through(t);
    EXPECT_LE(memory.total(), 6u);
    for (const auto& [cls, list] : memory.classes()) {
      EXPECT_LT(cls, seen);
      EXPECT_EQ(list.size(), std::min<std::size_t>(6 / seen, 8));
      if (auto it = previous_lists.find(cls); it != previous_lists.end()) {
        EXPECT_TRUE(std::equal(list.begin(), list.end(), it->second.begin()));
      }
    }
    previous_lists = memory.classes();
    end_of_previous.emplace(live);
  };
  const RunReport report = run_stream(run.stream, run.train, run.test, model, run.trainer, obs);
  EXPECT_EQ(begins, 2u);
  EXPECT_EQ(ends, 2u);
  ASSERT_EQ(report.tasks.size(), 2u);
  EXPECT_EQ(report.tasks[1].seen_classes, 4u);
  EXPECT_EQ(report.tasks[0].epoch_losses.size(), 2u);
  EXPECT_EQ(model.num_classes(), 4u);
  EXPECT_NEAR(report.avg_incremental, (report.tasks[0].top1 + report.tasks[1].top1) / 2, 1e-15);
}

TEST(RunStream, FrozenSnapshotSurvivesLaterTraining) {
  TinyRun run(2);
  Model model = run.fresh_model();
  std::optional<FrozenModel> first;
  std::optional<Model> copy;
  StreamObserver obs;
  obs.on_task_end = [&](std::size_t t, const Model& live, const FrozenModel& snapshot, const ExemplarMemory&) {
    if (t == 0) {
      first.emplace(snapshot);
      copy.emplace(live);
    }
  };
  run_stream(run.stream, run.train, run.test, model, run.trainer, obs);
  ASSERT_TRUE(first && copy);
  EXPECT_TRUE(first->model() == *copy);
  EXPECT_FALSE(model == *copy);
}

TEST(RunStream, SingleTaskIsPlainTraining) {
  TinyRun run(1);
  Model model = run.fresh_model();
  StreamObserver obs;
  obs.on_task_begin = [&](std::size_t, const Model&, const FrozenModel* old) { EXPECT_EQ(old, nullptr); };
  const RunReport report = run_stream(run.stream, run.train, run.test, model, run.trainer, obs);
  ASSERT_EQ(report.tasks.size(), 1u);
  EXPECT_EQ(report.tasks[0].seen_classes, 4u);
  EXPECT_EQ(report.fh, report.tasks[0].fh_term);
}

TEST(RunStream, BaselineSwitchesStillTrain) {
  TinyRun run(2);
  run.trainer.alpha2 = 0.0;
  run.trainer.losses.uniform_weights = true;
  Model model = run.fresh_model();
  const RunReport report = run_stream(run.stream, run.train, run.test, model, run.trainer);
  EXPECT_EQ(report.tasks.size(), 2u);
  for (const auto& t : report.tasks) {
    for (double l : t.epoch_losses) EXPECT_TRUE(std::isfinite(l));
  }
}

TEST(RunStream, SameSeedSameReport) {
  TinyRun run(2);
  Model a = run.fresh_model(), b = run.fresh_model();
  const RunReport ra = run_stream(run.stream, run.train, run.test, a, run.trainer);
  run.trainer.eval_threads = 3;
  const RunReport rb = run_stream(run.stream, run.train, run.test, b, run.trainer);
  EXPECT_TRUE(a == b);
  for (std::size_t t = 0; t < ra.tasks.size(); ++t) {
    EXPECT_EQ(ra.tasks[t].epoch_losses, rb.tasks[t].epoch_losses);
    EXPECT_EQ(ra.tasks[t].top1, rb.tasks[t].top1);
    EXPECT_EQ(ra.tasks[t].fh_term, rb.tasks[t].fh_term);
  }
}

TEST(RunStream, FailuresCarryTheTaskIndex) {
  TinyRun run(2);
  Model model = run.fresh_model();
  model.parameters().get("classifier.bias")[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    run_stream(run.stream, run.train, run.test, model, run.trainer);
    FAIL() << "expected TaskError";
  } catch (const TaskError& e) {
    EXPECT_EQ(e.task_index(), 1u);
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos) << e.what();
  }
}

TEST(RunStream, RejectsMismatchedClassifier) {
  TinyRun run(2);
  run.model_config.num_classes = 3;
  Model model = run.fresh_model();
  EXPECT_THROW(run_stream(run.stream, run.train, run.test, model, run.trainer), std::invalid_argument);
}

}  // namespace
