#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "msda/checkpoint.hpp"
#include "msda/datagen.hpp"
#include "msda/errors.hpp"
#include "msda/io.hpp"
#include "msda/trainer.hpp"
#include "test_util.hpp"

namespace msda {
namespace {

namespace fs = std::filesystem;

constexpr ModelKind kAllModels[] = {ModelKind::Crf, ModelKind::Mrf, ModelKind::SourceOnly};

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("msda_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TrainConfig small_config(ModelKind kind, int epochs) {
  TrainConfig c = preset_train("default", kind);
  c.epochs = epochs;
  c.batch_size = 8;
  c.warmup_epochs = 0;
  c.seed = 3;
  c.n2 = 2;  // the tiny layout has four cross-class pairs
  return c;
}

const data::DatasetBundle& tiny_data() {
  static const data::DatasetBundle d = data::generate(data::preset_generator("tiny"), 2);
  return d;
}

const data::DatasetBundle& default_data() {
  static const data::DatasetBundle d = data::generate(data::preset_generator("default"), 1);
  return d;
}

TEST(TrainConfigTest, JsonRoundTripIsIdentity) {
  for (const char* preset : {"default", "paper"})
    for (ModelKind kind : kAllModels) {
      const TrainConfig c = preset_train(preset, kind);
      const TrainConfig back = TrainConfig::from_json(c.to_json());
      EXPECT_EQ(back, c) << preset;
      EXPECT_EQ(back.canonical(), c.canonical());
      EXPECT_EQ(back.hash(), c.hash());
    }
}

TEST(TrainConfigTest, UnknownKeysAreRejectedAndMissingKeysDefault) {
  io::ordered_json j = TrainConfig{}.to_json();
  j["learning_rate"] = 0.1;
  EXPECT_THROW(TrainConfig::from_json(j), ConfigError);
  const TrainConfig partial = TrainConfig::from_json(io::ordered_json{{"lr", 0.5}});
  TrainConfig expected;
  expected.lr = 0.5;
  EXPECT_EQ(partial, expected);
}

TEST(TrainConfigTest, ValidationAndHashSensitivity) {
  TrainConfig c;
  c.warmup_epochs = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.pseudo_threshold = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  TrainConfig d;
  d.lr *= 2;
  EXPECT_NE(TrainConfig{}.hash(), d.hash());
  EXPECT_THROW(preset_train("huge", ModelKind::Crf), ConfigError);
}

TEST(GradCheckTest, FullObjectivesMatchFiniteDifferences) {
  for (ModelKind kind : kAllModels)
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const GradCheckReport r = grad_check(gradcheck_config(kind, seed));
      EXPECT_FALSE(r.groups.empty());
      EXPECT_LT(r.max_rel_error(), 1e-4) << to_string(kind) << " seed " << seed;
    }
}

TEST(GradCheckTest, ZeroTradeOffsStillMatch) {
  TrainConfig crf = gradcheck_config(ModelKind::Crf, 4);
  crf.lambda1 = crf.lambda2 = 0.0;
  EXPECT_LT(grad_check(crf).max_rel_error(), 1e-4);
  TrainConfig mrf = gradcheck_config(ModelKind::Mrf, 4);
  mrf.alpha = 0.0;
  EXPECT_LT(grad_check(mrf).max_rel_error(), 1e-4);
}

TEST(TrainerTest, SameSeedGivesIdenticalMetricsFiles) {
  const fs::path dir = scratch("determinism");
  for (ModelKind kind : kAllModels) {
    std::string files[2];
    Tensor preds[2];
    for (int r = 0; r < 2; ++r) {
      Trainer t(small_config(kind, 3), tiny_data());
      const auto metrics = t.run();
      const fs::path p = dir / ("metrics_" + std::to_string(r) + ".csv");
      write_metrics_csv(p, "msda train", metrics);
      files[r] = io::read_text(p);
      preds[r] = t.model().predict(tiny_data().target().features);
    }
    EXPECT_EQ(files[0], files[1]) << to_string(kind);
    EXPECT_EQ(preds[0], preds[1]);
  }
  fs::remove_all(dir);
}

TEST(TrainerTest, CheckpointRoundTripIsBitExact) {
  const fs::path dir = scratch("checkpoint");
  for (ModelKind kind : kAllModels) {
    Trainer t(small_config(kind, 2), tiny_data());
    t.run();
    const fs::path p = dir / (to_string(kind) + ".mshx");
    save_checkpoint(p, "msda train", t.config(), t.model(), t.rng_state(),
                    io::ordered_json{{"epochs", 2}});
    const Checkpoint ck = load_checkpoint(p);
    EXPECT_EQ(ck.config, t.config());
    EXPECT_EQ(ck.rng_state, t.rng_state());
    EXPECT_EQ(ck.model.kind(), kind);
    const auto& f = tiny_data().target().features;
    EXPECT_EQ(ck.model.predict(f), t.model().predict(f));
    const auto a = evaluate(ck.model, tiny_data()).domain_accuracy;
    const auto b = evaluate(t.model(), tiny_data()).domain_accuracy;
    EXPECT_EQ(a, b);
    EXPECT_THROW(ck.model.predict(Tensor({2, 5})), CheckpointError);
  }
  fs::remove_all(dir);
}

TEST(TrainerTest, CorruptCheckpointsAreRejected) {
  const fs::path dir = scratch("corrupt");
  Trainer t(small_config(ModelKind::Mrf, 1), tiny_data());
  const fs::path p = dir / "m.mshx";
  save_checkpoint(p, "msda train", t.config(), t.model(), t.rng_state(), io::ordered_json{});
  const std::string text = io::read_text(p);

  std::string tampered = text;
  const auto at = tampered.find("\"lr\":");
  ASSERT_NE(at, std::string::npos);
  tampered.insert(at + 5, "9");
  io::write_text(dir / "hash.mshx", tampered);
  EXPECT_THROW(load_checkpoint(dir / "hash.mshx"), CheckpointError);

  io::write_text(dir / "short.mshx", text.substr(0, text.size() / 2));
  EXPECT_THROW(load_checkpoint(dir / "short.mshx"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir / "absent.mshx"), CheckpointError);
  fs::remove_all(dir);
}

TEST(TrainerTest, ZeroEpochsLeavesTheInitialModel) {
  for (ModelKind kind : kAllModels) {
    Trainer fresh(small_config(kind, 0), tiny_data());
    Trainer ran(small_config(kind, 0), tiny_data());
    EXPECT_TRUE(ran.run().empty());
    EXPECT_EQ(ran.step_count(), 0);
    auto a = fresh.model().parameters();
    auto b = ran.model().parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value);
  }
}

TEST(TrainerTest, WarmupWithholdsTargetTerms) {
  TrainConfig c = small_config(ModelKind::Mrf, 4);
  c.warmup_epochs = 2;
  c.pseudo_threshold = 0.0;
  Trainer t(c, tiny_data());
  for (int e = 0; e < 2; ++e) {
    const EpochMetrics m = t.run_epoch();
    EXPECT_EQ(m.mean.tgt, 0.0);
    EXPECT_EQ(m.pseudo_labeled, 0u);
    for (const auto& p : t.pseudo_labels()) EXPECT_FALSE(p.has_value());
  }
  const EpochMetrics after = t.run_epoch();
  EXPECT_GT(after.mean.tgt, 0.0);
  EXPECT_EQ(after.pseudo_labeled, tiny_data().target().size());
}

TEST(EvaluationTest, AccuracyOfPerfectPredictionsIsOne) {
  const Tensor p = Tensor::matrix(3, 2, {0.9, 0.1, 0.2, 0.8, 0.6, 0.4});
  EXPECT_EQ(accuracy(p, {0, 1, 0}), 1.0);
  EXPECT_NEAR(accuracy(p, {1, 1, 0}), 2.0 / 3.0, 1e-15);
}

TEST(EvaluationTest, UntrainedModelsScoreChanceOnIndependentLabels) {
  const std::size_t n = 4000;
  const double K = 5.0;
  const double bound = 3.0 * std::sqrt((1 / K) * (1 - 1 / K) / static_cast<double>(n));
  Rng rng(31);
  for (ModelKind kind : kAllModels) {
    TrainConfig c = preset_train("default", kind);
    c.seed = 11;
    Rng init(c.seed);
    const AnyModel model = AnyModel::create(c, 3, 5, 8, init);
    const Tensor x = testing::random_tensor({n, 8}, rng, -2.0, 2.0);
    std::vector<int> y(n);
    for (auto& v : y) v = testing::random_int(rng, 0, 4);
    EXPECT_NEAR(accuracy(model.predict(x), y), 1 / K, bound) << to_string(kind);
  }
}

TEST(EvaluationTest, ConvergedSourceOnlyFitsItsTrainingSet) {
  TrainConfig c = preset_train("default", ModelKind::SourceOnly);
  c.epochs = 30;
  c.seed = 1;
  Trainer t(c, default_data());
  t.run();
  const EvalReport r = evaluate(t.model(), default_data());
  for (std::size_t m = 0; m + 1 < r.domain_accuracy.size(); ++m)
    EXPECT_GE(r.domain_accuracy[m], 0.99) << "source " << m;
}

TEST(EvaluationTest, PseudoLabelAccuracyRisesWithThreshold) {
  TrainConfig c = preset_train("default", ModelKind::SourceOnly);
  c.epochs = 20;
  c.seed = 2;
  Trainer t(c, default_data());
  t.run();
  const auto& target = default_data().target();
  const Tensor probs = t.model().predict(target.features);
  double prev = 0.0;
  for (double th : {0.0, 0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 0.99}) {
    const auto labels = data::assign_pseudo_labels(probs, th);
    std::size_t labeled = 0, correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i]) {
        ++labeled;
        correct += *labels[i] == target.labels[i];
      }
    if (labeled == 0) break;
    const double acc = static_cast<double>(correct) / static_cast<double>(labeled);
    EXPECT_GE(acc, prev) << "threshold " << th;
    prev = acc;
  }
}

}  // namespace
}  // namespace msda
