#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "evifuse/dataset.hpp"
#include "evifuse/error.hpp"
#include "evifuse/model.hpp"
#include "evifuse/training.hpp"
#include "evifuse_verify/checks.hpp"
#include "evifuse_verify/oracles.hpp"

using namespace evifuse;

namespace {

struct Fixture {
  Dataset data;
  std::vector<LabeledExample> train, val;
  Model model;
};

Fixture separable(std::uint64_t seed, int size = 12, std::size_t n_train = 24, std::size_t n_val = 4) {
  SyntheticSpec spec;
  spec.width = size;
  spec.height = size;
  spec.fidelity.assign(6, 1.0);
  spec.noise = 0.05;
  spec.regions = 4;
  spec.seed = seed;
  auto data = generate(spec, n_train + n_val);
  ModelConfig mc;
  mc.prototypes = 6;
  mc.hidden = 6;
  Model model = init_model(mc, data.frame, data.modalities, data.channels, seed);
  auto train = data.slice(0, n_train);
  auto val = data.slice(n_train, n_val);
  return {std::move(data), std::move(train), std::move(val), std::move(model)};
}

TrainingConfig small_config(std::uint64_t seed) {
  TrainingConfig c;
  c.pretrain_epochs = 10;
  c.fusion_epochs = 80;
  c.finetune_epochs = 5;
  c.patience = 10;
  c.learning_rate = 0.05;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{0.3, -4.0, 1e-3};
  OptimizerState s(3);
  adam_step(p, g, s, 0.01);
  EXPECT_EQ(s.step, 1u);
  // At t = 1 the corrected moments are g and g^2, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(p[0], 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], -2.0 + 0.01 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p[2], 0.5 - 0.01 * 1e-3 / (1e-3 + 1e-8), 1e-15);
  EXPECT_NEAR(std::abs(p[0] - 1.0), 0.01, 1e-9);
}

TEST(Adam, SecondStepMatchesHandRecurrence) {
  std::vector<double> p{0.0};
  OptimizerState s(1);
  adam_step(p, std::vector<double>{1.0}, s, 0.1);
  adam_step(p, std::vector<double>{-0.5}, s, 0.1);
  const double m = 0.9 * 0.1 * 1.0 + 0.1 * -0.5;
  const double v = 0.999 * 0.001 * 1.0 + 0.001 * 0.25;
  const double mhat = m / (1 - 0.81);
  const double vhat = v / (1 - 0.999 * 0.999);
  const double expected = -0.1 * 1.0 / (1.0 + 1e-8) - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  EXPECT_NEAR(p[0], expected, 1e-14);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<double> p{1.5, -0.25};
  const auto before = p;
  OptimizerState s(2);
  for (int i = 0; i < 3; ++i) adam_step(p, std::vector<double>{0.0, 0.0}, s, 0.01);
  EXPECT_EQ(p, before);
}

TEST(Adam, MaskFreezesParametersAndMoments) {
  std::vector<double> p{1.0, 2.0, 3.0};
  OptimizerState s(3);
  const std::vector<std::uint8_t> mask{1, 0, 1};
  for (int i = 0; i < 4; ++i) adam_step(p, std::vector<double>{0.1, 0.2, -0.3}, s, 0.01, mask);
  EXPECT_EQ(p[1], 2.0);
  EXPECT_EQ(s.first[1], 0.0);
  EXPECT_EQ(s.second[1], 0.0);
  EXPECT_NE(p[0], 1.0);
}

TEST(Adam, NonFiniteGradientAborts) {
  std::vector<double> p{1.0, 2.0};
  OptimizerState s(2);
  try {
    adam_step(p, std::vector<double>{0.1, std::numeric_limits<double>::quiet_NaN()}, s, 0.01);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
    EXPECT_NE(std::string(e.what()).find("1"), std::string::npos);
  }
  EXPECT_EQ(p, (std::vector<double>{1.0, 2.0}));
  EXPECT_THROW(adam_step(p, std::vector<double>{0.1}, s, 0.01), Error);
}

TEST(Config, ProblemsAreExhaustive) {
  TrainingConfig c;
  EXPECT_TRUE(c.problems().empty());
  c.learning_rate = 0.0;
  c.batch_size = 0;
  c.patience = -1;
  EXPECT_EQ(c.problems().size(), 3u);
  EXPECT_THROW(c.validate(), Error);
}

TEST(Head, GradientMatchesFiniteDifferences) {
  auto fx = separable(1, 5, 1, 1);
  const auto& ex = fx.train[0];
  const auto& extractor = fx.model.extractor(0);
  const auto head = init_head(extractor.feature_count(), 3, 2);
  std::vector<double> eg(extractor.parameter_count(), 0.0);
  std::vector<double> hg(head.weights.size() + head.bias.size(), 0.0);
  head_loss_and_gradient(extractor, head, ex.images[0], ex.labels, eg, hg);

  std::vector<double> hp = head.weights;
  hp.insert(hp.end(), head.bias.begin(), head.bias.end());
  for (std::size_t i = 0; i < hp.size(); ++i) {
    auto f = [&](std::span<const double> v) {
      SoftmaxHead h = head;
      std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h.weights.size()), h.weights.begin());
      std::copy(v.begin() + static_cast<std::ptrdiff_t>(h.weights.size()), v.end(), h.bias.begin());
      return head_loss_and_gradient(extractor, h, ex.images[0], ex.labels, {}, {});
    };
    EXPECT_LT(oracle::relative_error(hg[i], oracle::central_difference(f, hp, i, 1e-5)), 1e-4) << "head " << i;
  }
  const auto ep = extractor.parameters();
  for (std::size_t i = 0; i < ep.size(); ++i) {
    auto f = [&](std::span<const double> v) {
      auto e = extractor.clone();
      e->set_parameters(v);
      return head_loss_and_gradient(*e, head, ex.images[0], ex.labels, {}, {});
    };
    EXPECT_LT(oracle::relative_error(eg[i], oracle::central_difference(f, ep, i, 1e-5)), 1e-4) << "extractor " << i;
  }
  const auto probs = head_probabilities(extractor, head, ex.images[0]);
  for (std::size_t n = 0; n < 25; ++n) {
    EXPECT_NEAR(probs.values[n * 3] + probs.values[n * 3 + 1] + probs.values[n * 3 + 2], 1.0, 1e-12);
  }
}

TEST(Train, SeparableDataReachesHighDice) {
  auto fx = separable(3);
  const auto result = train(fx.model, fx.train, fx.val, small_config(3));
  ASSERT_FALSE(result.diverged) << result.divergence;
  EXPECT_GT(result.best.val_dice_fused, 0.95);
  EXPECT_GE(result.best.stage, 2);
  const auto scores = validate_model(result.model, fx.val);
  EXPECT_EQ(scores.dice_fused, result.best.val_dice_fused);
}

TEST(Train, LogBookkeeping) {
  auto fx = separable(4);
  auto config = small_config(4);
  const auto result = train(fx.model, fx.train, fx.val, config);
  ASSERT_FALSE(result.log.empty());
  int stage1 = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < result.log.size(); ++i) {
    const auto& row = result.log[i];
    EXPECT_EQ(row.epoch, static_cast<int>(i) + 1);
    if (row.stage == 1) {
      ++stage1;
      EXPECT_FALSE(row.best_val_dice.has_value());
      continue;
    }
    ASSERT_TRUE(row.best_val_dice.has_value());
    EXPECT_GE(*row.best_val_dice, best);
    EXPECT_GE(*row.best_val_dice, row.val_dice_fused);
    best = *row.best_val_dice;
  }
  EXPECT_EQ(stage1, config.pretrain_epochs);
  EXPECT_EQ(best, result.best.val_dice_fused);

  std::ostringstream csv;
  write_training_log(csv, result.log, fx.data.modalities);
  std::istringstream in(csv.str());
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,stage,train_loss,val_loss,val_dice_fused,val_dice_A,val_dice_B,best_val_dice");
}

TEST(Train, ZeroPatienceStopsAfterFirstNonImprovingEpoch) {
  auto fx = separable(5);
  auto config = small_config(5);
  config.pretrain = false;
  config.finetune = false;
  config.patience = 0;
  config.fusion_epochs = 40;
  const auto result = train(fx.model, fx.train, fx.val, config);
  ASSERT_FALSE(result.log.empty());
  double best = -1.0;
  for (std::size_t i = 0; i + 1 < result.log.size(); ++i) {
    EXPECT_GT(result.log[i].val_dice_fused, best) << "epoch " << i + 1 << " did not improve";
    best = result.log[i].val_dice_fused;
  }
  if (static_cast<int>(result.log.size()) < config.fusion_epochs) {
    EXPECT_LE(result.log.back().val_dice_fused, best);
  }
}

TEST(Train, FrozenStageKeepsExtractorsBitIdentical) {
  auto fx = separable(6);
  auto config = small_config(6);
  config.pretrain = false;
  config.finetune = false;
  config.fusion_epochs = 5;
  const auto result = train(fx.model, fx.train, fx.val, config);
  for (int t = 0; t < 2; ++t) {
    EXPECT_EQ(result.model.extractor(t).parameters(), fx.model.extractor(t).parameters());
  }
  EXPECT_NE(pack_parameters(result.model), pack_parameters(fx.model));
}

TEST(Train, Deterministic) {
  auto fx = separable(7);
  auto config = small_config(7);
  config.pretrain_epochs = 3;
  config.fusion_epochs = 4;
  config.finetune_epochs = 2;
  const auto a = train(fx.model, fx.train, fx.val, config);
  const auto b = train(fx.model, fx.train, fx.val, config);
  EXPECT_EQ(pack_parameters(a.model), pack_parameters(b.model));
  ASSERT_EQ(a.log.size(), b.log.size());
  std::ostringstream la, lb;
  write_training_log(la, a.log, fx.data.modalities);
  write_training_log(lb, b.log, fx.data.modalities);
  EXPECT_EQ(la.str(), lb.str());
  ASSERT_TRUE(a.optimizer && b.optimizer);
  EXPECT_TRUE(*a.optimizer == *b.optimizer);
}

TEST(Train, NonFiniteInputMarksDivergence) {
  auto fx = separable(8);
  fx.train[0].images[0].data[5] = std::numeric_limits<double>::quiet_NaN();
  auto config = small_config(8);
  config.pretrain = false;
  config.fusion_epochs = 3;
  const auto result = train(fx.model, fx.train, fx.val, config);
  EXPECT_TRUE(result.diverged);
  EXPECT_FALSE(result.divergence.empty());
  // No epoch finished, so the returned model is the last finite state.
  EXPECT_TRUE(result.log.empty());
  for (double v : pack_parameters(result.model)) EXPECT_TRUE(std::isfinite(v));
}

TEST(Train, RejectsEmptySplits) {
  auto fx = separable(9, 6, 2, 1);
  EXPECT_THROW(train(fx.model, {}, fx.val, small_config(9)), Error);
  EXPECT_THROW(train(fx.model, fx.train, {}, small_config(9)), Error);
}
