#include <gtest/gtest.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "fcil/clear.hpp"
#include "fcil/errors.hpp"
#include "fcil/replay.hpp"
#include "fcil/vtrace.hpp"
#include "oracles.hpp"

using namespace fcil;
using namespace fcil::clear;

namespace {

ReplayEntry entry(double tag, std::size_t width = 2) {
  ReplayEntry e;
  e.features.assign(width, tag);
  e.label = 0;
  e.stored_probs = {0.25, 0.75};
  return e;
}

Trajectory random_trajectory(Rng& rng, double gamma, double clip_c, double clip_rho) {
  Trajectory t;
  const auto n = 1 + rng.below(8);
  for (std::size_t i = 0; i < n; ++i) {
    t.rewards.push_back(rng.normal());
    t.behavior_probs.push_back(rng.uniform(0.05, 1.0));
    t.current_probs.push_back(rng.uniform(0.05, 1.0));
    t.values.push_back(rng.normal());
  }
  t.bootstrap_value = rng.normal();
  t.discount = gamma;
  t.clip_c = clip_c;
  t.clip_rho = clip_rho;
  return t;
}

}  // namespace

TEST(ReplayBuffer, FirstCapacityInsertionsAreAllKept) {
  ReplayBuffer buffer(100);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) buffer.insert(entry(i), rng);
  ASSERT_EQ(buffer.size(), 100u);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(buffer.entries()[i].features[0], i);
  EXPECT_EQ(buffer.seen_count(), 100u);
}

TEST(ReplayBuffer, DefaultCapacity) { EXPECT_EQ(ReplayBuffer().capacity(), 100u); }

TEST(ReplayBuffer, NeverExceedsCapacity) {
  ReplayBuffer buffer(10);
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    buffer.insert(entry(i), rng);
    ASSERT_LE(buffer.size(), 10u);
  }
  EXPECT_EQ(buffer.seen_count(), 1000u);
}

TEST(ReplayBuffer, CapacityOneSurvivorIsUniform) {
  const int n = 10;
  const int trials = 10000;
  std::vector<int> wins(n, 0);
  for (int trial = 0; trial < trials; ++trial) {
    ReplayBuffer buffer(1);
    Rng rng(derive_seed(RngSeed{77}, {static_cast<std::uint64_t>(trial)}));
    for (int i = 0; i < n; ++i) buffer.insert(entry(i), rng);
    ++wins[static_cast<int>(buffer.entries()[0].features[0])];
  }
  const double p = 1.0 / n;
  const double sigma = std::sqrt(p * (1 - p) / trials);
  for (int i = 0; i < n; ++i) {
    EXPECT_NEAR(wins[i] / static_cast<double>(trials), p, 3 * sigma) << "item " << i;
  }
}

TEST(ReplayBuffer, RejectsInconsistentEntries) {
  ReplayBuffer buffer(5);
  Rng rng(3);
  buffer.insert(entry(1, 2), rng);
  EXPECT_THROW(buffer.insert(entry(1, 3), rng), DimensionError);
  auto bad = entry(1);
  bad.stored_probs = {0.5, 0.6};
  EXPECT_THROW(buffer.insert(bad, rng), NumericError);
  EXPECT_THROW(ReplayBuffer(0), ConfigError);
}

TEST(ReplayBuffer, SampleEdgeCases) {
  ReplayBuffer buffer(5);
  Rng rng(4);
  EXPECT_TRUE(buffer.sample(0, rng).empty());
  EXPECT_THROW(buffer.sample(1, rng), EmptyBufferError);
  buffer.insert(entry(9), rng);
  const auto draws = buffer.sample(5, rng);
  ASSERT_EQ(draws.size(), 5u);
  for (const auto& d : draws) EXPECT_EQ(d.features[0], 9.0);
}

TEST(ReplayBuffer, SamplingIsUniform) {
  ReplayBuffer buffer(10);
  Rng rng(5);
  for (int i = 0; i < 10; ++i) buffer.insert(entry(i), rng);
  std::vector<int> counts(10, 0);
  const auto draws = buffer.sample(100000, rng);
  for (const auto& d : draws) ++counts[static_cast<int>(d.features[0])];
  for (int c : counts) EXPECT_NEAR(c / 100000.0, 0.1, 0.01);
}

TEST(ReplayBuffer, JsonRoundTrip) {
  ReplayBuffer buffer(3);
  Rng rng(6);
  for (int i = 0; i < 7; ++i) {
    auto e = entry(i * 0.1);
    e.stored_value = -i;
    buffer.insert(e, rng);
  }
  const auto doc = buffer.to_json();
  EXPECT_EQ(doc.at("capacity"), 3);
  EXPECT_EQ(doc.at("seen_count"), 7);
  const auto back = ReplayBuffer::from_json(doc);
  EXPECT_EQ(back.to_json(), doc);
  ASSERT_EQ(back.size(), buffer.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back.entries()[i].features, buffer.entries()[i].features);
    EXPECT_EQ(back.entries()[i].insert_step, buffer.entries()[i].insert_step);
  }
}

TEST(Vtrace, OnPolicyOneStepHorizonIsTdTarget) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto t = random_trajectory(rng, 0.9, 1.0, 1.0);
    t.current_probs = t.behavior_probs;
    t.horizon = 1;
    const auto v = compute_vtrace(t);
    for (std::size_t s = 0; s < t.size(); ++s) {
      const double next = s + 1 < t.size() ? t.values[s + 1] : t.bootstrap_value;
      EXPECT_NEAR(v[s], t.rewards[s] + t.discount * next, 1e-12);
    }
  }
}

TEST(Vtrace, ZeroRewardsAndValues) {
  Trajectory t;
  t.rewards.assign(5, 0.0);
  t.values.assign(5, 0.0);
  t.behavior_probs.assign(5, 0.5);
  t.current_probs.assign(5, 0.3);
  for (double v : compute_vtrace(t)) EXPECT_EQ(v, 0.0);
}

TEST(Vtrace, MatchesBruteForce) {
  Rng rng(8);
  for (double gamma : {0.0, 0.5, 0.9, 1.0}) {
    for (double c : {0.5, 1.0, 2.0}) {
      for (double rho : {0.5, 1.0, 2.0}) {
        for (int trial = 0; trial < 20; ++trial) {
          auto t = random_trajectory(rng, gamma, c, rho);
          if (trial % 4 == 3) t.horizon = 1 + rng.below(3);
          const auto got = compute_vtrace(t);
          const auto want = oracle::vtrace(t);
          ASSERT_EQ(got.size(), want.size());
          for (std::size_t s = 0; s < got.size(); ++s) EXPECT_NEAR(got[s], want[s], 1e-10);
        }
      }
    }
  }
}

TEST(Vtrace, OnPolicyWeightsAreClippedOnes) {
  Trajectory t;
  t.rewards = {1.0};
  t.values = {0.0};
  t.behavior_probs = {0.4};
  t.current_probs = {0.4};
  t.clip_c = 0.5;
  t.clip_rho = 2.0;
  EXPECT_EQ(t.trace_weight(0), 0.5);
  EXPECT_EQ(t.rho(0), 1.0);
}

TEST(Vtrace, InvalidTrajectories) {
  Trajectory empty;
  EXPECT_THROW(compute_vtrace(empty), DimensionError);
  Trajectory t;
  t.rewards = {1.0};
  t.values = {0.0};
  t.behavior_probs = {0.0};
  t.current_probs = {0.5};
  EXPECT_THROW(compute_vtrace(t), NumericError);
  t.behavior_probs = {0.5, 0.5};
  EXPECT_THROW(compute_vtrace(t), DimensionError);
}

TEST(PolicyGradient, ZeroAdvantageAndCertainAction) {
  Trajectory t;
  t.rewards = {1.0, 1.0};
  t.values = {1.0, 1.0};
  t.behavior_probs = {0.5, 0.5};
  t.current_probs = {0.5, 0.5};
  t.bootstrap_value = 0.0;
  t.discount = 0.0;
  EXPECT_DOUBLE_EQ(policy_gradient_loss(t, compute_vtrace(t)), 0.0);

  Trajectory one;
  one.rewards = {3.0};
  one.values = {0.5};
  one.behavior_probs = {1.0};
  one.current_probs = {1.0};
  EXPECT_DOUBLE_EQ(policy_gradient_loss(one, compute_vtrace(one)), 0.0);
}

TEST(PolicyGradient, MatchesTermByTermSum) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const auto t = random_trajectory(rng, 0.9, 1.0, 1.0);
    const auto v = compute_vtrace(t);
    EXPECT_NEAR(policy_gradient_loss(t, v), oracle::policy_gradient(t, v), 1e-10);
  }
}

TEST(ValueLoss, Examples) {
  const std::vector<double> a{1.0, 2.0};
  EXPECT_EQ(value_loss(a, a), 0.0);
  const std::vector<double> one{1.0}, zero{0.0};
  EXPECT_DOUBLE_EQ(value_loss(one, zero), 0.5);
  Rng rng(10);
  std::vector<double> v(7), w(7);
  double want = 0.0;
  for (int i = 0; i < 7; ++i) {
    v[i] = rng.normal();
    w[i] = rng.normal();
    want += 0.5 * (v[i] - w[i]) * (v[i] - w[i]);
  }
  EXPECT_NEAR(value_loss(v, w), want, 1e-12);
}

TEST(EntropyLoss, Examples) {
  nn::Matrix onehot(2, 3);
  onehot << 1, 0, 0, 0, 0, 1;
  EXPECT_NEAR(entropy_loss(onehot), 0.0, 1e-12);
  EXPECT_NEAR(entropy_loss(nn::Matrix::Constant(3, 5, 0.2)), std::log(5.0), 1e-12);
  nn::Matrix p(1, 2);
  p << 0.7, 0.3;
  EXPECT_NEAR(entropy_loss(p), 0.61086, 1e-4);
  p << 0.7, 0.2;
  EXPECT_THROW(entropy_loss(p), NumericError);
}

TEST(PolicyCloning, Examples) {
  const std::vector<double> half{0.5, 0.5}, sure{1.0, 0.0}, skew{0.9, 0.1};
  EXPECT_EQ(policy_cloning_loss(half, half), 0.0);
  EXPECT_NEAR(policy_cloning_loss(sure, half), std::log(2.0), 1e-9);
  EXPECT_NE(policy_cloning_loss(skew, half), policy_cloning_loss(half, skew));
  EXPECT_GE(policy_cloning_loss(half, skew), 0.0);
}

TEST(ValueCloning, Examples) {
  EXPECT_EQ(value_cloning_loss(1.5, 1.5), 0.0);
  EXPECT_DOUBLE_EQ(value_cloning_loss(2.0, 0.0), 4.0);
  const std::vector<double> a{1, 2, 3}, b{0, 0, 1};
  EXPECT_DOUBLE_EQ(value_cloning_loss(a, b), 1 + 4 + 4);
}

class ClearStepTest : public ::testing::Test {
 protected:
  nn::MlpModel model = nn::mlp_init(std::vector<std::size_t>{3, 6, 2}, RngSeed{5});
  nn::Batch batch{(nn::Matrix(4, 3) << 1, 0, 2, 0, 1, -1, 3, 3, 0, -2, 1, 1).finished(), {0, 1, 1, 0}};
};

TEST_F(ClearStepTest, DegenerateConfigMatchesSupervisedStep) {
  ClearConfig cfg;
  cfg.replay_fraction = 0.0;
  cfg.kl_weight = 0.0;
  cfg.value_weight = 0.0;
  ReplayBuffer buffer(100);
  Rng rng(1);
  auto a = model;
  auto b = model;
  for (int step = 0; step < 5; ++step) {
    clear_train_step(a, batch, buffer, cfg, 0.1, rng);
    supervised_step(b, batch, 0.1);
    ASSERT_TRUE(nn::identical(a, b)) << "step " << step;
  }
  EXPECT_EQ(buffer.size(), 20u);
}

TEST_F(ClearStepTest, EmptyBufferStepIsSupervisedAndFillsBuffer) {
  ClearConfig cfg;
  ReplayBuffer buffer(100);
  Rng rng(2);
  auto a = model;
  auto b = model;
  const auto stats = clear_train_step(a, batch, buffer, cfg, 0.1, rng);
  supervised_step(b, batch, 0.1);
  EXPECT_TRUE(nn::identical(a, b));
  EXPECT_TRUE(stats.replay_skipped);
  EXPECT_EQ(stats.replay_rows, 0u);
  ASSERT_EQ(buffer.size(), 4u);
  const auto probs = nn::softmax_rows(nn::forward(a, batch.features).logits);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(buffer.entries()[i].label, batch.labels[i]);
    EXPECT_DOUBLE_EQ(buffer.entries()[i].stored_probs[1], probs(static_cast<Eigen::Index>(i), 1));
  }
}

TEST_F(ClearStepTest, ReplayRowsFollowFraction) {
  ClearConfig cfg;
  ReplayBuffer buffer(100);
  Rng rng(3);
  clear_train_step(model, batch, buffer, cfg, 0.1, rng);
  const auto stats = clear_train_step(model, batch, buffer, cfg, 0.1, rng);
  EXPECT_FALSE(stats.replay_skipped);
  EXPECT_EQ(stats.new_rows, 4u);
  EXPECT_EQ(stats.replay_rows, 4u);
  EXPECT_GT(stats.loss.total, 0.0);
}

TEST(ClearConfig, Validation) {
  ClearConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.replay_fraction = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.kl_weight = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.value_weight = 0.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.value_head = true;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(ClearConfig{}.replay_count(64), 64u);
}
