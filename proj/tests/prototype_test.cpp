/* Copyright 2026 The predbias Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "predbias/prototype.hpp"
#include "test_util.hpp"

namespace predbias {
namespace {

using testing::expect_error;

constexpr double kInf = std::numeric_limits<double>::infinity();

double distance(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

TEST(ClassAverage, Examples) {
  EXPECT_EQ(batch_class_average(std::vector<Vector>{{0.3, 0.4}}), (Vector{0.3, 0.4}));
  EXPECT_EQ(batch_class_average(std::vector<Vector>{{1, 0}, {-1, 0}}), (Vector{0, 0}));
  EXPECT_EQ(batch_class_average(std::vector<Vector>{{1, 0}, {0, 1}}), (Vector{0.5, 0.5}));
  expect_error(ErrorKind::kPrecondition, [] { batch_class_average(std::vector<Vector>{}); });
}

TEST(Update, FixedPointIsExact) {
  for (double beta : {0.0, 0.5, 0.9}) {
    for (double var : {0.0, 1e-3, 10.0}) {
      auto space = PrototypeSpace::zeros(2, 3);
      space.prototypes[1] = {0.1, -0.7, 1.0 / 3.0};
      const Vector h = space.prototypes[1];
      update_prototype(space, 1, h, var, 4, beta, 1.5, kInf);
      EXPECT_EQ(space.prototypes[1], h);
    }
  }
}

TEST(Update, BetaZeroExample) {
  auto space = PrototypeSpace::zeros(1, 2);
  // Var + eps = 1, N = 1, gamma = 1: one full step lands on H.
  update_prototype(space, 0, Vector{1, 0}, 1.0 - kVarianceEpsilon, 1, 0.0, 1.0, kInf);
  EXPECT_NEAR(space.prototypes[0][0], 1.0, 1e-12);
  EXPECT_NEAR(space.prototypes[0][1], 0.0, 1e-12);
}

TEST(Update, SpeedStrictlyDecreasesInVariance) {
  double last = kInf;
  for (double var : {0.0, 1e-6, 1e-3, 0.1, 1.0, 10.0, 1e3}) {
    const double s = approach_speed(var, 8, 1.5);
    EXPECT_LT(s, last) << var;
    last = s;
  }
  // Larger variance moves the prototype less.
  auto slow = PrototypeSpace::zeros(1, 2), fast = PrototypeSpace::zeros(1, 2);
  update_prototype(slow, 0, Vector{1, 1}, 2.0, 8, 0.9, 1.5, kInf);
  update_prototype(fast, 0, Vector{1, 1}, 1.0, 8, 0.9, 1.5, kInf);
  EXPECT_LT(norm(slow.prototypes[0]), norm(fast.prototypes[0]));
}

TEST(Update, MonotoneConvergenceUnderStationaryBatches) {
  const Vector target = {0.6, -0.8, 0.0};
  for (double var : {0.05, 0.1, 0.5}) {
    auto space = PrototypeSpace::zeros(1, 3);
    space.prototypes[0] = {-1, 1, 1};
    double last = distance(space.prototypes[0], target);
    for (int step = 0; step < 1000; ++step) {
      update_prototype(space, 0, target, var, 4, 0.9, 1.5, PrototypeConfig{}.max_step);
      const double d = distance(space.prototypes[0], target);
      EXPECT_LE(d, last);
      last = d;
    }
    EXPECT_LT(last, 1e-6) << var;
  }
}

TEST(Update, CappedStepIsAtMostFull) {
  auto space = PrototypeSpace::zeros(1, 2);
  update_prototype(space, 0, Vector{1, 0}, 0.0, 1, 0.9, 1.5, 1.0);
  EXPECT_EQ(space.prototypes[0], (Vector{1, 0}));
}

TEST(Flag, Examples) {
  EXPECT_FALSE(flag_biased(0.0, 0.2, 1.0, 1.0));
  EXPECT_TRUE(flag_biased(1e-12, 0.2, 0.0, 1.0));
  EXPECT_TRUE(flag_biased(0.5, 0.2, 1.0, 1.0));
  EXPECT_FALSE(flag_biased(0.1, 0.2, 1.0, 1.0));
}

FiltrationState state_with(std::size_t class0, std::size_t class1) {
  std::vector<RelationId> ids;
  std::vector<PredicateIndex> preds;
  for (std::size_t i = 0; i < class0 + class1; ++i) {
    ids.push_back(static_cast<RelationId>(i));
    preds.push_back(i < class0 ? 0 : 1);
  }
  return FiltrationState(ids, preds, 2);
}

std::vector<FlaggedSample> flagged_range(RelationId first, PredicateIndex p, int n) {
  std::vector<FlaggedSample> out;
  for (int k = 0; k < n; ++k) out.push_back({first + k, p, 0.1 * k});
  return out;
}

TEST(Filtration, ZeroPercentDropsNothing) {
  auto state = state_with(200, 0);
  EXPECT_TRUE(multistage_filtration(flagged_range(0, 0, 10), 0.0, 100, 1, state).empty());
}

TEST(Filtration, ProtectedClassKeepsEverything) {
  auto state = state_with(50, 150);
  EXPECT_TRUE(multistage_filtration(flagged_range(0, 0, 10), 50.0, 100, 1, state).empty());
  EXPECT_EQ(state.active_count(0), 50u);
}

TEST(Filtration, DropsHighestLossHalf) {
  auto state = state_with(150, 150);
  auto flagged = flagged_range(0, 0, 6);
  auto more = flagged_range(150, 1, 4);
  flagged.insert(flagged.end(), more.begin(), more.end());
  const auto events = multistage_filtration(flagged, 50.0, 100, 3, state);
  ASSERT_EQ(events.size(), 5u);
  // Losses 0.5, 0.4, 0.3 (class 0) and 0.3, 0.2 (class 1) are the top five;
  // the 0.3 tie goes to the lower relation id first.
  const std::vector<RelationId> expected = {5, 4, 3, 153, 2};
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(events[k].relation_id, expected[k]);
    EXPECT_EQ(events[k].epoch, 3);
    EXPECT_EQ(events[k].reason, kDropReason);
    EXPECT_FALSE(state.is_active(expected[k]));
  }
  EXPECT_EQ(state.active_count(0), 146u);
  EXPECT_EQ(state.active_count(1), 149u);
}

TEST(Filtration, CeilingCount) {
  auto state = state_with(200, 0);
  EXPECT_EQ(multistage_filtration(flagged_range(0, 0, 7), 50.0, 100, 1, state).size(), 4u);
  EXPECT_EQ(ceil_count(0.07, 100), 7u);
  EXPECT_EQ(ceil_count(0.05, 100), 5u);
  EXPECT_EQ(ceil_count(0.5, 5), 3u);
  EXPECT_EQ(ceil_count(0.0, 5), 0u);
}

TEST(Similarity, Properties) {
  PrototypeSpace space = PrototypeSpace::zeros(3, 2);
  space.prototypes = {{2, 0}, {0, 0.5}, {1, 1}};
  const auto s = similarity_matrix(space);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(s(i, i), 1.0, 1e-9);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(s(i, j), s(j, i));
  }
  EXPECT_EQ(s(0, 1), 0.0);
  EXPECT_NEAR(s(0, 2), std::sqrt(0.5), 1e-12);

  space.prototypes[1] = {0, 0};
  expect_error(ErrorKind::kClassNeverSeen, [&] { similarity_matrix(space); });
}

TEST(PrototypeFiles, RoundTrip) {
  const PredicateVocab vocab({"on", "near"});
  PrototypeSpace space = PrototypeSpace::zeros(2, 3);
  space.prototypes = {{0.1, 0.2, 0.3}, {-1, 1e-9, 2.5}};
  std::stringstream s;
  write_prototypes(s, space, vocab);
  EXPECT_EQ(parse_prototypes(s, vocab).prototypes, space.prototypes);

  const auto sim = similarity_matrix(space);
  std::stringstream t;
  write_similarity(t, sim, vocab);
  EXPECT_EQ(parse_similarity(t, vocab), sim);
}

// Two classes with stationary clusters: the learner's prototypes converge to
// the cluster means and protected classes never lose a sample.
TEST(Learner, ConvergesAndProtects) {
  Rng rng(8);
  std::vector<TrainingSample> samples;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < (c == 0 ? 240u : 60u); ++i) {
      Vector b(4);
      for (double& x : b) x = 0.05 * rng.normal();
      b[c] += 1.0;
      samples.push_back({static_cast<RelationId>(samples.size()), c, b});
    }
  std::vector<Vector> enc;
  std::vector<PredicateIndex> labels;
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-3;
  const auto init = EncoderParams::initialize(4, 4, cfg.seed, cfg.init_noise);
  for (const auto& s : samples) {
    enc.push_back(encode(init, s.base));
    labels.push_back(s.predicate);
  }
  PrototypeLearner learner(samples, PrototypeSpace::from_class_means(enc, labels, 2), {});
  const auto result = fit(samples, 4, ConfusionMatrix::zeros(2), cfg, learner.hooks(), init);

  EXPECT_EQ(learner.filtration().active_count(1), 60u);
  std::size_t last = samples.size();
  for (const auto& t : result.trace) {
    EXPECT_LE(t.active_samples, last);
    last = t.active_samples;
  }
  const auto s = similarity_matrix(learner.space());
  EXPECT_LT(s(0, 1), 0.2);
}

}  // namespace
}  // namespace predbias
