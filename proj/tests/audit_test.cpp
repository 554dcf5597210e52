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
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "predbias/audit.hpp"
#include "scene_fixture.hpp"
#include "test_util.hpp"

namespace predbias {
namespace {

using testing::relation;

TEST(Scores, PublishedRowComposition) {
  // R@100 29.2, mR@100 27.5 and PR@100 28.7 imply PQ ~= 34.4.
  EXPECT_NEAR(pr_score(29.2, 27.5, 34.4), 28.7, 0.05);
  EXPECT_NEAR(f_score(63.1, 15.2), 24.5, 0.05);
}

TEST(Scores, Identities) {
  for (double x : {0.0, 0.1, 17.25, 100.0}) {
    EXPECT_NEAR(pr_score(x, x, x), x, 1e-12);
    EXPECT_EQ(f_score(x, x), x);
    EXPECT_EQ(f_score(x, 0.0), 0.0);
  }
  EXPECT_EQ(pr_score(0, 0, 0), 0.0);
  for (auto [r, m] : {std::pair{10.0, 40.0}, {3.0, 0.5}, {55.0, 55.5}}) {
    const double f = f_score(r, m);
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, (r + m) / 2.0);
    EXPECT_EQ(f, f_score(m, r));
  }
}

SceneTriplet t(std::string s, std::string p, std::string o) { return {"c", std::move(s), std::move(p), "c", std::move(o)}; }

TEST(Recall, Examples) {
  SceneGraphs gt = {{"i", {t("1", "on", "2"), t("2", "near", "3")}}};
  EXPECT_EQ(recall_at_k(gt, gt, 5), 1.0);
  EXPECT_EQ(mean_recall_at_k(gt, gt, 5), 1.0);

  SceneGraphs none = {{"i", {t("1", "near", "2")}}};
  EXPECT_EQ(recall_at_k(gt, none, 5), 0.0);
  EXPECT_EQ(mean_recall_at_k(gt, none, 5), 0.0);

  SceneGraphs one = {{"i", {t("9", "on", "9"), t("1", "on", "2"), t("2", "near", "3")}}};
  EXPECT_EQ(recall_at_k(gt, one, 2), 0.5);
  EXPECT_EQ(mean_recall_at_k(gt, one, 2), 0.5);  // on: 1, near: 0
  EXPECT_EQ(recall_at_k(gt, one, 3), 1.0);
}

TEST(Recall, OnePredictionMatchesOneTriplet) {
  SceneGraphs gt = {{"i", {t("1", "on", "2"), t("1", "on", "2")}}};
  SceneGraphs pred = {{"i", {t("1", "on", "2")}}};
  EXPECT_EQ(recall_at_k(gt, pred, 10), 0.5);
}

TEST(Recall, MeanRecallAveragesOverImagesWithThePredicate) {
  SceneGraphs gt = {{"a", {t("1", "on", "2")}}, {"b", {t("1", "on", "2"), t("3", "near", "4")}}};
  SceneGraphs pred = {{"a", {t("1", "on", "2")}}, {"b", {t("3", "near", "4")}}};
  // on: (1 + 0) / 2, near: 1.
  EXPECT_DOUBLE_EQ(mean_recall_at_k(gt, pred, 5), 0.75);
  EXPECT_DOUBLE_EQ(recall_at_k(gt, pred, 5), 0.75);
}

TEST(Recall, MonotoneInK) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto [gt, pred] = testing::random_scene_graphs(seed);
    double r = 0.0, m = 0.0;
    for (int k = 1; k <= 30; ++k) {
      const double rk = recall_at_k(gt, pred, k), mk = mean_recall_at_k(gt, pred, k);
      EXPECT_GE(rk, r);
      EXPECT_GE(mk, m);
      r = rk;
      m = mk;
    }
  }
}

TEST(Recall, NonPositiveK) {
  testing::expect_error(ErrorKind::kValidation, [] { recall_at_k({}, {}, 0); });
}

TEST(SceneGraphFile, Parse) {
  std::istringstream in(
      R"({"image_id":"i","triplets":[{"sub":{"class":"person","seg":"1"},"obj":{"class":"snow","seg":"2"},"predicate":"standing on"}]})");
  const auto g = parse_scene_graphs(in);
  ASSERT_EQ(g.at("i").size(), 1u);
  EXPECT_EQ(g.at("i")[0], (SceneTriplet{"person", "1", "standing on", "snow", "2"}));
}

Dataset small() {
  Dataset ds;
  ds.vocab = PredicateVocab({"on", "standing on", "near"});
  ds.image_ids = {"i"};
  ds.relations = {relation(0, "i", "a", "b", 0), relation(1, "i", "a", "b", 0), relation(2, "i", "a", "b", 2)};
  ds.na_pairs = {relation(3, "i", "a", "b", std::nullopt)};
  return ds;
}

TEST(Report, EmptyPlanHasZeroDelta) {
  const auto ds = small();
  const auto rep = transfer_report(ds, ds, {});
  for (const auto& p : rep.predicates) EXPECT_EQ(p.before, p.after);
  EXPECT_EQ(rep.total_moves(), 0u);
}

TEST(Report, BookkeepingIdentities) {
  const auto ds = small();
  TransferPlan plan;
  plan.moves = {{0, 0, 1, 0.9, MoveKind::kIndistinguishable}, {3, std::nullopt, 1, 0.2, MoveKind::kNaPromotion}};
  const auto enhanced = apply_plan(ds, plan);
  const auto rep = transfer_report(ds, enhanced, plan);
  EXPECT_EQ(rep.total_moves(), plan.moves.size());
  for (const auto& p : rep.predicates)
    EXPECT_EQ(static_cast<long>(p.after) - static_cast<long>(p.before),
              static_cast<long>(p.moves_in) - static_cast<long>(p.moves_out))
        << p.label;
  std::size_t changed = 0;
  for (const auto& p : rep.predicates) changed += p.before != p.after;
  EXPECT_EQ(changed, 2u);

  std::ostringstream csv;
  write_report_csv(csv, rep);
  EXPECT_EQ(csv.str(),
            "rank,predicate,before,after,delta,moves_in,moves_out\n"
            "1,on,2,1,-1,0,1\n"
            "2,near,1,1,0,0,0\n"
            "3,standing on,0,2,2,2,0\n");
  EXPECT_EQ(report_json(rep)["total_moves"], 2);
}

TEST(Histogram, SumsToRelationCount) {
  const auto ds = small();
  const auto h = predicate_histogram(ds);
  EXPECT_EQ(h[0] + h[1] + h[2], ds.relations.size());
  Dataset empty;
  empty.vocab = ds.vocab;
  EXPECT_EQ(predicate_histogram(empty), (std::vector<std::size_t>{0, 0, 0}));
}

}  // namespace
}  // namespace predbias
