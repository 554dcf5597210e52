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
#include <filesystem>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "predbias/corpus.hpp"
#include "predbias/embedding.hpp"
#include "predbias/random.hpp"
#include "test_util.hpp"

namespace predbias {
namespace {

using testing::expect_error;

TEST(Featurize, DeterministicAndUnitNorm) {
  const auto a = featurize("The person is standing on the snow.", 256, 7);
  const auto b = featurize("The person is standing on the snow.", 256, 7);
  EXPECT_EQ(a, b);
  EXPECT_NEAR(norm(a), 1.0, 1e-9);
  EXPECT_NE(a, featurize("The person is standing on the snow.", 256, 8));
}

TEST(Featurize, DisjointSentencesAreNearlyOrthogonal) {
  Rng rng(99);
  auto word = [&] {
    std::string w;
    const auto len = 4 + rng.below(5);
    for (std::uint64_t i = 0; i < len; ++i) w += static_cast<char>('a' + rng.below(26));
    return w;
  };
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::string s1, s2;
    for (int k = 0; k < 6; ++k) {
      s1 += word() + "x ";  // suffixes keep the two vocabularies disjoint
      s2 += word() + "y ";
    }
    const double c = dot(featurize(s1, 4096, 3), featurize(s2, 4096, 3));
    worst = std::max(worst, std::abs(c));
  }
  EXPECT_LT(worst, 0.1);
}

TEST(Featurize, RejectsEmptyInput) {
  expect_error(ErrorKind::kValidation, [] { featurize("  ...  ", 16, 0); });
  expect_error(ErrorKind::kValidation, [] { featurize("word", 1, 0); });
}

TEST(Cosine, Examples) {
  const Vector h = {0.6, 0.8};
  EXPECT_DOUBLE_EQ(cosine_similarity(h, h), 1.0 - kCosineClamp);
  EXPECT_DOUBLE_EQ(cosine_similarity(Vector{1, 0}, Vector{0, 1}), 0.0);
  EXPECT_NEAR(cosine_similarity(Vector{1, 1}, Vector{1, 0}), std::sqrt(2.0) / 2.0, 1e-12);
  expect_error(ErrorKind::kValidation, [] { cosine_similarity(Vector{0, 0}, Vector{1, 0}); });
}

TEST(ArcAngle, Examples) {
  const Vector h = {0.6, 0.8};
  // arccos(1 - 1e-6) = sqrt(2e-6) to first order.
  EXPECT_NEAR(arc_angle(h, h), 1.4142e-3, 1e-6);
  EXPECT_NEAR(arc_angle(Vector{1, 0}, Vector{0, 1}), std::numbers::pi / 2, 1e-12);
  EXPECT_DOUBLE_EQ(arc_angle(Vector{1, 0}, Vector{-1, 0}), std::acos(-1.0 + kCosineClamp));
}

TEST(EmbeddingFile, RoundTripWithComment) {
  EmbeddingTable t;
  t.dim = 3;
  t.rows = {{4, {0.1, -0.2, 1.0 / 3.0}}, {9, {1e-300, 0.0, -7.5}}};
  std::stringstream s;
  write_embeddings(s, t, "model=test pooling=mean");
  EXPECT_EQ(s.str().substr(0, 2), "# ");
  EXPECT_EQ(parse_embeddings(s), t);
}

TEST(EmbeddingFile, FormatErrors) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_embeddings(in);
  };
  expect_error(ErrorKind::kParse, [&] { parse("id,dim=2\n1,0,1\n"); });
  expect_error(ErrorKind::kParse, [&] { parse("relation_id,dim=2\n1,0\n"); });
  expect_error(ErrorKind::kParse, [&] { parse("relation_id,dim=2\n1,0,nan\n"); });
  expect_error(ErrorKind::kValidation, [&] { parse("relation_id,dim=2\n1,0,1\n1,1,0\n"); });
  expect_error(ErrorKind::kParse, [&] { parse("# only a comment\n"); });
  EXPECT_EQ(parse("relation_id,dim=2\n").rows.size(), 0u);
  expect_error(ErrorKind::kCoverage, [&] { parse("relation_id,dim=2\n1,0,1\n").at(2); });
}

TEST(EmbeddingFile, FeaturizedDatasetCoversRelations) {
  Dataset ds;
  ds.vocab = PredicateVocab({"on", "near"});
  ds.image_ids = {"i"};
  ds.relations = {testing::relation(1, "i", "cup", "table", 0), testing::relation(2, "i", "cup", "tree", 1)};
  const auto t = featurize_dataset(ds, 64, 1);
  EXPECT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.at(1), featurize("The cup is on the table.", 64, 1));
}

// The shipped demo follows the exported-embedding contract: one unit-norm row
// per annotated relation and per NA pair, nothing else.
TEST(EmbeddingFile, SampleCoversRelationsAndNaPairs) {
  const std::filesystem::path dir = PREDBIAS_SAMPLES_DIR "/demo";
  const PredicateVocab vocab(load_labels(dir / "predicates.json"));
  const auto ds = load_dataset(dir / "dataset.jsonl", vocab);
  const auto table = load_external_embeddings(dir / "embeddings.csv");
  EXPECT_EQ(table.rows.size(), ds.relations.size() + ds.na_pairs.size());
  for (const auto& r : ds.relations) ASSERT_TRUE(table.rows.contains(r.relation_id)) << r.relation_id;
  for (const auto& r : ds.na_pairs) ASSERT_TRUE(table.rows.contains(r.relation_id)) << r.relation_id;
  for (const auto& [id, v] : table.rows) {
    ASSERT_EQ(v.size(), table.dim);
    EXPECT_NEAR(norm(v), 1.0, 1e-9);
  }
}

}  // namespace
}  // namespace predbias
