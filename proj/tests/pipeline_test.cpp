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
#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "planted_fixture.hpp"
#include "predbias/pipeline.hpp"
#include "test_util.hpp"

namespace predbias {
namespace {

namespace fs = std::filesystem;
using testing::expect_error;
using testing::TempDir;

fixture::PlantedFixture small_fixture(const fs::path& dir) {
  fixture::PlantedOptions opt;
  opt.scale = 0.1;  // 200 relations
  opt.na_pairs = 10;
  return fixture::make_planted_fixture(dir, opt);
}

void edit_config(const fs::path& path, const std::function<void(nlohmann::json&)>& edit) {
  auto j = nlohmann::json::parse(read_file(path));
  edit(j);
  std::ofstream(path) << j.dump(2);
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = read_file(e.path());
  return out;
}

TEST(Config, DefaultsAndRelativePaths) {
  const auto c = PipelineConfig::from_json(nlohmann::json::parse(R"({
      "inputs": {"dataset": "d.jsonl", "predicates": "p.json", "predictions": "x.jsonl", "confusion": "c.csv"}})"),
                                           "/data");
  EXPECT_EQ(c.dataset, fs::path("/data/d.jsonl"));
  EXPECT_DOUBLE_EQ(c.train.temperature, 0.05);
  EXPECT_DOUBLE_EQ(c.train.margin, degrees_to_radians(10.0));
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 2e-5);
  EXPECT_DOUBLE_EQ(c.train.lambda, 0.3);
  EXPECT_DOUBLE_EQ(c.prototype.gamma, 1.5);
  EXPECT_DOUBLE_EQ(c.prototype.beta, 0.9);
  EXPECT_DOUBLE_EQ(c.prototype.mu, 1.0);
  EXPECT_DOUBLE_EQ(c.prototype.drop_percent, 50.0);
  EXPECT_DOUBLE_EQ(c.k_g, 0.05);
  EXPECT_DOUBLE_EQ(c.t, 3e7);
}

TEST(Config, Errors) {
  expect_error(ErrorKind::kConfig, [] { PipelineConfig::from_json(nlohmann::json::parse("{}")); });
  expect_error(ErrorKind::kConfig, [] {
    PipelineConfig::from_json(nlohmann::json::parse(R"({
      "inputs": {"dataset": "d", "predicates": "p", "predictions": "x", "confusion": "c"},
      "transfer": {"k_g": 2}})"));
  });
  expect_error(ErrorKind::kConfig, [] {
    PipelineConfig::from_json(nlohmann::json::parse(R"({
      "inputs": {"dataset": "d", "predicates": "p", "predictions": "x", "confusion": "c"},
      "prototype": {"schedule": "sometimes"}})"));
  });
}

TEST(Pipeline, MissingUpstreamArtifactIsDependencyError) {
  TempDir tmp;
  const auto fx = small_fixture(tmp / "in");
  try {
    run(fx.config, tmp / "out", std::nullopt, "identify");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDependency);
    EXPECT_NE(std::string(e.what()).find("stage identify"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("missing upstream artifact " + (tmp / "out").string()), std::string::npos)
        << e.what();
  }
}

TEST(Pipeline, NoTrainingAndNoTransferLeavesDatasetUnchanged) {
  TempDir tmp;
  const auto fx = small_fixture(tmp / "in");
  edit_config(fx.config, [](nlohmann::json& j) {
    j["train"]["epochs"] = 0;
    j["transfer"]["k_g"] = 0.0;
    j["transfer"]["indistinguishable"] = false;
  });
  run(fx.config, tmp / "out");
  EXPECT_EQ(read_file(tmp / "out" / "plan.jsonl"), "");
  EXPECT_EQ(read_file(tmp / "out" / "dataset.enhanced.jsonl"), read_file(tmp / "out" / "dataset.jsonl"));
  const auto summary = nlohmann::json::parse(read_file(tmp / "out" / "summary.json"));
  EXPECT_EQ(summary["transfer"]["total_moves"], 0);
  std::ifstream report(tmp / "out" / "report.csv");
  std::string line;
  std::getline(report, line);
  while (std::getline(report, line)) EXPECT_EQ(split_csv(line)[4], "0") << line;
}

TEST(Pipeline, SmallFixtureEndToEnd) {
  TempDir tmp;
  const auto fx = small_fixture(tmp / "in");
  const auto start = std::chrono::steady_clock::now();
  run(fx.config, tmp / "out");
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 60.0);
  for (auto name : {"dataset.enhanced.jsonl", "plan.jsonl", "prototypes.csv", "similarity.csv", "filtration.csv",
                    "index.txt", "report.csv", "summary.json", "loss_trace.csv", "encoder.csv"})
    EXPECT_TRUE(fs::exists(tmp / "out" / name)) << name;
  for (const auto& e : fs::directory_iterator(tmp / "out")) EXPECT_NE(e.path().extension(), ".partial");

  // flagged.txt holds every relation whose prediction disagrees with its label.
  const Dataset ds = load_dataset(tmp / "out" / "dataset.jsonl", PredicateVocab(fx.predicates));
  const auto preds = load_predictions(tmp / "out" / "predictions.jsonl", fx.predicates.size());
  std::size_t lines = 0;
  std::ifstream flagged(tmp / "out" / "flagged.txt");
  for (std::string l; std::getline(flagged, l);) lines += !trim(l).empty();
  EXPECT_EQ(lines, identify_indistinguishable(ds, preds).size());
  EXPECT_GE(lines, fx.planted.size());
}

TEST(Pipeline, DeterministicAcrossRuns) {
  TempDir tmp;
  const auto fx = small_fixture(tmp / "in");
  run(fx.config, tmp / "a");
  run(fx.config, tmp / "b");
  EXPECT_EQ(snapshot(tmp / "a"), snapshot(tmp / "b"));
  run(fx.config, tmp / "c", 12345);
  EXPECT_NE(read_file(tmp / "a" / "encoder.csv"), read_file(tmp / "c" / "encoder.csv"));
}

TEST(Pipeline, StageRerunDoesNotTouchUpstream) {
  TempDir tmp;
  const auto fx = small_fixture(tmp / "in");
  run(fx.config, tmp / "out");
  const auto before = snapshot(tmp / "out");
  run(fx.config, tmp / "out", std::nullopt, "transfer");
  run(fx.config, tmp / "out", std::nullopt, "resample");
  run(fx.config, tmp / "out", std::nullopt, "audit");
  EXPECT_EQ(snapshot(tmp / "out"), before);
}

TEST(Pipeline, StagewiseEqualsRunAll) {
  TempDir tmp;
  const auto fx = small_fixture(tmp / "in");
  run(fx.config, tmp / "all");
  for (auto stage : kStages) run(fx.config, tmp / "staged", std::nullopt, std::string(stage));
  EXPECT_EQ(snapshot(tmp / "all"), snapshot(tmp / "staged"));
}

TEST(Pipeline, FeaturizerPathWithoutExternalEmbeddings) {
  TempDir tmp;
  const auto fx = small_fixture(tmp / "in");
  edit_config(fx.config, [](nlohmann::json& j) {
    j["inputs"].erase("embeddings");
    j["embedding"]["dim"] = 64;
    j["embedding"]["encoder_dim"] = 16;
    j["train"]["epochs"] = 2;
  });
  run(fx.config, tmp / "out");
  const auto table = load_external_embeddings(tmp / "out" / "embeddings.csv");
  EXPECT_EQ(table.dim, 64u);
  EXPECT_EQ(table.rows.size(), fx.relations);
  auto in = open_input(tmp / "out" / "encoder.csv");
  const auto enc = parse_encoder(in);
  EXPECT_EQ(enc.out_dim(), 16u);
  EXPECT_EQ(enc.in_dim(), 64u);
}

}  // namespace
}  // namespace predbias
