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
#ifndef PREDBIAS_TOOLS_PLANTED_FIXTURE_HPP_
#define PREDBIAS_TOOLS_PLANTED_FIXTURE_HPP_

// Synthetic relation dataset with known annotation bias.
//
// Two "general" predicates (on, near) each have an "informative" partner
// (standing on, beside) whose embedding cluster sits close to theirs. A
// fraction of general-labeled relations are planted: their base embedding is
// drawn from the informative cluster and the external model predicts the
// informative predicate. Every file the pipeline consumes is written, plus a
// config and the planted ground truth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "predbias/corpus.hpp"
#include "predbias/embedding.hpp"
#include "predbias/io.hpp"
#include "predbias/random.hpp"

namespace predbias::fixture {

struct PlantedOptions {
  std::uint64_t seed = 2024;
  std::size_t base_dim = 32;
  double planted_fraction = 0.2;
  double prediction_noise = 0.02;  // unplanted relations with a random wrong argmax
  double partner_cosine = 0.85;     // cos between a general and its informative cluster center
  double cluster_noise = 0.35;
  std::size_t na_pairs = 100;
  double scale = 1.0;  // multiplies every per-predicate count (1.0 gives 2,000 relations)
};

struct PlantedFixture {
  std::filesystem::path dir;
  std::filesystem::path config;
  std::vector<std::string> predicates;
  std::map<RelationId, PredicateIndex> planted;  // relation -> informative target
  std::vector<RelationId> unplanted;
  std::size_t relations = 0;
};

namespace detail {

struct PredicateSpec {
  const char* label;
  std::size_t count;
  std::vector<std::pair<const char*, const char*>> pairs;
};

inline const std::vector<PredicateSpec>& predicate_specs() {
  static const std::vector<PredicateSpec> specs = {
      {"on", 500, {{"cup", "table"}, {"book", "shelf"}, {"lamp", "desk"}}},
      {"near", 450, {{"car", "building"}, {"bench", "tree"}, {"bike", "fence"}}},
      {"standing on", 150, {{"person", "snow"}, {"person", "grass"}}},
      {"beside", 150, {{"dog", "person"}, {"chair", "table"}}},
      {"holding", 250, {{"person", "umbrella"}, {"person", "cup"}}},
      {"wearing", 200, {{"person", "shirt"}, {"person", "hat"}}},
      {"looking at", 150, {{"person", "screen"}, {"cat", "bird"}}},
      {"riding", 150, {{"person", "horse"}, {"person", "bike"}}},
  };
  return specs;
}

inline constexpr std::pair<PredicateIndex, PredicateIndex> kPartners[] = {{0, 2}, {1, 3}};

inline Vector random_unit(Rng& rng, std::size_t dim) {
  Vector v(dim);
  for (double& x : v) x = rng.normal();
  return normalized(v);
}

inline Vector orthogonal_unit(Rng& rng, const Vector& to) {
  Vector v = random_unit(rng, to.size());
  const double d = dot(v, to);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * to[i];
  return normalized(v);
}

inline Vector sample_near(Rng& rng, const Vector& center, double noise) {
  Vector v = center;
  const double scale = noise / std::sqrt(static_cast<double>(center.size()));
  for (double& x : v) x += scale * rng.normal();
  return normalized(v);
}

}  // namespace detail

inline PlantedFixture make_planted_fixture(const std::filesystem::path& dir, const PlantedOptions& opt = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto& specs = detail::predicate_specs();
  const std::size_t q = specs.size();
  Rng rng(opt.seed);

  PlantedFixture fx;
  fx.dir = dir;
  for (const auto& s : specs) fx.predicates.emplace_back(s.label);

  // Cluster centers: informative centers sit at a fixed angle from their partner.
  std::vector<Vector> centers(q);
  for (std::size_t p = 0; p < q; ++p) centers[p] = detail::random_unit(rng, opt.base_dim);
  for (auto [general, informative] : detail::kPartners) {
    const Vector u = detail::orthogonal_unit(rng, centers[general]);
    const double c = opt.partner_cosine, s = std::sqrt(1.0 - c * c);
    for (std::size_t d = 0; d < opt.base_dim; ++d) centers[informative][d] = c * centers[general][d] + s * u[d];
  }
  std::map<PredicateIndex, PredicateIndex> partner_of;
  for (auto [g, i] : detail::kPartners) partner_of[g] = i;

  struct Row {
    RelationId id;
    PredicateIndex label;
    PredicateIndex cluster;  // where the embedding and the prediction point
    std::string sub, obj;
  };
  std::vector<Row> rows;
  RelationId next_id = 0;
  for (PredicateIndex p = 0; p < q; ++p) {
    const auto& spec = specs[p];
    const bool general = partner_of.contains(p);
    const auto count = static_cast<std::size_t>(std::llround(opt.scale * static_cast<double>(spec.count)));
    const auto n_planted =
        general ? static_cast<std::size_t>(std::llround(opt.planted_fraction * static_cast<double>(count))) : 0;
    for (std::size_t k = 0; k < count; ++k) {
      const bool planted = k < n_planted;
      const PredicateIndex cluster = planted ? partner_of[p] : p;
      const auto& pairs = specs[cluster].pairs;
      const auto& [sub, obj] = pairs[rng.below(pairs.size())];
      rows.push_back({next_id++, p, cluster, sub, obj});
    }
  }
  rng.shuffle(std::span(rows));

  // Pack relations into images of 1..4 relations.
  Dataset ds;
  ds.vocab = PredicateVocab(fx.predicates);
  std::vector<std::string> entities;
  {
    std::set<std::string> e;
    for (const auto& s : specs)
      for (const auto& [a, b] : s.pairs) e.insert(a), e.insert(b);
    entities.assign(e.begin(), e.end());
  }
  ds.entity_vocab = entities;
  std::size_t cursor = 0, image_no = 0;
  while (cursor < rows.size()) {
    const std::string image = "img" + std::to_string(image_no++);
    ds.image_ids.push_back(image);
    const std::size_t take = std::min<std::size_t>(1 + rng.below(4), rows.size() - cursor);
    for (std::size_t k = 0; k < take; ++k, ++cursor) {
      const auto& row = rows[cursor];
      RelationInstance r;
      r.relation_id = row.id;
      r.image_id = image;
      r.subject = {row.sub, "s" + std::to_string(k)};
      r.object = {row.obj, "o" + std::to_string(k)};
      r.predicate = row.label;
      ds.relations.push_back(r);
    }
  }
  // Unannotated pairs with low NA scores, scattered over existing images.
  for (std::size_t k = 0; k < opt.na_pairs; ++k) {
    RelationInstance r;
    r.relation_id = next_id++;
    r.image_id = ds.image_ids[rng.below(ds.image_ids.size())];
    r.subject = {entities[rng.below(entities.size())], "na_s" + std::to_string(k)};
    r.object = {entities[rng.below(entities.size())], "na_o" + std::to_string(k)};
    ds.na_pairs.push_back(r);
  }
  // Keep NA pairs grouped with their image in file order.
  {
    std::map<std::string, std::size_t> order;
    for (std::size_t i = 0; i < ds.image_ids.size(); ++i) order[ds.image_ids[i]] = i;
    std::stable_sort(ds.na_pairs.begin(), ds.na_pairs.end(),
                     [&](const auto& a, const auto& b) { return order[a.image_id] < order[b.image_id]; });
  }
  ds.validate();

  // Embeddings and predictions.
  EmbeddingTable table;
  table.dim = opt.base_dim;
  std::vector<PredictionRecord> predictions;
  auto scores_for = [&](PredicateIndex top, PredicateIndex second) {
    std::vector<double> s(q);
    for (double& x : s) x = 0.01 + 0.04 * rng.uniform();
    s[second] = 0.2 + 0.1 * rng.uniform();
    s[top] = 0.5 + 0.4 * rng.uniform();
    return s;
  };
  for (const auto& row : rows) {
    table.rows.emplace(row.id, detail::sample_near(rng, centers[row.cluster], opt.cluster_noise));
    PredicateIndex top = row.cluster;
    if (row.cluster == row.label && rng.bernoulli(opt.prediction_noise)) top = (row.label + 1 + rng.below(q - 1)) % q;
    const PredicateIndex second = top == row.label ? (row.label + 1) % q : row.label;
    predictions.push_back({row.id, scores_for(top, second), 0.05 + 0.3 * rng.uniform()});
    if (row.cluster != row.label) {
      fx.planted.emplace(row.id, row.cluster);
    } else {
      fx.unplanted.push_back(row.id);
    }
  }
  for (const auto& r : ds.na_pairs) {
    const PredicateIndex guess = 2 + rng.below(q - 2);
    table.rows.emplace(r.relation_id, detail::sample_near(rng, centers[guess], opt.cluster_noise));
    predictions.push_back({r.relation_id, scores_for(guess, (guess + 1) % q), 0.01 + 0.2 * rng.uniform()});
  }
  fx.relations = rows.size();

  std::vector<double> conf(q * q, 0.02);
  for (std::size_t p = 0; p < q; ++p) conf[p * q + p] = 0.6;
  for (auto [g, i] : detail::kPartners) conf[g * q + i] = conf[i * q + g] = 0.3;

  save_labels(dir / "predicates.json", fx.predicates);
  save_labels(dir / "entities.json", entities);
  save_dataset(dir / "dataset.jsonl", ds);
  {
    auto f = open_output(dir / "predictions.jsonl");
    write_predictions(f, predictions);
  }
  {
    auto f = open_output(dir / "confusion.csv");
    write_confusion(f, ConfusionMatrix(q, conf), ds.vocab);
  }
  {
    auto f = open_output(dir / "embeddings.csv");
    write_embeddings(f, table, "synthetic planted-bias clusters");
  }
  {
    auto f = open_output(dir / "planted.csv");
    f << "relation_id,target\n";
    for (const auto& [id, target] : fx.planted) f << id << ',' << fx.predicates[target] << '\n';
  }

  nlohmann::ordered_json cfg;
  cfg["seed"] = opt.seed;
  cfg["inputs"] = {{"dataset", "dataset.jsonl"},     {"predicates", "predicates.json"},
                   {"entities", "entities.json"},    {"predictions", "predictions.jsonl"},
                   {"confusion", "confusion.csv"},   {"embeddings", "embeddings.csv"}};
  cfg["train"] = {{"temperature", 0.05}, {"margin_degrees", 10.0}, {"lambda", 0.3}, {"learning_rate", 1e-3},
                  {"momentum", 0.9},     {"epochs", 10},           {"batch_size", 64}};
  cfg["prototype"] = {{"beta", 0.9},        {"gamma", 1.5},         {"mu", 1.0},
                      {"drop_percent", 50}, {"protect_below", 100}, {"schedule", "batch"}};
  cfg["transfer"] = {{"k_g", 0.05}, {"direction_constraint", true}};
  cfg["resample"] = {{"t", 1e4}, {"scarcity_source", "enhanced"}};
  fx.config = dir / "config.json";
  auto f = open_output(fx.config);
  f << cfg.dump(2) << '\n';
  return fx;
}

}  // namespace predbias::fixture

#endif  // PREDBIAS_TOOLS_PLANTED_FIXTURE_HPP_
