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
#ifndef PREDBIAS_TRANSFER_HPP_
#define PREDBIAS_TRANSFER_HPP_

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "predbias/contrastive.hpp"
#include "predbias/corpus.hpp"
#include "predbias/error.hpp"
#include "predbias/prototype.hpp"

namespace predbias {

enum class MoveKind { kIndistinguishable, kNaPromotion };

inline std::string_view to_string(MoveKind k) {
  return k == MoveKind::kIndistinguishable ? "indistinguishable" : "na_promotion";
}

struct Move {
  RelationId relation_id = 0;
  std::optional<PredicateIndex> from;  // empty for NA promotions
  PredicateIndex to = 0;
  double score = 0.0;
  MoveKind kind = MoveKind::kIndistinguishable;

  bool operator==(const Move&) const = default;
};

struct TransferPlan {
  std::vector<Move> moves;

  std::size_t count(MoveKind kind) const {
    return static_cast<std::size_t>(
        std::count_if(moves.begin(), moves.end(), [kind](const Move& m) { return m.kind == kind; }));
  }

  void validate() const {
    std::unordered_set<RelationId> ids;
    for (const auto& m : moves) {
      if (!ids.insert(m.relation_id).second)
        throw Error(ErrorKind::kPlan, "relation " + std::to_string(m.relation_id) + " appears twice in the plan");
      if (!std::isfinite(m.score)) throw Error(ErrorKind::kPlan, "non-finite move score");
      if (m.kind == MoveKind::kIndistinguishable && (!m.from || *m.from == m.to))
        throw Error(ErrorKind::kPlan, "indistinguishable move must change the predicate");
      if (m.kind == MoveKind::kNaPromotion && m.from)
        throw Error(ErrorKind::kPlan, "NA promotion cannot have a source predicate");
    }
  }

  bool operator==(const TransferPlan&) const = default;
};

inline constexpr double kUnseenCountFloor = 0.5;

// Inverse annotation counts; unseen keys use a floored count of 0.5.
struct ScarcityTable {
  std::map<std::pair<std::string, std::string>, double> pair_scarcity;
  std::vector<double> predicate_scarcity;

  double pair(const std::string& subject, const std::string& object) const {
    auto it = pair_scarcity.find({subject, object});
    return it == pair_scarcity.end() ? 1.0 / kUnseenCountFloor : it->second;
  }
  double predicate(PredicateIndex p) const { return predicate_scarcity.at(p); }
};

inline ScarcityTable compute_scarcity(const Dataset& ds) {
  ScarcityTable t;
  std::map<std::pair<std::string, std::string>, std::size_t> pair_counts;
  for (const auto& r : ds.relations) ++pair_counts[{r.subject.class_label, r.object.class_label}];
  for (const auto& [k, c] : pair_counts) t.pair_scarcity[k] = 1.0 / static_cast<double>(c);
  for (std::size_t c : ds.predicate_counts())
    t.predicate_scarcity.push_back(1.0 / std::max(static_cast<double>(c), kUnseenCountFloor));
  return t;
}

// Flagged relations grouped by (annotated, predicted); in each group the
// ceil(clamp(S, 0, 1) * n) most confident predictions move to the predicted
// predicate. With the direction constraint only head -> tail groups move.
inline std::vector<Move> plan_indistinguishable(const Dataset& ds, const std::set<RelationId>& flagged,
                                                std::span<const PredictionRecord> predictions, const Matrix& similarity,
                                                bool direction_constraint = true) {
  const std::size_t q = ds.vocab.size();
  if (similarity.rows() != q || similarity.cols() != q)
    throw Error(ErrorKind::kValidation, "similarity matrix must be QxQ");
  const auto index = index_predictions(predictions);
  const auto counts = ds.predicate_counts();

  struct Candidate {
    RelationId id;
    double confidence;
  };
  std::map<std::pair<PredicateIndex, PredicateIndex>, std::vector<Candidate>> groups;
  for (const auto& r : ds.relations) {
    if (!flagged.contains(r.relation_id)) continue;
    auto it = index.find(r.relation_id);
    if (it == index.end())
      throw Error(ErrorKind::kCoverage, "no prediction for flagged relation " + std::to_string(r.relation_id));
    const auto& scores = it->second->scores;
    const PredicateIndex to = argmax(scores);
    if (to == *r.predicate) continue;
    groups[{*r.predicate, to}].push_back({r.relation_id, scores[to]});
  }

  std::vector<Move> moves;
  for (auto& [key, members] : groups) {
    const auto [from, to] = key;
    if (direction_constraint && !(counts[from] > counts[to])) continue;
    const double ratio = std::clamp(similarity(from, to), 0.0, 1.0);
    const std::size_t n_move = ceil_count(ratio, members.size());
    std::sort(members.begin(), members.end(), [](const Candidate& a, const Candidate& b) {
      if (a.confidence != b.confidence) return a.confidence > b.confidence;
      return a.id < b.id;
    });
    for (std::size_t k = 0; k < n_move; ++k)
      moves.push_back({members[k].id, from, to, members[k].confidence, MoveKind::kIndistinguishable});
  }
  return moves;
}

// E = sqrt(-log(na_score) * c_pair * c_pred)
inline double influence_factor(double na_score, double pair_scarcity, double predicate_scarcity) {
  if (!(na_score > 0.0 && na_score <= 1.0)) throw Error(ErrorKind::kValidation, "na_score must lie in (0,1]");
  if (!(pair_scarcity > 0.0) || !(predicate_scarcity > 0.0))
    throw Error(ErrorKind::kValidation, "scarcities must be positive");
  return std::sqrt(-std::log(na_score) * pair_scarcity * predicate_scarcity);
}

// Softmax of the raw pair scarcities over the candidate list.
inline std::vector<double> softmax_pair_scarcity(const Dataset& ds, std::span<const NaCandidate> candidates,
                                                 const ScarcityTable& scarcity) {
  std::unordered_map<RelationId, const RelationInstance*> na_index;
  for (const auto& r : ds.na_pairs) na_index.emplace(r.relation_id, &r);
  std::vector<double> raw;
  raw.reserve(candidates.size());
  for (const auto& c : candidates) {
    auto it = na_index.find(c.relation_id);
    if (it == na_index.end())
      throw Error(ErrorKind::kValidation, "candidate " + std::to_string(c.relation_id) + " is not an NA pair");
    raw.push_back(scarcity.pair(it->second->subject.class_label, it->second->object.class_label));
  }
  if (raw.empty()) return raw;
  const double top = *std::max_element(raw.begin(), raw.end());
  for (double& v : raw) v = std::exp(v - top);
  // Sum in sorted order so the normalizer, and hence the ranking, does not
  // depend on the order candidates arrive in.
  std::vector<double> terms = raw;
  std::sort(terms.begin(), terms.end());
  const double sum = std::accumulate(terms.begin(), terms.end(), 0.0);
  for (double& v : raw) v /= sum;
  return raw;
}

// Ranks candidates by influence factor (ties by relation id) and promotes
// the top ceil(k_g * n).
inline std::vector<Move> plan_na_promotions(const Dataset& ds, std::span<const NaCandidate> candidates,
                                            const ScarcityTable& scarcity, double k_g) {
  if (!(k_g >= 0.0 && k_g <= 1.0)) throw Error(ErrorKind::kPrecondition, "K_g must lie in [0,1]");
  const auto pair_weights = softmax_pair_scarcity(ds, candidates, scarcity);
  std::vector<std::pair<double, const NaCandidate*>> ranked;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    ranked.emplace_back(influence_factor(candidates[i].na_score, pair_weights[i], scarcity.predicate(candidates[i].predicted)),
                        &candidates[i]);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second->relation_id < b.second->relation_id;
  });
  std::vector<Move> moves;
  const std::size_t n = ceil_count(k_g, ranked.size());
  for (std::size_t k = 0; k < n; ++k)
    moves.push_back({ranked[k].second->relation_id, std::nullopt, ranked[k].second->predicted, ranked[k].first,
                     MoveKind::kNaPromotion});
  return moves;
}

// Relabels transferred relations and turns promoted NA pairs into relations
// (appended after their image's relations). Original relations are the only
// valid targets of a relabel, so a plan cannot be applied twice.
inline Dataset apply_plan(const Dataset& ds, const TransferPlan& plan) {
  plan.validate();
  Dataset out = ds;
  std::unordered_map<RelationId, std::size_t> rel_index, na_index;
  for (std::size_t i = 0; i < out.relations.size(); ++i) rel_index.emplace(out.relations[i].relation_id, i);
  for (std::size_t i = 0; i < out.na_pairs.size(); ++i) na_index.emplace(out.na_pairs[i].relation_id, i);

  std::set<std::size_t> promoted;
  for (const auto& m : plan.moves) {
    if (m.to >= ds.vocab.size()) throw Error(ErrorKind::kPlan, "target predicate out of range");
    if (m.kind == MoveKind::kIndistinguishable) {
      auto it = rel_index.find(m.relation_id);
      if (it == rel_index.end())
        throw Error(ErrorKind::kPlan, "unknown relation " + std::to_string(m.relation_id));
      auto& r = out.relations[it->second];
      if (r.provenance != Provenance::kOriginal)
        throw Error(ErrorKind::kPlan, "relation " + std::to_string(m.relation_id) + " was already transferred");
      if (r.predicate != m.from)
        throw Error(ErrorKind::kPlan, "relation " + std::to_string(m.relation_id) + " does not carry the source predicate");
      r.predicate = m.to;
      r.provenance = Provenance::kTransferred;
    } else {
      auto it = na_index.find(m.relation_id);
      if (it == na_index.end())
        throw Error(ErrorKind::kPlan, "unknown NA pair " + std::to_string(m.relation_id));
      auto& r = out.na_pairs[it->second];
      r.predicate = m.to;
      r.provenance = Provenance::kNaPromoted;
      promoted.insert(it->second);
    }
  }

  if (!promoted.empty()) {
    std::unordered_map<std::string, std::vector<RelationInstance>> rel_by_image, promoted_by_image;
    for (auto& r : out.relations) rel_by_image[r.image_id].push_back(std::move(r));
    std::vector<RelationInstance> remaining;
    for (std::size_t i = 0; i < out.na_pairs.size(); ++i) {
      if (promoted.contains(i)) {
        promoted_by_image[out.na_pairs[i].image_id].push_back(std::move(out.na_pairs[i]));
      } else {
        remaining.push_back(std::move(out.na_pairs[i]));
      }
    }
    out.relations.clear();
    for (const auto& image : out.image_ids) {
      for (auto& r : rel_by_image[image]) out.relations.push_back(std::move(r));
      for (auto& r : promoted_by_image[image]) out.relations.push_back(std::move(r));
    }
    out.na_pairs = std::move(remaining);
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Plan JSONL.

inline void write_plan(std::ostream& out, const TransferPlan& plan, const PredicateVocab& vocab) {
  for (const auto& m : plan.moves) {
    nlohmann::ordered_json j;
    j["relation_id"] = m.relation_id;
    j["from"] = m.from ? nlohmann::ordered_json(vocab.label(*m.from)) : nlohmann::ordered_json(nullptr);
    j["to"] = vocab.label(m.to);
    j["score"] = m.score;
    j["kind"] = to_string(m.kind);
    out << j.dump() << '\n';
  }
}

inline TransferPlan parse_plan(std::istream& in, const PredicateVocab& vocab) {
  TransferPlan plan;
  std::string line;
  std::size_t line_no = 0;
  auto lookup = [&](const std::string& label, const std::string& where) {
    const auto p = vocab.find(label);
    if (!p) throw Error(ErrorKind::kVocabulary, where + ": unknown predicate '" + label + "'");
    return *p;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    Move m;
    std::string kind, to;
    std::optional<std::string> from;
    try {
      const auto j = nlohmann::json::parse(line);
      m.relation_id = j.at("relation_id").get<RelationId>();
      if (!j.at("from").is_null()) from = j.at("from").get<std::string>();
      to = j.at("to").get<std::string>();
      m.score = j.at("score").get<double>();
      kind = j.at("kind").get<std::string>();
    } catch (const std::exception& e) {
      throw Error(ErrorKind::kParse, where + ": " + e.what());
    }
    if (from) m.from = lookup(*from, where);
    m.to = lookup(to, where);
    if (kind == "indistinguishable") {
      m.kind = MoveKind::kIndistinguishable;
    } else if (kind == "na_promotion") {
      m.kind = MoveKind::kNaPromotion;
    } else {
      throw Error(ErrorKind::kParse, where + ": unknown move kind '" + kind + "'");
    }
    plan.moves.push_back(m);
  }
  plan.validate();
  return plan;
}

}  // namespace predbias

#endif  // PREDBIAS_TRANSFER_HPP_
