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
#ifndef PREDBIAS_CORPUS_HPP_
#define PREDBIAS_CORPUS_HPP_

// Relation datasets, external prediction files and the confusion matrix,
// plus the two identification passes that pick transfer candidates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
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

#include "predbias/error.hpp"
#include "predbias/io.hpp"

namespace predbias {

using RelationId = std::int64_t;
using PredicateIndex = std::size_t;

enum class Provenance { kOriginal, kTransferred, kNaPromoted };

inline std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::kOriginal: return "original";
    case Provenance::kTransferred: return "transferred";
    case Provenance::kNaPromoted: return "na_promoted";
  }
  return "original";
}

inline Provenance parse_provenance(std::string_view s) {
  if (s == "original") return Provenance::kOriginal;
  if (s == "transferred") return Provenance::kTransferred;
  if (s == "na_promoted") return Provenance::kNaPromoted;
  throw Error(ErrorKind::kValidation, "unknown provenance '" + std::string(s) + "'");
}

namespace detail {

inline void check_label(const std::string& label, std::string_view what) {
  if (label.empty()) throw Error(ErrorKind::kVocabulary, std::string(what) + " label is empty");
  if (label.find_first_of(",\"\n\r") != std::string::npos)
    throw Error(ErrorKind::kVocabulary,
                std::string(what) + " label '" + label + "' contains a reserved character");
}

}  // namespace detail

// Ordered predicate labels with a label -> index lookup.
class PredicateVocab {
 public:
  PredicateVocab() = default;

  explicit PredicateVocab(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.size() < 2)
      throw Error(ErrorKind::kVocabulary, "predicate vocabulary needs at least 2 labels");
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      detail::check_label(labels_[i], "predicate");
      if (!index_.emplace(labels_[i], i).second)
        throw Error(ErrorKind::kVocabulary, "duplicate predicate label '" + labels_[i] + "'");
    }
  }

  std::size_t size() const { return labels_.size(); }
  const std::string& label(PredicateIndex i) const { return labels_.at(i); }
  const std::vector<std::string>& labels() const { return labels_; }

  std::optional<PredicateIndex> find(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool operator==(const PredicateVocab& other) const { return labels_ == other.labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, PredicateIndex> index_;
};

struct EntityRef {
  std::string class_label;
  std::string segment_id;

  bool operator==(const EntityRef&) const = default;
};

struct RelationInstance {
  RelationId relation_id = 0;
  std::string image_id;
  EntityRef subject;
  EntityRef object;
  std::optional<PredicateIndex> predicate;  // nullopt marks an NA pair
  Provenance provenance = Provenance::kOriginal;

  bool is_na() const { return !predicate.has_value(); }
  bool operator==(const RelationInstance&) const = default;
};

struct Dataset {
  PredicateVocab vocab;
  std::vector<std::string> entity_vocab;
  std::vector<std::string> image_ids;  // file order, includes images without relations
  std::vector<RelationInstance> relations;
  std::vector<RelationInstance> na_pairs;

  bool operator==(const Dataset&) const = default;

  std::vector<std::size_t> predicate_counts() const {
    std::vector<std::size_t> counts(vocab.size(), 0);
    for (const auto& r : relations) ++counts.at(*r.predicate);
    return counts;
  }

  // Throws on any broken invariant.
  void validate() const {
    const std::unordered_set<std::string> entities(entity_vocab.begin(), entity_vocab.end());
    const std::unordered_set<std::string> images(image_ids.begin(), image_ids.end());
    if (images.size() != image_ids.size())
      throw Error(ErrorKind::kValidation, "duplicate image_id");
    std::unordered_set<RelationId> ids;
    std::map<std::pair<std::string, std::string>, std::string> segment_class;

    auto check_entity = [&](const std::string& image, const EntityRef& e) {
      if (e.class_label.empty()) throw Error(ErrorKind::kValidation, "empty entity class");
      if (e.segment_id.empty()) throw Error(ErrorKind::kValidation, "empty segment id");
      if (!entities.empty() && !entities.contains(e.class_label))
        throw Error(ErrorKind::kVocabulary, "unknown entity class '" + e.class_label + "'");
      auto [it, inserted] = segment_class.emplace(std::pair{image, e.segment_id}, e.class_label);
      if (!inserted && it->second != e.class_label)
        throw Error(ErrorKind::kValidation, "segment '" + e.segment_id + "' in image '" + image +
                                                "' has conflicting classes");
    };
    auto check = [&](const RelationInstance& r, bool expect_na) {
      if (!ids.insert(r.relation_id).second)
        throw Error(ErrorKind::kValidation, "duplicate relation_id " + std::to_string(r.relation_id));
      if (!images.contains(r.image_id))
        throw Error(ErrorKind::kValidation, "relation " + std::to_string(r.relation_id) +
                                                " references unknown image '" + r.image_id + "'");
      if (r.subject.segment_id == r.object.segment_id)
        throw Error(ErrorKind::kValidation, "relation " + std::to_string(r.relation_id) +
                                                " has identical subject and object segments");
      if (expect_na != r.is_na())
        throw Error(ErrorKind::kValidation, "relation " + std::to_string(r.relation_id) +
                                                (expect_na ? " in na_pairs carries a predicate"
                                                           : " lacks a predicate"));
      if (r.predicate && *r.predicate >= vocab.size())
        throw Error(ErrorKind::kVocabulary, "predicate index out of range in relation " +
                                                std::to_string(r.relation_id));
      check_entity(r.image_id, r.subject);
      check_entity(r.image_id, r.object);
    };
    for (const auto& r : relations) check(r, false);
    for (const auto& r : na_pairs) check(r, true);
  }
};

struct PredictionRecord {
  RelationId relation_id = 0;
  std::vector<double> scores;
  double na_score = 1.0;

  bool operator==(const PredictionRecord&) const = default;
};

// C[i][j]: averaged score for predicate j over samples annotated with i.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  ConfusionMatrix(std::size_t q, std::vector<double> entries) : q_(q), entries_(std::move(entries)) {
    if (entries_.size() != q_ * q_)
      throw Error(ErrorKind::kValidation, "confusion matrix must be QxQ");
    for (double v : entries_)
      if (!(v >= 0.0 && v <= 1.0))
        throw Error(ErrorKind::kValidation, "confusion entries must lie in [0,1]");
  }

  static ConfusionMatrix zeros(std::size_t q) { return {q, std::vector<double>(q * q, 0.0)}; }

  std::size_t size() const { return q_; }
  double operator()(std::size_t i, std::size_t j) const { return entries_.at(i * q_ + j); }
  const std::vector<double>& entries() const { return entries_; }

 private:
  std::size_t q_ = 0;
  std::vector<double> entries_;
};

// ---------------------------------------------------------------------------
// Vocabulary sidecars: a JSON array of strings.

inline std::vector<std::string> load_labels(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw Error(ErrorKind::kParse, path.string() + ": expected a JSON array");
  std::vector<std::string> labels;
  for (const auto& v : j) {
    if (!v.is_string()) throw Error(ErrorKind::kParse, path.string() + ": labels must be strings");
    labels.push_back(v.get<std::string>());
  }
  return labels;
}

inline void save_labels(const std::filesystem::path& path, const std::vector<std::string>& labels) {
  auto out = open_output(path);
  out << nlohmann::json(labels).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Dataset JSONL.

namespace detail {

inline EntityRef parse_entity(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("class") || !j.contains("seg"))
    throw Error(ErrorKind::kParse, "entity needs \"class\" and \"seg\"");
  EntityRef e{j.at("class").get<std::string>(), j.at("seg").get<std::string>()};
  return e;
}

inline nlohmann::ordered_json entity_json(const EntityRef& e) {
  return {{"class", e.class_label}, {"seg", e.segment_id}};
}

}  // namespace detail

inline Dataset parse_dataset(std::istream& in, const PredicateVocab& vocab,
                             std::vector<std::string> entity_vocab = {}) {
  for (const auto& e : entity_vocab) detail::check_label(e, "entity");
  Dataset ds;
  ds.vocab = vocab;
  ds.entity_vocab = std::move(entity_vocab);

  // Explicit ids are honored; missing ids are filled after the first pass.
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::pair<std::size_t, bool>> missing_ids;  // (index, is_na)
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      ds.image_ids.push_back(j.at("image_id").get<std::string>());
      const std::string& image = ds.image_ids.back();
      auto read_block = [&](const char* key, bool is_na) {
        if (!j.contains(key)) return;
        for (const auto& rj : j.at(key)) {
          RelationInstance r;
          r.image_id = image;
          r.subject = detail::parse_entity(rj.at("sub"));
          r.object = detail::parse_entity(rj.at("obj"));
          if (rj.contains("provenance")) r.provenance = parse_provenance(rj.at("provenance").get<std::string>());
          if (!is_na) {
            const auto& pj = rj.at("predicate");
            if (pj.is_number_integer()) {
              const auto idx = pj.get<std::int64_t>();
              if (idx < 0 || static_cast<std::size_t>(idx) >= vocab.size())
                throw Error(ErrorKind::kVocabulary, where + ": predicate index " +
                                                        std::to_string(idx) + " out of range");
              r.predicate = static_cast<PredicateIndex>(idx);
            } else {
              const auto label = pj.get<std::string>();
              r.predicate = vocab.find(label);
              if (!r.predicate)
                throw Error(ErrorKind::kVocabulary, where + ": unknown predicate '" + label + "'");
            }
          }
          auto& target = is_na ? ds.na_pairs : ds.relations;
          if (rj.contains("relation_id") && !rj.at("relation_id").is_null()) {
            r.relation_id = rj.at("relation_id").get<RelationId>();
          } else {
            missing_ids.emplace_back(target.size(), is_na);
          }
          target.push_back(std::move(r));
        }
      };
      read_block("relations", false);
      read_block("na_pairs", true);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(ErrorKind::kParse, where + ": " + e.what());
    }
  }

  if (!missing_ids.empty()) {
    RelationId next = 0;
    std::vector<bool> has_id_r(ds.relations.size(), true), has_id_n(ds.na_pairs.size(), true);
    for (auto [idx, is_na] : missing_ids) (is_na ? has_id_n : has_id_r)[idx] = false;
    for (std::size_t i = 0; i < ds.relations.size(); ++i)
      if (has_id_r[i]) next = std::max(next, ds.relations[i].relation_id + 1);
    for (std::size_t i = 0; i < ds.na_pairs.size(); ++i)
      if (has_id_n[i]) next = std::max(next, ds.na_pairs[i].relation_id + 1);
    // File order: relations and na_pairs of one image interleave by line.
    std::vector<RelationInstance*> order;
    std::size_t ri = 0, ni = 0;
    for (const auto& image : ds.image_ids) {
      while (ri < ds.relations.size() && ds.relations[ri].image_id == image) {
        if (!has_id_r[ri]) order.push_back(&ds.relations[ri]);
        ++ri;
      }
      while (ni < ds.na_pairs.size() && ds.na_pairs[ni].image_id == image) {
        if (!has_id_n[ni]) order.push_back(&ds.na_pairs[ni]);
        ++ni;
      }
    }
    for (auto* r : order) r->relation_id = next++;
  }

  ds.validate();
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path, const PredicateVocab& vocab,
                            std::vector<std::string> entity_vocab = {}) {
  auto in = open_input(path);
  try {
    return parse_dataset(in, vocab, std::move(entity_vocab));
  } catch (const Error& e) {
    throw e.with_context(path.string());
  }
}

inline void write_dataset(std::ostream& out, const Dataset& ds) {
  std::unordered_map<std::string, std::pair<std::vector<const RelationInstance*>,
                                            std::vector<const RelationInstance*>>>
      by_image;
  for (const auto& r : ds.relations) by_image[r.image_id].first.push_back(&r);
  for (const auto& r : ds.na_pairs) by_image[r.image_id].second.push_back(&r);
  for (const auto& image : ds.image_ids) {
    nlohmann::ordered_json line;
    line["image_id"] = image;
    line["relations"] = nlohmann::ordered_json::array();
    line["na_pairs"] = nlohmann::ordered_json::array();
    const auto& [rels, nas] = by_image[image];
    for (const auto* r : rels) {
      nlohmann::ordered_json rj;
      rj["relation_id"] = r->relation_id;
      rj["sub"] = detail::entity_json(r->subject);
      rj["obj"] = detail::entity_json(r->object);
      rj["predicate"] = ds.vocab.label(*r->predicate);
      if (r->provenance != Provenance::kOriginal) rj["provenance"] = to_string(r->provenance);
      line["relations"].push_back(std::move(rj));
    }
    for (const auto* r : nas) {
      nlohmann::ordered_json rj;
      rj["relation_id"] = r->relation_id;
      rj["sub"] = detail::entity_json(r->subject);
      rj["obj"] = detail::entity_json(r->object);
      line["na_pairs"].push_back(std::move(rj));
    }
    out << line.dump() << '\n';
  }
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  auto out = open_output(path);
  write_dataset(out, ds);
}

// ---------------------------------------------------------------------------
// Prediction JSONL.

inline std::vector<PredictionRecord> parse_predictions(std::istream& in, std::size_t q) {
  std::vector<PredictionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    PredictionRecord rec;
    try {
      const auto j = nlohmann::json::parse(line);
      rec.relation_id = j.at("relation_id").get<RelationId>();
      rec.scores = j.at("scores").get<std::vector<double>>();
      rec.na_score = j.at("na_score").get<double>();
    } catch (const std::exception& e) {
      throw Error(ErrorKind::kParse, where + ": " + e.what());
    }
    if (rec.scores.size() != q)
      throw Error(ErrorKind::kValidation, where + ": expected " + std::to_string(q) + " scores");
    for (double s : rec.scores)
      if (!(s >= 0.0 && s <= 1.0)) throw Error(ErrorKind::kValidation, where + ": score outside [0,1]");
    if (!(rec.na_score > 0.0 && rec.na_score <= 1.0))
      throw Error(ErrorKind::kValidation, where + ": na_score outside (0,1]");
    records.push_back(std::move(rec));
  }
  return records;
}

inline std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path, std::size_t q) {
  auto in = open_input(path);
  try {
    return parse_predictions(in, q);
  } catch (const Error& e) {
    throw e.with_context(path.string());
  }
}

inline void write_predictions(std::ostream& out, std::span<const PredictionRecord> records) {
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["relation_id"] = r.relation_id;
    j["scores"] = r.scores;
    j["na_score"] = r.na_score;
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Confusion matrix CSV: header of predicate labels, then Q rows of Q values.

inline ConfusionMatrix parse_confusion(std::istream& in, const PredicateVocab& vocab) {
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::vector<double> entries;
  std::size_t rows = 0;
  const std::size_t q = vocab.size();
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    const std::string where = "line " + std::to_string(line_no);
    if (!header_seen) {
      if (fields.size() != q) throw Error(ErrorKind::kParse, where + ": header must list Q labels");
      for (std::size_t i = 0; i < q; ++i)
        if (fields[i] != vocab.label(i))
          throw Error(ErrorKind::kVocabulary, where + ": header label '" + std::string(fields[i]) +
                                                  "' does not match vocabulary");
      header_seen = true;
      continue;
    }
    if (fields.size() != q) throw Error(ErrorKind::kParse, where + ": expected Q values");
    for (auto f : fields) {
      double v;
      if (!try_parse_double(f, v)) throw Error(ErrorKind::kParse, where + ": bad number '" + std::string(f) + "'");
      entries.push_back(v);
    }
    ++rows;
  }
  if (!header_seen || rows != q) throw Error(ErrorKind::kParse, "confusion matrix needs Q rows");
  return ConfusionMatrix(q, std::move(entries));
}

inline ConfusionMatrix load_confusion(const std::filesystem::path& path, const PredicateVocab& vocab) {
  auto in = open_input(path);
  try {
    return parse_confusion(in, vocab);
  } catch (const Error& e) {
    throw e.with_context(path.string());
  }
}

inline void write_confusion(std::ostream& out, const ConfusionMatrix& c, const PredicateVocab& vocab) {
  for (std::size_t i = 0; i < vocab.size(); ++i) out << (i ? "," : "") << vocab.label(i);
  out << '\n';
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = 0; j < c.size(); ++j) out << (j ? "," : "") << format_double(c(i, j));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Identification.

// Ties resolve to the lowest index.
inline PredicateIndex argmax(std::span<const double> scores) {
  PredicateIndex best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

inline std::unordered_map<RelationId, const PredictionRecord*> index_predictions(
    std::span<const PredictionRecord> predictions) {
  std::unordered_map<RelationId, const PredictionRecord*> index;
  for (const auto& p : predictions)
    if (!index.emplace(p.relation_id, &p).second)
      throw Error(ErrorKind::kValidation, "duplicate prediction for relation " + std::to_string(p.relation_id));
  return index;
}

// Annotated relations whose predicted argmax disagrees with the label.
inline std::set<RelationId> identify_indistinguishable(const Dataset& ds,
                                                       std::span<const PredictionRecord> predictions) {
  const auto index = index_predictions(predictions);
  std::set<RelationId> flagged;
  for (const auto& r : ds.relations) {
    auto it = index.find(r.relation_id);
    if (it == index.end())
      throw Error(ErrorKind::kCoverage, "no prediction for relation " + std::to_string(r.relation_id));
    if (it->second->scores.size() != ds.vocab.size())
      throw Error(ErrorKind::kValidation, "prediction for relation " + std::to_string(r.relation_id) +
                                              " has wrong score count");
    if (argmax(it->second->scores) != *r.predicate) flagged.insert(r.relation_id);
  }
  return flagged;
}

struct NaCandidate {
  RelationId relation_id = 0;
  PredicateIndex predicted = 0;
  double na_score = 1.0;

  bool operator==(const NaCandidate&) const = default;
};

// One candidate per NA pair, in dataset order.
inline std::vector<NaCandidate> identify_potential_positives(const Dataset& ds,
                                                             std::span<const PredictionRecord> predictions) {
  const auto index = index_predictions(predictions);
  std::vector<NaCandidate> out;
  out.reserve(ds.na_pairs.size());
  for (const auto& r : ds.na_pairs) {
    auto it = index.find(r.relation_id);
    if (it == index.end())
      throw Error(ErrorKind::kCoverage, "no prediction for NA pair " + std::to_string(r.relation_id));
    const auto& rec = *it->second;
    if (!(rec.na_score > 0.0 && rec.na_score <= 1.0))
      throw Error(ErrorKind::kValidation, "na_score of NA pair " + std::to_string(r.relation_id) +
                                              " outside (0,1]");
    if (rec.scores.size() != ds.vocab.size())
      throw Error(ErrorKind::kValidation, "prediction for NA pair " + std::to_string(r.relation_id) +
                                              " has wrong score count");
    out.push_back({r.relation_id, argmax(rec.scores), rec.na_score});
  }
  return out;
}

inline std::string triplet_to_sentence(const RelationInstance& r, const PredicateVocab& vocab) {
  if (r.is_na()) throw Error(ErrorKind::kPrecondition, "cannot render an NA pair as a sentence");
  return "The " + r.subject.class_label + " is " + vocab.label(*r.predicate) + " the " +
         r.object.class_label + ".";
}

}  // namespace predbias

#endif  // PREDBIAS_CORPUS_HPP_
