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
#ifndef PREDBIAS_AUDIT_HPP_
#define PREDBIAS_AUDIT_HPP_

// Dataset statistics, recall metrics over externally supplied scene-graph
// predictions, and before/after transfer reports.

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "predbias/corpus.hpp"
#include "predbias/error.hpp"
#include "predbias/io.hpp"
#include "predbias/transfer.hpp"

namespace predbias {

inline std::vector<std::size_t> predicate_histogram(const Dataset& ds) { return ds.predicate_counts(); }

// (predicate, count) from most to least frequent; ties by index.
inline std::vector<std::pair<PredicateIndex, std::size_t>> frequency_sorted(std::span<const std::size_t> histogram) {
  std::vector<std::pair<PredicateIndex, std::size_t>> out;
  for (std::size_t i = 0; i < histogram.size(); ++i) out.emplace_back(i, histogram[i]);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

// Percentile recall: 0.3 R + 0.6 mR + 0.1 PQ.
inline double pr_score(double recall, double mean_recall, double pq) {
  return 0.3 * recall + 0.6 * mean_recall + 0.1 * pq;
}

// Harmonic mean of R and mR; 0 when both are 0. Equal inputs return that
// value exactly rather than through the rounding of 2xy / (x + y).
inline double f_score(double recall, double mean_recall) {
  if (recall == mean_recall) return recall;
  const double s = recall + mean_recall;
  return s > 0.0 ? 2.0 * recall * mean_recall / s : 0.0;
}

struct SceneTriplet {
  std::string subject_class;
  std::string subject_seg;
  std::string predicate;
  std::string object_class;
  std::string object_seg;

  auto operator<=>(const SceneTriplet&) const = default;
};

using SceneGraphs = std::map<std::string, std::vector<SceneTriplet>>;  // image -> triplets (ranked for predictions)

inline SceneGraphs scene_triplets(const Dataset& ds) {
  SceneGraphs out;
  for (const auto& image : ds.image_ids) out[image];
  for (const auto& r : ds.relations)
    out[r.image_id].push_back({r.subject.class_label, r.subject.segment_id, ds.vocab.label(*r.predicate),
                               r.object.class_label, r.object.segment_id});
  return out;
}

namespace detail {

// Per GT triplet of the image: whether some top-K prediction matched it.
// Each prediction can satisfy at most one GT triplet.
inline std::vector<bool> match_top_k(std::span<const SceneTriplet> gt, std::span<const SceneTriplet> ranked,
                                     std::size_t k) {
  std::vector<bool> matched(gt.size(), false);
  const std::size_t top = std::min(k, ranked.size());
  for (std::size_t i = 0; i < top; ++i)
    for (std::size_t g = 0; g < gt.size(); ++g)
      if (!matched[g] && gt[g] == ranked[i]) {
        matched[g] = true;
        break;
      }
  return matched;
}

}  // namespace detail

// Mean over images with non-empty GT of the matched fraction.
inline double recall_at_k(const SceneGraphs& ground_truth, const SceneGraphs& predictions, int k) {
  if (k <= 0) throw Error(ErrorKind::kValidation, "K must be positive");
  double sum = 0.0;
  std::size_t images = 0;
  for (const auto& [image, gt] : ground_truth) {
    if (gt.empty()) continue;
    ++images;
    auto it = predictions.find(image);
    if (it == predictions.end()) continue;
    const auto matched = detail::match_top_k(gt, it->second, static_cast<std::size_t>(k));
    sum += static_cast<double>(std::count(matched.begin(), matched.end(), true)) / static_cast<double>(gt.size());
  }
  return images ? sum / static_cast<double>(images) : 0.0;
}

// Per-predicate recall averaged over the images containing that predicate,
// then averaged over predicates present in the ground truth.
inline double mean_recall_at_k(const SceneGraphs& ground_truth, const SceneGraphs& predictions, int k) {
  if (k <= 0) throw Error(ErrorKind::kValidation, "K must be positive");
  std::map<std::string, std::pair<double, std::size_t>> per_predicate;
  for (const auto& [image, gt] : ground_truth) {
    if (gt.empty()) continue;
    std::vector<bool> matched(gt.size(), false);
    auto it = predictions.find(image);
    if (it != predictions.end()) matched = detail::match_top_k(gt, it->second, static_cast<std::size_t>(k));
    std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // predicate -> (hit, total)
    for (std::size_t g = 0; g < gt.size(); ++g) {
      auto& [hit, total] = counts[gt[g].predicate];
      hit += matched[g] ? 1 : 0;
      ++total;
    }
    for (const auto& [p, ht] : counts) {
      auto& [sum, n] = per_predicate[p];
      sum += static_cast<double>(ht.first) / static_cast<double>(ht.second);
      ++n;
    }
  }
  if (per_predicate.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [p, sn] : per_predicate) total += sn.first / static_cast<double>(sn.second);
  return total / static_cast<double>(per_predicate.size());
}

// JSONL, one image per line: {"image_id", "triplets": [{"sub", "obj",
// "predicate"}]} with triplets in rank order.
inline SceneGraphs parse_scene_graphs(std::istream& in) {
  SceneGraphs out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      auto& list = out[j.at("image_id").get<std::string>()];
      for (const auto& t : j.at("triplets")) {
        const auto s = detail::parse_entity(t.at("sub"));
        const auto o = detail::parse_entity(t.at("obj"));
        list.push_back({s.class_label, s.segment_id, t.at("predicate").get<std::string>(), o.class_label,
                        o.segment_id});
      }
    } catch (const Error& e) {
      throw e.with_context("line " + std::to_string(line_no));
    } catch (const std::exception& e) {
      throw Error(ErrorKind::kParse, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Transfer report.

struct PredicateDelta {
  std::string label;
  std::size_t before = 0;
  std::size_t after = 0;
  std::size_t moves_in = 0;
  std::size_t moves_out = 0;
};

struct TransferReport {
  std::vector<PredicateDelta> predicates;  // vocabulary order
  std::size_t indistinguishable_moves = 0;
  std::size_t na_promotions = 0;
  // (from, to, count), most frequent first; NA promotions use from = "NA".
  std::vector<std::tuple<std::string, std::string, std::size_t>> top_pairs;

  std::size_t total_moves() const { return indistinguishable_moves + na_promotions; }
};

inline TransferReport transfer_report(const Dataset& original, const Dataset& enhanced, const TransferPlan& plan,
                                      std::size_t top_n = 10) {
  TransferReport rep;
  const auto before = predicate_histogram(original);
  const auto after = predicate_histogram(enhanced);
  for (std::size_t p = 0; p < original.vocab.size(); ++p)
    rep.predicates.push_back({original.vocab.label(p), before[p], after[p], 0, 0});
  std::map<std::pair<std::string, std::string>, std::size_t> pairs;
  for (const auto& m : plan.moves) {
    ++rep.predicates.at(m.to).moves_in;
    if (m.from) ++rep.predicates.at(*m.from).moves_out;
    (m.kind == MoveKind::kIndistinguishable ? rep.indistinguishable_moves : rep.na_promotions) += 1;
    ++pairs[{m.from ? original.vocab.label(*m.from) : "NA", original.vocab.label(m.to)}];
  }
  for (const auto& [k, c] : pairs) rep.top_pairs.emplace_back(k.first, k.second, c);
  std::stable_sort(rep.top_pairs.begin(), rep.top_pairs.end(),
                   [](const auto& a, const auto& b) { return std::get<2>(a) > std::get<2>(b); });
  if (rep.top_pairs.size() > top_n) rep.top_pairs.resize(top_n);
  return rep;
}

// Plot-ready per-predicate table in frequency order of the original data.
inline void write_report_csv(std::ostream& out, const TransferReport& rep) {
  out << "rank,predicate,before,after,delta,moves_in,moves_out\n";
  std::vector<std::size_t> counts;
  for (const auto& p : rep.predicates) counts.push_back(p.before);
  std::size_t rank = 0;
  for (const auto& [idx, c] : frequency_sorted(counts)) {
    const auto& p = rep.predicates[idx];
    out << ++rank << ',' << p.label << ',' << p.before << ',' << p.after << ','
        << static_cast<long long>(p.after) - static_cast<long long>(p.before) << ',' << p.moves_in << ','
        << p.moves_out << '\n';
  }
}

inline nlohmann::ordered_json report_json(const TransferReport& rep) {
  nlohmann::ordered_json j;
  j["indistinguishable_moves"] = rep.indistinguishable_moves;
  j["na_promotions"] = rep.na_promotions;
  j["total_moves"] = rep.total_moves();
  auto pairs = nlohmann::ordered_json::array();
  for (const auto& [from, to, c] : rep.top_pairs) pairs.push_back({{"from", from}, {"to", to}, {"count", c}});
  j["top_moved_pairs"] = std::move(pairs);
  return j;
}

}  // namespace predbias

#endif  // PREDBIAS_AUDIT_HPP_
