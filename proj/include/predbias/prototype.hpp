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
#ifndef PREDBIAS_PROTOTYPE_HPP_
#define PREDBIAS_PROTOTYPE_HPP_

// Predicate prototypes tracked with an invariance-scaled moving average, the
// multistage data filtration driven by them, and the prototype similarity
// matrix used for transfer.

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "predbias/contrastive.hpp"
#include "predbias/corpus.hpp"
#include "predbias/embedding.hpp"
#include "predbias/error.hpp"
#include "predbias/io.hpp"

namespace predbias {

inline constexpr double kVarianceEpsilon = 1e-8;

// ceil(fraction * n), tolerant of representation error in the product
// (0.07 * 100 must give 7, not 8).
inline std::size_t ceil_count(double fraction, std::size_t n) {
  const double x = fraction * static_cast<double>(n);
  if (x <= 0.0) return 0;
  const double c = std::ceil(x - 1e-9 * std::max(1.0, x));
  return std::min(n, static_cast<std::size_t>(c));
}

enum class PrototypeSchedule { kPerBatch, kPerEpoch };

struct PrototypeConfig {
  double beta = 0.9;  // momentum; must lie in [0,1)
  double gamma = 1.5;
  double mu = 1.0;
  double drop_percent = 50.0;
  std::size_t protect_below = 100;
  double max_step = 1.0;  // cap on (1 - beta) * approach speed
  PrototypeSchedule schedule = PrototypeSchedule::kPerBatch;

  void validate() const {
    if (!(beta >= 0.0 && beta < 1.0)) throw Error(ErrorKind::kConfig, "beta must lie in [0,1)");
    if (!(gamma > 0.0)) throw Error(ErrorKind::kConfig, "gamma must be > 0");
    if (!(mu >= 0.0)) throw Error(ErrorKind::kConfig, "mu must be >= 0");
    if (!(drop_percent >= 0.0 && drop_percent <= 100.0))
      throw Error(ErrorKind::kConfig, "drop_percent must lie in [0,100]");
    if (!(max_step > 0.0)) throw Error(ErrorKind::kConfig, "max_step must be > 0");
  }
};

struct PrototypeSpace {
  std::vector<Vector> prototypes;
  std::vector<std::size_t> class_counts_seen;
  std::vector<double> class_variance;  // V_aver per predicate

  std::size_t size() const { return prototypes.size(); }
  std::size_t dim() const { return prototypes.empty() ? 0 : prototypes.front().size(); }

  static PrototypeSpace zeros(std::size_t q, std::size_t dim) {
    return {std::vector<Vector>(q, Vector(dim, 0.0)), std::vector<std::size_t>(q, 0), std::vector<double>(q, 0.0)};
  }

  // Per-class mean of the given embeddings; classes without samples stay zero.
  static PrototypeSpace from_class_means(std::span<const Vector> embeddings,
                                         std::span<const PredicateIndex> predicates, std::size_t q) {
    if (embeddings.empty()) throw Error(ErrorKind::kPrecondition, "no embeddings to initialize prototypes");
    auto space = zeros(q, embeddings.front().size());
    std::vector<std::size_t> n(q, 0);
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
      auto& p = space.prototypes.at(predicates[i]);
      for (std::size_t d = 0; d < p.size(); ++d) p[d] += embeddings[i][d];
      ++n[predicates[i]];
    }
    for (std::size_t c = 0; c < q; ++c)
      if (n[c])
        for (double& v : space.prototypes[c]) v /= static_cast<double>(n[c]);
    return space;
  }
};

inline Vector batch_class_average(std::span<const Vector> embeddings) {
  if (embeddings.empty()) throw Error(ErrorKind::kPrecondition, "class average needs at least one sample");
  Vector avg(embeddings.front().size(), 0.0);
  for (const auto& h : embeddings)
    for (std::size_t d = 0; d < avg.size(); ++d) avg[d] += h[d];
  for (double& v : avg) v /= static_cast<double>(embeddings.size());
  return avg;
}

// 1 / (gamma * (Var + eps) * N)
inline double approach_speed(double variance, std::size_t count, double gamma) {
  return 1.0 / (gamma * (variance + kVarianceEpsilon) * static_cast<double>(count));
}

// P += min((1 - beta) * speed, max_step) * (H - P)
inline void update_prototype(PrototypeSpace& space, PredicateIndex p, std::span<const double> class_average,
                             double variance, std::size_t count, double beta, double gamma,
                             double max_step = std::numeric_limits<double>::infinity()) {
  if (p >= space.size()) throw Error(ErrorKind::kPrecondition, "predicate index out of range");
  if (count == 0) throw Error(ErrorKind::kPrecondition, "prototype update needs at least one sample");
  auto& proto = space.prototypes[p];
  if (class_average.size() != proto.size()) throw Error(ErrorKind::kValidation, "dimension mismatch");
  const double step = std::min((1.0 - beta) * approach_speed(variance, count, gamma), max_step);
  Vector next(proto.size());
  for (std::size_t d = 0; d < proto.size(); ++d) {
    next[d] = proto[d] + step * (class_average[d] - proto[d]);
    if (!std::isfinite(next[d]))
      throw Error(ErrorKind::kNumerical, "prototype " + std::to_string(p) + " became non-finite");
  }
  proto = std::move(next);
  space.class_counts_seen[p] += count;
}

// A sample is potentially biased when V_i > mu * V_aver * ||H_aver - P||.
inline bool flag_biased(double sample_variance, double class_variance, double shift_norm, double mu) {
  return sample_variance > mu * class_variance * shift_norm;
}

struct FlaggedSample {
  RelationId relation_id = 0;
  PredicateIndex predicate = 0;
  double loss = 0.0;
};

struct FiltrationEvent {
  int epoch = 0;
  RelationId relation_id = 0;
  double loss = 0.0;
  std::string reason;

  bool operator==(const FiltrationEvent&) const = default;
};

class FiltrationState {
 public:
  FiltrationState() = default;
  FiltrationState(std::span<const RelationId> ids, std::span<const PredicateIndex> predicates, std::size_t q)
      : per_class_active_(q, 0) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!class_of_.emplace(ids[i], predicates[i]).second)
        throw Error(ErrorKind::kValidation, "duplicate relation id in filtration state");
      active_.insert(ids[i]);
      ++per_class_active_.at(predicates[i]);
    }
  }

  bool is_active(RelationId id) const { return active_.contains(id); }
  std::size_t active_count(PredicateIndex p) const { return per_class_active_.at(p); }
  const std::set<RelationId>& active_ids() const { return active_; }
  const std::vector<std::pair<int, RelationId>>& dropped() const { return dropped_; }

  void drop(int epoch, RelationId id) {
    if (!active_.erase(id)) throw Error(ErrorKind::kPrecondition, "relation " + std::to_string(id) + " is not active");
    --per_class_active_[class_of_.at(id)];
    dropped_.emplace_back(epoch, id);
  }

 private:
  std::set<RelationId> active_;
  std::vector<std::pair<int, RelationId>> dropped_;
  std::vector<std::size_t> per_class_active_;
  std::unordered_map<RelationId, PredicateIndex> class_of_;
};

inline constexpr std::string_view kDropReason = "biased_high_loss";

// Drops the top ceil(D% * |eligible|) flagged samples by loss, where samples
// of classes with fewer than `protect_below` active members are not eligible.
inline std::vector<FiltrationEvent> multistage_filtration(std::span<const FlaggedSample> flagged, double drop_percent,
                                                          std::size_t protect_below, int epoch,
                                                          FiltrationState& state) {
  if (!(drop_percent >= 0.0 && drop_percent <= 100.0))
    throw Error(ErrorKind::kPrecondition, "drop percentage must lie in [0,100]");
  std::vector<FlaggedSample> eligible;
  for (const auto& f : flagged)
    if (state.is_active(f.relation_id) && state.active_count(f.predicate) >= protect_below) eligible.push_back(f);
  std::sort(eligible.begin(), eligible.end(), [](const FlaggedSample& a, const FlaggedSample& b) {
    if (a.loss != b.loss) return a.loss > b.loss;
    return a.relation_id < b.relation_id;
  });
  const std::size_t n_drop = ceil_count(drop_percent / 100.0, eligible.size());
  std::vector<FiltrationEvent> events;
  for (std::size_t k = 0; k < n_drop; ++k) {
    state.drop(epoch, eligible[k].relation_id);
    events.push_back({epoch, eligible[k].relation_id, eligible[k].loss, std::string(kDropReason)});
  }
  return events;
}

// S[i][j] = cos(P_i, P_j), unclamped.
inline Matrix similarity_matrix(const PrototypeSpace& space) {
  const std::size_t q = space.size();
  std::vector<double> norms(q);
  for (std::size_t i = 0; i < q; ++i) {
    norms[i] = norm(space.prototypes[i]);
    if (!(norms[i] > 0.0))
      throw Error(ErrorKind::kClassNeverSeen, "prototype " + std::to_string(i) + " is zero");
  }
  Matrix s(q, q);
  for (std::size_t i = 0; i < q; ++i) {
    s(i, i) = dot(space.prototypes[i], space.prototypes[i]) / (norms[i] * norms[i]);
    for (std::size_t j = i + 1; j < q; ++j)
      s(i, j) = s(j, i) = dot(space.prototypes[i], space.prototypes[j]) / (norms[i] * norms[j]);
  }
  return s;
}

// Connects the prototype space and filtration to the training loop.
class PrototypeLearner {
 public:
  PrototypeLearner(std::span<const TrainingSample> samples, PrototypeSpace initial, PrototypeConfig config)
      : samples_(samples), space_(std::move(initial)), config_(config) {
    config_.validate();
    std::vector<RelationId> ids;
    std::vector<PredicateIndex> preds;
    for (const auto& s : samples_) {
      ids.push_back(s.relation_id);
      preds.push_back(s.predicate);
    }
    state_ = FiltrationState(ids, preds, space_.size());
    for (std::size_t i = 0; i < samples_.size(); ++i) index_of_.emplace(samples_[i].relation_id, i);
  }

  FitHooks hooks() {
    FitHooks h;
    if (config_.schedule == PrototypeSchedule::kPerBatch)
      h.on_batch = [this](const BatchReport& b) { on_batch(b); };
    h.on_epoch = [this](const EpochReport& e) { return on_epoch(e); };
    return h;
  }

  const PrototypeSpace& space() const { return space_; }
  const FiltrationState& filtration() const { return state_; }
  const std::vector<FiltrationEvent>& events() const { return events_; }

 private:
  void on_batch(const BatchReport& b) {
    std::map<PredicateIndex, std::vector<Vector>> groups;
    for (std::size_t k = 0; k < b.members.size(); ++k)
      if (b.loss.per_sample_lm[k]) groups[samples_[b.members[k]].predicate].push_back(b.encoded[k]);
    for (const auto& [p, hs] : groups)
      update_prototype(space_, p, batch_class_average(hs), b.loss.per_class_variance.at(p), hs.size(),
                       config_.beta, config_.gamma, config_.max_step);
  }

  std::vector<std::size_t> on_epoch(const EpochReport& e) {
    const std::size_t q = space_.size();
    std::vector<std::vector<Vector>> groups(q);
    std::vector<double> var_sum(q, 0.0);
    std::vector<std::size_t> var_n(q, 0);
    for (std::size_t k = 0; k < e.members.size(); ++k) {
      if (!e.variances[k]) continue;
      const auto p = samples_[e.members[k]].predicate;
      groups[p].push_back(e.encoded[k]);
      var_sum[p] += *e.variances[k];
      ++var_n[p];
    }
    std::vector<double> shift(q, 0.0);
    for (std::size_t p = 0; p < q; ++p) {
      if (groups[p].empty()) continue;
      space_.class_variance[p] = var_sum[p] / static_cast<double>(var_n[p]);
      const Vector avg = batch_class_average(groups[p]);
      if (config_.schedule == PrototypeSchedule::kPerEpoch)
        update_prototype(space_, p, avg, space_.class_variance[p], groups[p].size(), config_.beta, config_.gamma,
                         config_.max_step);
      Vector diff(avg.size());
      for (std::size_t d = 0; d < avg.size(); ++d) diff[d] = avg[d] - space_.prototypes[p][d];
      shift[p] = norm(diff);
    }

    std::vector<FlaggedSample> flagged;
    for (std::size_t k = 0; k < e.members.size(); ++k) {
      if (!e.variances[k]) continue;
      const auto& s = samples_[e.members[k]];
      if (flag_biased(*e.variances[k], space_.class_variance[s.predicate], shift[s.predicate], config_.mu))
        flagged.push_back({s.relation_id, s.predicate, *e.losses[k]});
    }
    auto events = multistage_filtration(flagged, config_.drop_percent, config_.protect_below, e.epoch, state_);
    std::vector<std::size_t> drops;
    for (auto& ev : events) {
      drops.push_back(index_of_.at(ev.relation_id));
      events_.push_back(std::move(ev));
    }
    return drops;
  }

  std::span<const TrainingSample> samples_;
  PrototypeSpace space_;
  PrototypeConfig config_;
  FiltrationState state_;
  std::unordered_map<RelationId, std::size_t> index_of_;
  std::vector<FiltrationEvent> events_;
};

// ---------------------------------------------------------------------------
// Serialization.

// Header "label,v1,...,vL", then one row per predicate.
inline void write_prototypes(std::ostream& out, const PrototypeSpace& space, const PredicateVocab& vocab) {
  out << "label";
  for (std::size_t d = 0; d < space.dim(); ++d) out << ",v" << (d + 1);
  out << '\n';
  for (std::size_t p = 0; p < space.size(); ++p) {
    out << vocab.label(p);
    for (double v : space.prototypes[p]) out << ',' << format_double(v);
    out << '\n';
  }
}

inline PrototypeSpace parse_prototypes(std::istream& in, const PredicateVocab& vocab) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kParse, "empty prototype file");
  const auto head = split_csv(line);
  if (head.size() < 3 || head[0] != "label") throw Error(ErrorKind::kParse, "prototype header must be label,v1,...");
  const std::size_t dim = head.size() - 1;
  auto space = PrototypeSpace::zeros(vocab.size(), dim);
  std::vector<bool> seen(vocab.size(), false);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    const std::string where = "line " + std::to_string(line_no);
    if (fields.size() != dim + 1) throw Error(ErrorKind::kParse, where + ": wrong number of values");
    const auto p = vocab.find(std::string(fields[0]));
    if (!p) throw Error(ErrorKind::kVocabulary, where + ": unknown predicate '" + std::string(fields[0]) + "'");
    if (seen[*p]) throw Error(ErrorKind::kValidation, where + ": duplicate prototype row");
    seen[*p] = true;
    for (std::size_t d = 0; d < dim; ++d)
      if (!try_parse_double(fields[d + 1], space.prototypes[*p][d]))
        throw Error(ErrorKind::kParse, where + ": bad value");
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw Error(ErrorKind::kParse, "prototype file must have one row per predicate");
  return space;
}

inline void write_filtration_log(std::ostream& out, std::span<const FiltrationEvent> events) {
  out << "epoch,relation_id,loss,reason\n";
  for (const auto& e : events)
    out << e.epoch << ',' << e.relation_id << ',' << format_double(e.loss) << ',' << e.reason << '\n';
}

// Square matrix with a label header row.
inline void write_similarity(std::ostream& out, const Matrix& s, const PredicateVocab& vocab) {
  for (std::size_t i = 0; i < vocab.size(); ++i) out << (i ? "," : "") << vocab.label(i);
  out << '\n';
  for (std::size_t i = 0; i < s.rows(); ++i) {
    for (std::size_t j = 0; j < s.cols(); ++j) out << (j ? "," : "") << format_double(s(i, j));
    out << '\n';
  }
}

inline Matrix parse_similarity(std::istream& in, const PredicateVocab& vocab) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kParse, "empty similarity file");
  const auto head = split_csv(line);
  const std::size_t q = vocab.size();
  if (head.size() != q) throw Error(ErrorKind::kParse, "similarity header must list Q labels");
  for (std::size_t i = 0; i < q; ++i)
    if (head[i] != vocab.label(i)) throw Error(ErrorKind::kVocabulary, "similarity header does not match vocabulary");
  Matrix s(q, q);
  for (std::size_t i = 0; i < q; ++i) {
    if (!std::getline(in, line)) throw Error(ErrorKind::kParse, "similarity matrix truncated");
    const auto fields = split_csv(line);
    if (fields.size() != q) throw Error(ErrorKind::kParse, "similarity row has the wrong width");
    for (std::size_t j = 0; j < q; ++j)
      if (!try_parse_double(fields[j], s(i, j))) throw Error(ErrorKind::kParse, "bad similarity value");
  }
  return s;
}

}  // namespace predbias

#endif  // PREDBIAS_PROTOTYPE_HPP_
