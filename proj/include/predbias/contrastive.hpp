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
#ifndef PREDBIAS_CONTRASTIVE_HPP_
#define PREDBIAS_CONTRASTIVE_HPP_

// Robust contrastive training of a linear projection over frozen base
// embeddings.
//
// For an anchor i in a batch, positives are the other samples sharing its
// predicate and negatives are the rest:
//
//   f_pos = sum_j exp(cos(theta_ij + m) / T)
//   f_neg = sum_g (1 - C[p_i][p_g]) * exp(cos(theta_ig) / T)
//   L_i   = -log(f_pos / (f_pos + f_neg))
//
// theta is the arccos of the clamped cosine. The batch objective is
//
//   total = mean_i L_i + lambda * sum_i Var(L^{class(i)})
//
// with population variance over the non-skipped anchors of each class.
// Anchors without positives are skipped.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "predbias/corpus.hpp"
#include "predbias/embedding.hpp"
#include "predbias/error.hpp"
#include "predbias/io.hpp"
#include "predbias/random.hpp"

namespace predbias {

inline constexpr double degrees_to_radians(double deg) { return deg * std::numbers::pi / 180.0; }

// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct TrainConfig {
  double temperature = 0.05;
  double margin = degrees_to_radians(10.0);
  double lambda = 0.3;
  double learning_rate = 2e-5;
  double momentum = 0.9;
  int epochs = 1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double init_noise = 1e-3;

  void validate() const {
    if (!(temperature > 0.0)) throw Error(ErrorKind::kConfig, "temperature must be > 0");
    if (!(lambda >= 0.0)) throw Error(ErrorKind::kConfig, "lambda must be >= 0");
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::kConfig, "learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorKind::kConfig, "momentum must lie in [0,1)");
    if (epochs < 0) throw Error(ErrorKind::kConfig, "epochs must be >= 0");
    if (batch_size < 2) throw Error(ErrorKind::kConfig, "batch_size must be >= 2");
    if (!std::isfinite(margin)) throw Error(ErrorKind::kConfig, "margin must be finite");
  }
};

// Linear projection h = normalize(W * base), W is L x B.
struct EncoderParams {
  Matrix weight;

  std::size_t out_dim() const { return weight.rows(); }
  std::size_t in_dim() const { return weight.cols(); }

  // Identity on the leading min(L, B) block plus N(0, noise^2) everywhere.
  static EncoderParams initialize(std::size_t out_dim, std::size_t in_dim, std::uint64_t seed,
                                  double noise = 1e-3) {
    EncoderParams p{Matrix(out_dim, in_dim)};
    Rng rng(derive_seed(seed, 0x1417));
    for (std::size_t r = 0; r < out_dim; ++r)
      for (std::size_t c = 0; c < in_dim; ++c)
        p.weight(r, c) = (r == c ? 1.0 : 0.0) + noise * rng.normal();
    return p;
  }

  bool operator==(const EncoderParams&) const = default;
};

namespace detail {

inline Vector project(const Matrix& w, std::span<const double> base) {
  if (base.size() != w.cols())
    throw Error(ErrorKind::kValidation, "base embedding has dim " + std::to_string(base.size()) +
                                            ", encoder expects " + std::to_string(w.cols()));
  Vector z(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) z[r] = dot(w.row(r), base);
  return z;
}

}  // namespace detail

inline Vector encode(const EncoderParams& params, std::span<const double> base) {
  const Vector z = detail::project(params.weight, base);
  const double n = norm(z);
  if (!(n > 0.0) || !std::isfinite(n))
    throw Error(ErrorKind::kValidation, "projected embedding is zero or non-finite");
  return normalized(z);
}

// nullopt when there are no positives (the anchor is skipped).
inline std::optional<double> positive_mass(std::span<const double> anchor, std::span<const Vector> positives,
                                           double margin, double temperature) {
  if (positives.empty()) return std::nullopt;
  double f = 0.0;
  for (const auto& h : positives) f += std::exp(std::cos(arc_angle(anchor, h) + margin) / temperature);
  return f;
}

inline double negative_mass(std::span<const double> anchor, PredicateIndex anchor_predicate,
                            std::span<const Vector> negatives, std::span<const PredicateIndex> negative_predicates,
                            const ConfusionMatrix& confusion, double temperature) {
  if (negatives.size() != negative_predicates.size())
    throw Error(ErrorKind::kValidation, "negatives and their predicates differ in length");
  double f = 0.0;
  for (std::size_t g = 0; g < negatives.size(); ++g) {
    const double weight = 1.0 - confusion(anchor_predicate, negative_predicates[g]);
    f += weight * std::exp(std::cos(arc_angle(anchor, negatives[g])) / temperature);
  }
  return f;
}

using AnchorLoss = std::optional<double>;

// -log(f_pos / (f_pos + f_neg)) per anchor; skipped anchors are nullopt.
inline std::vector<AnchorLoss> infonce_loss(std::span<const Vector> embeddings,
                                            std::span<const PredicateIndex> predicates,
                                            const ConfusionMatrix& confusion, double margin,
                                            double temperature) {
  const std::size_t n = embeddings.size();
  if (n < 2) throw Error(ErrorKind::kPrecondition, "batch needs at least 2 samples");
  if (predicates.size() != n) throw Error(ErrorKind::kValidation, "one predicate per embedding required");
  std::vector<AnchorLoss> losses(n);
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Vector> pos, neg;
    std::vector<PredicateIndex> neg_p;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      if (predicates[k] == predicates[i]) {
        pos.push_back(embeddings[k]);
      } else {
        neg.push_back(embeddings[k]);
        neg_p.push_back(predicates[k]);
      }
    }
    const auto f_pos = positive_mass(embeddings[i], pos, margin, temperature);
    if (!f_pos) continue;
    const double f_neg = negative_mass(embeddings[i], predicates[i], neg, neg_p, confusion, temperature);
    losses[i] = std::log1p(f_neg / *f_pos);
    any = true;
  }
  if (!any) throw Error(ErrorKind::kDegenerateBatch, "no anchor in the batch has a positive");
  return losses;
}

struct IrmTerm {
  double value = 0.0;
  std::map<PredicateIndex, double> per_class_variance;
  std::map<PredicateIndex, double> per_class_mean;
};

// lambda * sum over non-skipped samples of the population variance of their
// class's losses; singleton classes contribute 0.
inline IrmTerm irm_regularizer(std::span<const AnchorLoss> losses, std::span<const PredicateIndex> predicates,
                               double lambda) {
  std::map<PredicateIndex, std::pair<double, std::size_t>> sums;
  for (std::size_t i = 0; i < losses.size(); ++i)
    if (losses[i]) {
      auto& [s, c] = sums[predicates[i]];
      s += *losses[i];
      ++c;
    }
  IrmTerm out;
  for (const auto& [p, sc] : sums) out.per_class_mean[p] = sc.first / static_cast<double>(sc.second);
  std::map<PredicateIndex, double> sq;
  for (std::size_t i = 0; i < losses.size(); ++i)
    if (losses[i]) {
      const double d = *losses[i] - out.per_class_mean[predicates[i]];
      sq[predicates[i]] += d * d;
    }
  for (const auto& [p, sc] : sums) {
    const double var = sq[p] / static_cast<double>(sc.second);
    out.per_class_variance[p] = var;
    out.value += lambda * static_cast<double>(sc.second) * var;
  }
  return out;
}

struct LossBreakdown {
  std::vector<AnchorLoss> per_sample_lm;
  std::map<PredicateIndex, double> per_class_variance;
  double mean_lm = 0.0;
  double l_irm = 0.0;
  double total = 0.0;

  std::size_t scored_anchors() const {
    return static_cast<std::size_t>(std::count_if(per_sample_lm.begin(), per_sample_lm.end(),
                                                  [](const AnchorLoss& l) { return l.has_value(); }));
  }
};

struct LossAndGradient {
  LossBreakdown loss;
  Matrix gradient;              // d total / d W
  std::vector<Vector> encoded;  // unit embeddings of the batch
};

// Forward pass plus the analytic gradient of `total` with respect to the
// encoder weight, through normalization, the clamped arccos, the margin and
// the variance term.
inline LossAndGradient loss_and_gradient(const EncoderParams& params, std::span<const Vector> base,
                                         std::span<const PredicateIndex> predicates,
                                         const ConfusionMatrix& confusion, const TrainConfig& config) {
  const std::size_t n = base.size();
  if (n < 2) throw Error(ErrorKind::kPrecondition, "batch needs at least 2 samples");
  if (predicates.size() != n) throw Error(ErrorKind::kValidation, "one predicate per embedding required");
  const double T = config.temperature;
  const double m = config.margin;
  constexpr double kLo = -1.0 + kCosineClamp;
  constexpr double kHi = 1.0 - kCosineClamp;

  std::vector<Vector> z(n), h(n);
  std::vector<double> z_norm(n);
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = detail::project(params.weight, base[i]);
    z_norm[i] = norm(z[i]);
    if (!(z_norm[i] > 0.0) || !std::isfinite(z_norm[i]))
      throw Error(ErrorKind::kValidation, "projected embedding " + std::to_string(i) + " is zero or non-finite");
    h[i] = z[i];
    for (double& v : h[i]) v /= z_norm[i];
  }

  Matrix raw_cos(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = i + 1; k < n; ++k) raw_cos(i, k) = raw_cos(k, i) = dot(h[i], h[k]);

  // Forward.
  std::vector<AnchorLoss> losses(n);
  std::vector<double> f_pos(n, 0.0), f_neg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    bool has_pos = false;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      const double c = std::clamp(raw_cos(i, k), kLo, kHi);
      if (predicates[k] == predicates[i]) {
        f_pos[i] += std::exp(std::cos(std::acos(c) + m) / T);
        has_pos = true;
      } else {
        f_neg[i] += (1.0 - confusion(predicates[i], predicates[k])) * std::exp(c / T);
      }
    }
    if (has_pos) losses[i] = std::log1p(f_neg[i] / f_pos[i]);
  }

  LossAndGradient out;
  auto& lb = out.loss;
  lb.per_sample_lm = losses;
  const IrmTerm irm = irm_regularizer(losses, predicates, config.lambda);
  lb.per_class_variance = irm.per_class_variance;
  const std::size_t scored = lb.scored_anchors();
  if (scored == 0) throw Error(ErrorKind::kDegenerateBatch, "no anchor in the batch has a positive");
  double sum = 0.0;
  for (const auto& l : losses)
    if (l) sum += *l;
  lb.mean_lm = sum / static_cast<double>(scored);
  lb.l_irm = irm.value;
  lb.total = lb.mean_lm + lb.l_irm;

  // Backward: d total / d L_i = 1/K + 2 lambda (L_i - mean_class(i)).
  std::vector<Vector> dh(n, Vector(h[0].size(), 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    if (!losses[i]) continue;
    const double g = 1.0 / static_cast<double>(scored) +
                     2.0 * config.lambda * (*losses[i] - irm.per_class_mean.at(predicates[i]));
    const double denom = f_pos[i] + f_neg[i];
    const double d_fpos = -f_neg[i] / (f_pos[i] * denom);
    const double d_fneg = 1.0 / denom;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      const double raw = raw_cos(i, k);
      if (raw < kLo || raw > kHi) continue;  // clamped: zero derivative
      double dc;
      if (predicates[k] == predicates[i]) {
        const double theta = std::acos(raw);
        const double a = std::exp(std::cos(theta + m) / T);
        dc = g * d_fpos * a * std::sin(theta + m) / (T * std::sqrt(1.0 - raw * raw));
      } else {
        const double b = (1.0 - confusion(predicates[i], predicates[k])) * std::exp(raw / T);
        dc = g * d_fneg * b / T;
      }
      for (std::size_t d = 0; d < h[i].size(); ++d) {
        dh[i][d] += dc * h[k][d];
        dh[k][d] += dc * h[i][d];
      }
    }
  }

  out.gradient = Matrix(params.out_dim(), params.in_dim());
  for (std::size_t i = 0; i < n; ++i) {
    const double proj = dot(h[i], dh[i]);
    for (std::size_t r = 0; r < h[i].size(); ++r) {
      const double dz = (dh[i][r] - h[i][r] * proj) / z_norm[i];
      if (!std::isfinite(dz))
        throw Error(ErrorKind::kNumerical, "non-finite gradient at anchor " + std::to_string(i));
      auto row = out.gradient.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += dz * base[i][c];
    }
  }
  out.encoded = std::move(h);
  return out;
}

// ---------------------------------------------------------------------------
// Training loop.

struct TrainingSample {
  RelationId relation_id = 0;
  PredicateIndex predicate = 0;
  Vector base;
};

struct BatchReport {
  int epoch = 0;
  std::span<const std::size_t> members;  // indices into the sample list
  const std::vector<Vector>& encoded;
  const LossBreakdown& loss;
};

// Everything trained on during one epoch, in visit order.
struct EpochReport {
  int epoch = 0;
  std::vector<std::size_t> members;
  std::vector<Vector> encoded;
  std::vector<AnchorLoss> losses;
  // Squared deviation of each loss from its class's mean epoch loss.
  std::vector<std::optional<double>> variances;
};

struct FitHooks {
  std::function<void(const BatchReport&)> on_batch;
  // Returns sample indices to deactivate from the next epoch on.
  std::function<std::vector<std::size_t>(const EpochReport&)> on_epoch;
};

struct EpochTrace {
  int epoch = 0;
  double mean_lm = 0.0;
  double l_irm = 0.0;
  std::size_t active_samples = 0;

  bool operator==(const EpochTrace&) const = default;
};

struct FitResult {
  EncoderParams params;
  std::vector<EpochTrace> trace;
  std::vector<bool> active;
};

// Class-aware batches: members of each class are dealt out in chunks of two
// (three for an odd remainder) so that every anchor of a class with at least
// two active samples sees a positive.
inline std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> active,
                                                          std::span<const TrainingSample> samples,
                                                          std::size_t batch_size, Rng& rng) {
  std::map<PredicateIndex, std::vector<std::size_t>> by_class;
  for (std::size_t idx : active) by_class[samples[idx].predicate].push_back(idx);
  std::vector<std::vector<std::size_t>> chunks;
  for (auto& [p, members] : by_class) {
    rng.shuffle(std::span(members));
    std::size_t i = 0;
    while (i < members.size()) {
      const std::size_t left = members.size() - i;
      const std::size_t take = (left == 3 || left == 1) ? left : 2;
      chunks.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(i),
                          members.begin() + static_cast<std::ptrdiff_t>(i + take));
      i += take;
    }
  }
  rng.shuffle(std::span(chunks));
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> cur;
  for (const auto& chunk : chunks) {
    cur.insert(cur.end(), chunk.begin(), chunk.end());
    if (cur.size() >= batch_size) batches.push_back(std::exchange(cur, {}));
  }
  if (!cur.empty()) {
    if (cur.size() < 2 && !batches.empty()) {
      batches.back().insert(batches.back().end(), cur.begin(), cur.end());
    } else {
      batches.push_back(std::move(cur));
    }
  }
  return batches;
}

inline bool has_positive_pair(std::span<const std::size_t> batch, std::span<const TrainingSample> samples) {
  std::map<PredicateIndex, int> seen;
  for (std::size_t idx : batch)
    if (++seen[samples[idx].predicate] >= 2) return true;
  return false;
}

// Mini-batch gradient descent with momentum over the active samples.
inline FitResult fit(std::span<const TrainingSample> samples, std::size_t out_dim, const ConfusionMatrix& confusion,
                     const TrainConfig& config, const FitHooks& hooks = {},
                     std::optional<EncoderParams> init = std::nullopt) {
  config.validate();
  if (samples.empty()) throw Error(ErrorKind::kPrecondition, "no training samples");
  const std::size_t in_dim = samples.front().base.size();
  for (const auto& s : samples) {
    if (s.base.size() != in_dim) throw Error(ErrorKind::kValidation, "inconsistent base embedding dims");
    if (s.predicate >= confusion.size()) throw Error(ErrorKind::kVocabulary, "predicate outside confusion matrix");
  }

  FitResult result;
  result.params = init ? std::move(*init) : EncoderParams::initialize(out_dim, in_dim, config.seed, config.init_noise);
  if (result.params.in_dim() != in_dim || result.params.out_dim() != out_dim)
    throw Error(ErrorKind::kValidation, "initial encoder has the wrong shape");
  result.active.assign(samples.size(), true);
  Matrix velocity(out_dim, in_dim);
  Rng rng(derive_seed(config.seed, 0xba7c));

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (result.active[i]) active.push_back(i);
    EpochTrace trace{epoch, 0.0, 0.0, active.size()};
    EpochReport report;
    report.epoch = epoch;

    double irm_sum = 0.0;
    std::size_t batches_run = 0;
    for (const auto& batch : make_batches(active, samples, config.batch_size, rng)) {
      if (batch.size() < 2 || !has_positive_pair(batch, samples)) {
        log(LogLevel::kDebug, "epoch " + std::to_string(epoch) + ": skipping a batch without positive pairs");
        continue;
      }
      std::vector<Vector> base;
      std::vector<PredicateIndex> labels;
      for (std::size_t idx : batch) {
        base.push_back(samples[idx].base);
        labels.push_back(samples[idx].predicate);
      }
      auto lg = loss_and_gradient(result.params, base, labels, confusion, config);
      if (hooks.on_batch) hooks.on_batch(BatchReport{epoch, batch, lg.encoded, lg.loss});

      auto& w = result.params.weight.data();
      auto& v = velocity.data();
      const auto& g = lg.gradient.data();
      for (std::size_t k = 0; k < w.size(); ++k) {
        v[k] = config.momentum * v[k] + g[k];
        w[k] -= config.learning_rate * v[k];
      }

      irm_sum += lg.loss.l_irm;
      ++batches_run;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        report.members.push_back(batch[b]);
        report.encoded.push_back(std::move(lg.encoded[b]));
        report.losses.push_back(lg.loss.per_sample_lm[b]);
      }
    }

    // Per-sample variance against the class's mean epoch loss.
    std::map<PredicateIndex, std::pair<double, std::size_t>> class_sum;
    double loss_sum = 0.0;
    std::size_t scored = 0;
    for (std::size_t k = 0; k < report.members.size(); ++k) {
      if (!report.losses[k]) continue;
      auto& [s, c] = class_sum[samples[report.members[k]].predicate];
      s += *report.losses[k];
      ++c;
      loss_sum += *report.losses[k];
      ++scored;
    }
    report.variances.resize(report.members.size());
    for (std::size_t k = 0; k < report.members.size(); ++k) {
      if (!report.losses[k]) continue;
      const auto& [s, c] = class_sum[samples[report.members[k]].predicate];
      const double d = *report.losses[k] - s / static_cast<double>(c);
      report.variances[k] = d * d;
    }
    trace.mean_lm = scored ? loss_sum / static_cast<double>(scored) : 0.0;
    trace.l_irm = batches_run ? irm_sum / static_cast<double>(batches_run) : 0.0;
    result.trace.push_back(trace);
    log(LogLevel::kDebug, "epoch " + std::to_string(epoch) + " mean_lm=" + format_double(trace.mean_lm) +
                              " l_irm=" + format_double(trace.l_irm) + " active=" + std::to_string(trace.active_samples));

    if (hooks.on_epoch)
      for (std::size_t idx : hooks.on_epoch(report)) result.active.at(idx) = false;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization.

inline void write_loss_trace(std::ostream& out, std::span<const EpochTrace> trace) {
  out << "epoch,mean_lm,l_irm,active_sample_count\n";
  for (const auto& t : trace)
    out << t.epoch << ',' << format_double(t.mean_lm) << ',' << format_double(t.l_irm) << ','
        << t.active_samples << '\n';
}

// "rows=<L>,cols=<B>" then L rows of B values.
inline void write_encoder(std::ostream& out, const EncoderParams& params) {
  out << "rows=" << params.out_dim() << ",cols=" << params.in_dim() << '\n';
  for (std::size_t r = 0; r < params.out_dim(); ++r) {
    const auto row = params.weight.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << format_double(row[c]);
    out << '\n';
  }
}

inline EncoderParams parse_encoder(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kParse, "empty encoder file");
  const auto head = split_csv(line);
  std::int64_t rows = 0, cols = 0;
  if (head.size() != 2 || !head[0].starts_with("rows=") || !head[1].starts_with("cols=") ||
      !try_parse_int(head[0].substr(5), rows) || !try_parse_int(head[1].substr(5), cols) || rows < 1 || cols < 1)
    throw Error(ErrorKind::kParse, "encoder header must be rows=<L>,cols=<B>");
  EncoderParams p{Matrix(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols))};
  for (std::size_t r = 0; r < p.out_dim(); ++r) {
    if (!std::getline(in, line)) throw Error(ErrorKind::kParse, "encoder file truncated");
    const auto fields = split_csv(line);
    if (fields.size() != p.in_dim()) throw Error(ErrorKind::kParse, "encoder row has the wrong width");
    for (std::size_t c = 0; c < fields.size(); ++c)
      if (!try_parse_double(fields[c], p.weight(r, c))) throw Error(ErrorKind::kParse, "bad encoder value");
  }
  return p;
}

}  // namespace predbias

#endif  // PREDBIAS_CONTRASTIVE_HPP_
