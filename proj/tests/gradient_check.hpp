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
#ifndef PREDBIAS_TESTS_GRADIENT_CHECK_HPP_
#define PREDBIAS_TESTS_GRADIENT_CHECK_HPP_

// Central finite differences of the batch objective with respect to the
// encoder weight, compared entry by entry with the analytic gradient.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "predbias/contrastive.hpp"
#include "predbias/random.hpp"

namespace predbias::testing {

struct GradientProblem {
  EncoderParams params;
  std::vector<Vector> base;
  std::vector<PredicateIndex> predicates;
  ConfusionMatrix confusion = ConfusionMatrix::zeros(2);
  TrainConfig config;
};

// Random batch of `n` samples over `q` classes; every class gets at least
// two members so each anchor has a positive.
inline GradientProblem random_problem(std::uint64_t seed, std::size_t dim = 8, std::size_t n = 6,
                                      std::size_t q = 3) {
  Rng rng(seed);
  GradientProblem p;
  p.params = EncoderParams::initialize(dim, dim, seed, 0.3);
  for (std::size_t i = 0; i < n; ++i) {
    Vector b(dim);
    for (double& x : b) x = rng.normal();
    p.base.push_back(b);
    p.predicates.push_back(i < 2 * q ? i / 2 : rng.below(q));
  }
  rng.shuffle(std::span(p.predicates));
  std::vector<double> c(q * q);
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t j = 0; j < q; ++j) c[i * q + j] = i == j ? 1.0 : 0.6 * rng.uniform();
  p.confusion = ConfusionMatrix(q, c);
  return p;
}

inline double objective(const GradientProblem& p, const EncoderParams& params) {
  return loss_and_gradient(params, p.base, p.predicates, p.confusion, p.config).loss.total;
}

struct GradientComparison {
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
  double max_abs_gradient = 0.0;
};

// Relative error per entry is |a - n| / max(|a|, |n|); an entry where both
// are exactly zero counts as agreement.
inline GradientComparison compare_gradient(const GradientProblem& p, double step = 1e-5) {
  const auto analytic = loss_and_gradient(p.params, p.base, p.predicates, p.confusion, p.config).gradient;
  GradientComparison out;
  EncoderParams probe = p.params;
  for (std::size_t k = 0; k < probe.weight.data().size(); ++k) {
    const double w = probe.weight.data()[k];
    probe.weight.data()[k] = w + step;
    const double up = objective(p, probe);
    probe.weight.data()[k] = w - step;
    const double down = objective(p, probe);
    probe.weight.data()[k] = w;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic.data()[k];
    const double err = std::abs(a - numeric);
    out.max_abs_error = std::max(out.max_abs_error, err);
    out.max_abs_gradient = std::max(out.max_abs_gradient, std::abs(a));
    const double scale = std::max(std::abs(a), std::abs(numeric));
    if (scale > 0.0) out.max_relative_error = std::max(out.max_relative_error, err / scale);
  }
  return out;
}

}  // namespace predbias::testing

#endif  // PREDBIAS_TESTS_GRADIENT_CHECK_HPP_
