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
#ifndef PREDBIAS_RESAMPLE_HPP_
#define PREDBIAS_RESAMPLE_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "predbias/corpus.hpp"
#include "predbias/error.hpp"
#include "predbias/io.hpp"
#include "predbias/random.hpp"
#include "predbias/transfer.hpp"

namespace predbias {

inline double triplet_repeat_factor(double pair_scarcity, double predicate_scarcity, double t) {
  if (!(pair_scarcity > 0.0) || !(predicate_scarcity > 0.0))
    throw Error(ErrorKind::kValidation, "scarcities must be positive");
  if (!(t > 0.0)) throw Error(ErrorKind::kValidation, "t must be positive");
  return std::max(1.0, t * pair_scarcity * predicate_scarcity);
}

// Max triplet factor of the image; 1 for an image without relations.
inline double image_repeat_factor(std::span<const RelationInstance> relations, const ScarcityTable& scarcity,
                                  double t) {
  double r = 1.0;
  for (const auto& rel : relations) {
    if (rel.is_na()) continue;
    r = std::max(r, triplet_repeat_factor(scarcity.pair(rel.subject.class_label, rel.object.class_label),
                                          scarcity.predicate(*rel.predicate), t));
  }
  return r;
}

struct RepeatPlan {
  std::vector<std::pair<std::string, double>> per_image;  // dataset image order
  std::vector<std::string> materialized_index;
};

inline std::vector<std::pair<std::string, double>> compute_repeat_factors(const Dataset& ds,
                                                                          const ScarcityTable& scarcity, double t) {
  std::unordered_map<std::string, std::vector<RelationInstance>> by_image;
  for (const auto& r : ds.relations) by_image[r.image_id].push_back(r);
  std::vector<std::pair<std::string, double>> out;
  out.reserve(ds.image_ids.size());
  for (const auto& image : ds.image_ids) out.emplace_back(image, image_repeat_factor(by_image[image], scarcity, t));
  return out;
}

// floor(R) copies plus one more with probability frac(R); each image draws
// from its own derived stream, then the whole index is shuffled.
inline std::vector<std::string> materialize(std::span<const std::pair<std::string, double>> factors,
                                            std::uint64_t seed) {
  std::vector<std::string> index;
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const auto& [image, r] = factors[i];
    if (!(r >= 1.0) || !std::isfinite(r))
      throw Error(ErrorKind::kValidation, "repeat factor of '" + image + "' must be finite and >= 1");
    const double whole = std::floor(r);
    Rng rng(derive_seed(seed, i));
    const auto copies = static_cast<std::size_t>(whole) + (rng.bernoulli(r - whole) ? 1 : 0);
    index.insert(index.end(), copies, image);
  }
  Rng shuffler(derive_seed(seed, 0x5f1ffe));
  shuffler.shuffle(std::span(index));
  return index;
}

inline RepeatPlan plan_resampling(const Dataset& ds, const ScarcityTable& scarcity, double t, std::uint64_t seed) {
  RepeatPlan plan;
  plan.per_image = compute_repeat_factors(ds, scarcity, t);
  plan.materialized_index = materialize(plan.per_image, seed);
  return plan;
}

inline void write_index(std::ostream& out, std::span<const std::string> index) {
  for (const auto& image : index) out << image << '\n';
}

inline void write_repeat_factors(std::ostream& out, std::span<const std::pair<std::string, double>> factors) {
  out << "image_id,repeat_factor\n";
  for (const auto& [image, r] : factors) out << image << ',' << format_double(r) << '\n';
}

}  // namespace predbias

#endif  // PREDBIAS_RESAMPLE_HPP_
