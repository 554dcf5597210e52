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
#ifndef PREDBIAS_TESTS_SCENE_FIXTURE_HPP_
#define PREDBIAS_TESTS_SCENE_FIXTURE_HPP_

// Random ground-truth scene graphs and noisy ranked predictions for recall
// property checks.

#include <cstdint>
#include <string>
#include <utility>

#include "predbias/audit.hpp"
#include "predbias/random.hpp"

namespace predbias::testing {

inline std::pair<SceneGraphs, SceneGraphs> random_scene_graphs(std::uint64_t seed, std::size_t images = 6,
                                                               std::size_t predicates = 5) {
  Rng rng(seed);
  SceneGraphs gt, pred;
  auto triplet = [&](std::size_t segs) {
    const auto s = rng.below(segs), o = (s + 1 + rng.below(segs - 1)) % segs;
    return SceneTriplet{"c" + std::to_string(s % 3), "s" + std::to_string(s), "p" + std::to_string(rng.below(predicates)),
                        "c" + std::to_string(o % 3), "s" + std::to_string(o)};
  };
  for (std::size_t i = 0; i < images; ++i) {
    const std::string image = "img" + std::to_string(i);
    const std::size_t segs = 3 + rng.below(4);
    auto& g = gt[image];
    for (std::uint64_t k = 0, n = rng.below(6); k < n; ++k) g.push_back(triplet(segs));
    auto& p = pred[image];
    for (std::uint64_t k = 0, n = rng.below(30); k < n; ++k)
      p.push_back(!g.empty() && rng.bernoulli(0.4) ? g[rng.below(g.size())] : triplet(segs));
  }
  return {gt, pred};
}

}  // namespace predbias::testing

#endif  // PREDBIAS_TESTS_SCENE_FIXTURE_HPP_
