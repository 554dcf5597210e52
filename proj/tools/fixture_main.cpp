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
// Writes the planted-bias demo dataset:  predbias_fixture DIR [SEED [SCALE]]

#include <algorithm>
#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "planted_fixture.hpp"

int main(int argc, char** argv) {
  if (argc < 2 || argc > 4) {
    std::cerr << "usage: " << argv[0] << " DIR [SEED [SCALE]]\n";
    return 2;
  }
  predbias::fixture::PlantedOptions opt;
  try {
    if (argc >= 3) opt.seed = std::stoull(argv[2]);
    if (argc == 4) opt.scale = std::stod(argv[3]);
    opt.na_pairs = static_cast<std::size_t>(static_cast<double>(opt.na_pairs) * std::min(1.0, opt.scale));
    const auto fx = predbias::fixture::make_planted_fixture(argv[1], opt);
    std::cout << "wrote " << fx.relations << " relations (" << fx.planted.size() << " planted) to " << fx.dir.string()
              << "\nconfig: " << fx.config.string() << '\n';
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  return 0;
}
