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
// predbias: relabel biased predicate annotations and resample the result.
//
//   predbias --config cfg.json --out DIR [--seed N] [--stage NAME]
//   predbias <run|ingest|identify|embed|train|prototypes|transfer|resample|audit> --config cfg.json --out DIR

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "predbias/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Detect biased predicate annotations and transfer them to informative labels"};
  app.fallthrough();
  app.require_subcommand(0, 1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> stage;

  app.add_option("--config", config_path, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "Output directory")->required();
  app.add_option("--seed", seed, "Override the config seed");
  std::vector<std::string> stage_names(predbias::kStages.begin(), predbias::kStages.end());
  app.add_option("--stage", stage, "Run a single stage")->check(CLI::IsMember(stage_names));

  app.add_subcommand("run", "Run every stage");
  for (auto name : predbias::kStages) app.add_subcommand(std::string(name), "Run the " + std::string(name) + " stage");

  CLI11_PARSE(app, argc, argv);

  for (const auto* sub : app.get_subcommands()) {
    if (sub->get_name() == "run") continue;
    if (stage && *stage != sub->get_name()) {
      std::cerr << "conflicting stages: " << *stage << " and " << sub->get_name() << '\n';
      return 2;
    }
    stage = sub->get_name();
  }

  try {
    predbias::run(config_path, out_dir, seed, stage);
  } catch (const predbias::Error& e) {
    predbias::log(predbias::LogLevel::kError, e.what());
    return 1;
  } catch (const std::exception& e) {
    predbias::log(predbias::LogLevel::kError, e.what());
    return 1;
  }
  return 0;
}
