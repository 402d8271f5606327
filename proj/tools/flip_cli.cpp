/**
 * Copyright 2026 The FLIP Labels Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "flip/pipeline.hpp"
#include "flip/verify.hpp"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Common {
  std::string config;
  std::string profile = "desk";
  bool force = false;
  int jobs = 1;
};

flip::ExperimentConfig resolve_config(const Common& c) {
  const flip::Profile p = flip::profile_from_string(c.profile);
  if (c.config.empty()) {
    flip::ExperimentConfig cfg = flip::ExperimentConfig::for_profile(p);
    cfg.validate();
    return cfg;
  }
  return flip::load_experiment_config(c.config, p);
}

void add_common(CLI::App* sub, Common& c, bool stageFlags) {
  sub->add_option("--config", c.config, "experiment config (JSON); profile defaults fill missing keys");
  sub->add_option("--profile", c.profile, "default profile")->check(CLI::IsMember({"desk", "paper"}));
  if (stageFlags) {
    sub->add_flag("--force", c.force, "overwrite existing stage outputs");
    sub->add_option("--jobs", c.jobs, "parallel workers")->check(CLI::PositiveNumber);
  }
}

int run_verify(const Common& c) {
  const flip::ExperimentConfig cfg = resolve_config(c);
  bool ok = true;
  for (const auto& r : flip::verify::run_oracle_suite(cfg.seed)) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (worst " << r.worst << ", tolerance " << r.tolerance
              << ")" << (r.detail.empty() ? "" : " " + r.detail) << "\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-only backdoor attack toolkit"};
  app.require_subcommand(1);
  Common common;

  struct StageCmd {
    const char* name;
    flip::Stage stage;
    const char* help;
  };
  const StageCmd stages[] = {
      {"train-expert", flip::Stage::train_expert, "train backdoored expert models and record trajectories"},
      {"optimize-labels", flip::Stage::optimize_labels, "optimize soft labels by trajectory matching"},
      {"select-flips", flip::Stage::select_flips, "turn optimized labels into flip sets and soft-label tables"},
      {"evaluate", flip::Stage::evaluate, "train user models and write CTA/PTA trade-off curves"},
  };
  std::optional<flip::Stage> chosen;
  for (const auto& s : stages) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    add_common(sub, common, true);
    sub->callback([&chosen, stage = s.stage] { chosen = stage; });
  }
  CLI::App* verify = app.add_subcommand("verify", "run the gradient and selection oracles");
  add_common(verify, common, false);
  verify->group("");
  CLI::App* show = app.add_subcommand("show-config", "print the resolved experiment config");
  add_common(show, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (verify->parsed()) return run_verify(common);
    if (show->parsed()) {
      nlohmann::json j = resolve_config(common);
      std::cout << j.dump(2) << "\n";
      return 0;
    }
    const flip::ExperimentConfig cfg = resolve_config(common);
    flip::RunOptions opts;
    opts.force = common.force;
    opts.jobs = common.jobs;
    opts.log = &std::cerr;
    flip::run_stage(cfg, *chosen, opts);
    flip::write_manifest(cfg.outputDir);
    return 0;
  } catch (const flip::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const flip::StageError& e) {
    std::cerr << "stage error: " << e.what() << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}
