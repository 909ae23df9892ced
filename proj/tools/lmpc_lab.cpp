/*
 Copyright 2026 The lmpc-lab Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

     https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/
// lmpc-lab: runs LMPC campaigns and exports their data.
//
//   lmpc-lab run --config cfg.json [--out dir]
//   lmpc-lab oracle --config cfg.json --campaign dir
//   lmpc-lab export-plots --campaign dir
//
// Exit codes: 0 converged / success, 1 bad configuration, 2 iteration cap
// reached, 3 numerical failure.

#include "lmpc/io.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitCap = 2;
constexpr int kExitNumerical = 3;

int threads_from_env() {
  const char* v = std::getenv("LMPC_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 0) throw lmpc::ConfigError("LMPC_THREADS must be a non-negative integer");
  return static_cast<int>(n);
}

int cmd_run(const std::string& config_path, const std::string& out) {
  lmpc::ExperimentConfig cfg = lmpc::load_config(config_path);
  if (!out.empty()) cfg.output_dir = out;
  lmpc::LmpcOptions opt;
  opt.threads = threads_from_env();
  opt.prune = cfg.prune;
  const lmpc::PreparedExperiment exp = lmpc::prepare_experiment(cfg);
  std::printf("%s (%s): iteration 0 cost %.12g, %zu steps\n", lmpc::to_string(cfg.instance),
              lmpc::to_string(cfg.mode), exp.seed.cost, exp.seed.trajectory.steps());
  const lmpc::Campaign camp =
      lmpc::run_until_convergence(exp.problem, exp.seed, opt, [](const lmpc::Campaign& c) {
        const lmpc::IterationRecord& r = c.records.back();
        std::printf("iteration %d cost %.12g steps %zu safe set %zu\n", r.trajectory.iteration,
                    r.cost, r.trajectory.steps(), c.safe_set.size());
        std::fflush(stdout);
      });
  lmpc::write_campaign(cfg.output_dir, cfg, exp.problem, camp);
  std::printf("%s after %zu iterations; results in %s\n",
              camp.converged ? "converged" : "iteration cap reached", camp.records.size() - 1,
              cfg.output_dir.c_str());
  return camp.converged ? kExitOk : kExitCap;
}

int cmd_oracle(const std::string& config_path, const std::string& campaign) {
  const lmpc::ExperimentConfig cfg = lmpc::load_config(config_path);
  const lmpc::OracleComparison c = lmpc::compare_with_oracle(cfg, campaign);
  std::printf("oracle cost %.15g\ncampaign cost %.15g\ncost gap %.3e\nmax deviation %.3e\n",
              c.oracle_cost, c.campaign_cost, c.cost_gap, c.max_deviation);
  return kExitOk;
}

int cmd_export(const std::string& campaign) {
  for (const auto& p : lmpc::export_plot_data(campaign)) std::printf("%s\n", p.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learning model predictive control experiments"};
  app.require_subcommand(1);
  std::string config;
  std::string out;
  std::string campaign;

  CLI::App* run = app.add_subcommand("run", "Run a campaign until convergence");
  run->add_option("--config", config, "Experiment config (JSON)")->required();
  run->add_option("--out", out, "Output directory (overrides output_dir)");

  CLI::App* oracle = app.add_subcommand("oracle", "Compare a CLQR campaign with the oracle");
  oracle->add_option("--config", config, "Experiment config (JSON)")->required();
  oracle->add_option("--campaign", campaign, "Campaign directory")->required();

  CLI::App* plots = app.add_subcommand("export-plots", "Write figure data series");
  plots->add_option("--campaign", campaign, "Campaign directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(config, out);
    if (oracle->parsed()) return cmd_oracle(config, campaign);
    return cmd_export(campaign);
  } catch (const lmpc::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const lmpc::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}
