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
#pragma once

#include "lmpc/lmpc.hpp"
#include "lmpc/systems.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lmpc {

using Json = nlohmann::ordered_json;

enum class InstanceKind { kClqr, kDubins, kAdaptiveDubins };

const char* to_string(InstanceKind kind);
InstanceKind parse_instance(const std::string& s);

struct ExperimentConfig {
  InstanceKind instance = InstanceKind::kClqr;
  Mode mode = Mode::kEnumeration;
  std::optional<double> gamma;
  std::optional<double> epsilon;
  std::optional<int> max_iterations;
  std::string output_dir = "lmpc-out";
  // Recorded for completeness; every algorithm here is deterministic.
  std::uint64_t seed = 0;
  bool prune = true;
  Json overrides = Json::object();
};

// Throws ConfigError on unknown keys, wrong types or invalid values.
ExperimentConfig parse_config(const Json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

ClqrInstance clqr_instance(const ExperimentConfig& cfg);
DubinsInstance dubins_instance(const ExperimentConfig& cfg);
AdaptiveDubinsInstance adaptive_instance(const ExperimentConfig& cfg);

struct PreparedExperiment {
  LmpcProblem problem;
  IterationRecord seed;
};

// Builds the problem and the iteration-0 trajectory for the configured instance.
PreparedExperiment prepare_experiment(const ExperimentConfig& cfg);

// "%.17g"; round-trips every finite double.
std::string format_double(double v);

// Header iteration,t,x0..x{n-1},u0..u{m-1},stage_cost,cost_to_go. The
// terminal state gets a row with zero inputs and zero stage cost.
void write_trajectories_csv(const std::filesystem::path& path,
                            const std::vector<IterationRecord>& records);
std::vector<IterationRecord> read_trajectories_csv(const std::filesystem::path& path);

Json campaign_summary(const ExperimentConfig& cfg, const LmpcProblem& prob,
                      const Campaign& camp);
Json safe_set_snapshot(const SampledSafeSet& ss);

void write_json(const std::filesystem::path& path, const Json& j);
Json read_json(const std::filesystem::path& path);

// Writes trajectories.csv, summary.json and safe_set.json into dir.
void write_campaign(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                    const LmpcProblem& prob, const Campaign& camp);

// Figure data series derived from a campaign directory; returns the files written.
std::vector<std::filesystem::path> export_plot_data(const std::filesystem::path& dir);

struct OracleComparison {
  double oracle_cost = kInf;
  double campaign_cost = kInf;
  double max_deviation = kInf;
  double cost_gap = kInf;
  double saturation_gap = kInf;
};

// Compares the last stored iteration in dir against the CLQR oracle and
// writes oracle_trajectory.csv and oracle.json there.
OracleComparison compare_with_oracle(const ExperimentConfig& cfg,
                                     const std::filesystem::path& dir);

}  // namespace lmpc
