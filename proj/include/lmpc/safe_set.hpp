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

#include "lmpc/core.hpp"

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

namespace lmpc {

struct SafePoint {
  Vector state;
  int iteration = 0;
  int time = 0;
  double cost_to_go = 0.0;
};

// Position of a point inside the set: (stored trajectory slot, time).
struct PointRef {
  std::size_t slot = 0;
  int time = 0;
};

struct Candidate {
  PointRef ref;
  int iteration = 0;
  int time = 0;
  Vector state;
  double q = 0.0;
};

// Candidates ordered by (q, iteration, time).
struct RestrictionSet {
  std::vector<Candidate> points;
  double bound = kInf;
  std::size_t size() const { return points.size(); }
};

// Suffix sums of the stage costs, accumulated backward.
std::vector<double> cost_to_go_tails(const std::vector<double>& stage_costs);

class SampledSafeSet {
 public:
  // Pruning slack added to the previous optimal cost.
  static constexpr double kRestrictionSlack = 1e-9;

  // Rejects records that did not reach the target.
  void add_trajectory(const IterationRecord& rec);

  bool empty() const { return trajectories_.empty(); }
  std::size_t size() const { return num_points_; }
  std::size_t num_trajectories() const { return trajectories_.size(); }
  std::size_t num_distinct_states() const { return index_.size(); }

  // Points x_0..x_T of one stored trajectory.
  const std::vector<SafePoint>& points(std::size_t slot) const;
  // Input applied at a point; zero at the terminal point.
  const Vector& input_at(const PointRef& ref) const;
  const SafePoint& point(const PointRef& ref) const;
  bool has_successor(const PointRef& ref) const;
  PointRef successor(const PointRef& ref) const;

  // Minimum stored cost-to-go at exactly this state, +inf when absent.
  double q_value(const Vector& x) const;

  // One representative per distinct state (minimum cost-to-go, earliest
  // (iteration, time) among equals), sorted by (q, iteration, time).
  std::vector<Candidate> candidates() const;
  RestrictionSet restriction_set(double prev_step_cost) const;

 private:
  struct Stored {
    std::vector<SafePoint> points;
    std::vector<Vector> inputs;
  };
  struct Entry {
    double q = kInf;
    PointRef best;
    int iteration = 0;
  };

  static std::string key(const Vector& x);

  std::vector<Stored> trajectories_;
  std::unordered_map<std::string, Entry> index_;
  std::size_t num_points_ = 0;
  Vector zero_input_;
};

}  // namespace lmpc
