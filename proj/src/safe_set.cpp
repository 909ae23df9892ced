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
#include "lmpc/safe_set.hpp"

#include <algorithm>
#include <cstring>
#include <tuple>

namespace lmpc {

std::vector<double> cost_to_go_tails(const std::vector<double>& stage_costs) {
  std::vector<double> tails(stage_costs.size());
  double acc = 0.0;
  for (std::size_t k = stage_costs.size(); k-- > 0;) {
    acc = stage_costs[k] + acc;
    tails[k] = acc;
  }
  return tails;
}

std::string SampledSafeSet::key(const Vector& x) {
  std::string k(sizeof(double) * static_cast<std::size_t>(x.size()), '\0');
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    // +0.0 and -0.0 describe the same state.
    const double v = x(i) == 0.0 ? 0.0 : x(i);
    std::memcpy(k.data() + sizeof(double) * static_cast<std::size_t>(i), &v,
                sizeof(double));
  }
  return k;
}

void SampledSafeSet::add_trajectory(const IterationRecord& rec) {
  if (!rec.converged_to_target) {
    throw std::invalid_argument(
        "safe set: iteration " + std::to_string(rec.trajectory.iteration) +
        " did not reach the target and cannot be stored");
  }
  const Trajectory& tr = rec.trajectory;
  if (tr.stage_costs.size() != tr.inputs.size() ||
      tr.states.size() != tr.inputs.size()) {
    throw std::invalid_argument("safe set: inconsistent trajectory lengths");
  }
  if (!trajectories_.empty() &&
      tr.terminal.size() != trajectories_.front().points.front().state.size()) {
    throw std::invalid_argument("safe set: state dimension mismatch");
  }

  const std::vector<double> tails = cost_to_go_tails(tr.stage_costs);
  Stored stored;
  const std::vector<Vector> xs = tr.all_states();
  for (std::size_t t = 0; t < xs.size(); ++t) {
    SafePoint p;
    p.state = xs[t];
    p.iteration = tr.iteration;
    p.time = static_cast<int>(t);
    p.cost_to_go = t < tails.size() ? tails[t] : 0.0;
    stored.points.push_back(std::move(p));
  }
  stored.inputs = tr.inputs;
  if (zero_input_.size() == 0 && !tr.inputs.empty()) {
    zero_input_ = Vector::Zero(tr.inputs.front().size());
  }

  const std::size_t slot = trajectories_.size();
  for (const SafePoint& p : stored.points) {
    Entry& e = index_[key(p.state)];
    const PointRef ref{slot, p.time};
    // Ties keep the earliest (iteration, time), which is the incumbent.
    if (p.cost_to_go < e.q) {
      e.q = p.cost_to_go;
      e.best = ref;
      e.iteration = p.iteration;
    }
  }
  num_points_ += stored.points.size();
  trajectories_.push_back(std::move(stored));
}

const std::vector<SafePoint>& SampledSafeSet::points(std::size_t slot) const {
  return trajectories_.at(slot).points;
}

const SafePoint& SampledSafeSet::point(const PointRef& ref) const {
  return trajectories_.at(ref.slot).points.at(static_cast<std::size_t>(ref.time));
}

const Vector& SampledSafeSet::input_at(const PointRef& ref) const {
  const Stored& s = trajectories_.at(ref.slot);
  const auto t = static_cast<std::size_t>(ref.time);
  if (t < s.inputs.size()) return s.inputs[t];
  return zero_input_;
}

bool SampledSafeSet::has_successor(const PointRef& ref) const {
  return static_cast<std::size_t>(ref.time) + 1 < trajectories_.at(ref.slot).points.size();
}

PointRef SampledSafeSet::successor(const PointRef& ref) const {
  // The terminal point is an equilibrium and is its own successor.
  if (!has_successor(ref)) return ref;
  return PointRef{ref.slot, ref.time + 1};
}

double SampledSafeSet::q_value(const Vector& x) const {
  const auto it = index_.find(key(x));
  return it == index_.end() ? kInf : it->second.q;
}

std::vector<Candidate> SampledSafeSet::candidates() const {
  std::vector<Candidate> out;
  out.reserve(index_.size());
  for (const auto& [k, e] : index_) {
    const SafePoint& p = point(e.best);
    out.push_back(Candidate{e.best, p.iteration, p.time, p.state, e.q});
  }
  std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.q, a.iteration, a.time) < std::tie(b.q, b.iteration, b.time);
  });
  return out;
}

RestrictionSet SampledSafeSet::restriction_set(double prev_step_cost) const {
  RestrictionSet rs;
  rs.bound = prev_step_cost + kRestrictionSlack;
  for (Candidate& c : candidates()) {
    if (c.q <= rs.bound) rs.points.push_back(std::move(c));
  }
  return rs;
}

}  // namespace lmpc
