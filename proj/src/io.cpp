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
#include "lmpc/io.hpp"

#include "lmpc/oracle.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace lmpc {

namespace fs = std::filesystem;

const char* to_string(InstanceKind kind) {
  switch (kind) {
    case InstanceKind::kClqr:
      return "clqr";
    case InstanceKind::kDubins:
      return "dubins";
    case InstanceKind::kAdaptiveDubins:
      return "adaptive-dubins";
  }
  return "?";
}

InstanceKind parse_instance(const std::string& s) {
  if (s == "clqr") return InstanceKind::kClqr;
  if (s == "dubins") return InstanceKind::kDubins;
  if (s == "adaptive-dubins") return InstanceKind::kAdaptiveDubins;
  throw ConfigError("unknown instance '" + s + "' (expected clqr, dubins or adaptive-dubins)");
}

namespace {

void check_keys(const Json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      std::string list;
      for (const std::string& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw ConfigError("unknown key '" + key + "' in " + where + " (allowed: " + list + ")");
    }
  }
}

double as_double(const Json& j, const std::string& name) {
  if (!j.is_number()) throw ConfigError(name + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(name + " must be finite");
  return v;
}

double as_positive(const Json& j, const std::string& name) {
  const double v = as_double(j, name);
  if (v <= 0.0) throw ConfigError(name + " must be positive");
  return v;
}

int as_int(const Json& j, const std::string& name, int lo) {
  if (!j.is_number_integer()) throw ConfigError(name + " must be an integer");
  const long long v = j.get<long long>();
  if (v < lo || v > 1000000) {
    throw ConfigError(name + " must be an integer >= " + std::to_string(lo));
  }
  return static_cast<int>(v);
}

Vector as_vector(const Json& j, const std::string& name, Eigen::Index size = -1) {
  if (!j.is_array()) throw ConfigError(name + " must be an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) = as_double(j[i], name + "[" + std::to_string(i) + "]");
  }
  if (size >= 0 && v.size() != size) {
    throw ConfigError(name + " must have " + std::to_string(size) + " entries");
  }
  return v;
}

Matrix as_matrix(const Json& j, const std::string& name) {
  if (!j.is_array() || j.empty() || !j[0].is_array() || j[0].empty()) {
    throw ConfigError(name + " must be a non-empty array of rows");
  }
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(j[0].size());
  Matrix M(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    M.row(r) = as_vector(j[static_cast<std::size_t>(r)],
                         name + "[" + std::to_string(r) + "]", cols)
                   .transpose();
  }
  return M;
}

Ellipse as_obstacle(const Json& j, Ellipse e) {
  check_keys(j, "obstacle", {"center", "semi_axes"});
  if (j.contains("center")) {
    const Vector c = as_vector(j["center"], "obstacle.center", 2);
    e.center_a = c(0);
    e.center_b = c(1);
  }
  if (j.contains("semi_axes")) {
    const Vector s = as_vector(j["semi_axes"], "obstacle.semi_axes", 2);
    if (s.minCoeff() <= 0.0) throw ConfigError("obstacle.semi_axes must be positive");
    e.semi_a = s(0);
    e.semi_b = s(1);
  }
  return e;
}

template <typename Instance>
void apply_common(const ExperimentConfig& cfg, Instance& inst) {
  if (cfg.gamma) inst.gamma = *cfg.gamma;
  if (cfg.epsilon) inst.epsilon = *cfg.epsilon;
  if (cfg.max_iterations) inst.max_iterations = *cfg.max_iterations;
}

}  // namespace

ExperimentConfig parse_config(const Json& j) {
  check_keys(j, "config",
             {"instance", "mode", "gamma", "epsilon", "max_iterations", "output_dir", "seed",
              "prune", "overrides"});
  ExperimentConfig cfg;
  if (!j.contains("instance") || !j["instance"].is_string()) {
    throw ConfigError("config needs a string 'instance'");
  }
  cfg.instance = parse_instance(j["instance"].get<std::string>());
  if (j.contains("mode")) {
    if (!j["mode"].is_string()) throw ConfigError("mode must be a string");
    cfg.mode = parse_mode(j["mode"].get<std::string>());
  }
  if (j.contains("gamma")) cfg.gamma = as_positive(j["gamma"], "gamma");
  if (j.contains("epsilon")) cfg.epsilon = as_positive(j["epsilon"], "epsilon");
  if (j.contains("max_iterations")) {
    cfg.max_iterations = as_int(j["max_iterations"], "max_iterations", 1);
  }
  if (j.contains("output_dir")) {
    if (!j["output_dir"].is_string()) throw ConfigError("output_dir must be a string");
    cfg.output_dir = j["output_dir"].get<std::string>();
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("prune")) {
    if (!j["prune"].is_boolean()) throw ConfigError("prune must be a boolean");
    cfg.prune = j["prune"].get<bool>();
  }
  if (j.contains("overrides")) cfg.overrides = j["overrides"];
  if (cfg.mode == Mode::kConvexRelaxation && cfg.instance != InstanceKind::kClqr) {
    throw ConfigError("convex-relaxation mode needs the linear clqr instance");
  }
  // Type-check the overrides now so a bad file fails before any solve.
  switch (cfg.instance) {
    case InstanceKind::kClqr:
      (void)clqr_instance(cfg);
      break;
    case InstanceKind::kDubins:
      (void)dubins_instance(cfg);
      break;
    case InstanceKind::kAdaptiveDubins:
      (void)adaptive_instance(cfg);
      break;
  }
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

ClqrInstance clqr_instance(const ExperimentConfig& cfg) {
  ClqrInstance inst;
  const Json& o = cfg.overrides;
  check_keys(o, "clqr overrides",
             {"A", "B", "start", "state_bound", "input_bound", "horizon", "open_loop",
              "seed_tolerance"});
  if (o.contains("A")) inst.A = as_matrix(o["A"], "A");
  if (o.contains("B")) inst.B = as_matrix(o["B"], "B");
  const Eigen::Index n = inst.A.rows();
  if (inst.A.cols() != n || inst.B.rows() != n) {
    throw ConfigError("A must be square and B must have as many rows as A");
  }
  if (o.contains("start")) inst.start = as_vector(o["start"], "start", n);
  if (inst.start.size() != n) throw ConfigError("start must match the state dimension");
  if (o.contains("state_bound")) inst.state_bound = as_positive(o["state_bound"], "state_bound");
  if (o.contains("input_bound")) inst.input_bound = as_positive(o["input_bound"], "input_bound");
  if (o.contains("horizon")) inst.horizon = as_int(o["horizon"], "horizon", 1);
  if (o.contains("open_loop")) {
    const Vector v = as_vector(o["open_loop"], "open_loop");
    inst.open_loop.assign(v.data(), v.data() + v.size());
  }
  if (o.contains("seed_tolerance")) {
    inst.seed_tolerance = as_positive(o["seed_tolerance"], "seed_tolerance");
  }
  apply_common(cfg, inst);
  return inst;
}

DubinsInstance dubins_instance(const ExperimentConfig& cfg) {
  DubinsInstance inst;
  const Json& o = cfg.overrides;
  check_keys(o, "dubins overrides", {"start", "target", "saturation", "obstacle", "horizon"});
  if (o.contains("start")) inst.start = as_vector(o["start"], "start", 3);
  if (o.contains("target")) inst.target = as_vector(o["target"], "target", 3);
  if (o.contains("saturation")) inst.saturation = as_positive(o["saturation"], "saturation");
  if (o.contains("obstacle")) inst.obstacle = as_obstacle(o["obstacle"], inst.obstacle);
  if (o.contains("horizon")) inst.horizon = as_int(o["horizon"], "horizon", 1);
  apply_common(cfg, inst);
  return inst;
}

AdaptiveDubinsInstance adaptive_instance(const ExperimentConfig& cfg) {
  AdaptiveDubinsInstance inst;
  const Json& o = cfg.overrides;
  check_keys(o, "adaptive-dubins overrides",
             {"start", "target", "true_saturation", "initial_estimate", "error_weight",
              "accel_command_limit", "obstacle", "horizon"});
  if (o.contains("start")) inst.start_position = as_vector(o["start"], "start", 3);
  if (o.contains("target")) inst.target = as_vector(o["target"], "target", 3);
  if (o.contains("true_saturation")) {
    inst.true_saturation = as_positive(o["true_saturation"], "true_saturation");
  }
  if (o.contains("initial_estimate")) {
    inst.initial_estimate = as_positive(o["initial_estimate"], "initial_estimate");
  }
  if (o.contains("error_weight")) {
    inst.error_weight = as_positive(o["error_weight"], "error_weight");
  }
  if (o.contains("accel_command_limit")) {
    inst.accel_command_limit = as_positive(o["accel_command_limit"], "accel_command_limit");
  }
  if (o.contains("obstacle")) inst.obstacle = as_obstacle(o["obstacle"], inst.obstacle);
  if (o.contains("horizon")) inst.horizon = as_int(o["horizon"], "horizon", 1);
  apply_common(cfg, inst);
  return inst;
}

PreparedExperiment prepare_experiment(const ExperimentConfig& cfg) {
  PreparedExperiment out;
  switch (cfg.instance) {
    case InstanceKind::kClqr: {
      const ClqrInstance inst = clqr_instance(cfg);
      out.problem = make_clqr_problem(inst);
      out.seed = clqr_seed_iteration0(inst);
      break;
    }
    case InstanceKind::kDubins: {
      const DubinsInstance inst = dubins_instance(cfg);
      out.problem = make_dubins_problem(inst);
      out.seed = dubins_seed_iteration0(inst);
      break;
    }
    case InstanceKind::kAdaptiveDubins: {
      const AdaptiveDubinsInstance inst = adaptive_instance(cfg);
      const AdaptiveSeed init = adaptive_seed_iteration0(inst);
      out.problem = make_adaptive_problem(inst, init.error_estimate);
      out.seed = init.record;
      break;
    }
  }
  out.problem.mode = cfg.mode;
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_trajectories_csv(const fs::path& path, const std::vector<IterationRecord>& records) {
  if (records.empty()) throw ConfigError("no trajectories to write");
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  const Eigen::Index n = records.front().trajectory.terminal.size();
  Eigen::Index m = 0;
  for (const IterationRecord& r : records) {
    if (!r.trajectory.inputs.empty()) m = r.trajectory.inputs.front().size();
  }
  out << "iteration,t";
  for (Eigen::Index i = 0; i < n; ++i) out << ",x" << i;
  for (Eigen::Index i = 0; i < m; ++i) out << ",u" << i;
  out << ",stage_cost,cost_to_go\n";
  for (const IterationRecord& r : records) {
    const Trajectory& tr = r.trajectory;
    const std::vector<double> tails = cost_to_go_tails(tr.stage_costs);
    const std::vector<Vector> xs = tr.all_states();
    for (std::size_t t = 0; t < xs.size(); ++t) {
      const bool terminal = t == tr.steps();
      out << tr.iteration << ',' << t;
      for (Eigen::Index i = 0; i < n; ++i) out << ',' << format_double(xs[t](i));
      for (Eigen::Index i = 0; i < m; ++i) {
        out << ',' << format_double(terminal ? 0.0 : tr.inputs[t](i));
      }
      out << ',' << format_double(terminal ? 0.0 : tr.stage_costs[t]) << ','
          << format_double(terminal ? 0.0 : tails[t]) << '\n';
    }
  }
}

std::vector<IterationRecord> read_trajectories_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + " is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  int n = 0;
  int m = 0;
  for (const std::string& h : header) {
    if (h.size() > 1 && h[0] == 'x') ++n;
    if (h.size() > 1 && h[0] == 'u') ++m;
  }
  if (header.size() != static_cast<std::size_t>(n + m + 4) || header[0] != "iteration" ||
      header[1] != "t") {
    throw ConfigError(path.string() + " has an unexpected header");
  }
  struct Row {
    Vector x, u;
    double stage;
  };
  std::map<int, std::vector<Row>> rows;
  std::vector<int> order;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() != header.size()) throw ConfigError("malformed row in " + path.string());
    const int it = static_cast<int>(vals[0]);
    Row r{Vector(n), Vector(m), vals[static_cast<std::size_t>(2 + n + m)]};
    for (int i = 0; i < n; ++i) r.x(i) = vals[static_cast<std::size_t>(2 + i)];
    for (int i = 0; i < m; ++i) r.u(i) = vals[static_cast<std::size_t>(2 + n + i)];
    if (!rows.count(it)) order.push_back(it);
    rows[it].push_back(std::move(r));
  }
  std::vector<IterationRecord> out;
  for (int it : order) {
    const std::vector<Row>& rs = rows[it];
    IterationRecord rec;
    rec.trajectory.iteration = it;
    for (std::size_t t = 0; t + 1 < rs.size(); ++t) {
      rec.trajectory.states.push_back(rs[t].x);
      rec.trajectory.inputs.push_back(rs[t].u);
      rec.trajectory.stage_costs.push_back(rs[t].stage);
    }
    rec.trajectory.terminal = rs.back().x;
    rec.cost = sum_stage_costs(rec.trajectory.stage_costs);
    rec.termination_time = rec.trajectory.steps();
    rec.converged_to_target = true;
    out.push_back(std::move(rec));
  }
  return out;
}

Json campaign_summary(const ExperimentConfig& cfg, const LmpcProblem& prob,
                      const Campaign& camp) {
  Json s;
  s["instance"] = to_string(cfg.instance);
  s["mode"] = to_string(cfg.mode);
  Json iterations = Json::array();
  Json costs = Json::array();
  Json sizes = Json::array();
  Json errors = Json::array();
  for (std::size_t j = 0; j < camp.records.size(); ++j) {
    const IterationRecord& r = camp.records[j];
    Json it;
    it["j"] = r.trajectory.iteration;
    it["cost"] = r.cost;
    it["steps"] = r.trajectory.steps();
    it["ss_size"] = camp.safe_set_sizes[j];
    if (cfg.instance == InstanceKind::kAdaptiveDubins) {
      it["error_norm"] = error_norm(r.trajectory);
      errors.push_back(error_norm(r.trajectory));
    }
    iterations.push_back(it);
    costs.push_back(r.cost);
    sizes.push_back(camp.safe_set_sizes[j]);
  }
  s["iterations"] = iterations;
  s["converged"] = camp.converged;
  s["gamma"] = prob.gamma;
  s["epsilon"] = prob.epsilon;
  s["iteration_costs"] = costs;
  s["safe_set_sizes"] = sizes;
  if (cfg.instance == InstanceKind::kAdaptiveDubins) s["error_norms"] = errors;
  s["last_gap"] = camp.last_gap;
  s["seed"] = cfg.seed;
  return s;
}

Json safe_set_snapshot(const SampledSafeSet& ss) {
  Json pts = Json::array();
  for (std::size_t slot = 0; slot < ss.num_trajectories(); ++slot) {
    for (const SafePoint& p : ss.points(slot)) {
      Json e;
      e["iteration"] = p.iteration;
      e["time"] = p.time;
      e["state"] = std::vector<double>(p.state.data(), p.state.data() + p.state.size());
      e["cost_to_go"] = p.cost_to_go;
      pts.push_back(e);
    }
  }
  Json s;
  s["size"] = ss.size();
  s["distinct_states"] = ss.num_distinct_states();
  s["points"] = pts;
  return s;
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + " is not valid JSON: " + e.what());
  }
}

void write_campaign(const fs::path& dir, const ExperimentConfig& cfg, const LmpcProblem& prob,
                    const Campaign& camp) {
  fs::create_directories(dir);
  write_trajectories_csv(dir / "trajectories.csv", camp.records);
  write_json(dir / "summary.json", campaign_summary(cfg, prob, camp));
  write_json(dir / "safe_set.json", safe_set_snapshot(camp.safe_set));
}

std::vector<fs::path> export_plot_data(const fs::path& dir) {
  const std::vector<IterationRecord> records = read_trajectories_csv(dir / "trajectories.csv");
  const Json summary = read_json(dir / "summary.json");
  const Json snapshot = read_json(dir / "safe_set.json");
  std::vector<fs::path> written;
  auto open = [&](const char* name) {
    const fs::path p = dir / name;
    written.push_back(p);
    std::ofstream out(p);
    if (!out) throw ConfigError("cannot write " + p.string());
    return out;
  };
  const Eigen::Index n = records.front().trajectory.terminal.size();
  // Speed is the third state of the car models and the second of the
  // double integrator.
  const Eigen::Index speed = n >= 3 ? 2 : n - 1;
  {
    std::ofstream out = open("fig_positions.csv");
    out << "iteration,t,z,y\n";
    for (const IterationRecord& r : records) {
      const std::vector<Vector> xs = r.trajectory.all_states();
      for (std::size_t t = 0; t < xs.size(); ++t) {
        out << r.trajectory.iteration << ',' << t << ',' << format_double(xs[t](0)) << ','
            << format_double(n > 1 ? xs[t](1) : 0.0) << '\n';
      }
    }
  }
  {
    std::ofstream out = open("fig_inputs.csv");
    const Eigen::Index m = records.front().trajectory.inputs.empty()
                               ? 0
                               : records.front().trajectory.inputs.front().size();
    out << "iteration,t";
    for (Eigen::Index i = 0; i < m; ++i) out << ",u" << i;
    out << '\n';
    for (const IterationRecord& r : records) {
      for (std::size_t t = 0; t < r.trajectory.steps(); ++t) {
        out << r.trajectory.iteration << ',' << t;
        for (Eigen::Index i = 0; i < m; ++i) {
          out << ',' << format_double(r.trajectory.inputs[t](i));
        }
        out << '\n';
      }
    }
  }
  {
    std::ofstream out = open("fig_velocity.csv");
    out << "iteration,t,v\n";
    for (const IterationRecord& r : records) {
      const std::vector<Vector> xs = r.trajectory.all_states();
      for (std::size_t t = 0; t < xs.size(); ++t) {
        out << r.trajectory.iteration << ',' << t << ',' << format_double(xs[t](speed))
            << '\n';
      }
    }
  }
  {
    std::ofstream out = open("fig_safe_set.csv");
    out << "iteration,time";
    for (Eigen::Index i = 0; i < n; ++i) out << ",x" << i;
    out << ",cost_to_go\n";
    for (const Json& p : snapshot.at("points")) {
      out << p.at("iteration").get<int>() << ',' << p.at("time").get<int>();
      for (const Json& v : p.at("state")) out << ',' << format_double(v.get<double>());
      out << ',' << format_double(p.at("cost_to_go").get<double>()) << '\n';
    }
  }
  if (summary.contains("error_norms")) {
    std::ofstream out = open("fig_error_norm.csv");
    out << "iteration,error_norm\n";
    std::size_t j = 0;
    for (const Json& e : summary.at("error_norms")) {
      out << j++ << ',' << format_double(e.get<double>()) << '\n';
    }
  }
  return written;
}

OracleComparison compare_with_oracle(const ExperimentConfig& cfg, const fs::path& dir) {
  if (cfg.instance != InstanceKind::kClqr) {
    throw ConfigError("the oracle is defined for the clqr instance only");
  }
  const std::vector<IterationRecord> records = read_trajectories_csv(dir / "trajectories.csv");
  const IterationRecord& last = records.back();
  const OracleSolution o = clqr_oracle(clqr_instance(cfg));
  OracleComparison cmp;
  cmp.oracle_cost = o.cost;
  cmp.campaign_cost = last.cost;
  cmp.cost_gap = std::abs(last.cost - o.cost);
  cmp.saturation_gap = o.saturation_gap;
  const std::vector<double> dev = deviation_profile(last.trajectory, o.trajectory());
  cmp.max_deviation = dev.empty() ? 0.0 : *std::max_element(dev.begin(), dev.end());

  IterationRecord orec;
  orec.trajectory = o.trajectory();
  const LmpcProblem prob = make_clqr_problem(clqr_instance(cfg));
  for (std::size_t t = 0; t < orec.trajectory.steps(); ++t) {
    orec.trajectory.stage_costs.push_back(
        prob.cost(orec.trajectory.states[t], orec.trajectory.inputs[t]));
  }
  write_trajectories_csv(dir / "oracle_trajectory.csv", {orec});
  Json j;
  j["oracle_cost"] = cmp.oracle_cost;
  j["campaign_cost"] = cmp.campaign_cost;
  j["max_deviation"] = cmp.max_deviation;
  j["cost_gap"] = cmp.cost_gap;
  j["saturation_gap"] = cmp.saturation_gap;
  j["horizon"] = o.horizon;
  write_json(dir / "oracle.json", j);
  return cmp;
}

}  // namespace lmpc
