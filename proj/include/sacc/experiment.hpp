// SPDX-License-Identifier: Apache-2.0
//
// Experiment driver: config loading and validation, environment precompute,
// training of the learned policies, paired evaluation of every policy, and the
// CSV/JSON result bundle.

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sacc/contention_sim.hpp"
#include "sacc/environment.hpp"
#include "sacc/mobility.hpp"
#include "sacc/optimizer.hpp"
#include "sacc/policy.hpp"
#include "sacc/rng.hpp"

namespace sacc {

struct ValidationError {
  std::string field;
  std::string message;
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<ValidationError> errors)
      : std::runtime_error(format(errors)), errors_(std::move(errors)) {}
  const std::vector<ValidationError>& errors() const { return errors_; }

 private:
  static std::string format(const std::vector<ValidationError>& errors) {
    std::string s = "invalid experiment config:";
    for (const auto& e : errors) s += "\n  " + e.field + ": " + e.message;
    return s;
  }
  std::vector<ValidationError> errors_;
};

inline const std::vector<std::string>& known_policies() {
  static const std::vector<std::string> names{"proposed", "spsa", "baseline1", "baseline2", "baseline3", "q_csma_like"};
  return names;
}

struct TrainingBudget {
  int iterations = 5000;  // episodes per SGD run; SPSA gets iterations / 2 two-episode steps
  int batch_size = 1;
  std::vector<double> eta0_grid{1e-3, 1e-4, 1e-5};
  std::vector<double> spsa_a_grid{1e-3, 1e-2, 1e-1};
  std::vector<double> spsa_c_grid{0.01, 0.05, 0.1};
  int tuning_episodes = 200;
  ScoreModel score = ScoreModel::JointWinner;
};

struct ExperimentConfig {
  SceneConfig scene;
  GridSpec grid;
  std::size_t n_agents = 8;
  std::vector<double> arrival_means = std::vector<double>(8, 0.6);
  CostConfig cost;
  double theta_min = 1.0 / 63.0;
  double theta_max = 1.0;
  std::vector<std::string> policies = known_policies();
  int t_ep = 135;
  TrainingBudget training;
  int evaluation_episodes = 1000;
  int environment_samples = 1000;
  std::optional<std::string> mobility_file;
  std::optional<std::string> link_stats_file;
  std::uint64_t seed = 1;
  std::string output_dir = "results";

  std::vector<ValidationError> validate() const {
    std::vector<ValidationError> errs;
    auto add = [&](std::string f, std::string m) { errs.push_back({std::move(f), std::move(m)}); };
    try {
      scene.validate();
    } catch (const std::exception& e) {
      add("scene", e.what());
    }
    if (n_agents < 1) add("agents", "must be >= 1");
    if (arrival_means.size() != n_agents) add("arrival_means", "need one entry per agent");
    for (double a : arrival_means)
      if (!(a >= 0.0) || !std::isfinite(a)) add("arrival_means", "entries must be finite and >= 0");
    if (!(cost.gamma > 0.0 && cost.gamma < 1.0)) add("cost.gamma", "must lie in (0, 1)");
    if (!(cost.w_B >= 0.0)) add("cost.w_B", "must be >= 0");
    if (cost.q_max < 1) add("cost.q_max", "must be >= 1");
    if (!(theta_min > 0.0 && theta_min < theta_max)) add("theta_min", "need 0 < theta_min < theta_max");
    if (policies.empty()) add("policies", "must name at least one policy");
    for (const auto& p : policies)
      if (std::find(known_policies().begin(), known_policies().end(), p) == known_policies().end())
        add("policies", "unknown policy '" + p + "'");
    if (t_ep < 1) add("t_ep", "must be >= 1");
    if (training.iterations < 0) add("training.iterations", "must be >= 0");
    if (training.batch_size < 1) add("training.batch_size", "must be >= 1");
    if (training.eta0_grid.empty()) add("training.eta0_grid", "must be non-empty");
    for (double e : training.eta0_grid)
      if (!(e >= 0.0)) add("training.eta0_grid", "entries must be >= 0");
    if (training.spsa_a_grid.empty()) add("training.spsa_a_grid", "must be non-empty");
    if (training.spsa_c_grid.empty()) add("training.spsa_c_grid", "must be non-empty");
    for (double c : training.spsa_c_grid)
      if (!(c > 0.0)) add("training.spsa_c_grid", "perturbation magnitudes must be > 0");
    if (training.tuning_episodes < 1) add("training.tuning_episodes", "must be >= 1");
    if (evaluation_episodes < 1) add("evaluation_episodes", "must be >= 1");
    if (environment_samples < 1) add("environment.n_samples", "must be >= 1");
    if (mobility_file && !std::filesystem::exists(*mobility_file)) add("mobility_file", "file not found: " + *mobility_file);
    if (link_stats_file && !std::filesystem::exists(*link_stats_file)) add("link_stats_file", "file not found: " + *link_stats_file);
    if (output_dir.empty()) add("output_dir", "must be non-empty");
    return errs;
  }
};

namespace detail {

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? p : (base / path).string();
}

}  // namespace detail

/// Reads a config. Relative file references resolve against `base_dir`.
/// Problems are collected and thrown together as ConfigError.
inline ExperimentConfig experiment_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".") {
  ExperimentConfig c;
  std::vector<ValidationError> errs;
  auto field = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      out = j.at(key).get<std::decay_t<decltype(out)>>();
    } catch (const std::exception& e) {
      errs.push_back({key, e.what()});
    }
  };
  try {
    nlohmann::json scene_json = nlohmann::json::object();
    if (j.contains("scene")) {
      scene_json = j.at("scene").is_string() ? read_json_file(detail::resolve(base_dir, j.at("scene").get<std::string>()))
                                             : j.at("scene");
    }
    c.scene = scene_from_json(scene_json);
    if (scene_json.contains("grid")) {
      const auto& g = scene_json.at("grid");
      c.grid.n_cols = g.value("n_cols", c.grid.n_cols);
      c.grid.n_rows = g.value("n_rows", c.grid.n_rows);
      c.grid.cell_size = g.value("cell_size", c.grid.cell_size);
    }
  } catch (const std::exception& e) {
    errs.push_back({"scene", e.what()});
  }
  std::size_t agents = c.n_agents;
  field("agents", agents);
  c.n_agents = agents;
  if (j.contains("arrival_means") && j.at("arrival_means").is_array()) {
    field("arrival_means", c.arrival_means);
  } else {
    double a = 0.6;
    if (j.contains("arrival_means")) field("arrival_means", a);
    c.arrival_means.assign(c.n_agents, a);
  }
  if (j.contains("cost")) {
    const auto& cj = j.at("cost");
    c.cost.gamma = cj.value("gamma", c.cost.gamma);
    c.cost.w_B = cj.value("w_B", c.cost.w_B);
    c.cost.q_max = cj.value("q_max", c.cost.q_max);
  }
  field("theta_min", c.theta_min);
  field("theta_max", c.theta_max);
  field("policies", c.policies);
  field("t_ep", c.t_ep);
  if (j.contains("training")) {
    const auto& t = j.at("training");
    c.training.iterations = t.value("iterations", c.training.iterations);
    c.training.batch_size = t.value("batch_size", c.training.batch_size);
    c.training.eta0_grid = t.value("eta0_grid", c.training.eta0_grid);
    c.training.spsa_a_grid = t.value("spsa_a_grid", c.training.spsa_a_grid);
    c.training.spsa_c_grid = t.value("spsa_c_grid", c.training.spsa_c_grid);
    c.training.tuning_episodes = t.value("tuning_episodes", c.training.tuning_episodes);
    const auto score = t.value("score_model", std::string("joint_winner"));
    if (score == "joint_winner") c.training.score = ScoreModel::JointWinner;
    else if (score == "per_agent_marginal") c.training.score = ScoreModel::PerAgentMarginal;
    else errs.push_back({"training.score_model", "expected joint_winner or per_agent_marginal"});
  }
  field("evaluation_episodes", c.evaluation_episodes);
  if (j.contains("environment")) c.environment_samples = j.at("environment").value("n_samples", c.environment_samples);
  if (j.contains("mobility_file")) c.mobility_file = detail::resolve(base_dir, j.at("mobility_file").get<std::string>());
  if (j.contains("link_stats_file")) c.link_stats_file = detail::resolve(base_dir, j.at("link_stats_file").get<std::string>());
  field("seed", c.seed);
  field("output_dir", c.output_dir);

  auto more = c.validate();
  errs.insert(errs.end(), more.begin(), more.end());
  if (!errs.empty()) throw ConfigError(std::move(errs));
  return c;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  const auto j = read_json_file(path);
  return experiment_from_json(j, std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Pipeline pieces

struct PreparedSystem {
  LocationGrid grid;
  SystemModel system;
  GlobalState s0;
};

inline PreparedSystem prepare_system(const ExperimentConfig& cfg) {
  PreparedSystem out;
  out.grid = build_grid(cfg.scene, cfg.grid);
  out.system.mobility = cfg.mobility_file ? mobility_from_json(read_json_file(*cfg.mobility_file)) : build_random_walk(out.grid);
  if (cfg.link_stats_file) {
    out.system.links = link_stats_from_json(read_json_file(*cfg.link_stats_file));
  } else {
    out.system.links = precompute_link_stats(cfg.scene, out.grid.points, cfg.environment_samples,
                                             derive_seed(cfg.seed, "environment"));
  }
  out.system.arrival_means = cfg.arrival_means;
  out.system.cost = cfg.cost;
  out.system.validate();
  auto rng = make_engine(cfg.seed, "initial-state");
  out.s0 = random_initial_state(cfg.n_agents, out.system.n_locations(), rng);
  return out;
}

struct EvaluationResult {
  std::vector<double> costs;
  double full_buffer_fraction = 0.0;
};

/// Paired evaluation: episode i of every policy uses substream (seed, label, i).
inline EvaluationResult evaluate_with_stats(const PolicyKind& policy, const SystemModel& sys, const GlobalState& s0,
                                            int t_ep, std::size_t n_episodes, std::uint64_t seed,
                                            std::string_view label = "evaluation") {
  EvaluationResult r;
  r.costs.resize(n_episodes);
  std::size_t full = 0, total = 0;
  for (std::size_t i = 0; i < n_episodes; ++i) {
    auto rng = make_engine(seed, label, i);
    const auto traj = run_episode(s0, policy, sys, t_ep, rng);
    r.costs[i] = discounted_cost(traj);
    for (const auto& slot : traj.slots)
      for (const auto& ls : slot.state) {
        full += ls.queue == sys.cost.q_max;
        ++total;
      }
  }
  r.full_buffer_fraction = total ? static_cast<double>(full) / static_cast<double>(total) : 0.0;
  return r;
}

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Empirical quantile by the nearest-rank rule.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::min(v.size() - 1, rank == 0 ? 0 : rank - 1)];
}

struct CdfPoint {
  double value;
  double probability;
};

inline std::vector<CdfPoint> empirical_cdf(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::vector<CdfPoint> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    // Ties collapse onto the last occurrence so the CDF is a function.
    if (i + 1 < v.size() && v[i + 1] == v[i]) continue;
    out.push_back({v[i], static_cast<double>(i + 1) / static_cast<double>(v.size())});
  }
  return out;
}

inline PolicyKind baseline_policy(const std::string& name, const ExperimentConfig& cfg, std::size_t n_locations) {
  if (name == "baseline1") return ConstantTheta{cfg.theta_min, cfg.theta_max};
  if (name == "baseline2") return FullBufferThreshold{cfg.theta_min, cfg.theta_max, cfg.cost.q_max};
  if (name == "baseline3")
    return TruncatedLinear{linear_queue_init(cfg.n_agents, n_locations, cfg.theta_min, cfg.theta_max, cfg.cost.q_max)};
  if (name == "q_csma_like") return QCsmaLike{cfg.theta_min, cfg.theta_max};
  throw std::invalid_argument("not a fixed baseline: " + name);
}

struct TrainedPolicy {
  std::string method;
  TrainResult result;
  nlohmann::json selection;  // hyperparameter search record
};

/// SGD over the eta0 grid; each candidate trains from the linear-queue
/// initialization on the same training substreams and is scored on held-out
/// tuning episodes.
inline TrainedPolicy train_proposed(const ExperimentConfig& cfg, const PreparedSystem& ps) {
  const auto init = linear_queue_init(cfg.n_agents, ps.system.n_locations(), cfg.theta_min, cfg.theta_max, cfg.cost.q_max);
  TrainedPolicy best{"proposed", {init, {}}, nlohmann::json::object()};
  double best_cost = std::numeric_limits<double>::infinity();
  nlohmann::json candidates = nlohmann::json::array();
  for (double eta0 : cfg.training.eta0_grid) {
    SgdConfig sc;
    sc.eta0 = eta0;
    sc.t_ep = cfg.t_ep;
    sc.iterations = cfg.training.iterations / cfg.training.batch_size;
    sc.batch_size = cfg.training.batch_size;
    sc.seed = derive_seed(cfg.seed, "training-proposed");
    sc.b_max = 10.0 * cfg.theta_max;
    sc.estimator.score = cfg.training.score;
    auto res = sgd_train(sc, init, ps.system, ps.s0);
    const auto tune = evaluate_policy(ps.s0, TruncatedLinear{res.params}, ps.system, cfg.t_ep,
                                      static_cast<std::size_t>(cfg.training.tuning_episodes), cfg.seed, "tuning");
    const double c = mean_of(tune);
    candidates.push_back({{"eta0", eta0}, {"tuning_mean_cost", c}});
    if (c < best_cost) {
      best_cost = c;
      best.result = std::move(res);
      best.selection = {{"eta0", eta0}};
    }
  }
  best.selection["candidates"] = candidates;
  return best;
}

inline TrainedPolicy train_spsa(const ExperimentConfig& cfg, const PreparedSystem& ps) {
  const auto init = linear_queue_init(cfg.n_agents, ps.system.n_locations(), cfg.theta_min, cfg.theta_max, cfg.cost.q_max);
  TrainedPolicy best{"spsa", {init, {}}, nlohmann::json::object()};
  double best_cost = std::numeric_limits<double>::infinity();
  nlohmann::json candidates = nlohmann::json::array();
  for (double a : cfg.training.spsa_a_grid)
    for (double c : cfg.training.spsa_c_grid) {
      SpsaConfig sc;
      sc.a = a;
      sc.c = c;
      sc.t_ep = cfg.t_ep;
      sc.iterations = cfg.training.iterations / 2;
      sc.seed = derive_seed(cfg.seed, "training-spsa");
      sc.b_max = 10.0 * cfg.theta_max;
      auto res = spsa_train(sc, init, ps.system, ps.s0);
      const auto tune = evaluate_policy(ps.s0, TruncatedLinear{res.params}, ps.system, cfg.t_ep,
                                        static_cast<std::size_t>(cfg.training.tuning_episodes), cfg.seed, "tuning");
      const double mc = mean_of(tune);
      candidates.push_back({{"a", a}, {"c", c}, {"tuning_mean_cost", mc}});
      if (mc < best_cost) {
        best_cost = mc;
        best.result = std::move(res);
        best.selection = {{"a", a}, {"c", c}};
      }
    }
  best.selection["candidates"] = candidates;
  return best;
}

// ---------------------------------------------------------------------------
// Output

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline std::string costs_csv(std::span<const double> costs) {
  std::ostringstream os;
  os << std::setprecision(12) << "episode,discounted_cost\n";
  for (std::size_t i = 0; i < costs.size(); ++i) os << i << ',' << costs[i] << '\n';
  return os.str();
}

inline std::string cdf_csv(std::span<const double> costs) {
  std::ostringstream os;
  os << std::setprecision(12) << "discounted_cost,cdf\n";
  for (const auto& p : empirical_cdf({costs.begin(), costs.end()})) os << p.value << ',' << p.probability << '\n';
  return os.str();
}

inline nlohmann::json summary_json(const EvaluationResult& r) {
  return {{"episodes", r.costs.size()},
          {"mean", mean_of(r.costs)},
          {"median", quantile(r.costs, 0.5)},
          {"p95", quantile(r.costs, 0.95)},
          {"full_buffer_slot_fraction", r.full_buffer_fraction}};
}

/// theta for every (location, queue) pair of one agent.
inline std::vector<std::vector<double>> policy_heatmap(const PolicyKind& policy, std::size_t agent, std::size_t n_locations,
                                                       int q_max) {
  std::vector<std::vector<double>> grid(n_locations, std::vector<double>(static_cast<std::size_t>(q_max) + 1));
  for (std::size_t l = 0; l < n_locations; ++l)
    for (int q = 0; q <= q_max; ++q) grid[l][q] = evaluate(policy, agent, {static_cast<int>(l), q});
  return grid;
}

inline std::string emit_policy_heatmap(const PolicyKind& policy, std::size_t agent, std::size_t n_locations, int q_max,
                                       std::span<const LinkStats> links = {}) {
  const auto grid = policy_heatmap(policy, agent, n_locations, q_max);
  std::ostringstream os;
  os << std::setprecision(12) << "location";
  if (!links.empty()) os << ",los";
  for (int q = 0; q <= q_max; ++q) os << ",Q" << q;
  os << '\n';
  for (std::size_t l = 0; l < n_locations; ++l) {
    os << l;
    if (!links.empty()) os << ',' << (links[l].has_los ? 1 : 0);
    for (double v : grid[l]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

inline std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline std::string training_log_csv(std::span<const IterationLog> log) {
  std::ostringstream os;
  os << std::setprecision(12);
  write_training_log_csv(os, log);
  return os.str();
}

struct ExperimentResult {
  PreparedSystem prepared;
  std::map<std::string, EvaluationResult> evaluations;
  std::map<std::string, TrainedPolicy> trained;
};

/// Full pipeline: precompute, train the learned policies, evaluate every
/// policy on the same evaluation substreams and write the bundle.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (auto errs = cfg.validate(); !errs.empty()) throw ConfigError(std::move(errs));
  ExperimentResult res;
  res.prepared = prepare_system(cfg);
  const auto& ps = res.prepared;
  const std::filesystem::path out(cfg.output_dir);
  const auto n_loc = ps.system.n_locations();

  write_text(out / "link_stats.json", dump_json(link_stats_to_json(ps.system.links)));
  nlohmann::json s0 = nlohmann::json::array();
  for (const auto& ls : ps.s0) s0.push_back({{"location", ls.location}, {"queue", ls.queue}});

  nlohmann::json bundle = {{"seed", cfg.seed},
                           {"agents", cfg.n_agents},
                           {"locations", n_loc},
                           {"t_ep", cfg.t_ep},
                           {"evaluation_episodes", cfg.evaluation_episodes},
                           {"initial_state", s0},
                           {"policies", nlohmann::json::object()}};

  for (const auto& name : cfg.policies) {
    PolicyKind policy;
    if (name == "proposed" || name == "spsa") {
      auto tp = name == "proposed" ? train_proposed(cfg, ps) : train_spsa(cfg, ps);
      policy = TruncatedLinear{tp.result.params};
      write_text(out / name / "params.json", dump_json(params_to_json(tp.result.params)));
      write_text(out / name / "training_log.csv", training_log_csv(tp.result.log));
      write_text(out / name / "selection.json", dump_json(tp.selection));
      res.trained.emplace(name, std::move(tp));
    } else {
      policy = baseline_policy(name, cfg, n_loc);
    }
    auto ev = evaluate_with_stats(policy, ps.system, ps.s0, cfg.t_ep, static_cast<std::size_t>(cfg.evaluation_episodes),
                                  cfg.seed, "evaluation");
    write_text(out / name / "eval_costs.csv", costs_csv(ev.costs));
    write_text(out / name / "cdf.csv", cdf_csv(ev.costs));
    const auto summary = summary_json(ev);
    write_text(out / name / "summary.json", dump_json(summary));
    bundle["policies"][name] = summary;
    if (name == "proposed" || name == "spsa")
      for (std::size_t k = 0; k < cfg.n_agents; ++k)
        write_text(out / name / ("heatmap_agent" + std::to_string(k) + ".csv"),
                   emit_policy_heatmap(policy, k, n_loc, cfg.cost.q_max, ps.system.links));
    res.evaluations.emplace(name, std::move(ev));
  }
  write_text(out / "summary.json", dump_json(bundle));
  return res;
}

}  // namespace sacc
