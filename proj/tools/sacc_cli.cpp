// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver for the contention experiments.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sacc/exact_oracle.hpp"
#include "sacc/experiment.hpp"
#include "sacc/scenarios.hpp"

namespace fs = std::filesystem;
using namespace sacc;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config (JSON)");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "master seed, overrides the config");
  cmd->add_option("--out", c.out, "output directory, overrides the config");
}

ExperimentConfig load(const Common& c) {
  auto cfg = load_experiment(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.out) cfg.output_dir = *c.out;
  return cfg;
}

void write_trained(const fs::path& dir, const TrainedPolicy& tp, const ExperimentConfig& cfg, const PreparedSystem& ps) {
  write_text(dir / "params.json", dump_json(params_to_json(tp.result.params)));
  write_text(dir / "training_log.csv", training_log_csv(tp.result.log));
  write_text(dir / "selection.json", dump_json(tp.selection));
  for (std::size_t k = 0; k < cfg.n_agents; ++k)
    write_text(dir / ("heatmap_agent" + std::to_string(k) + ".csv"),
               emit_policy_heatmap(TruncatedLinear{tp.result.params}, k, ps.system.n_locations(), cfg.cost.q_max,
                                   ps.system.links));
}

int cmd_precompute(const Common& c) {
  const auto cfg = load(c);
  const auto ps = prepare_system(cfg);
  const fs::path out(cfg.output_dir);
  write_text(out / "link_stats.json", dump_json(link_stats_to_json(ps.system.links)));
  write_text(out / "mobility.json", dump_json(mobility_to_json(ps.system.mobility)));
  nlohmann::json grid = nlohmann::json::array();
  for (std::size_t i = 0; i < ps.grid.size(); ++i)
    grid.push_back({{"index", i}, {"x", ps.grid.points[i].x}, {"y", ps.grid.points[i].y},
                    {"has_los", ps.system.links[i].has_los},
                    {"expected_rate_bits", ps.system.links[i].expected_rate_bits},
                    {"mean_departures", ps.system.links[i].mean_departures()}});
  write_text(out / "grid.json", dump_json(grid));
  std::cout << "wrote " << ps.grid.size() << " locations to " << out << '\n';
  return 0;
}

int cmd_train(const Common& c, const std::string& method) {
  const auto cfg = load(c);
  const auto ps = prepare_system(cfg);
  const auto tp = method == "proposed" ? train_proposed(cfg, ps) : train_spsa(cfg, ps);
  const fs::path dir = fs::path(cfg.output_dir) / method;
  write_trained(dir, tp, cfg, ps);
  const auto tune = evaluate_policy(ps.s0, TruncatedLinear{tp.result.params}, ps.system, cfg.t_ep,
                                    static_cast<std::size_t>(cfg.training.tuning_episodes), cfg.seed, "tuning");
  std::cout << method << ": selected " << tp.selection.dump() << "\n  tuning mean cost " << mean_of(tune)
            << "\n  written to " << dir << '\n';
  return 0;
}

int cmd_evaluate(const Common& c, std::vector<std::string> policies, const std::optional<std::string>& trained_dir) {
  auto cfg = load(c);
  if (policies.empty()) policies = cfg.policies;
  const auto ps = prepare_system(cfg);
  const fs::path out(cfg.output_dir);
  const auto n_loc = ps.system.n_locations();
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& name : policies) {
    PolicyKind policy;
    if (name == "proposed" || name == "spsa") {
      const fs::path params = fs::path(trained_dir.value_or(cfg.output_dir)) / name / "params.json";
      if (!fs::exists(params)) {
        std::cerr << "evaluate: no trained parameters for '" << name << "' at " << params << " (run `train` first)\n";
        return 2;
      }
      const auto p = params_from_json(read_json_file(params.string()));
      if (p.n_agents != cfg.n_agents || p.n_locations != n_loc) {
        std::cerr << "evaluate: " << params << " does not match the configured agents/locations\n";
        return 2;
      }
      policy = TruncatedLinear{p};
    } else {
      policy = baseline_policy(name, cfg, n_loc);
    }
    const auto ev = evaluate_with_stats(policy, ps.system, ps.s0, cfg.t_ep,
                                        static_cast<std::size_t>(cfg.evaluation_episodes), cfg.seed, "evaluation");
    write_text(out / name / "eval_costs.csv", costs_csv(ev.costs));
    write_text(out / name / "cdf.csv", cdf_csv(ev.costs));
    summary[name] = summary_json(ev);
    write_text(out / name / "summary.json", dump_json(summary[name]));
    std::cout << std::left << std::setw(12) << name << " mean " << summary[name]["mean"].get<double>() << "  p95 "
              << summary[name]["p95"].get<double>() << '\n';
  }
  write_text(out / "evaluation_summary.json", dump_json(summary));
  return 0;
}

int cmd_oracle(const std::string& scenario, std::optional<double> h) {
  const auto inst = tiny_scenario(scenario);
  const auto& sys = inst.system;
  const double step = h.value_or(1e-4 * inst.params.theta_min);
  const auto chain = build_chain(TruncatedLinear{inst.params}, sys);
  const double truncated = exact_discounted_cost(chain, inst.s0, sys.cost.gamma, inst.t_ep);
  const auto full = exact_gradient(inst.params, sys, inst.s0);
  const auto estimator = exact_estimator_mean(inst.params, sys, inst.s0, inst.t_ep);

  nlohmann::json coords = nlohmann::json::array();
  for (auto kind : {ParamKind::B, ParamKind::Lambda})
    for (std::size_t k = 0; k < inst.params.n_agents; ++k)
      for (std::size_t l = 0; l < inst.params.n_locations; ++l) {
        const auto i = inst.params.index(k, l);
        const bool is_b = kind == ParamKind::B;
        nlohmann::json e = {{"param", is_b ? "b" : "lambda"}, {"agent", k}, {"location", l},
                            {"exact_gradient", is_b ? full.g_b[i] : full.g_lambda[i]},
                            {"estimator_mean_t_ep", is_b ? estimator.g_b[i] : estimator.g_lambda[i]}};
        try {
          e["fd_gradient_t_ep"] = exact_gradient_fd(inst.params, {kind, k, l}, step, sys, inst.s0, inst.t_ep);
        } catch (const std::domain_error& err) {
          e["fd_gradient_t_ep"] = nullptr;
          e["fd_refused"] = err.what();
        }
        coords.push_back(e);
      }
  const nlohmann::json report = {{"scenario", scenario},
                                 {"states", chain.space.size()},
                                 {"t_ep", inst.t_ep},
                                 {"discounted_cost_t_ep", truncated},
                                 {"discounted_cost", full.value},
                                 {"fd_step", step},
                                 {"coordinates", coords}};
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_heatmap(const Common& c, const std::string& params_path, std::size_t agent) {
  const auto p = params_from_json(read_json_file(params_path));
  if (agent >= p.n_agents) {
    std::cerr << "heatmap: agent " << agent << " out of range (" << p.n_agents << " agents)\n";
    return 2;
  }
  std::vector<LinkStats> links;
  int q_max = 10;
  if (!c.config.empty()) {
    const auto cfg = load(c);
    q_max = cfg.cost.q_max;
    if (cfg.link_stats_file) links = link_stats_from_json(read_json_file(*cfg.link_stats_file));
  }
  if (!links.empty() && links.size() != p.n_locations) links.clear();
  const auto csv = emit_policy_heatmap(TruncatedLinear{p}, agent, p.n_locations, q_max, links);
  if (c.out) {
    const fs::path file = fs::path(*c.out) / ("heatmap_agent" + std::to_string(agent) + ".csv");
    write_text(file, csv);
    std::cout << "wrote " << file << '\n';
  } else {
    std::cout << csv;
  }
  return 0;
}

int cmd_run(const Common& c) {
  const auto cfg = load(c);
  const auto res = run_experiment(cfg);
  for (const auto& [name, ev] : res.evaluations)
    std::cout << std::left << std::setw(12) << name << " mean " << mean_of(ev.costs) << '\n';
  std::cout << "bundle written to " << cfg.output_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slotted uplink contention: environment precompute, policy training and evaluation"};
  app.require_subcommand(1);

  Common precompute_opts, train_opts, eval_opts, heat_opts, run_opts;

  auto* precompute = app.add_subcommand("precompute", "beam alignment and per-location departure statistics");
  add_common(precompute, precompute_opts, true);

  std::string method = "proposed";
  auto* train = app.add_subcommand("train", "train the proposed policy or the SPSA baseline");
  add_common(train, train_opts, true);
  train->add_option("--method", method, "proposed | spsa")->check(CLI::IsMember({"proposed", "spsa"}));

  std::vector<std::string> policies;
  std::optional<std::string> trained_dir;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "evaluate a policy set on paired evaluation episodes");
  add_common(evaluate_cmd, eval_opts, true);
  evaluate_cmd->add_option("--policies", policies, "policy names (default: the config's list)")
      ->delimiter(',')
      ->check(CLI::IsMember(known_policies()));
  evaluate_cmd->add_option("--trained", trained_dir, "directory holding <policy>/params.json (default: --out)");

  std::string scenario = "tiny";
  std::optional<double> fd_step;
  auto* oracle = app.add_subcommand("oracle", "exact chain values and gradients for a named tiny scenario");
  oracle->add_option("--scenario", scenario, "tiny | tiny-dead-spot")->check(CLI::IsMember(tiny_scenario_names()));
  oracle->add_option("--fd-step", fd_step, "finite-difference step (default 1e-4 * theta_min)");
  // Accepted for uniformity; the tiny scenarios are fully specified.
  Common oracle_opts;
  add_common(oracle, oracle_opts, false);

  std::string params_path;
  std::size_t agent = 0;
  auto* heatmap = app.add_subcommand("heatmap", "theta over (location, queue) for one agent");
  add_common(heatmap, heat_opts, false);
  heatmap->add_option("--params", params_path, "policy parameters (JSON)")->required()->check(CLI::ExistingFile);
  heatmap->add_option("--agent", agent, "agent index");

  auto* run = app.add_subcommand("run", "full pipeline: precompute, train, evaluate, write the bundle");
  add_common(run, run_opts, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*precompute) return cmd_precompute(precompute_opts);
    if (*train) return cmd_train(train_opts, method);
    if (*evaluate_cmd) return cmd_evaluate(eval_opts, policies, trained_dir);
    if (*oracle) return cmd_oracle(scenario, fd_step);
    if (*heatmap) return cmd_heatmap(heat_opts, params_path, agent);
    if (*run) return cmd_run(run_opts);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
