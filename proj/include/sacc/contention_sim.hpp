// SPDX-License-Identifier: Apache-2.0
//
// Slotted contention and queueing dynamics. Each slot: every agent maps its
// local state to theta, one winner is drawn with probability
// theta_k / sum(theta), the winner drains packets according to its
// location's departure distribution, Poisson arrivals land at the end of the
// slot, and agents move.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sacc/environment.hpp"
#include "sacc/mobility.hpp"
#include "sacc/policy.hpp"
#include "sacc/rng.hpp"

namespace sacc {

using GlobalState = std::vector<LocalState>;

struct CostConfig {
  double gamma = 0.95;
  double w_B = 20.0;
  int q_max = 10;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("cost: gamma must lie in (0, 1)");
    if (!(w_B >= 0.0)) throw std::invalid_argument("cost: w_B must be >= 0");
    if (q_max < 1) throw std::invalid_argument("cost: q_max must be >= 1");
  }
};

/// Everything the slot dynamics need besides the policy.
struct SystemModel {
  std::vector<LinkStats> links;  // indexed by location
  MobilityModel mobility;
  std::vector<double> arrival_means;  // per agent
  CostConfig cost;

  std::size_t n_agents() const { return arrival_means.size(); }
  std::size_t n_locations() const { return links.size(); }
  const std::vector<double>& departure_pmf(int location) const { return links.at(static_cast<std::size_t>(location)).departure_pmf; }

  void validate() const {
    cost.validate();
    mobility.validate();
    if (arrival_means.empty()) throw std::invalid_argument("system: need at least one agent");
    if (mobility.n_locations() != links.size()) throw std::invalid_argument("system: mobility and link table disagree on |L|");
    if (mobility.transitions.size() != 1 && mobility.transitions.size() != arrival_means.size())
      throw std::invalid_argument("system: need one shared mobility matrix or one per agent");
    for (double a : arrival_means)
      if (!(a >= 0.0) || !std::isfinite(a)) throw std::invalid_argument("system: arrival means must be finite and >= 0");
  }
};

inline double local_cost(LocalState s, const CostConfig& c) {
  return s.queue + (s.queue == c.q_max ? c.w_B : 0.0);
}

inline double global_cost(const GlobalState& s, const CostConfig& c) {
  double total = 0.0;
  for (const auto& ls : s) total += local_cost(ls, c);
  return total;
}

struct SlotRecord {
  GlobalState state;
  std::vector<double> thetas;
  int winner = -1;
  std::vector<int> departures;  // packets actually served, <= queue at slot start
  std::vector<int> arrivals;
  std::vector<int> dropped;
  double cost = 0.0;
};

struct Trajectory {
  GlobalState initial;
  std::vector<SlotRecord> slots;  // t = 0 .. T_ep
  GlobalState final_state;        // state entered after the last recorded slot
  double gamma = 0.95;

  /// State at the start of slot t; t == slots.size() gives final_state.
  const GlobalState& state_at(std::size_t t) const { return t < slots.size() ? slots[t].state : final_state; }
};

inline std::vector<double> access_probabilities(std::span<const double> thetas) {
  double total = 0.0;
  for (double t : thetas) {
    if (!(t > 0.0)) throw std::domain_error("access_probabilities: every theta must be > 0");
    total += t;
  }
  std::vector<double> eta(thetas.size());
  for (std::size_t k = 0; k < thetas.size(); ++k) eta[k] = thetas[k] / total;
  return eta;
}

inline double poisson_pmf(double mean, int n) {
  if (n < 0) return 0.0;
  if (mean == 0.0) return n == 0 ? 1.0 : 0.0;
  return std::exp(n * std::log(mean) - mean - std::lgamma(n + 1.0));
}

/// P[A >= n].
inline double poisson_tail(double mean, int n) {
  if (n <= 0) return 1.0;
  double head = 0.0;
  for (int a = 0; a < n; ++a) head += poisson_pmf(mean, a);
  return std::max(0.0, 1.0 - head);
}

struct QueueUpdate {
  int next = 0;
  int dropped = 0;
};

/// Q' = min((Q - D)^+ + A, Q_max); the overflow is dropped.
inline QueueUpdate queue_update(int q, int departures, int arrivals, int q_max) {
  const int unclipped = std::max(q - departures, 0) + arrivals;
  const int next = std::min(unclipped, q_max);
  return {next, unclipped - next};
}

inline std::pair<SlotRecord, GlobalState> step_slot(const GlobalState& state, const PolicyKind& policy,
                                                    const SystemModel& sys, Engine& rng) {
  const std::size_t k_agents = state.size();
  const int q_max = sys.cost.q_max;
  SlotRecord rec;
  rec.state = state;
  rec.cost = global_cost(state, sys.cost);
  rec.thetas.resize(k_agents);
  for (std::size_t k = 0; k < k_agents; ++k) rec.thetas[k] = evaluate(policy, k, state[k]);

  const auto eta = access_probabilities(rec.thetas);
  rec.winner = static_cast<int>(sample_discrete(eta, rng));
  const auto& winner_state = state[static_cast<std::size_t>(rec.winner)];
  const int offered = static_cast<int>(sample_discrete(sys.departure_pmf(winner_state.location), rng));

  rec.departures.assign(k_agents, 0);
  rec.arrivals.assign(k_agents, 0);
  rec.dropped.assign(k_agents, 0);
  rec.departures[static_cast<std::size_t>(rec.winner)] = std::min(offered, winner_state.queue);

  GlobalState next(k_agents);
  for (std::size_t k = 0; k < k_agents; ++k) {
    rec.arrivals[k] = sample_poisson(sys.arrival_means[k], rng);
    const auto u = queue_update(state[k].queue, rec.departures[k], rec.arrivals[k], q_max);
    next[k].queue = u.next;
    rec.dropped[k] = u.dropped;
  }
  for (std::size_t k = 0; k < k_agents; ++k) next[k].location = step(sys.mobility, k, state[k].location, rng);
  return {std::move(rec), std::move(next)};
}

/// Records slots t = 0 .. t_ep (t_ep + 1 slots).
inline Trajectory run_episode(const GlobalState& s0, const PolicyKind& policy, const SystemModel& sys, int t_ep,
                              Engine& rng) {
  if (t_ep < 1) throw std::domain_error("run_episode: T_ep must be >= 1");
  Trajectory traj;
  traj.initial = s0;
  traj.gamma = sys.cost.gamma;
  traj.slots.reserve(static_cast<std::size_t>(t_ep) + 1);
  GlobalState s = s0;
  for (int t = 0; t <= t_ep; ++t) {
    auto [rec, next] = step_slot(s, policy, sys, rng);
    traj.slots.push_back(std::move(rec));
    s = std::move(next);
  }
  traj.final_state = std::move(s);
  return traj;
}

inline double discounted_cost(const Trajectory& traj) {
  double total = 0.0;
  double discount = 1.0;
  for (const auto& rec : traj.slots) {
    total += discount * rec.cost;
    discount *= traj.gamma;
  }
  return total;
}

/// Empty queues, locations drawn uniformly over the grid.
inline GlobalState random_initial_state(std::size_t n_agents, std::size_t n_locations, Engine& rng) {
  GlobalState s(n_agents);
  for (auto& ls : s) ls.location = static_cast<int>(std::min<std::uint64_t>(n_locations - 1,
      static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(n_locations))));
  return s;
}

/// Discounted cost of `n_episodes` independent episodes; episode i uses
/// substream (seed, label, i).
inline std::vector<double> evaluate_policy(const GlobalState& s0, const PolicyKind& policy, const SystemModel& sys,
                                           int t_ep, std::size_t n_episodes, std::uint64_t seed,
                                           std::string_view label = "evaluation") {
  std::vector<double> costs(n_episodes);
  for (std::size_t i = 0; i < n_episodes; ++i) {
    auto rng = make_engine(seed, label, i);
    costs[i] = discounted_cost(run_episode(s0, policy, sys, t_ep, rng));
  }
  return costs;
}

inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  const std::size_t k_agents = traj.initial.size();
  out << "t";
  for (std::size_t k = 0; k < k_agents; ++k) out << ",loc_" << k << ",Q_" << k << ",theta_" << k;
  out << ",winner";
  for (std::size_t k = 0; k < k_agents; ++k) out << ",D_" << k;
  for (std::size_t k = 0; k < k_agents; ++k) out << ",A_" << k;
  out << ",cost\n";
  for (std::size_t t = 0; t < traj.slots.size(); ++t) {
    const auto& r = traj.slots[t];
    out << t;
    for (std::size_t k = 0; k < k_agents; ++k) out << ',' << r.state[k].location << ',' << r.state[k].queue << ',' << r.thetas[k];
    out << ',' << r.winner;
    for (int d : r.departures) out << ',' << d;
    for (int a : r.arrivals) out << ',' << a;
    out << ',' << r.cost << '\n';
  }
}

}  // namespace sacc
