// SPDX-License-Identifier: Apache-2.0
//
// Named small instances shared by the oracle CLI, unit tests and the
// acceptance suite.

#pragma once

#include <string>
#include <vector>

#include "sacc/contention_sim.hpp"
#include "sacc/environment.hpp"
#include "sacc/mobility.hpp"
#include "sacc/policy.hpp"

namespace sacc {

struct TinyInstance {
  SystemModel system;
  PolicyParams params;
  GlobalState s0;
  int t_ep = 90;
};

/// Two agents, two locations, buffer of two packets, fixed departures
/// (2 packets at location 0, 1 at location 1), gamma = 0.9. Every (b, lambda)
/// keeps theta strictly inside (theta_min, theta_max) for all queue lengths.
inline TinyInstance tiny_instance() {
  TinyInstance inst;
  auto& sys = inst.system;
  sys.links = {fixed_departures(0, 2), fixed_departures(1, 1)};
  RowMatrix m(2, 2);
  m << 0.7, 0.3, 0.4, 0.6;
  sys.mobility.transitions = {m};
  sys.arrival_means = {0.6, 0.6};
  sys.cost = {0.9, 20.0, 2};
  inst.params = PolicyParams(2, 2, 1.0 / 63.0, 1.0);
  inst.params.b = {0.3, 0.2, 0.25, 0.35};
  inst.params.lambda = {0.2, 0.15, 0.1, 0.25};
  inst.s0 = {{0, 1}, {1, 2}};
  inst.t_ep = 90;
  return inst;
}

/// Variant where location 1 is a dead spot (no departures) and the second
/// agent has a lighter load.
inline TinyInstance tiny_instance_dead_spot() {
  auto inst = tiny_instance();
  inst.system.links[1] = fixed_departures(1, 0);
  inst.system.arrival_means = {0.6, 0.3};
  return inst;
}

inline std::vector<std::string> tiny_scenario_names() { return {"tiny", "tiny-dead-spot"}; }

inline TinyInstance tiny_scenario(const std::string& name) {
  if (name == "tiny") return tiny_instance();
  if (name == "tiny-dead-spot") return tiny_instance_dead_spot();
  throw std::invalid_argument("unknown scenario '" + name + "'");
}

}  // namespace sacc
