// SPDX-License-Identifier: Apache-2.0
//
// Local back-off policies: maps an agent's (location, queue length) to its
// back-off timer parameter theta.

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace sacc {

struct LocalState {
  int location = 0;
  int queue = 0;
  friend bool operator==(LocalState, LocalState) = default;
};

/// Dense (b, lambda) per (agent, location), agent-major.
struct PolicyParams {
  std::size_t n_agents = 0;
  std::size_t n_locations = 0;
  std::vector<double> b;
  std::vector<double> lambda;
  double theta_min = 1.0 / 63.0;
  double theta_max = 1.0;

  PolicyParams() = default;
  PolicyParams(std::size_t agents, std::size_t locations, double tmin, double tmax)
      : n_agents(agents), n_locations(locations), b(agents * locations, 0.0),
        lambda(agents * locations, 0.0), theta_min(tmin), theta_max(tmax) {}

  std::size_t index(std::size_t agent, std::size_t location) const { return agent * n_locations + location; }
  std::size_t size() const { return b.size(); }

  double raw(std::size_t agent, LocalState s) const {
    const auto i = index(agent, static_cast<std::size_t>(s.location));
    return b[i] + lambda[i] * s.queue;
  }

  void validate() const {
    if (!(theta_min > 0.0 && theta_min < theta_max)) throw std::invalid_argument("policy: need 0 < theta_min < theta_max");
    if (b.size() != n_agents * n_locations || lambda.size() != b.size())
      throw std::invalid_argument("policy: b and lambda must hold n_agents * n_locations entries");
    for (std::size_t i = 0; i < b.size(); ++i)
      if (!std::isfinite(b[i]) || !std::isfinite(lambda[i]) || b[i] < 0.0 || lambda[i] < 0.0)
        throw std::invalid_argument("policy: b and lambda must be finite and >= 0 (index " + std::to_string(i) + ")");
  }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

/// b = theta_min, lambda = (theta_max - theta_min) / Q_max everywhere: theta
/// rises linearly from theta_min at an empty queue to theta_max when full.
inline PolicyParams linear_queue_init(std::size_t agents, std::size_t locations, double tmin, double tmax, int q_max) {
  PolicyParams p(agents, locations, tmin, tmax);
  std::fill(p.b.begin(), p.b.end(), tmin);
  std::fill(p.lambda.begin(), p.lambda.end(), (tmax - tmin) / q_max);
  return p;
}

inline double clip_theta(double x, double tmin, double tmax) { return std::max(std::min(x, tmax), tmin); }

struct TruncatedLinear {
  PolicyParams params;
};
struct ConstantTheta {
  double theta_min = 1.0 / 63.0;
  double theta_max = 1.0;
};
struct FullBufferThreshold {
  double theta_min = 1.0 / 63.0;
  double theta_max = 1.0;
  int q_max = 10;
};
struct QCsmaLike {
  double theta_min = 1.0 / 63.0;
  double theta_max = 1.0;
};

using PolicyKind = std::variant<TruncatedLinear, ConstantTheta, FullBufferThreshold, QCsmaLike>;

inline double evaluate(const PolicyKind& policy, std::size_t agent, LocalState s) {
  struct Visitor {
    std::size_t agent;
    LocalState s;
    double operator()(const TruncatedLinear& p) const {
      return clip_theta(p.params.raw(agent, s), p.params.theta_min, p.params.theta_max);
    }
    double operator()(const ConstantTheta& p) const { return 0.5 * (p.theta_min + p.theta_max); }
    double operator()(const FullBufferThreshold& p) const { return s.queue == p.q_max ? p.theta_max : p.theta_min; }
    double operator()(const QCsmaLike& p) const {
      if (s.queue <= 0) return p.theta_min;
      const double lq = std::log(static_cast<double>(s.queue));
      return clip_theta(lq / (1.0 + lq), p.theta_min, p.theta_max);
    }
  };
  return std::visit(Visitor{agent, s}, policy);
}

struct ThetaSensitivity {
  double dtheta_db = 0.0;
  double dtheta_dlambda = 0.0;
};

/// Subgradient of the clipped linear map; zero on and outside the clip boundary.
inline ThetaSensitivity theta_sensitivity(const PolicyParams& params, std::size_t agent, LocalState s) {
  const double x = params.raw(agent, s);
  if (x > params.theta_min && x < params.theta_max) return {1.0, static_cast<double>(s.queue)};
  return {};
}

inline std::string policy_name(const PolicyKind& policy) {
  struct Visitor {
    std::string operator()(const TruncatedLinear&) const { return "truncated_linear"; }
    std::string operator()(const ConstantTheta&) const { return "constant"; }
    std::string operator()(const FullBufferThreshold&) const { return "full_buffer_threshold"; }
    std::string operator()(const QCsmaLike&) const { return "q_csma_like"; }
  };
  return std::visit(Visitor{}, policy);
}

inline nlohmann::json params_to_json(const PolicyParams& p) {
  nlohmann::json agents = nlohmann::json::array();
  for (std::size_t k = 0; k < p.n_agents; ++k) {
    const auto first = static_cast<std::ptrdiff_t>(p.index(k, 0));
    const auto last = first + static_cast<std::ptrdiff_t>(p.n_locations);
    agents.push_back({{"b", std::vector<double>(p.b.begin() + first, p.b.begin() + last)},
                      {"lambda", std::vector<double>(p.lambda.begin() + first, p.lambda.begin() + last)}});
  }
  return {{"theta_min", p.theta_min}, {"theta_max", p.theta_max}, {"agents", agents}};
}

inline PolicyParams params_from_json(const nlohmann::json& j) {
  const auto& agents = j.at("agents");
  if (agents.empty()) throw std::invalid_argument("policy: 'agents' must be non-empty");
  const auto n_loc = agents.at(0).at("b").size();
  PolicyParams p(agents.size(), n_loc, j.at("theta_min").get<double>(), j.at("theta_max").get<double>());
  for (std::size_t k = 0; k < agents.size(); ++k) {
    const auto b = agents[k].at("b").get<std::vector<double>>();
    const auto l = agents[k].at("lambda").get<std::vector<double>>();
    if (b.size() != n_loc || l.size() != n_loc)
      throw std::invalid_argument("policy: agent " + std::to_string(k) + " has mismatched b/lambda length");
    std::copy(b.begin(), b.end(), p.b.begin() + static_cast<std::ptrdiff_t>(p.index(k, 0)));
    std::copy(l.begin(), l.end(), p.lambda.begin() + static_cast<std::ptrdiff_t>(p.index(k, 0)));
  }
  p.validate();
  return p;
}

}  // namespace sacc
