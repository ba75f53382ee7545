// SPDX-License-Identifier: Apache-2.0
//
// Single-trajectory score-function gradient of the discounted queueing cost
// with respect to the (b, lambda) back-off parameters, the decaying-step SGD
// loop built on it, and an SPSA baseline optimizer.
//
// The estimate is
//
//   g = (sum_t gamma^t c(S_t)) * (sum_t d/dp log P[Q_{t+1} | S_t; b, lambda]),
//
// where only the queue transitions depend on the parameters (through the
// contention probabilities eta); location moves contribute nothing.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sacc/contention_sim.hpp"
#include "sacc/policy.hpp"
#include "sacc/rng.hpp"

namespace sacc {

/// P[Q' = base + a] with Poisson arrivals and the buffer clip at q_max.
inline double arrival_transition_prob(int base, int q_next, double arrival_mean, int q_max) {
  if (q_next < base) return 0.0;
  if (q_next < q_max) return poisson_pmf(arrival_mean, q_next - base);
  return poisson_tail(arrival_mean, q_max - base);
}

/// Tabulated arrival law for one agent: pmf[a] and tail[a] = P[A >= a] for
/// a = 0 .. q_max.
struct ArrivalLaw {
  int q_max = 0;
  std::vector<double> pmf, tail;

  ArrivalLaw(double arrival_mean, int q_max_) : q_max(q_max_), pmf(q_max_ + 1), tail(q_max_ + 1) {
    for (int a = 0; a <= q_max; ++a) {
      pmf[a] = poisson_pmf(arrival_mean, a);
      tail[a] = poisson_tail(arrival_mean, a);
    }
  }

  double transition(int base, int q_next) const {
    if (q_next < base) return 0.0;
    return q_next < q_max ? pmf[q_next - base] : tail[q_max - base];
  }
};

inline double local_transition_prob(int q, int q_next, bool transmitted, std::span<const double> departure_pmf,
                                    const ArrivalLaw& law) {
  if (!transmitted) return law.transition(q, q_next);
  // Every d >= q empties the queue, so those outcomes share one term.
  double p = 0.0, emptied = 0.0;
  for (std::size_t d = 0; d < departure_pmf.size(); ++d) {
    if (departure_pmf[d] == 0.0) continue;
    if (static_cast<int>(d) >= q)
      emptied += departure_pmf[d];
    else
      p += departure_pmf[d] * law.transition(q - static_cast<int>(d), q_next);
  }
  return p + emptied * law.transition(0, q_next);
}

/// Probability of the queue moving q -> q_next in one slot, given whether the
/// agent won the slot.
inline double local_transition_prob(int q, int q_next, bool transmitted, std::span<const double> departure_pmf,
                                    double arrival_mean, int q_max) {
  return local_transition_prob(q, q_next, transmitted, departure_pmf, ArrivalLaw(arrival_mean, q_max));
}

struct TransmitLikelihoodTerms {
  double omega1 = 0.0;  // agent wins the slot
  double omega2 = 0.0;  // agent loses the slot
};

inline TransmitLikelihoodTerms transmit_terms(const SystemModel& sys, LocalState s, int q_next, const ArrivalLaw& law) {
  const auto& pmf = sys.departure_pmf(s.location);
  return {local_transition_prob(s.queue, q_next, true, pmf, law), local_transition_prob(s.queue, q_next, false, pmf, law)};
}

inline TransmitLikelihoodTerms transmit_terms(const SystemModel& sys, std::size_t agent, LocalState s, int q_next) {
  return transmit_terms(sys, s, q_next, ArrivalLaw(sys.arrival_means[agent], sys.cost.q_max));
}

inline std::vector<ArrivalLaw> arrival_laws(const SystemModel& sys) {
  std::vector<ArrivalLaw> laws;
  laws.reserve(sys.n_agents());
  for (double a : sys.arrival_means) laws.emplace_back(a, sys.cost.q_max);
  return laws;
}

/// d eta_k / d theta_kappa together with each agent's theta sensitivity at
/// its current location, which is the only (b, lambda) pair of that agent
/// the slot depends on.
struct EtaGradient {
  std::size_t n_agents = 0;
  std::vector<double> jacobian;  // row-major [k][kappa]
  std::vector<ThetaSensitivity> sensitivity;
  std::vector<int> location;

  double d_eta_d_theta(std::size_t k, std::size_t kappa) const { return jacobian[k * n_agents + kappa]; }
  double d_eta_db(std::size_t k, std::size_t kappa) const { return d_eta_d_theta(k, kappa) * sensitivity[kappa].dtheta_db; }
  double d_eta_dlambda(std::size_t k, std::size_t kappa) const {
    return d_eta_d_theta(k, kappa) * sensitivity[kappa].dtheta_dlambda;
  }
};

inline EtaGradient eta_gradient(std::span<const double> thetas, std::span<const ThetaSensitivity> sensitivities,
                                std::span<const int> locations) {
  const std::size_t n = thetas.size();
  double total = 0.0;
  for (double t : thetas) {
    if (!(t > 0.0)) throw std::domain_error("eta_gradient: every theta must be > 0");
    total += t;
  }
  EtaGradient g;
  g.n_agents = n;
  g.jacobian.resize(n * n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t kappa = 0; kappa < n; ++kappa)
      g.jacobian[k * n + kappa] = ((k == kappa ? total : 0.0) - thetas[k]) / (total * total);
  g.sensitivity.assign(sensitivities.begin(), sensitivities.end());
  g.location.assign(locations.begin(), locations.end());
  return g;
}

/// How the per-slot log-likelihood of the observed queue transitions is formed.
///
/// JointWinner uses the exact slot law: a single winner w is drawn from eta
/// and P[Q'|S] = sum_w eta_w omega1_w prod_{k != w} omega2_k.
///
/// PerAgentMarginal treats agents' queue transitions as independent given S,
/// P[Q'|S] ~ prod_k (eta_k omega1_k + (1 - eta_k) omega2_k). Each factor is the
/// exact marginal of agent k, but the product ignores that only one agent can
/// win a slot, so the resulting gradient estimate is biased whenever losing
/// and winning leave distinguishable footprints in several queues at once.
enum class ScoreModel { JointWinner, PerAgentMarginal };

struct GradientEstimate {
  std::vector<double> g_b;
  std::vector<double> g_lambda;
  double discounted_cost = 0.0;
  std::size_t degenerate_slots = 0;

  double squared_norm() const {
    double s = 0.0;
    for (double v : g_b) s += v * v;
    for (double v : g_lambda) s += v * v;
    return s;
  }
};

/// Per-slot score d log P[S_{t+1} | S_t] / d theta_kappa for every agent.
/// Returns false (degenerate) when the observed transition has zero modelled
/// probability.
inline bool slot_theta_score(const GlobalState& s, const GlobalState& next, const EtaGradient& eg,
                             std::span<const double> eta, const SystemModel& sys, std::span<const ArrivalLaw> laws,
                             ScoreModel model, std::vector<double>& score_theta) {
  const std::size_t n = s.size();
  std::vector<TransmitLikelihoodTerms> w(n);
  for (std::size_t k = 0; k < n; ++k) w[k] = transmit_terms(sys, s[k], next[k].queue, laws[k]);
  std::fill(score_theta.begin(), score_theta.end(), 0.0);

  if (model == ScoreModel::PerAgentMarginal) {
    bool ok = true;
    for (std::size_t k = 0; k < n; ++k) {
      const double num = w[k].omega1 - w[k].omega2;
      if (num == 0.0) continue;
      const double den = eta[k] * num + w[k].omega2;
      if (!(den > 0.0)) {
        ok = false;
        continue;
      }
      for (std::size_t kappa = 0; kappa < n; ++kappa) score_theta[kappa] += num / den * eg.d_eta_d_theta(k, kappa);
    }
    return ok;
  }

  // F_w = omega1_w * prod_{k != w} omega2_k, computed without division so zeros are exact.
  std::vector<double> prefix(n + 1, 1.0), suffix(n + 1, 1.0);
  for (std::size_t k = 0; k < n; ++k) prefix[k + 1] = prefix[k] * w[k].omega2;
  for (std::size_t k = n; k-- > 0;) suffix[k] = suffix[k + 1] * w[k].omega2;
  std::vector<double> f(n);
  double p = 0.0;
  for (std::size_t win = 0; win < n; ++win) {
    f[win] = w[win].omega1 * prefix[win] * suffix[win + 1];
    p += eta[win] * f[win];
  }
  if (!(p > 0.0)) return false;
  for (std::size_t kappa = 0; kappa < n; ++kappa) {
    double d = 0.0;
    for (std::size_t win = 0; win < n; ++win) d += eg.d_eta_d_theta(win, kappa) * f[win];
    score_theta[kappa] = d / p;
  }
  return true;
}

struct EstimatorOptions {
  ScoreModel score = ScoreModel::JointWinner;
};

/// Score-function gradient from one trajectory generated under `params`.
/// Transitions t = 0 .. T_ep - 1 are scored; the last recorded slot only
/// contributes its cost.
inline GradientEstimate estimate_gradient(const Trajectory& traj, const PolicyParams& params, const SystemModel& sys,
                                          EstimatorOptions opts = {}) {
  const std::size_t n = traj.initial.size();
  GradientEstimate out;
  out.g_b.assign(params.size(), 0.0);
  out.g_lambda.assign(params.size(), 0.0);
  out.discounted_cost = discounted_cost(traj);

  std::vector<double> thetas(n), score_theta(n);
  std::vector<ThetaSensitivity> sens(n);
  std::vector<int> locs(n);
  const auto laws = arrival_laws(sys);
  for (std::size_t t = 0; t + 1 < traj.slots.size(); ++t) {
    const auto& s = traj.slots[t].state;
    const auto& next = traj.state_at(t + 1);
    bool any_sensitive = false;
    for (std::size_t k = 0; k < n; ++k) {
      thetas[k] = clip_theta(params.raw(k, s[k]), params.theta_min, params.theta_max);
      sens[k] = theta_sensitivity(params, k, s[k]);
      locs[k] = s[k].location;
      any_sensitive = any_sensitive || sens[k].dtheta_db != 0.0;
    }
    if (!any_sensitive) continue;
    const auto eta = access_probabilities(thetas);
    const auto eg = eta_gradient(thetas, sens, locs);
    if (!slot_theta_score(s, next, eg, eta, sys, laws, opts.score, score_theta)) {
      ++out.degenerate_slots;
      continue;
    }
    for (std::size_t kappa = 0; kappa < n; ++kappa) {
      const auto i = params.index(kappa, static_cast<std::size_t>(locs[kappa]));
      out.g_b[i] += score_theta[kappa] * sens[kappa].dtheta_db;
      out.g_lambda[i] += score_theta[kappa] * sens[kappa].dtheta_dlambda;
    }
  }
  for (auto& v : out.g_b) v *= out.discounted_cost;
  for (auto& v : out.g_lambda) v *= out.discounted_cost;
  return out;
}

// ---------------------------------------------------------------------------
// Training loops

struct IterationLog {
  int m = 0;
  double cost = 0.0;
  double grad_norm = 0.0;
  double step = 0.0;
  std::size_t degenerate_slots = 0;
};

inline void write_training_log_csv(std::ostream& out, std::span<const IterationLog> log) {
  out << "m,cost,grad_norm,step,degenerate_slots\n";
  for (const auto& e : log) out << e.m << ',' << e.cost << ',' << e.grad_norm << ',' << e.step << ',' << e.degenerate_slots << '\n';
}

struct SgdConfig {
  double eta0 = 0.01;
  int t_ep = 135;
  int iterations = 5000;
  int batch_size = 1;
  std::uint64_t seed = 1;
  double b_max = 10.0;  // upper clip on b and lambda
  EstimatorOptions estimator{};

  void validate() const {
    if (!(eta0 >= 0.0) || !std::isfinite(eta0)) throw std::invalid_argument("sgd: eta0 must be finite and >= 0");
    if (t_ep < 1) throw std::invalid_argument("sgd: t_ep must be >= 1");
    if (iterations < 0) throw std::invalid_argument("sgd: iterations must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("sgd: batch_size must be >= 1");
    if (!(b_max > 0.0)) throw std::invalid_argument("sgd: b_max must be > 0");
  }
};

struct TrainResult {
  PolicyParams params;
  std::vector<IterationLog> log;
};

using IterationHook = std::function<void(const IterationLog&, const PolicyParams& before_update, const GradientEstimate&)>;

namespace detail {

inline void project(PolicyParams& p, double b_max) {
  for (auto& v : p.b) v = std::clamp(v, 0.0, b_max);
  for (auto& v : p.lambda) v = std::clamp(v, 0.0, b_max);
}

inline void require_finite(const PolicyParams& p, int m) {
  for (std::size_t i = 0; i < p.size(); ++i)
    if (!std::isfinite(p.b[i]) || !std::isfinite(p.lambda[i])) {
      std::ostringstream os;
      os << "training diverged at iteration " << m << ": non-finite parameter at index " << i;
      throw std::runtime_error(os.str());
    }
}

}  // namespace detail

/// Decaying-step SGD: b <- b - eta0/(m+1) * g_b, likewise lambda, then
/// projection onto [0, b_max]. Episode m uses substream (seed, "training", m).
inline TrainResult sgd_train(const SgdConfig& cfg, PolicyParams init, const SystemModel& sys, const GlobalState& s0,
                             const IterationHook& hook = {}) {
  cfg.validate();
  init.validate();
  TrainResult res{std::move(init), {}};
  res.log.reserve(static_cast<std::size_t>(cfg.iterations));
  auto& p = res.params;
  for (int m = 0; m < cfg.iterations; ++m) {
    GradientEstimate g;
    g.g_b.assign(p.size(), 0.0);
    g.g_lambda.assign(p.size(), 0.0);
    for (int j = 0; j < cfg.batch_size; ++j) {
      auto rng = make_engine(cfg.seed, "training", static_cast<std::uint64_t>(m) * cfg.batch_size + j);
      const auto traj = run_episode(s0, TruncatedLinear{p}, sys, cfg.t_ep, rng);
      const auto gj = estimate_gradient(traj, p, sys, cfg.estimator);
      for (std::size_t i = 0; i < p.size(); ++i) {
        g.g_b[i] += gj.g_b[i] / cfg.batch_size;
        g.g_lambda[i] += gj.g_lambda[i] / cfg.batch_size;
      }
      g.discounted_cost += gj.discounted_cost / cfg.batch_size;
      g.degenerate_slots += gj.degenerate_slots;
    }
    const double step = cfg.eta0 / (m + 1);
    IterationLog entry{m, g.discounted_cost, std::sqrt(g.squared_norm()), step, g.degenerate_slots};
    if (hook) hook(entry, p, g);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p.b[i] -= step * g.g_b[i];
      p.lambda[i] -= step * g.g_lambda[i];
    }
    detail::require_finite(p, m);
    detail::project(p, cfg.b_max);
    res.log.push_back(entry);
  }
  return res;
}

/// SPSA with gains a_m = a / (m + 1 + A)^alpha, c_m = c / (m + 1)^gamma.
struct SpsaConfig {
  double a = 0.01;
  double c = 0.05;
  double big_a = -1.0;  // negative: 0.1 * iterations
  double alpha = 0.602;
  double gamma = 0.101;
  int t_ep = 135;
  int iterations = 2500;
  std::uint64_t seed = 1;
  double b_max = 10.0;

  double stability_constant() const { return big_a < 0.0 ? 0.1 * iterations : big_a; }

  void validate() const {
    if (!(c > 0.0) || !std::isfinite(c)) throw std::invalid_argument("spsa: perturbation magnitude c must be > 0");
    if (!(a >= 0.0) || !std::isfinite(a)) throw std::invalid_argument("spsa: gain a must be finite and >= 0");
    if (t_ep < 1) throw std::invalid_argument("spsa: t_ep must be >= 1");
    if (iterations < 0) throw std::invalid_argument("spsa: iterations must be >= 0");
    if (!(b_max > 0.0)) throw std::invalid_argument("spsa: b_max must be > 0");
  }
};

/// Two episodes per iteration (at +c_m*Delta and -c_m*Delta) sharing one
/// random substream, so the difference isolates the parameter change.
inline TrainResult spsa_train(const SpsaConfig& cfg, PolicyParams init, const SystemModel& sys, const GlobalState& s0) {
  cfg.validate();
  init.validate();
  TrainResult res{std::move(init), {}};
  auto& p = res.params;
  const std::size_t n = p.size();
  const double big_a = cfg.stability_constant();
  std::vector<double> delta(2 * n);
  for (int m = 0; m < cfg.iterations; ++m) {
    const double a_m = cfg.a / std::pow(m + 1 + big_a, cfg.alpha);
    const double c_m = cfg.c / std::pow(m + 1, cfg.gamma);
    auto prng = make_engine(cfg.seed, "spsa-perturbation", static_cast<std::uint64_t>(m));
    for (auto& d : delta) d = (prng() >> 63) ? 1.0 : -1.0;

    PolicyParams plus = p, minus = p;
    for (std::size_t i = 0; i < n; ++i) {
      plus.b[i] += c_m * delta[i];
      minus.b[i] -= c_m * delta[i];
      plus.lambda[i] += c_m * delta[n + i];
      minus.lambda[i] -= c_m * delta[n + i];
    }
    detail::project(plus, cfg.b_max);
    detail::project(minus, cfg.b_max);

    auto rng_plus = make_engine(cfg.seed, "spsa-episode", static_cast<std::uint64_t>(m));
    auto rng_minus = rng_plus;
    const double y_plus = discounted_cost(run_episode(s0, TruncatedLinear{plus}, sys, cfg.t_ep, rng_plus));
    const double y_minus = discounted_cost(run_episode(s0, TruncatedLinear{minus}, sys, cfg.t_ep, rng_minus));

    const double diff = (y_plus - y_minus) / (2.0 * c_m);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double gb = diff / delta[i];
      const double gl = diff / delta[n + i];
      p.b[i] -= a_m * gb;
      p.lambda[i] -= a_m * gl;
      sq += gb * gb + gl * gl;
    }
    detail::require_finite(p, m);
    detail::project(p, cfg.b_max);
    res.log.push_back({m, 0.5 * (y_plus + y_minus), std::sqrt(sq), a_m, 0});
  }
  return res;
}

}  // namespace sacc
