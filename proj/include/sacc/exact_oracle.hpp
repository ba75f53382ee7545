// SPDX-License-Identifier: Apache-2.0
//
// Brute-force ground truth for small instances: the full global-state Markov
// chain under a fixed policy, exact (truncated) discounted costs, and exact
// objective gradients.

#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sacc/contention_sim.hpp"
#include "sacc/optimizer.hpp"
#include "sacc/policy.hpp"

namespace sacc {

inline constexpr std::size_t kMaxChainStates = 100000;

/// Mixed-radix indexing of (location, queue)^K; agent 0 is the least
/// significant digit.
struct StateSpace {
  std::size_t n_agents = 0;
  std::size_t n_locations = 0;
  int q_max = 0;

  std::size_t local_count() const { return n_locations * static_cast<std::size_t>(q_max + 1); }
  std::size_t size() const {
    std::size_t n = 1;
    for (std::size_t k = 0; k < n_agents; ++k) n *= local_count();
    return n;
  }
  std::size_t encode(const GlobalState& s) const {
    std::size_t idx = 0;
    for (std::size_t k = n_agents; k-- > 0;)
      idx = idx * local_count() + static_cast<std::size_t>(s[k].location) * (q_max + 1) + static_cast<std::size_t>(s[k].queue);
    return idx;
  }
  GlobalState decode(std::size_t idx) const {
    GlobalState s(n_agents);
    for (std::size_t k = 0; k < n_agents; ++k) {
      const std::size_t local = idx % local_count();
      idx /= local_count();
      s[k] = {static_cast<int>(local / (q_max + 1)), static_cast<int>(local % (q_max + 1))};
    }
    return s;
  }
};

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct EnumeratedChain {
  StateSpace space;
  SparseRowMatrix transition;
  Eigen::VectorXd cost;
};

namespace detail {

inline StateSpace state_space_for(const SystemModel& sys) {
  StateSpace sp{sys.n_agents(), sys.n_locations(), sys.cost.q_max};
  // Overflow-safe guard on (|L| (Q_max+1))^K.
  double count = 1.0;
  for (std::size_t k = 0; k < sp.n_agents; ++k) count *= static_cast<double>(sp.local_count());
  if (count > static_cast<double>(kMaxChainStates)) {
    std::ostringstream os;
    os << "exact oracle: " << count << " global states exceeds the limit of " << kMaxChainStates;
    throw std::length_error(os.str());
  }
  return sp;
}

/// Joint queue-transition law of one slot from state `s`:
/// P[Q'] = sum_w eta_w prod_k f_k(w, Q'_k), enumerated over Q' tuples. When
/// `d_eta` is given, also returns d P[Q'] for each row of d_eta
/// (d_eta[r][w] = derivative of eta_w along direction r).
struct QueueLaw {
  std::vector<double> prob;                   // indexed by queue tuple (agent 0 least significant)
  std::vector<std::vector<double>> dprob;     // per direction
};

inline QueueLaw queue_law(const GlobalState& s, std::span<const double> eta, const SystemModel& sys,
                          const std::vector<std::vector<double>>& d_eta = {}) {
  const std::size_t n = s.size();
  const int q1 = sys.cost.q_max + 1;
  // win[k][q'], lose[k][q']
  std::vector<std::vector<double>> win(n, std::vector<double>(q1)), lose(n, std::vector<double>(q1));
  for (std::size_t k = 0; k < n; ++k) {
    const ArrivalLaw arrivals(sys.arrival_means[k], sys.cost.q_max);
    for (int q = 0; q < q1; ++q) {
      const auto t = transmit_terms(sys, s[k], q, arrivals);
      win[k][q] = t.omega1;
      lose[k][q] = t.omega2;
    }
  }
  std::size_t tuples = 1;
  for (std::size_t k = 0; k < n; ++k) tuples *= static_cast<std::size_t>(q1);

  QueueLaw law;
  law.prob.assign(tuples, 0.0);
  law.dprob.assign(d_eta.size(), std::vector<double>(tuples, 0.0));
  std::vector<int> q(n, 0);
  std::vector<double> f(n);
  for (std::size_t idx = 0; idx < tuples; ++idx) {
    std::size_t rest = idx;
    for (std::size_t k = 0; k < n; ++k) {
      q[k] = static_cast<int>(rest % q1);
      rest /= q1;
    }
    for (std::size_t w = 0; w < n; ++w) {
      double prod = 1.0;
      for (std::size_t k = 0; k < n && prod != 0.0; ++k) prod *= (k == w ? win[k][q[k]] : lose[k][q[k]]);
      f[w] = prod;
      law.prob[idx] += eta[w] * prod;
    }
    for (std::size_t r = 0; r < d_eta.size(); ++r) {
      double d = 0.0;
      for (std::size_t w = 0; w < n; ++w) d += d_eta[r][w] * f[w];
      law.dprob[r][idx] = d;
    }
  }
  return law;
}

/// Nonzero joint location moves from `s`: pairs (location tuple index, prob).
inline std::vector<std::pair<std::vector<int>, double>> location_moves(const GlobalState& s, const SystemModel& sys) {
  std::vector<std::pair<std::vector<int>, double>> out{{{}, 1.0}};
  for (std::size_t k = 0; k < s.size(); ++k) {
    const auto& m = sys.mobility.matrix(k);
    std::vector<std::pair<std::vector<int>, double>> next;
    for (const auto& [locs, p] : out)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const double pj = m(s[k].location, j);
        if (pj == 0.0) continue;
        auto l = locs;
        l.push_back(static_cast<int>(j));
        next.emplace_back(std::move(l), p * pj);
      }
    out = std::move(next);
  }
  return out;
}

template <class Emit>
void for_each_successor(const GlobalState& s, const QueueLaw& law, const SystemModel& sys, const StateSpace& sp,
                        Emit&& emit) {
  const std::size_t n = s.size();
  const int q1 = sys.cost.q_max + 1;
  const auto moves = location_moves(s, sys);
  GlobalState next(n);
  for (std::size_t idx = 0; idx < law.prob.size(); ++idx) {
    bool any = law.prob[idx] != 0.0;
    for (const auto& d : law.dprob) any = any || d[idx] != 0.0;
    if (!any) continue;
    std::size_t rest = idx;
    for (std::size_t k = 0; k < n; ++k) {
      next[k].queue = static_cast<int>(rest % q1);
      rest /= q1;
    }
    for (const auto& [locs, pl] : moves) {
      for (std::size_t k = 0; k < n; ++k) next[k].location = locs[k];
      emit(sp.encode(next), pl, idx);
    }
  }
}

}  // namespace detail

inline EnumeratedChain build_chain(const PolicyKind& policy, const SystemModel& sys) {
  sys.validate();
  const auto sp = detail::state_space_for(sys);
  const std::size_t n_states = sp.size();
  EnumeratedChain chain{sp, SparseRowMatrix(static_cast<Eigen::Index>(n_states), static_cast<Eigen::Index>(n_states)),
                        Eigen::VectorXd(static_cast<Eigen::Index>(n_states))};
  std::vector<Eigen::Triplet<double>> triplets;
  std::vector<double> thetas(sp.n_agents);
  for (std::size_t i = 0; i < n_states; ++i) {
    const auto s = sp.decode(i);
    chain.cost(static_cast<Eigen::Index>(i)) = global_cost(s, sys.cost);
    for (std::size_t k = 0; k < sp.n_agents; ++k) thetas[k] = evaluate(policy, k, s[k]);
    const auto eta = access_probabilities(thetas);
    const auto law = detail::queue_law(s, eta, sys);
    detail::for_each_successor(s, law, sys, sp, [&](std::size_t j, double pl, std::size_t qidx) {
      const double p = pl * law.prob[qidx];
      if (p != 0.0) triplets.emplace_back(static_cast<int>(i), static_cast<int>(j), p);
    });
  }
  chain.transition.setFromTriplets(triplets.begin(), triplets.end());
  chain.transition.makeCompressed();
  return chain;
}

/// Smallest horizon with gamma^h * max_cost <= tol.
inline int horizon_for(double gamma, double max_cost, double tol = 1e-6) {
  if (max_cost <= tol) return 0;
  return static_cast<int>(std::ceil(std::log(tol / max_cost) / std::log(gamma)));
}

/// sum_{t=0}^{horizon} gamma^t (P^t c) for every start state.
inline Eigen::VectorXd exact_values(const EnumeratedChain& chain, double gamma, int horizon) {
  Eigen::VectorXd v = chain.cost;
  for (int t = 0; t < horizon; ++t) v = chain.cost + gamma * (chain.transition * v);
  return v;
}

inline double exact_discounted_cost(const EnumeratedChain& chain, const GlobalState& s0, double gamma, int horizon) {
  return exact_values(chain, gamma, horizon)(static_cast<Eigen::Index>(chain.space.encode(s0)));
}

/// State distribution after `steps` transitions from s0.
inline Eigen::VectorXd state_distribution(const EnumeratedChain& chain, const GlobalState& s0, int steps) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(chain.cost.size());
  d(static_cast<Eigen::Index>(chain.space.encode(s0))) = 1.0;
  for (int t = 0; t < steps; ++t) d = (d.transpose() * chain.transition).transpose();
  return d;
}

enum class ParamKind { B, Lambda };

struct Coordinate {
  ParamKind kind = ParamKind::B;
  std::size_t agent = 0;
  std::size_t location = 0;
};

inline double& coordinate_ref(PolicyParams& p, Coordinate c) {
  const auto i = p.index(c.agent, c.location);
  return c.kind == ParamKind::B ? p.b[i] : p.lambda[i];
}

/// Central difference of the exact objective along one coordinate. Refuses
/// when the perturbation would move some queue length across a clip boundary
/// of theta, where the objective has a kink.
inline double exact_gradient_fd(const PolicyParams& params, Coordinate coord, double h, const SystemModel& sys,
                                const GlobalState& s0, int horizon) {
  if (!(h > 0.0)) throw std::domain_error("exact_gradient_fd: h must be > 0");
  const auto i = params.index(coord.agent, coord.location);
  auto region = [&](double x) { return x < params.theta_min ? -1 : (x > params.theta_max ? 1 : 0); };
  for (int q = 0; q <= sys.cost.q_max; ++q) {
    const double slope = coord.kind == ParamKind::B ? 1.0 : q;
    const double x = params.b[i] + params.lambda[i] * q;
    const double lo = x - h * slope, hi = x + h * slope;
    const bool on_edge = x == params.theta_min || x == params.theta_max || lo == params.theta_min ||
                         hi == params.theta_min || lo == params.theta_max || hi == params.theta_max;
    if (on_edge || region(lo) != region(x) || region(hi) != region(x)) {
      std::ostringstream os;
      os << "exact_gradient_fd: perturbation crosses a clip boundary at agent " << coord.agent << ", location "
         << coord.location << ", queue " << q << " (raw theta " << x << ")";
      throw std::domain_error(os.str());
    }
  }
  PolicyParams plus = params, minus = params;
  coordinate_ref(plus, coord) += h;
  coordinate_ref(minus, coord) -= h;
  const double gp = exact_discounted_cost(build_chain(TruncatedLinear{plus}, sys), s0, sys.cost.gamma, horizon);
  const double gm = exact_discounted_cost(build_chain(TruncatedLinear{minus}, sys), s0, sys.cost.gamma, horizon);
  return (gp - gm) / (2.0 * h);
}

/// Exact gradient of the infinite-horizon objective (truncated where
/// gamma^h * max_cost <= tol) by differentiating the chain:
/// dG = gamma * occupancy^T (dP) V, with occupancy = sum_t gamma^t e_{s0}^T P^t.
/// Uses the same one-sided clip convention as the estimator.
struct ExactGradient {
  std::vector<double> g_b;
  std::vector<double> g_lambda;
  double value = 0.0;

  double squared_norm() const {
    double s = 0.0;
    for (double v : g_b) s += v * v;
    for (double v : g_lambda) s += v * v;
    return s;
  }
};

inline ExactGradient exact_gradient(const PolicyParams& params, const SystemModel& sys, const GlobalState& s0,
                                    double tol = 1e-9) {
  const auto chain = build_chain(TruncatedLinear{params}, sys);
  const auto& sp = chain.space;
  const double gamma = sys.cost.gamma;
  const int horizon = horizon_for(gamma, chain.cost.maxCoeff() / (1.0 - gamma), tol);
  const Eigen::VectorXd values = exact_values(chain, gamma, horizon);

  Eigen::VectorXd occupancy = Eigen::VectorXd::Zero(chain.cost.size());
  Eigen::VectorXd d = Eigen::VectorXd::Zero(chain.cost.size());
  d(static_cast<Eigen::Index>(sp.encode(s0))) = 1.0;
  double disc = 1.0;
  for (int t = 0; t <= horizon; ++t) {
    occupancy += disc * d;
    d = (d.transpose() * chain.transition).transpose();
    disc *= gamma;
  }

  ExactGradient out;
  out.g_b.assign(params.size(), 0.0);
  out.g_lambda.assign(params.size(), 0.0);
  out.value = values(static_cast<Eigen::Index>(sp.encode(s0)));

  const std::size_t n = sp.n_agents;
  std::vector<double> thetas(n);
  std::vector<ThetaSensitivity> sens(n);
  std::vector<int> locs(n);
  for (std::size_t i = 0; i < sp.size(); ++i) {
    const double occ = occupancy(static_cast<Eigen::Index>(i));
    if (occ == 0.0) continue;
    const auto s = sp.decode(i);
    for (std::size_t k = 0; k < n; ++k) {
      thetas[k] = clip_theta(params.raw(k, s[k]), params.theta_min, params.theta_max);
      sens[k] = theta_sensitivity(params, k, s[k]);
      locs[k] = s[k].location;
    }
    const auto eta = access_probabilities(thetas);
    const auto eg = eta_gradient(thetas, sens, locs);
    // Direction kappa: derivative of eta_w with respect to theta_kappa.
    std::vector<std::vector<double>> d_eta;
    std::vector<std::size_t> kappas;
    for (std::size_t kappa = 0; kappa < n; ++kappa) {
      if (sens[kappa].dtheta_db == 0.0) continue;
      std::vector<double> row(n);
      for (std::size_t w = 0; w < n; ++w) row[w] = eg.d_eta_d_theta(w, kappa);
      d_eta.push_back(std::move(row));
      kappas.push_back(kappa);
    }
    if (kappas.empty()) continue;
    const auto law = detail::queue_law(s, eta, sys, d_eta);
    std::vector<double> dv(kappas.size(), 0.0);
    detail::for_each_successor(s, law, sys, sp, [&](std::size_t j, double pl, std::size_t qidx) {
      for (std::size_t r = 0; r < kappas.size(); ++r) dv[r] += pl * law.dprob[r][qidx] * values(static_cast<Eigen::Index>(j));
    });
    for (std::size_t r = 0; r < kappas.size(); ++r) {
      const auto kappa = kappas[r];
      const auto idx = params.index(kappa, static_cast<std::size_t>(locs[kappa]));
      const double dtheta = gamma * occ * dv[r];
      out.g_b[idx] += dtheta * sens[kappa].dtheta_db;
      out.g_lambda[idx] += dtheta * sens[kappa].dtheta_dlambda;
    }
  }
  return out;
}

/// Exact expectation of estimate_gradient over trajectories of length t_ep
/// from s0. Scores of later transitions are mean-zero given the past, so
///   E[g] = sum_u sum_S d_u(S) sum_S' P(S, S') score(S, S') gamma^{u+1} V_{t_ep-u-1}(S'),
/// with d_u the state law at slot u and V_n the n-step discounted value.
inline GradientEstimate exact_estimator_mean(const PolicyParams& params, const SystemModel& sys, const GlobalState& s0,
                                             int t_ep, EstimatorOptions opts = {}) {
  const auto chain = build_chain(TruncatedLinear{params}, sys);
  const auto& sp = chain.space;
  const double gamma = sys.cost.gamma;
  std::vector<Eigen::VectorXd> values(static_cast<std::size_t>(t_ep) + 1);
  values[0] = chain.cost;
  for (int h = 1; h <= t_ep; ++h) values[h] = chain.cost + gamma * (chain.transition * values[h - 1]);

  GradientEstimate out;
  out.g_b.assign(params.size(), 0.0);
  out.g_lambda.assign(params.size(), 0.0);
  out.discounted_cost = values[t_ep](static_cast<Eigen::Index>(sp.encode(s0)));

  const std::size_t n = sp.n_agents;
  std::vector<double> thetas(n), score(n);
  std::vector<ThetaSensitivity> sens(n);
  std::vector<int> locs(n);
  const auto laws = arrival_laws(sys);
  Eigen::VectorXd d = Eigen::VectorXd::Zero(chain.cost.size());
  d(static_cast<Eigen::Index>(sp.encode(s0))) = 1.0;
  double disc = gamma;
  for (int u = 0; u < t_ep; ++u) {
    for (std::size_t i = 0; i < sp.size(); ++i) {
      const double di = d(static_cast<Eigen::Index>(i));
      if (di == 0.0) continue;
      const auto s = sp.decode(i);
      for (std::size_t k = 0; k < n; ++k) {
        thetas[k] = clip_theta(params.raw(k, s[k]), params.theta_min, params.theta_max);
        sens[k] = theta_sensitivity(params, k, s[k]);
        locs[k] = s[k].location;
      }
      const auto eta = access_probabilities(thetas);
      const auto eg = eta_gradient(thetas, sens, locs);
      for (SparseRowMatrix::InnerIterator it(chain.transition, static_cast<Eigen::Index>(i)); it; ++it) {
        if (!slot_theta_score(s, sp.decode(static_cast<std::size_t>(it.col())), eg, eta, sys, laws, opts.score, score)) continue;
        const double w = di * it.value() * disc * values[static_cast<std::size_t>(t_ep - u - 1)](it.col());
        for (std::size_t k = 0; k < n; ++k) {
          const auto idx = params.index(k, static_cast<std::size_t>(locs[k]));
          out.g_b[idx] += w * score[k] * sens[k].dtheta_db;
          out.g_lambda[idx] += w * score[k] * sens[k].dtheta_dlambda;
        }
      }
    }
    d = (d.transpose() * chain.transition).transpose();
    disc *= gamma;
  }
  return out;
}

/// Long-run state distribution by power iteration from s0.
inline Eigen::VectorXd long_run_distribution(const EnumeratedChain& chain, const GlobalState& s0, int max_steps = 100000,
                                             double tol = 1e-13) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(chain.cost.size());
  d(static_cast<Eigen::Index>(chain.space.encode(s0))) = 1.0;
  for (int t = 0; t < max_steps; ++t) {
    Eigen::VectorXd next = (d.transpose() * chain.transition).transpose();
    const double diff = (next - d).lpNorm<1>();
    d = std::move(next);
    if (diff < tol) break;
  }
  return d;
}

}  // namespace sacc
