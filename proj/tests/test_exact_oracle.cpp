// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "sacc/exact_oracle.hpp"
#include "sacc/scenarios.hpp"
#include "test_support.hpp"

using namespace sacc;

namespace {

SystemModel countdown_system() {
  SystemModel sys;
  sys.links = {fixed_departures(0, 1)};
  sys.mobility.transitions = {RowMatrix::Identity(1, 1)};
  sys.arrival_means = {0.0};
  sys.cost = {0.9, 20.0, 2};
  return sys;
}

std::vector<Coordinate> all_coordinates(const PolicyParams& p) {
  std::vector<Coordinate> out;
  for (auto kind : {ParamKind::B, ParamKind::Lambda})
    for (std::size_t k = 0; k < p.n_agents; ++k)
      for (std::size_t l = 0; l < p.n_locations; ++l) out.push_back({kind, k, l});
  return out;
}

double grad_component(const GradientEstimate& g, const PolicyParams& p, Coordinate c) {
  const auto i = p.index(c.agent, c.location);
  return c.kind == ParamKind::B ? g.g_b[i] : g.g_lambda[i];
}

}  // namespace

TEST(BuildChain, CountdownIsDeterministic) {
  const auto chain = build_chain(ConstantTheta{}, countdown_system());
  ASSERT_EQ(chain.space.size(), 3u);
  const Eigen::MatrixXd dense(chain.transition);
  Eigen::MatrixXd expected(3, 3);
  expected << 1, 0, 0, 1, 0, 0, 0, 1, 0;
  EXPECT_TRUE(dense.isApprox(expected, 0.0));
  EXPECT_EQ(chain.cost(2), 22.0);
}

TEST(BuildChain, RowsAreStochastic) {
  for (const auto& name : tiny_scenario_names()) {
    const auto inst = tiny_scenario(name);
    const auto chain = build_chain(TruncatedLinear{inst.params}, inst.system);
    EXPECT_EQ(chain.space.size(), 36u);
    const Eigen::VectorXd rows = chain.transition * Eigen::VectorXd::Ones(chain.cost.size());
    for (Eigen::Index i = 0; i < rows.size(); ++i) EXPECT_NEAR(rows(i), 1.0, 1e-10) << name << " row " << i;
  }
}

TEST(BuildChain, StateCountGuard) {
  SystemModel sys;
  sys.links.assign(30, fixed_departures(0, 1));
  sys.mobility.transitions = {RowMatrix::Identity(30, 30)};
  sys.arrival_means.assign(3, 0.5);
  sys.cost = {0.9, 20.0, 10};
  EXPECT_THROW(build_chain(ConstantTheta{}, sys), std::length_error);
}

TEST(BuildChain, EncodeDecodeRoundTrip) {
  const StateSpace sp{3, 2, 2};
  for (std::size_t i = 0; i < sp.size(); ++i) EXPECT_EQ(sp.encode(sp.decode(i)), i);
  EXPECT_EQ(sp.encode({{1, 2}, {0, 0}, {0, 0}}), 5u);
}

TEST(BuildChain, MarginalsMatchLocalMixtures) {
  const auto inst = tiny_instance();
  const auto& sys = inst.system;
  const auto chain = build_chain(TruncatedLinear{inst.params}, sys);
  const auto& sp = chain.space;
  for (std::size_t i = 0; i < sp.size(); ++i) {
    const auto s = sp.decode(i);
    std::vector<double> th{evaluate(TruncatedLinear{inst.params}, 0, s[0]), evaluate(TruncatedLinear{inst.params}, 1, s[1])};
    const auto eta = access_probabilities(th);
    for (std::size_t k = 0; k < 2; ++k) {
      std::vector<double> marginal(3, 0.0);
      for (SparseRowMatrix::InnerIterator it(chain.transition, static_cast<Eigen::Index>(i)); it; ++it)
        marginal[static_cast<std::size_t>(sp.decode(static_cast<std::size_t>(it.col()))[k].queue)] += it.value();
      for (int q = 0; q <= 2; ++q) {
        const auto t = transmit_terms(sys, k, s[k], q);
        EXPECT_NEAR(marginal[q], eta[k] * t.omega1 + (1 - eta[k]) * t.omega2, 1e-12);
      }
    }
  }
}

TEST(BuildChain, LongRunMatchesSimulation) {
  const auto inst = tiny_instance();
  const auto chain = build_chain(TruncatedLinear{inst.params}, inst.system);
  const auto pi = long_run_distribution(chain, inst.s0);
  EXPECT_NEAR(pi.sum(), 1.0, 1e-9);
  // Final states of independent long episodes are i.i.d. draws from the
  // (mixed) chain law.
  const int n = 20000;
  std::vector<double> counts(chain.space.size(), 0.0);
  for (int e = 0; e < n; ++e) {
    auto rng = make_engine(1, "long-run", static_cast<std::uint64_t>(e));
    const auto traj = run_episode(inst.s0, TruncatedLinear{inst.params}, inst.system, 150, rng);
    counts[chain.space.encode(traj.final_state)] += 1.0;
  }
  std::vector<double> probs(pi.data(), pi.data() + pi.size());
  for (std::size_t i = 0; i < probs.size(); ++i)
    EXPECT_NEAR(counts[i], n * probs[i], 3.0 * std::sqrt(n * probs[i] * (1.0 - probs[i])) + 1e-9) << "state " << i;
  EXPECT_TRUE(sacc_test::chi_square(counts, probs, n).passes());
}

TEST(ExactCost, ZeroCostAndHandChain) {
  EnumeratedChain chain;
  chain.space = {1, 3, 0};
  chain.transition.resize(3, 3);
  std::vector<Eigen::Triplet<double>> t{{0, 1, 1.0}, {1, 2, 1.0}, {2, 2, 1.0}};
  chain.transition.setFromTriplets(t.begin(), t.end());
  chain.cost = Eigen::VectorXd::Zero(3);
  EXPECT_EQ(exact_discounted_cost(chain, {{0, 0}}, 0.5, 50), 0.0);
  chain.cost << 1.0, 1.0, 0.0;
  EXPECT_DOUBLE_EQ(exact_discounted_cost(chain, {{0, 0}}, 0.5, 50), 1.5);
}

TEST(ExactCost, HorizonRule) {
  const int h = horizon_for(0.9, 44.0);
  EXPECT_LE(std::pow(0.9, h) * 44.0, 1e-6);
  EXPECT_GT(std::pow(0.9, h - 1) * 44.0, 1e-6);
}

TEST(ExactCost, MatchesSimulationMean) {
  const auto inst = tiny_instance();
  const auto chain = build_chain(TruncatedLinear{inst.params}, inst.system);
  const double exact = exact_discounted_cost(chain, inst.s0, inst.system.cost.gamma, inst.t_ep);
  const auto costs = evaluate_policy(inst.s0, TruncatedLinear{inst.params}, inst.system, inst.t_ep, 5000, 3);
  const auto ms = sacc_test::mean_se(costs);
  EXPECT_NEAR(ms.mean, exact, 3.0 * ms.se);
}

TEST(ExactCost, MonotoneInArrivalRate) {
  for (std::size_t k = 0; k < 2; ++k) {
    double prev = -1.0;
    for (double a : {0.3, 0.6, 0.9}) {
      auto inst = tiny_instance();
      inst.system.arrival_means[k] = a;
      const auto chain = build_chain(TruncatedLinear{inst.params}, inst.system);
      const double v = exact_discounted_cost(chain, inst.s0, 0.9, horizon_for(0.9, 44.0 / 0.1));
      EXPECT_GE(v, prev);
      prev = v;
    }
  }
}

TEST(ExactGradientFd, UnusedCoordinateIsZero) {
  auto inst = tiny_instance();
  inst.system.mobility.transitions = {RowMatrix::Identity(2, 2)};
  inst.s0 = {{0, 1}, {0, 2}};
  const double h = 1e-4 / 63.0;
  EXPECT_EQ(exact_gradient_fd(inst.params, {ParamKind::B, 0, 1}, h, inst.system, inst.s0, 90), 0.0);
  EXPECT_EQ(exact_gradient_fd(inst.params, {ParamKind::Lambda, 1, 1}, h, inst.system, inst.s0, 90), 0.0);
  EXPECT_NE(exact_gradient_fd(inst.params, {ParamKind::B, 0, 0}, h, inst.system, inst.s0, 90), 0.0);
}

TEST(ExactGradientFd, SoleAgentIsFlat) {
  const auto sys = countdown_system();
  PolicyParams p(1, 1, 1.0 / 63.0, 1.0);
  p.b[0] = 0.3;
  p.lambda[0] = 0.1;
  for (auto c : all_coordinates(p)) EXPECT_NEAR(exact_gradient_fd(p, c, 1e-4, sys, {{0, 2}}, 60), 0.0, 1e-9);
}

TEST(ExactGradientFd, RichardsonTrend) {
  const auto inst = tiny_instance();
  for (auto c : all_coordinates(inst.params)) {
    const double h = 2e-2;
    const double g1 = exact_gradient_fd(inst.params, c, h, inst.system, inst.s0, inst.t_ep);
    const double g2 = exact_gradient_fd(inst.params, c, h / 2, inst.system, inst.s0, inst.t_ep);
    const double g4 = exact_gradient_fd(inst.params, c, h / 4, inst.system, inst.s0, inst.t_ep);
    const double d1 = g1 - g2, d2 = g2 - g4;
    // Second-order error: successive differences shrink about fourfold.
    EXPECT_LE(std::abs(d2), 0.35 * std::abs(d1) + 1e-8);
    EXPECT_NEAR(g2 + (g2 - g1) / 3.0, g4, std::abs(d1) * 0.1 + 1e-8);
  }
}

TEST(ExactGradientFd, RefusesKinkCrossing) {
  const auto inst = tiny_instance();
  const auto init = linear_queue_init(2, 2, 1.0 / 63.0, 1.0, 2);
  try {
    exact_gradient_fd(init, {ParamKind::B, 0, 0}, 1e-4 / 63.0, inst.system, inst.s0, 90);
    FAIL() << "expected refusal";
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("queue 0"), std::string::npos);
  }
  auto near_edge = inst.params;
  near_edge.b[0] = 1.0 / 63.0 + 1e-7;
  EXPECT_THROW(exact_gradient_fd(near_edge, {ParamKind::B, 0, 0}, 1e-6, inst.system, inst.s0, 90), std::domain_error);
}

TEST(ExactGradient, AnalyticMatchesFiniteDifferences) {
  for (const auto& name : tiny_scenario_names()) {
    const auto inst = tiny_scenario(name);
    const auto g = exact_gradient(inst.params, inst.system, inst.s0, 1e-10);
    const int horizon = horizon_for(0.9, 44.0 / 0.1, 1e-10);
    for (auto c : all_coordinates(inst.params)) {
      const double fd = exact_gradient_fd(inst.params, c, 1e-5, inst.system, inst.s0, horizon);
      const auto i = inst.params.index(c.agent, c.location);
      const double an = c.kind == ParamKind::B ? g.g_b[i] : g.g_lambda[i];
      EXPECT_NEAR(an, fd, 1e-5 * (1.0 + std::abs(fd))) << name;
    }
  }
}

TEST(EstimatorMean, JointScoreIsUnbiasedAndMarginalIsNot) {
  const auto inst = tiny_instance();
  const double h = 1e-4 / 63.0;
  const auto joint = exact_estimator_mean(inst.params, inst.system, inst.s0, inst.t_ep);
  const auto marginal = exact_estimator_mean(inst.params, inst.system, inst.s0, inst.t_ep, {ScoreModel::PerAgentMarginal});
  double worst_marginal = 0.0;
  for (auto c : all_coordinates(inst.params)) {
    const double fd = exact_gradient_fd(inst.params, c, h, inst.system, inst.s0, inst.t_ep);
    EXPECT_NEAR(grad_component(joint, inst.params, c), fd, 1e-5 * (1.0 + std::abs(fd)));
    worst_marginal = std::max(worst_marginal, std::abs(grad_component(marginal, inst.params, c) - fd) / std::abs(fd));
  }
  EXPECT_GT(worst_marginal, 0.2);
}
