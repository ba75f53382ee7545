// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "sacc/policy.hpp"
#include "sacc/rng.hpp"

using namespace sacc;

namespace {

PolicyParams one_cell(double b, double lambda) {
  PolicyParams p(1, 1, 1.0 / 63.0, 1.0);
  p.b[0] = b;
  p.lambda[0] = lambda;
  return p;
}

}  // namespace

TEST(Evaluate, TruncatedLinearInterior) {
  EXPECT_NEAR(evaluate(TruncatedLinear{one_cell(0.2, 0.08)}, 0, {0, 5}), 0.6, 1e-15);
}

TEST(Evaluate, TruncatedLinearClipsAtBounds) {
  EXPECT_EQ(evaluate(TruncatedLinear{one_cell(0.9, 0.05)}, 0, {0, 10}), 1.0);
  EXPECT_EQ(evaluate(TruncatedLinear{one_cell(0.0, 0.0)}, 0, {0, 3}), 1.0 / 63.0);
}

TEST(Evaluate, LinearQueueInitEndpoints) {
  const auto p = linear_queue_init(2, 3, 1.0 / 63.0, 1.0, 10);
  EXPECT_DOUBLE_EQ(p.b[4], 1.0 / 63.0);
  EXPECT_DOUBLE_EQ(evaluate(TruncatedLinear{p}, 1, {2, 10}), 1.0);
  EXPECT_DOUBLE_EQ(evaluate(TruncatedLinear{p}, 1, {2, 0}), 1.0 / 63.0);
}

TEST(Evaluate, Baselines) {
  EXPECT_DOUBLE_EQ(evaluate(ConstantTheta{1.0 / 63.0, 1.0}, 0, {0, 4}), 32.0 / 63.0);
  const FullBufferThreshold fb{1.0 / 63.0, 1.0, 10};
  EXPECT_EQ(evaluate(fb, 0, {0, 10}), 1.0);
  EXPECT_EQ(evaluate(fb, 0, {0, 9}), 1.0 / 63.0);
  const QCsmaLike qc{1.0 / 63.0, 1.0};
  EXPECT_EQ(evaluate(qc, 0, {0, 0}), 1.0 / 63.0);
  EXPECT_EQ(evaluate(qc, 0, {0, 1}), 1.0 / 63.0);
  EXPECT_NEAR(evaluate(qc, 0, {0, 5}), std::log(5.0) / (1.0 + std::log(5.0)), 1e-15);
}

TEST(Evaluate, OutputInRangeAndMonotoneInQueue) {
  auto rng = make_engine(1, "policy");
  for (int trial = 0; trial < 2000; ++trial) {
    const auto p = one_cell(2.0 * uniform01(rng), 0.3 * uniform01(rng));
    double prev = 0.0;
    for (int q = 0; q <= 10; ++q) {
      const double t = evaluate(TruncatedLinear{p}, 0, {0, q});
      ASSERT_GE(t, p.theta_min);
      ASSERT_LE(t, p.theta_max);
      ASSERT_GE(t, prev);
      prev = t;
    }
  }
}

TEST(Sensitivity, InteriorClippedAndEmptyQueue) {
  const auto s = theta_sensitivity(one_cell(0.2, 0.08), 0, {0, 5});
  EXPECT_EQ(s.dtheta_db, 1.0);
  EXPECT_EQ(s.dtheta_dlambda, 5.0);
  const auto c = theta_sensitivity(one_cell(0.9, 0.05), 0, {0, 10});
  EXPECT_EQ(c.dtheta_db, 0.0);
  EXPECT_EQ(c.dtheta_dlambda, 0.0);
  const auto z = theta_sensitivity(one_cell(0.3, 0.1), 0, {0, 0});
  EXPECT_EQ(z.dtheta_db, 1.0);
  EXPECT_EQ(z.dtheta_dlambda, 0.0);
}

TEST(Sensitivity, MatchesFiniteDifferences) {
  auto rng = make_engine(2, "policy");
  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const double b = uniform01(rng), l = 0.2 * uniform01(rng);
    const int q = static_cast<int>(uniform01(rng) * 11);
    const double x = b + l * q;
    if (x < 1.0 / 63.0 + 1e-4 || x > 1.0 - 1e-4) continue;
    const auto s = theta_sensitivity(one_cell(b, l), 0, {0, q});
    const double fd_b = (evaluate(TruncatedLinear{one_cell(b + h, l)}, 0, {0, q}) -
                         evaluate(TruncatedLinear{one_cell(b - h, l)}, 0, {0, q})) / (2 * h);
    const double fd_l = (evaluate(TruncatedLinear{one_cell(b, l + h)}, 0, {0, q}) -
                         evaluate(TruncatedLinear{one_cell(b, l - h)}, 0, {0, q})) / (2 * h);
    EXPECT_NEAR(s.dtheta_db, fd_b, 1e-4);
    EXPECT_NEAR(s.dtheta_dlambda, fd_l, 1e-4);
    ++checked;
  }
  EXPECT_GT(checked, 500);
}

TEST(Params, ValidationRejectsBadValues) {
  auto p = one_cell(0.2, 0.1);
  EXPECT_NO_THROW(p.validate());
  p.b[0] = -0.1;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  auto q = one_cell(0.2, 0.1);
  q.theta_min = 2.0;
  EXPECT_THROW(q.validate(), std::invalid_argument);
}

TEST(Params, JsonRoundTrip) {
  auto p = linear_queue_init(3, 4, 1.0 / 63.0, 1.0, 10);
  p.b[7] = 0.4;
  p.lambda[11] = 0.01;
  const auto j = params_to_json(p);
  EXPECT_EQ(j.at("agents").size(), 3u);
  EXPECT_EQ(params_from_json(j), p);
  auto bad = j;
  bad["agents"][1]["lambda"] = {0.1};
  EXPECT_THROW(params_from_json(bad), std::invalid_argument);
}

TEST(Params, PolicyNames) {
  EXPECT_EQ(policy_name(ConstantTheta{}), "constant");
  EXPECT_EQ(policy_name(QCsmaLike{}), "q_csma_like");
}
