// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <vector>

#include "sacc/rng.hpp"

using namespace sacc;

TEST(Rng, SubstreamsAreReproducible) {
  auto a = make_engine(42, "training", 7);
  auto b = make_engine(42, "training", 7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
}

TEST(Rng, LabelsAndIndicesSeparateStreams) {
  EXPECT_NE(derive_seed(42, "training", 0), derive_seed(42, "evaluation", 0));
  EXPECT_NE(derive_seed(42, "training", 0), derive_seed(42, "training", 1));
  EXPECT_NE(derive_seed(42, "training", 0), derive_seed(43, "training", 0));
}

TEST(Rng, Uniform01InHalfOpenUnitInterval) {
  auto rng = make_engine(1, "u");
  for (int i = 0; i < 10000; ++i) {
    const double u = uniform01(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, SampleDiscreteNeverPicksZeroMass) {
  auto rng = make_engine(2, "d");
  const std::array<double, 4> pmf{0.0, 0.5, 0.0, 0.5};
  for (int i = 0; i < 5000; ++i) {
    const auto k = sample_discrete(pmf, rng);
    ASSERT_TRUE(k == 1 || k == 3);
  }
}

TEST(Rng, PoissonMomentsMatch) {
  auto rng = make_engine(3, "poisson");
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double a = sample_poisson(2.5, rng);
    s += a;
    s2 += a * a;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 2.5, 4.0 * std::sqrt(2.5 / n));
  EXPECT_NEAR(var, 2.5, 0.05);
}

TEST(Rng, PoissonZeroMeanAndNegativeMean) {
  auto rng = make_engine(4, "poisson");
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_poisson(0.0, rng), 0);
  EXPECT_THROW(sample_poisson(-1.0, rng), std::domain_error);
}
