// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <vector>

#include "sacc/mobility.hpp"
#include "test_support.hpp"

using namespace sacc;

TEST(Grid, DefaultLayout) {
  const SceneConfig scene;
  const auto g = build_grid(scene, GridSpec{});
  ASSERT_EQ(g.size(), 30u);
  EXPECT_EQ(g.points[0], (Point{0.75, 6.75}));
  EXPECT_EQ(g.points[5], (Point{8.25, 6.75}));
  EXPECT_EQ(g.points[29], (Point{8.25, 0.75}));
  for (const auto& p : g.points) EXPECT_TRUE(scene.inside(p));
}

TEST(Grid, BlockerCellsAreDropped) {
  SceneConfig scene;
  scene.blockers = {{{2.25, 2.25}, 0.4}};
  const auto g = build_grid(scene, GridSpec{});
  EXPECT_EQ(g.size(), 29u);
  EXPECT_FALSE(g.index_of_cell(1, 1).has_value());
}

TEST(Grid, RejectsCellsOutsideRoom) {
  const SceneConfig scene;
  EXPECT_THROW(build_grid(scene, GridSpec{7, 5, 1.5}), std::invalid_argument);
  EXPECT_THROW(build_grid(scene, GridSpec{0, 5, 1.5}), std::invalid_argument);
}

TEST(RandomWalk, InteriorCellHasFiveEqualMoves) {
  const auto g = build_grid(SceneConfig{}, GridSpec{});
  const auto m = build_random_walk(g).matrix(0);
  const int i = *g.index_of_cell(2, 2);
  int nonzero = 0;
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    if (m(i, j) > 0.0) {
      ++nonzero;
      EXPECT_DOUBLE_EQ(m(i, j), 0.2);
    }
  EXPECT_EQ(nonzero, 5);
}

TEST(RandomWalk, CornerFoldsMissingMovesIntoStay) {
  const auto g = build_grid(SceneConfig{}, GridSpec{});
  const auto m = build_random_walk(g).matrix(0);
  const int c = *g.index_of_cell(0, 0);
  EXPECT_NEAR(m(c, c), 0.6, 1e-15);
  EXPECT_DOUBLE_EQ(m(c, *g.index_of_cell(1, 0)), 0.2);
  EXPECT_DOUBLE_EQ(m(c, *g.index_of_cell(0, 1)), 0.2);
}

TEST(RandomWalk, RowStochasticAndIrreducible) {
  SceneConfig scene;
  scene.blockers = {{{2.25, 2.25}, 0.4}};
  const auto g = build_grid(scene, GridSpec{});
  const auto model = build_random_walk(g);
  EXPECT_NO_THROW(model.validate());
  for (Eigen::Index i = 0; i < model.matrix(0).rows(); ++i) EXPECT_NEAR(model.matrix(0).row(i).sum(), 1.0, 1e-12);
  EXPECT_TRUE(is_irreducible(model.matrix(0)));
}

TEST(RandomWalk, DisconnectedChainIsReducible) {
  RowMatrix m = RowMatrix::Identity(3, 3);
  EXPECT_FALSE(is_irreducible(m));
}

TEST(Step, IdentityAndPointMassRows) {
  MobilityModel id{{RowMatrix::Identity(4, 4)}};
  RowMatrix pm = RowMatrix::Zero(3, 3);
  pm(0, 1) = pm(1, 1) = pm(2, 1) = 1.0;
  MobilityModel point{{pm}};
  auto rng = make_engine(1, "mobility");
  for (int i = 0; i < 1000; ++i) {
    EXPECT_EQ(step(id, 0, i % 4, rng), i % 4);
    EXPECT_EQ(step(point, 0, i % 3, rng), 1);
  }
}

TEST(Step, FrequenciesMatchRow) {
  const auto g = build_grid(SceneConfig{}, GridSpec{});
  const auto model = build_random_walk(g);
  const int from = *g.index_of_cell(0, 2);
  auto rng = make_engine(2, "mobility");
  const int n = 100000;
  const auto cols = model.matrix(0).cols();
  std::vector<double> counts(static_cast<std::size_t>(cols), 0.0);
  for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(step(model, 0, from, rng))] += 1.0;
  std::vector<double> row(static_cast<std::size_t>(cols));
  for (Eigen::Index j = 0; j < cols; ++j) {
    row[j] = model.matrix(0)(from, j);
    const double sd = std::sqrt(n * row[j] * (1.0 - row[j]));
    EXPECT_NEAR(counts[j], n * row[j], 3.0 * sd + 1e-9) << "target " << j;
  }
  EXPECT_TRUE(sacc_test::chi_square(counts, row, n).passes());
}

TEST(Step, PerAgentMatrices) {
  MobilityModel m{{RowMatrix::Identity(2, 2), RowMatrix::Zero(2, 2)}};
  m.transitions[1] << 0.0, 1.0, 1.0, 0.0;
  auto rng = make_engine(3, "mobility");
  EXPECT_EQ(step(m, 0, 0, rng), 0);
  EXPECT_EQ(step(m, 1, 0, rng), 1);
}

TEST(MobilityJson, RoundTripAndValidation) {
  const auto model = build_random_walk(build_grid(SceneConfig{}, GridSpec{}));
  const auto back = mobility_from_json(mobility_to_json(model));
  ASSERT_EQ(back.transitions.size(), 1u);
  EXPECT_TRUE(back.matrix(0).isApprox(model.matrix(0), 0.0));
  EXPECT_THROW(mobility_from_json({{"matrices", {{{0.5, 0.4}, {0.0, 1.0}}}}}), std::invalid_argument);
  EXPECT_THROW(mobility_from_json({{"matrices", {{{1.0}, {0.0, 1.0}}}}}), std::invalid_argument);
  EXPECT_THROW(mobility_from_json({{"matrices", {{{1.5, -0.5}, {0.0, 1.0}}}}}), std::invalid_argument);
}
