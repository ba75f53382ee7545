// SPDX-License-Identifier: Apache-2.0
//
// Discrete location grid and per-agent Markov mobility.

#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "sacc/environment.hpp"
#include "sacc/rng.hpp"

namespace sacc {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct GridSpec {
  int n_cols = 6;
  int n_rows = 5;
  double cell_size = 1.5;
};

/// Cell-centre location points. Cells whose centre falls inside a blocker are
/// dropped, so `points.size()` can be smaller than n_cols * n_rows.
///
/// Points are ordered row by row starting from the row farthest from the AP
/// wall (largest y), left to right within a row.
struct LocationGrid {
  std::vector<Point> points;
  std::vector<std::pair<int, int>> cells;  // (col, row) of each point, row 0 nearest y = 0
  int n_cols = 0;
  int n_rows = 0;
  double cell_size = 0.0;

  std::size_t size() const { return points.size(); }

  std::optional<int> index_of_cell(int col, int row) const {
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (cells[i].first == col && cells[i].second == row) return static_cast<int>(i);
    return std::nullopt;
  }
};

inline LocationGrid build_grid(const SceneConfig& scene, const GridSpec& spec) {
  if (spec.n_cols < 1 || spec.n_rows < 1 || !(spec.cell_size > 0.0))
    throw std::invalid_argument("grid: n_cols, n_rows must be >= 1 and cell_size > 0");
  LocationGrid g;
  g.n_cols = spec.n_cols;
  g.n_rows = spec.n_rows;
  g.cell_size = spec.cell_size;
  for (int row = spec.n_rows - 1; row >= 0; --row) {
    for (int col = 0; col < spec.n_cols; ++col) {
      const Point p{(col + 0.5) * spec.cell_size, (row + 0.5) * spec.cell_size};
      if (!scene.inside(p)) throw std::invalid_argument("grid: cell centre outside room");
      bool in_blocker = false;
      for (const auto& b : scene.blockers)
        if (norm(p - b.center) < b.radius) in_blocker = true;
      if (in_blocker || p == scene.ap_position) continue;
      g.points.push_back(p);
      g.cells.emplace_back(col, row);
    }
  }
  if (g.points.empty()) throw std::invalid_argument("grid: no valid cells");
  return g;
}

struct MobilityModel {
  /// One matrix shared by all agents, or one per agent.
  std::vector<RowMatrix> transitions;

  const RowMatrix& matrix(std::size_t agent) const {
    return transitions.size() == 1 ? transitions.front() : transitions.at(agent);
  }
  std::size_t n_locations() const { return static_cast<std::size_t>(transitions.front().rows()); }

  void validate() const {
    if (transitions.empty()) throw std::invalid_argument("mobility: no transition matrices");
    const auto n = transitions.front().rows();
    for (const auto& m : transitions) {
      if (m.rows() != n || m.cols() != n) throw std::invalid_argument("mobility: matrices must be square and equal-sized");
      for (Eigen::Index i = 0; i < n; ++i) {
        double s = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
          if (!(m(i, j) >= 0.0 && m(i, j) <= 1.0)) throw std::invalid_argument("mobility: entries must lie in [0, 1]");
          s += m(i, j);
        }
        if (std::abs(s - 1.0) > 1e-12) throw std::invalid_argument("mobility: row " + std::to_string(i) + " does not sum to 1");
      }
    }
  }
};

/// Stay or move to one of four neighbours, 1/5 each; the mass of any missing
/// neighbour (outside the grid or a blocker cell) stays put.
inline MobilityModel build_random_walk(const LocationGrid& grid) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  RowMatrix m = RowMatrix::Zero(n, n);
  constexpr int dc[4] = {0, 0, 1, -1};
  constexpr int dr[4] = {1, -1, 0, 0};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [col, row] = grid.cells[static_cast<std::size_t>(i)];
    m(i, i) += 0.2;
    for (int k = 0; k < 4; ++k) {
      const auto j = grid.index_of_cell(col + dc[k], row + dr[k]);
      if (j) m(i, *j) += 0.2;
      else m(i, i) += 0.2;
    }
  }
  return MobilityModel{{std::move(m)}};
}

inline int step(const MobilityModel& model, std::size_t agent, int current, Engine& rng) {
  const auto& m = model.matrix(agent);
  const auto row = m.row(current);
  return static_cast<int>(sample_discrete(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())), rng));
}

/// True when every location reaches every other one under `m`.
inline bool is_irreducible(const RowMatrix& m) {
  const auto n = m.rows();
  for (Eigen::Index s = 0; s < n; ++s) {
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    std::queue<Eigen::Index> frontier;
    frontier.push(s);
    seen[s] = true;
    Eigen::Index count = 1;
    while (!frontier.empty()) {
      const auto u = frontier.front();
      frontier.pop();
      for (Eigen::Index v = 0; v < n; ++v)
        if (m(u, v) > 0.0 && !seen[v]) {
          seen[v] = true;
          ++count;
          frontier.push(v);
        }
    }
    if (count != n) return false;
  }
  return true;
}

/// {"matrices": [M_1, ...]} with each M row-major nested arrays. A single
/// matrix is shared by every agent.
inline MobilityModel mobility_from_json(const nlohmann::json& j) {
  MobilityModel model;
  for (const auto& mj : j.at("matrices")) {
    const auto rows = mj.get<std::vector<std::vector<double>>>();
    const auto n = static_cast<Eigen::Index>(rows.size());
    RowMatrix m(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (static_cast<Eigen::Index>(rows[i].size()) != n) throw std::invalid_argument("mobility: matrix not square");
      for (Eigen::Index c = 0; c < n; ++c) m(i, c) = rows[i][c];
    }
    model.transitions.push_back(std::move(m));
  }
  model.validate();
  return model;
}

inline nlohmann::json mobility_to_json(const MobilityModel& model) {
  nlohmann::json mats = nlohmann::json::array();
  for (const auto& m : model.transitions) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      std::vector<double> r(m.row(i).data(), m.row(i).data() + m.cols());
      rows.push_back(r);
    }
    mats.push_back(rows);
  }
  return {{"matrices", mats}};
}

}  // namespace sacc
