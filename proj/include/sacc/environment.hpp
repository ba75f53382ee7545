// SPDX-License-Identifier: Apache-2.0
//
// Static indoor scene, first-order image-method path enumeration, the
// geometric ULA channel, and location-aided beam alignment over the DFT-like
// codebooks. The output of this header is a per-location LinkStats table that
// the queueing simulator consumes.

#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sacc/rng.hpp"

namespace sacc {

using cd = std::complex<double>;

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
  friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
  friend Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Point, Point) = default;
};

inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double norm(Point a) { return std::hypot(a.x, a.y); }

struct Blocker {
  Point center;
  double radius = 0.5;
};

inline constexpr double kSpeedOfLight = 299792458.0;

/// Thermal noise power over `bandwidth_hz` at -174 dBm/Hz, in watts.
inline double thermal_noise_watts(double bandwidth_hz) {
  const double dbm = -174.0 + 10.0 * std::log10(bandwidth_hz);
  return std::pow(10.0, (dbm - 30.0) / 10.0);
}

struct SceneConfig {
  double room_width = 9.0;
  double room_height = 7.5;
  Point ap_position{4.5, 0.0};
  std::vector<Blocker> blockers{{{1.5, 2.0}, 0.5}, {{4.5, 2.0}, 0.5}, {{7.5, 2.0}, 0.5}};
  double carrier_frequency = 60e9;
  double bandwidth_W = 800e6;
  double noise_power_sigmaN2 = thermal_noise_watts(800e6);
  double tx_power_P_UL = 1.0;
  int n_tx_antennas = 64;
  int n_rx_antennas = 64;
  double reflection_loss_dB = 10.0;
  double slot_duration_T = 3.008e-3;
  double packet_bits_Rpac = 1e6;

  bool inside(Point p) const {
    return p.x >= 0.0 && p.x <= room_width && p.y >= 0.0 && p.y <= room_height;
  }

  void validate() const {
    if (!(room_width > 0.0) || !(room_height > 0.0)) throw std::invalid_argument("scene: room dimensions must be > 0");
    if (!inside(ap_position)) throw std::invalid_argument("scene: ap_position outside room");
    for (const auto& b : blockers) {
      if (!(b.radius > 0.0)) throw std::invalid_argument("scene: blocker radius must be > 0");
      if (!inside(b.center)) throw std::invalid_argument("scene: blocker center outside room");
    }
    if (n_tx_antennas < 1 || n_rx_antennas < 1) throw std::invalid_argument("scene: antenna counts must be >= 1");
    if (!(tx_power_P_UL > 0.0) || !(noise_power_sigmaN2 > 0.0))
      throw std::invalid_argument("scene: tx_power_P_UL and noise_power_sigmaN2 must be > 0");
    if (!(carrier_frequency > 0.0) || !(bandwidth_W > 0.0) || !(slot_duration_T > 0.0) || !(packet_bits_Rpac > 0.0))
      throw std::invalid_argument("scene: carrier_frequency, bandwidth_W, slot_duration_T, packet_bits_Rpac must be > 0");
  }
};

enum class PathKind { LoS, WallReflection };

struct Path {
  double aoa_phi = 0.0;   // at the AP, from its broadside (+y)
  double aod_theta = 0.0; // at the agent, from its broadside (towards the AP)
  double avg_power_gain_sigma2 = 0.0;
  PathKind kind = PathKind::LoS;
  double length = 0.0;
};

struct PathSet {
  int location_index = -1;
  std::vector<Path> paths;

  bool has_los() const {
    return std::any_of(paths.begin(), paths.end(), [](const Path& p) { return p.kind == PathKind::LoS; });
  }
  double total_power() const {
    double s = 0.0;
    for (const auto& p : paths) s += p.avg_power_gain_sigma2;
    return s;
  }
};

struct BeamPair {
  int p = 1;  // precoder (agent), 1-based
  int q = 1;  // combiner (AP), 1-based
  friend bool operator==(BeamPair, BeamPair) = default;
};

struct LinkStats {
  int location_index = -1;
  BeamPair beam;
  double expected_rate_bits = 0.0;
  std::vector<double> departure_pmf{1.0};
  bool has_los = false;

  int d_max() const { return static_cast<int>(departure_pmf.size()) - 1; }
  double mean_departures() const {
    double m = 0.0;
    for (std::size_t d = 0; d < departure_pmf.size(); ++d) m += static_cast<double>(d) * departure_pmf[d];
    return m;
  }
};

namespace detail {

inline double segment_point_distance(Point a, Point b, Point c) {
  const Point ab = b - a;
  const double len2 = dot(ab, ab);
  if (len2 == 0.0) return norm(c - a);
  const double t = std::clamp(dot(c - a, ab) / len2, 0.0, 1.0);
  return norm(c - (a + t * ab));
}

inline bool segment_blocked(const SceneConfig& scene, Point a, Point b) {
  for (const auto& bl : scene.blockers)
    if (segment_point_distance(a, b, bl.center) < bl.radius) return true;
  return false;
}

/// Angle of direction `d` measured from `broadside`, positive towards the
/// clockwise side, wrapped to (-pi, pi].
inline double angle_from_broadside(Point d, Point broadside) {
  double a = std::atan2(d.x, d.y) - std::atan2(broadside.x, broadside.y);
  while (a > std::numbers::pi) a -= 2.0 * std::numbers::pi;
  while (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

inline double free_space_gain(double wavelength, double distance) {
  const double g = wavelength / (4.0 * std::numbers::pi * distance);
  return g * g;
}

}  // namespace detail

/// LoS path plus one specular reflection per wall, each kept only when no
/// blocker disk cuts the (sub-)segments.
inline PathSet enumerate_paths(const SceneConfig& scene, Point location, int location_index = -1) {
  if (!scene.inside(location)) throw std::domain_error("enumerate_paths: location outside room");
  if (location == scene.ap_position) throw std::domain_error("enumerate_paths: location coincides with AP");

  const Point ap = scene.ap_position;
  const Point to_ap = ap - location;
  const Point ap_broadside{0.0, 1.0};
  const double wavelength = kSpeedOfLight / scene.carrier_frequency;
  const double refl = std::pow(10.0, -scene.reflection_loss_dB / 10.0);

  PathSet out;
  out.location_index = location_index;

  if (!detail::segment_blocked(scene, location, ap)) {
    const double d = norm(to_ap);
    out.paths.push_back({detail::angle_from_broadside(location - ap, ap_broadside),
                         0.0, detail::free_space_gain(wavelength, d), PathKind::LoS, d});
  }

  // Walls: x = 0, x = W, y = 0, y = H. Mirror the agent, intersect with the wall.
  struct Wall {
    bool vertical;
    double coord;
  };
  const std::array<Wall, 4> walls{{{true, 0.0}, {true, scene.room_width}, {false, 0.0}, {false, scene.room_height}}};
  constexpr double eps = 1e-9;
  for (const auto& w : walls) {
    const Point image = w.vertical ? Point{2.0 * w.coord - location.x, location.y}
                                   : Point{location.x, 2.0 * w.coord - location.y};
    const Point dir = ap - image;
    const double denom = w.vertical ? dir.x : dir.y;
    if (std::abs(denom) < eps) continue;
    const double t = w.vertical ? (w.coord - image.x) / denom : (w.coord - image.y) / denom;
    if (t <= eps || t >= 1.0 - eps) continue;
    const Point hit = image + t * dir;
    const bool on_wall = w.vertical ? (hit.y >= 0.0 && hit.y <= scene.room_height)
                                    : (hit.x >= 0.0 && hit.x <= scene.room_width);
    if (!on_wall) continue;
    // Grazing reflections off the wall the AP or agent sits on are not paths.
    if (norm(hit - ap) < eps || norm(hit - location) < eps) continue;
    if (detail::segment_blocked(scene, location, hit) || detail::segment_blocked(scene, hit, ap)) continue;
    const double d = norm(dir);
    out.paths.push_back({detail::angle_from_broadside(hit - ap, ap_broadside),
                         detail::angle_from_broadside(hit - location, to_ap),
                         detail::free_space_gain(wavelength, d) * refl, PathKind::WallReflection, d});
  }
  return out;
}

/// Normalized half-wavelength ULA steering vector.
inline Eigen::VectorXcd array_response(double angle, int n) {
  if (n < 1) throw std::domain_error("array_response: n must be >= 1");
  Eigen::VectorXcd a(n);
  const double s = std::sin(angle);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (int m = 0; m < n; ++m) a(m) = std::polar(scale, -std::numbers::pi * m * s);
  return a;
}

inline std::vector<double> codebook_angles(int n) {
  if (n < 1) throw std::domain_error("codebook_angles: n must be >= 1");
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int p = 1; p <= n; ++p) out[p - 1] = std::asin(2.0 * (p - 1) / n - 1.0);
  return out;
}

/// One draw of the N_R x N_T channel matrix with CN(0, sigma_i^2) path gains.
inline Eigen::MatrixXcd sample_channel(const PathSet& paths, int n_rx, int n_tx, Engine& rng) {
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(n_rx, n_tx);
  ComplexNormal cn;
  const double scale = std::sqrt(static_cast<double>(n_rx) * n_tx);
  for (const auto& p : paths.paths) {
    const cd alpha = std::sqrt(p.avg_power_gain_sigma2) * cn.operator()<cd>(rng);
    h += scale * alpha * array_response(p.aoa_phi, n_rx) * array_response(p.aod_theta, n_tx).adjoint();
  }
  return h;
}

inline double shannon_bits(const SceneConfig& scene, double snr) {
  return scene.slot_duration_T * scene.bandwidth_W * std::log2(1.0 + snr);
}

inline int departures_for_rate(const SceneConfig& scene, double rate_bits) {
  return static_cast<int>(std::floor(rate_bits / scene.packet_bits_Rpac));
}

/// Fixed-rate stand-in for the channel: every transmission from this location
/// carries exactly floor(rate_bits / R_pac) packets.
inline LinkStats deterministic_link(const SceneConfig& scene, int location_index, double rate_bits) {
  LinkStats ls;
  ls.location_index = location_index;
  ls.expected_rate_bits = rate_bits;
  const int d = departures_for_rate(scene, rate_bits);
  ls.departure_pmf.assign(static_cast<std::size_t>(d) + 1, 0.0);
  ls.departure_pmf[d] = 1.0;
  return ls;
}

inline LinkStats fixed_departures(int location_index, int departures) {
  LinkStats ls;
  ls.location_index = location_index;
  ls.departure_pmf.assign(static_cast<std::size_t>(departures) + 1, 0.0);
  ls.departure_pmf[departures] = 1.0;
  return ls;
}

/// Location-aided beam alignment. Every codebook pair is scored on the same
/// n_samples channel draws; the pair with the largest mean log-rate wins,
/// ties going to the lexicographically smallest (p, q).
///
/// w^H H f is evaluated per path as sqrt(N_T N_R) sum_i alpha_i (w^H a_R)(a_T^H f),
/// which is algebraically the same as forming H from sample_channel.
inline LinkStats align_beams(const SceneConfig& scene, const PathSet& paths, int n_samples, Engine& rng) {
  if (n_samples < 1) throw std::domain_error("align_beams: n_samples must be >= 1");
  const int nt = scene.n_tx_antennas;
  const int nr = scene.n_rx_antennas;
  const auto np = static_cast<int>(paths.paths.size());

  LinkStats out;
  out.location_index = paths.location_index;
  out.has_los = paths.has_los();
  if (np == 0) return out;

  const auto tx_angles = codebook_angles(nt);
  const auto rx_angles = codebook_angles(nr);
  // rx_resp(q, i) = w_q^H a_R(phi_i); tx_resp(p, i) = a_T(theta_i)^H f_p
  Eigen::MatrixXcd rx_resp(nr, np), tx_resp(nt, np);
  for (int i = 0; i < np; ++i) {
    const auto ar = array_response(paths.paths[i].aoa_phi, nr);
    const auto at = array_response(paths.paths[i].aod_theta, nt);
    for (int q = 0; q < nr; ++q) rx_resp(q, i) = array_response(rx_angles[q], nr).dot(ar);
    for (int p = 0; p < nt; ++p) tx_resp(p, i) = at.dot(array_response(tx_angles[p], nt));
  }

  Eigen::MatrixXcd alpha(n_samples, np);
  ComplexNormal cn;
  for (int n = 0; n < n_samples; ++n)
    for (int i = 0; i < np; ++i)
      alpha(n, i) = std::sqrt(paths.paths[i].avg_power_gain_sigma2) * cn.operator()<cd>(rng);

  const double snr_scale = scene.tx_power_P_UL * nt * nr / scene.noise_power_sigmaN2;
  // mean_log(q, p): accumulated log2(1 + P Gamma) per pair.
  Eigen::MatrixXd mean_log = Eigen::MatrixXd::Zero(nr, nt);
  Eigen::VectorXcd weighted(np);
  for (int n = 0; n < n_samples; ++n) {
    for (int p = 0; p < nt; ++p) {
      for (int i = 0; i < np; ++i) weighted(i) = alpha(n, i) * tx_resp(p, i);
      const Eigen::VectorXcd s = rx_resp * weighted;
      for (int q = 0; q < nr; ++q) mean_log(q, p) += std::log2(1.0 + snr_scale * std::norm(s(q)));
    }
  }

  int best_p = 0, best_q = 0;
  double best = -1.0;
  for (int p = 0; p < nt; ++p)
    for (int q = 0; q < nr; ++q)
      if (mean_log(q, p) > best) {
        best = mean_log(q, p);
        best_p = p;
        best_q = q;
      }

  out.beam = {best_p + 1, best_q + 1};
  out.expected_rate_bits = scene.slot_duration_T * scene.bandwidth_W * best / n_samples;

  std::vector<int> counts;
  for (int n = 0; n < n_samples; ++n) {
    cd s = 0.0;
    for (int i = 0; i < np; ++i) s += rx_resp(best_q, i) * alpha(n, i) * tx_resp(best_p, i);
    const int d = departures_for_rate(scene, shannon_bits(scene, snr_scale * std::norm(s)));
    if (static_cast<int>(counts.size()) <= d) counts.resize(static_cast<std::size_t>(d) + 1, 0);
    ++counts[d];
  }
  out.departure_pmf.assign(counts.size(), 0.0);
  for (std::size_t d = 0; d < counts.size(); ++d) out.departure_pmf[d] = static_cast<double>(counts[d]) / n_samples;
  return out;
}

/// Beam alignment for every location, each with its own substream so the
/// table does not depend on evaluation order.
inline std::vector<LinkStats> precompute_link_stats(const SceneConfig& scene, std::span<const Point> locations,
                                                    int n_samples, std::uint64_t seed) {
  std::vector<LinkStats> out;
  out.reserve(locations.size());
  for (std::size_t i = 0; i < locations.size(); ++i) {
    auto rng = make_engine(seed, "environment-mc", i);
    const auto paths = enumerate_paths(scene, locations[i], static_cast<int>(i));
    out.push_back(align_beams(scene, paths, n_samples, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline SceneConfig scene_from_json(const nlohmann::json& j) {
  SceneConfig s;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("room_width", s.room_width);
  get("room_height", s.room_height);
  if (j.contains("ap_position")) {
    const auto& a = j.at("ap_position");
    s.ap_position = {a.at(0).get<double>(), a.at(1).get<double>()};
  }
  if (j.contains("blockers")) {
    s.blockers.clear();
    for (const auto& b : j.at("blockers"))
      s.blockers.push_back({{b.at("center").at(0).get<double>(), b.at("center").at(1).get<double>()},
                            b.at("radius").get<double>()});
  }
  get("carrier_frequency", s.carrier_frequency);
  get("bandwidth_W", s.bandwidth_W);
  if (j.contains("noise_power_sigmaN2")) {
    s.noise_power_sigmaN2 = j.at("noise_power_sigmaN2").get<double>();
  } else {
    double nf_db = 0.0;
    if (j.contains("noise_figure_dB")) nf_db = j.at("noise_figure_dB").get<double>();
    s.noise_power_sigmaN2 = thermal_noise_watts(s.bandwidth_W) * std::pow(10.0, nf_db / 10.0);
  }
  get("tx_power_P_UL", s.tx_power_P_UL);
  get("n_tx_antennas", s.n_tx_antennas);
  get("n_rx_antennas", s.n_rx_antennas);
  get("reflection_loss_dB", s.reflection_loss_dB);
  get("slot_duration_T", s.slot_duration_T);
  get("packet_bits_Rpac", s.packet_bits_Rpac);
  s.validate();
  return s;
}

inline nlohmann::json scene_to_json(const SceneConfig& s) {
  nlohmann::json blockers = nlohmann::json::array();
  for (const auto& b : s.blockers) blockers.push_back({{"center", {b.center.x, b.center.y}}, {"radius", b.radius}});
  return {{"room_width", s.room_width},
          {"room_height", s.room_height},
          {"ap_position", {s.ap_position.x, s.ap_position.y}},
          {"blockers", blockers},
          {"carrier_frequency", s.carrier_frequency},
          {"bandwidth_W", s.bandwidth_W},
          {"noise_power_sigmaN2", s.noise_power_sigmaN2},
          {"tx_power_P_UL", s.tx_power_P_UL},
          {"n_tx_antennas", s.n_tx_antennas},
          {"n_rx_antennas", s.n_rx_antennas},
          {"reflection_loss_dB", s.reflection_loss_dB},
          {"slot_duration_T", s.slot_duration_T},
          {"packet_bits_Rpac", s.packet_bits_Rpac}};
}

inline constexpr int kLinkStatsVersion = 1;

inline nlohmann::json link_stats_to_json(std::span<const LinkStats> stats) {
  nlohmann::json locs = nlohmann::json::array();
  for (const auto& s : stats)
    locs.push_back({{"index", s.location_index},
                    {"precoder_p", s.beam.p},
                    {"combiner_q", s.beam.q},
                    {"expected_rate_bits", s.expected_rate_bits},
                    {"has_los", s.has_los},
                    {"departure_pmf", s.departure_pmf}});
  return {{"format", "sacc.link_stats"}, {"version", kLinkStatsVersion}, {"locations", locs}};
}

inline std::vector<LinkStats> link_stats_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string{}) != "sacc.link_stats")
    throw std::invalid_argument("link stats: missing or wrong 'format' tag");
  if (j.at("version").get<int>() != kLinkStatsVersion)
    throw std::invalid_argument("link stats: unsupported version " + j.at("version").dump());
  std::vector<LinkStats> out;
  for (const auto& e : j.at("locations")) {
    LinkStats s;
    s.location_index = e.at("index").get<int>();
    s.beam = {e.at("precoder_p").get<int>(), e.at("combiner_q").get<int>()};
    s.expected_rate_bits = e.at("expected_rate_bits").get<double>();
    s.has_los = e.value("has_los", false);
    s.departure_pmf = e.at("departure_pmf").get<std::vector<double>>();
    double total = 0.0;
    for (double p : s.departure_pmf) {
      if (p < 0.0) throw std::invalid_argument("link stats: negative departure probability");
      total += p;
    }
    if (s.departure_pmf.empty() || std::abs(total - 1.0) > 1e-9)
      throw std::invalid_argument("link stats: departure_pmf must sum to 1");
    out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.location_index < b.location_index; });
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i].location_index != static_cast<int>(i))
      throw std::invalid_argument("link stats: location indices must be 0..n-1");
  return out;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return nlohmann::json::parse(in);
}

}  // namespace sacc
