#pragma once

// Small feeders and scenario sets shared by the unit and acceptance tests.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ccopf/feeder.hpp"
#include "ccopf/scenario.hpp"

namespace ccopf::fixture {

inline std::filesystem::path data_dir() { return CCOPF_DATA_DIR; }

inline FeederModel ieee13() { return load_feeder(data_dir() / "ieee13.json"); }

/// Slack plus one single-phase node on phase a behind z = j·x p.u.
inline FeederModel two_bus(double x = 0.1) {
  FeederModel::Spec s;
  s.nodes = {{"1", PhaseMask(true, true, true), 1.0}, {"2", PhaseMask(true, false, false), 1.0}};
  s.slack_id = "1";
  Branch br;
  br.from = 0;
  br.to = 1;
  br.phases = PhaseMask(true, false, false);
  br.series_admittance(0, 0) = 1.0 / Complex(0.0, x);
  s.branches.push_back(br);
  return FeederModel::build(std::move(s));
}

/// Slack, two three-phase nodes, one inverter each (n1.a, n2.b) and an
/// unbalanced background load.
inline const char* kThreeNodeJson = R"({
  "s_base_kva": 1000.0, "v_min": 0.95, "v_max": 1.05, "slack": "s",
  "nodes": [
    {"id": "s", "phases": "abc", "base_kv": 4.16},
    {"id": "n1", "phases": "abc", "base_kv": 4.16},
    {"id": "n2", "phases": "abc", "base_kv": 4.16}
  ],
  "branches": [
    {"from": "s", "to": "n1", "length": 0.6,
     "r_matrix": [[0.3465, 0.156, 0.158], [0.156, 0.3375, 0.1535], [0.158, 0.1535, 0.3414]],
     "x_matrix": [[1.0179, 0.5017, 0.4236], [0.5017, 1.0478, 0.3849], [0.4236, 0.3849, 1.0348]],
     "b_shunt": [[6.2998, -1.9958, -1.2595], [-1.9958, 5.9597, -0.7417], [-1.2595, -0.7417, 5.6386]]},
    {"from": "n1", "to": "n2", "length": 0.4,
     "r_matrix": [[0.7526, 0.158, 0.156], [0.158, 0.7475, 0.1535], [0.156, 0.1535, 0.7436]],
     "x_matrix": [[1.1814, 0.4236, 0.5017], [0.4236, 1.1983, 0.3849], [0.5017, 0.3849, 1.2112]]}
  ],
  "loads": [
    {"house_id": "h1", "node": "n1", "phase": "a", "pf": 0.9},
    {"house_id": "h2", "node": "n2", "phase": "b", "pf": 0.9}
  ],
  "inverters": [
    {"house_id": "h1", "node": "n1", "phase": "a", "s_rating_kva": 120.0},
    {"house_id": "h2", "node": "n2", "phase": "b", "s_rating_kva": 120.0}
  ],
  "fixed_loads": [
    {"node": "n1", "phase": "a", "p_kw": 220.0, "q_kvar": 90.0},
    {"node": "n1", "phase": "b", "p_kw": 80.0, "q_kvar": 30.0},
    {"node": "n2", "phase": "c", "p_kw": 180.0, "q_kvar": 80.0},
    {"node": "n2", "phase": "a", "p_kw": 60.0, "q_kvar": 20.0}
  ]
})";

inline FeederModel three_node() { return parse_feeder(kThreeNodeJson); }

/// Transposed line, identical houses on every phase of both nodes.
inline const char* kBalancedJson = R"({
  "s_base_kva": 1000.0, "v_min": 0.95, "v_max": 1.05, "slack": "s",
  "nodes": [
    {"id": "s", "phases": "abc", "base_kv": 4.16},
    {"id": "n1", "phases": "abc", "base_kv": 4.16},
    {"id": "n2", "phases": "abc", "base_kv": 4.16}
  ],
  "branches": [
    {"from": "s", "to": "n1", "length": 0.5,
     "r_matrix": [[0.35, 0.16, 0.16], [0.16, 0.35, 0.16], [0.16, 0.16, 0.35]],
     "x_matrix": [[1.03, 0.44, 0.44], [0.44, 1.03, 0.44], [0.44, 0.44, 1.03]],
     "b_shunt": [[6.0, -1.3, -1.3], [-1.3, 6.0, -1.3], [-1.3, -1.3, 6.0]]},
    {"from": "n1", "to": "n2", "length": 0.5,
     "r_matrix": [[0.35, 0.16, 0.16], [0.16, 0.35, 0.16], [0.16, 0.16, 0.35]],
     "x_matrix": [[1.03, 0.44, 0.44], [0.44, 1.03, 0.44], [0.44, 0.44, 1.03]],
     "b_shunt": [[6.0, -1.3, -1.3], [-1.3, 6.0, -1.3], [-1.3, -1.3, 6.0]]}
  ],
  "loads": [
    {"house_id": "a1", "node": "n1", "phase": "a"}, {"house_id": "b1", "node": "n1", "phase": "b"},
    {"house_id": "c1", "node": "n1", "phase": "c"}, {"house_id": "a2", "node": "n2", "phase": "a"},
    {"house_id": "b2", "node": "n2", "phase": "b"}, {"house_id": "c2", "node": "n2", "phase": "c"}
  ],
  "inverters": [
    {"house_id": "a1", "node": "n1", "phase": "a", "s_rating_kva": 100.0},
    {"house_id": "b1", "node": "n1", "phase": "b", "s_rating_kva": 100.0},
    {"house_id": "c1", "node": "n1", "phase": "c", "s_rating_kva": 100.0},
    {"house_id": "a2", "node": "n2", "phase": "a", "s_rating_kva": 100.0},
    {"house_id": "b2", "node": "n2", "phase": "b", "s_rating_kva": 100.0},
    {"house_id": "c2", "node": "n2", "phase": "c", "s_rating_kva": 100.0}
  ],
  "fixed_loads": [
    {"node": "n2", "phase": "a", "p_kw": 150.0, "q_kvar": 60.0},
    {"node": "n2", "phase": "b", "p_kw": 150.0, "q_kvar": 60.0},
    {"node": "n2", "phase": "c", "p_kw": 150.0, "q_kvar": 60.0}
  ]
})";

inline FeederModel balanced() { return parse_feeder(kBalancedJson); }

/// Uniform random generation and load in kW, one column per house.
inline ScenarioSet random_scenarios(const std::vector<std::string>& houses, std::size_t m, std::uint64_t seed,
                                    double gen_max = 60.0, double load_max = 30.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ug(0.0, gen_max), ul(0.0, load_max);
  const auto h = static_cast<Eigen::Index>(houses.size());
  Eigen::MatrixXd g(static_cast<Eigen::Index>(m), h), l(static_cast<Eigen::Index>(m), h);
  for (Eigen::Index w = 0; w < g.rows(); ++w)
    for (Eigen::Index k = 0; k < h; ++k) {
      g(w, k) = ug(rng);
      l(w, k) = ul(rng);
    }
  return ScenarioSet(houses, g, l, {}, false);
}

/// Samples identical across the houses of each node (columns grouped by node
/// in threes), so every sample is phase-symmetric.
inline ScenarioSet balanced_scenarios(const std::vector<std::string>& houses, std::size_t m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ug(0.0, 60.0), ul(0.0, 30.0);
  const auto h = static_cast<Eigen::Index>(houses.size());
  Eigen::MatrixXd g(static_cast<Eigen::Index>(m), h), l(static_cast<Eigen::Index>(m), h);
  for (Eigen::Index w = 0; w < g.rows(); ++w)
    for (Eigen::Index k = 0; k < h; k += 3) {
      const double pg = ug(rng), pl = ul(rng);
      for (Eigen::Index j = k; j < k + 3; ++j) {
        g(w, j) = pg;
        l(w, j) = pl;
      }
    }
  return ScenarioSet(houses, g, l, {}, false);
}

/// Scaled synthetic series for the 13-node feeder, matching the experiment
/// defaults (25 days, seed 7, scale 20).
inline RawSeries ieee13_series(const FeederModel& feeder, double scale = 20.0) {
  RawSeries raw = synthesize(feeder.house_ids(), 25, 7);
  for (DaySeries& d : raw.days) {
    d.p_gen *= scale;
    d.p_load *= scale;
  }
  return raw;
}

/// Direct symmetrical components with the textbook 1/3 factor.
struct DirectSequence {
  Complex zero, positive, negative;
};

inline DirectSequence direct_sequence(const Complex& va, const Complex& vb, const Complex& vc) {
  const Complex a = std::polar(1.0, 2.0 * 3.14159265358979323846 / 3.0);
  Eigen::Matrix3cd t;
  t << 1.0, 1.0, 1.0, 1.0, a, a * a, 1.0, a * a, a;
  const Eigen::Vector3cd s = t * Eigen::Vector3cd(va, vb, vc) / 3.0;
  return {s(0), s(1), s(2)};
}

}  // namespace ccopf::fixture
