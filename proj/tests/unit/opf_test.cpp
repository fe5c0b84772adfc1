#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <string>

#include "ccopf/errors.hpp"
#include "ccopf/opf.hpp"
#include "fixtures.hpp"

using namespace ccopf;

namespace {

struct Case {
  FeederModel feeder = fixture::three_node();
  Network net{feeder};
  ScenarioSet scenarios = fixture::random_scenarios(feeder.house_ids(), 100, 21);
};

bool band_feasible(const Case& c, const OperatingPoint& p, const TighteningSet& t, double tol) {
  const SetpointBox band = tightened_v_band(c.feeder, t);
  const Eigen::VectorXd v = p.connection_magnitudes(c.net);
  return (v.array() >= band.lower.array() - tol).all() && (v.array() <= band.upper.array() + tol).all();
}

}  // namespace

TEST(ReactiveLimits, NominalAndSaturated) {
  const FeederModel f = fixture::three_node();
  Eigen::MatrixXd g(2, 2), l = Eigen::MatrixXd::Zero(2, 2);
  g << 60, 100, 60, 160;  // h2 averages 130 kW on a 120 kVA inverter
  const ScenarioSet s(f.house_ids(), g, l, {}, false);
  const ReactiveLimits lim = nominal_q_limits(f, s);
  EXPECT_NEAR(lim.upper(0), std::sqrt(0.12 * 0.12 - 0.06 * 0.06), 1e-15);
  EXPECT_EQ(lim.lower(0), -lim.upper(0));
  EXPECT_EQ(lim.upper(1), 0.0);
  ASSERT_EQ(lim.saturated.size(), 1u);
  EXPECT_EQ(lim.saturated[0], 1u);
}

TEST(TighteningSet, ZerosAndClamp) {
  const FeederModel f = fixture::three_node();
  TighteningSet t = TighteningSet::zeros(f);
  EXPECT_EQ(t.v_upper.size(), static_cast<Eigen::Index>(f.connections().size()));
  EXPECT_EQ(t.q_lower.size(), 2);
  t.v_lower(0) = -0.5;
  t.q_upper(1) = 0.2;
  t.clamp_nonnegative();
  EXPECT_EQ(t.v_lower(0), 0.0);
  EXPECT_EQ(t.q_upper(1), 0.2);
}

TEST(Boxes, TightenedAndEmpty) {
  const Case c;
  TighteningSet t = TighteningSet::zeros(c.feeder);
  const ReactiveLimits lim = nominal_q_limits(c.feeder, c.scenarios);
  t.q_upper(0) = 0.01;
  t.q_lower(1) = 0.02;
  const SetpointBox box = tightened_q_box(c.feeder, c.scenarios, t);
  EXPECT_DOUBLE_EQ(box.upper(0), lim.upper(0) - 0.01);
  EXPECT_DOUBLE_EQ(box.lower(1), lim.lower(1) + 0.02);
  t.q_upper(0) = 1.0;
  EXPECT_THROW(tightened_q_box(c.feeder, c.scenarios, t), InfeasibleError);

  TighteningSet tv = TighteningSet::zeros(c.feeder);
  tv.v_upper(3) = 0.06;
  tv.v_lower(3) = 0.05;
  EXPECT_THROW(tightened_v_band(c.feeder, tv), InfeasibleError);
}

TEST(Opf, FeasibleAndConsistentWithReferencePowerFlow) {
  const Case c;
  TighteningSet t = TighteningSet::zeros(c.feeder);
  t.v_lower.setConstant(0.015);
  const OperatingPoint p = solve_ccr_opf(c.net, c.scenarios, t);
  EXPECT_EQ(p.status, OpfStatus::Optimal);
  EXPECT_LE(p.feasibility, 1e-6);
  EXPECT_LE(p.stationarity, 1e-6);
  const SetpointBox box = tightened_q_box(c.feeder, c.scenarios, t);
  EXPECT_TRUE((p.q_setpoints.array() >= box.lower.array()).all());
  EXPECT_TRUE((p.q_setpoints.array() <= box.upper.array()).all());
  EXPECT_TRUE(band_feasible(c, p, t, 1e-6));

  const OperatingPoint ref = operating_point_at(c.net, c.scenarios, p.q_setpoints);
  EXPECT_NEAR(ref.objective, p.objective, 1e-12);
  EXPECT_LT((ref.voltages.magnitude - p.voltages.magnitude).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Opf, NoFeasibleGridPointBeatsTheSolver) {
  const Case c;
  const TighteningSet t = TighteningSet::zeros(c.feeder);
  const OperatingPoint p = solve_ccr_opf(c.net, c.scenarios, t);
  const SetpointBox box = tightened_q_box(c.feeder, c.scenarios, t);
  for (int i = 0; i <= 20; ++i)
    for (int k = 0; k <= 20; ++k) {
      const Eigen::Vector2d q(box.lower(0) + (box.upper(0) - box.lower(0)) * i / 20.0,
                              box.lower(1) + (box.upper(1) - box.lower(1)) * k / 20.0);
      const OperatingPoint g = operating_point_at(c.net, c.scenarios, q);
      if (!band_feasible(c, g, t, 0.0)) continue;
      EXPECT_LE(p.objective, g.objective + 1e-10) << q.transpose();
    }
}

TEST(Opf, WarmStartAndMultistartAgree) {
  const Case c;
  const TighteningSet t = TighteningSet::zeros(c.feeder);
  const OperatingPoint cold = solve_ccr_opf(c.net, c.scenarios, t);
  const OperatingPoint warm = solve_ccr_opf(c.net, c.scenarios, t, &cold);
  OpfSettings s;
  s.multistart = 4;
  const OperatingPoint multi = solve_ccr_opf(c.net, c.scenarios, t, nullptr, s);
  EXPECT_NEAR(warm.objective, cold.objective, 1e-10);
  EXPECT_LE(multi.objective, cold.objective + 1e-10);
  EXPECT_LE(warm.outer_iterations, cold.outer_iterations);
}

TEST(Opf, Deterministic) {
  const Case c;
  const TighteningSet t = TighteningSet::zeros(c.feeder);
  const OperatingPoint a = solve_ccr_opf(c.net, c.scenarios, t);
  const OperatingPoint b = solve_ccr_opf(c.net, c.scenarios, t);
  EXPECT_EQ(a.q_setpoints, b.q_setpoints);
  EXPECT_EQ(a.objective, b.objective);
}

TEST(Opf, UnreachableBandIsInfeasible) {
  const Case c;
  TighteningSet t = TighteningSet::zeros(c.feeder);
  // n2.c cannot be lifted above 0.99 with 120 kVA of reactive support.
  t.v_lower.setConstant(0.04);
  try {
    solve_ccr_opf(c.net, c.scenarios, t);
    FAIL() << "expected InfeasibleError";
  } catch (const InfeasibleError& e) {
    EXPECT_NE(std::string(e.what()).find("n2."), std::string::npos) << e.what();
  }
}

TEST(Opf, BalancedFeederHasZeroUnbalance) {
  const FeederModel f = fixture::balanced();
  const Network net(f);
  const ScenarioSet s = fixture::balanced_scenarios(f.house_ids(), 50, 2);
  const OperatingPoint p = solve_ccr_opf(net, s, TighteningSet::zeros(f));
  double total = 0.0;
  for (std::size_t n : f.three_phase_nodes()) total += std::sqrt(vuf_squared(sequence_voltages(f, p.voltages, n)));
  EXPECT_LE(total, 1e-10);
}
