#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ccopf/feeder.hpp"
#include "ccopf/powerflow.hpp"
#include "ccopf/scenario.hpp"

namespace ccopf {

/// Nonnegative margins subtracted from the nominal limits. Voltage entries
/// follow feeder.connections(), inverter entries feeder.inverters(); all in
/// per-unit.
struct TighteningSet {
  Eigen::VectorXd v_upper;
  Eigen::VectorXd v_lower;
  Eigen::VectorXd q_upper;
  Eigen::VectorXd q_lower;

  static TighteningSet zeros(const FeederModel& feeder);
  /// Replaces negative entries with zero.
  void clamp_nonnegative();
};

/// Inverter reactive limits ±sqrt(|s|² − p̄_G²) in per-unit.
struct ReactiveLimits {
  Eigen::VectorXd upper;
  Eigen::VectorXd lower;
  /// Inverters whose average generation exceeds the rating (limits forced to 0).
  std::vector<std::size_t> saturated;
};

ReactiveLimits nominal_q_limits(const FeederModel& feeder, const ScenarioSet& scenarios);

/// Box on the set-points after tightening. Throws InfeasibleError when an
/// interval is empty.
struct SetpointBox {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};
SetpointBox tightened_q_box(const FeederModel& feeder, const ScenarioSet& scenarios, const TighteningSet& t);

/// Tightened voltage band per connection; throws InfeasibleError when empty.
SetpointBox tightened_v_band(const FeederModel& feeder, const TighteningSet& t);

struct OpfSettings {
  int max_outer_iter = 40;
  double penalty_init = 100.0;
  double penalty_growth = 10.0;
  double stationarity_tol = 1e-6;
  double feasibility_tol = 1e-6;
  int multistart = 1;
  std::uint64_t multistart_seed = 1;
  int max_inner_iter = 400;
  PowerFlowSettings powerflow{1e-10, 50, 4};
};

enum class OpfStatus { Optimal, MaxIterations };

const char* to_string(OpfStatus s);

/// A CCR-OPF solution: inverter set-points and the voltages they produce at
/// the average injections.
struct OperatingPoint {
  Eigen::VectorXd q_setpoints;  // per-unit, one per inverter
  VoltageState voltages;
  Eigen::Vector3d p_slack = Eigen::Vector3d::Zero();
  Eigen::Vector3d q_slack = Eigen::Vector3d::Zero();
  double objective = 0.0;  // Σ VUF² over three-phase nodes
  OpfStatus status = OpfStatus::Optimal;
  int outer_iterations = 0;
  double stationarity = 0.0;
  double feasibility = 0.0;

  /// Voltage magnitudes of feeder.connections().
  Eigen::VectorXd connection_magnitudes(const Network& net) const;
};

/// Minimizes Σ VUF² over the inverter set-points subject to the power flow at
/// average injections, tightened voltage bands and tightened reactive boxes.
/// Voltages are eliminated by an inner power flow; gradients come from the
/// adjoint of the converged Jacobian; voltage bands are handled by an
/// augmented Lagrangian and the reactive boxes by projection.
OperatingPoint solve_ccr_opf(const Network& net, const ScenarioSet& scenarios, const TighteningSet& tightenings,
                             const OperatingPoint* warm_start = nullptr, const OpfSettings& settings = {});

/// Power flow at average injections for given set-points; the reference
/// route used to re-verify solver output.
OperatingPoint operating_point_at(const Network& net, const ScenarioSet& scenarios, const Eigen::VectorXd& q,
                                  const PowerFlowSettings& settings = {1e-10, 50, 4});

}  // namespace ccopf
