#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "ccopf/feeder.hpp"
#include "ccopf/scenario.hpp"

namespace ccopf {

/// Polar voltages over all 3(n+1) slots. Absent phases hold magnitude 0.
struct VoltageState {
  Eigen::VectorXd magnitude;
  Eigen::VectorXd angle;  // radians

  Complex phasor(std::size_t slot) const {
    return std::polar(magnitude(static_cast<Eigen::Index>(slot)), angle(static_cast<Eigen::Index>(slot)));
  }
};

/// Substation phasors 1∠0°, 1∠−120°, 1∠120°.
double slack_angle(Phase p);

/// Every present phase at magnitude 1 and its slack angle.
VoltageState flat_start(const FeederModel& feeder);

/// Feeder plus its admittance matrix and the slot bookkeeping shared by the
/// mismatch, Jacobian and solver. Immutable; safe to share across threads.
class Network {
public:
  explicit Network(const FeederModel& feeder);

  const FeederModel& feeder() const { return *feeder_; }
  const AdmittanceMatrix& admittance() const { return y_; }

  /// Number of unknown connections (present, non-slack); the state vector
  /// has twice this length: angles first, then magnitudes.
  std::size_t unknowns() const { return unknown_slots_.size(); }
  const std::vector<std::size_t>& unknown_slots() const { return unknown_slots_; }
  const std::vector<std::size_t>& present_slots() const { return present_slots_; }
  const std::vector<std::size_t>& slack_slots() const { return slack_slots_; }

  Eigen::VectorXd pack(const VoltageState& s) const;
  void unpack(const Eigen::VectorXd& x, VoltageState& s) const;

private:
  const FeederModel* feeder_;
  AdmittanceMatrix y_;
  std::vector<std::size_t> unknown_slots_;
  std::vector<std::size_t> present_slots_;
  std::vector<std::size_t> slack_slots_;
};

/// Computed injections P, Q at every slot from the power balance equations.
struct SlotPowers {
  Eigen::VectorXd p;
  Eigen::VectorXd q;
};
SlotPowers injected_power(const Network& net, const VoltageState& state);

/// Specified minus computed injection: P rows then Q rows for each unknown
/// connection (slack rows excluded).
Eigen::VectorXd mismatch(const Network& net, const VoltageState& state, const Injections& injections);

/// d(mismatch)/d(θ, |V|) over the unknown connections.
Eigen::MatrixXd mismatch_jacobian(const Network& net, const VoltageState& state);

struct PowerFlowSettings {
  double tolerance = 1e-8;
  int max_iter = 50;
  int max_halvings = 4;
};

enum class PowerFlowStatus { Converged, NonConvergence, SingularJacobian };

const char* to_string(PowerFlowStatus s);

struct PowerFlowResult {
  VoltageState voltages;
  Eigen::Vector3d p_slack = Eigen::Vector3d::Zero();
  Eigen::Vector3d q_slack = Eigen::Vector3d::Zero();
  int iterations = 0;  // residual evaluations at accepted iterates
  double max_residual = 0.0;
  PowerFlowStatus status = PowerFlowStatus::NonConvergence;
  std::vector<double> residual_trace;

  bool converged() const { return status == PowerFlowStatus::Converged; }
};

/// Newton-Raphson in polar coordinates with step halving on residual growth.
/// Reentrant; never throws on numerical failure, see status.
PowerFlowResult solve_pf(const Network& net, const Injections& injections,
                         const VoltageState* warm_start = nullptr, const PowerFlowSettings& settings = {});

/// Rectangular positive and negative sequence voltages of one node, summed
/// without the 1/3 factor.
struct SequenceVoltages {
  std::size_t node = 0;
  Complex negative;
  Complex positive;
};

SequenceVoltages sequence_voltages(const FeederModel& feeder, const VoltageState& state, std::size_t node);
SequenceVoltages sequence_voltages(const Complex& va, const Complex& vb, const Complex& vc);

/// |v⁻|² / |v⁺|²; 0 when |v⁻| ≤ 4·eps·|v⁺|, the round-off of a balanced triple.
/// Throws DegenerateSequenceError when |v⁺| is zero or at that round-off level.
double vuf_squared(const SequenceVoltages& seq);

/// Σ VUF² over every non-slack three-phase node.
double total_vuf_squared(const FeederModel& feeder, const VoltageState& state);

/// Gradient of total_vuf_squared with respect to the packed state (θ, |V|).
Eigen::VectorXd total_vuf_squared_gradient(const Network& net, const VoltageState& state);

}  // namespace ccopf
