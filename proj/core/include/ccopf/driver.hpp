#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ccopf/chance.hpp"
#include "ccopf/opf.hpp"

namespace ccopf {

/// Shared numerical settings for the iterative methods.
struct MethodSettings {
  OpfSettings opf{};
  EvaluationOptions evaluation{};
};

struct QuantileLoopConfig {
  double eps_v = 0.05;
  double eps_q = 0.05;
  double tol_upper = 1e-4;  // per-unit, on max |Δλ̄_v|
  double tol_lower = 1e-4;  // per-unit, on max |Δλ̲_v|
  int max_iter = 30;
};

struct TuningLoopConfig {
  double eps_v = 0.05;
  double eps_q = 0.05;
  double prob_tol = 0.005;
  double bound_tol = 1e-3;
  int max_iter = 30;
};

struct IterationRecord {
  int iteration = 0;
  TighteningSet tightenings;
  Eigen::VectorXd q_setpoints;
  double objective = 0.0;
  OpfStatus status = OpfStatus::Optimal;
  bool infeasible = false;  // the tightened problem had no solution
  double v_upper_max = 0.0;
  double v_lower_max = 0.0;
  double q_upper_max = 0.0;
  double q_lower_max = 0.0;
  double v_max = 0.0;
  std::size_t failed_samples = 0;
  // Quantile method.
  std::optional<double> delta_upper;
  std::optional<double> delta_lower;
  // Tuning method, values at the start of the iteration.
  std::optional<double> s;
  std::optional<double> s_min;
  std::optional<double> s_max;
};

struct IterationTrace {
  std::string method;
  std::vector<IterationRecord> records;
};

struct MethodResult {
  OperatingPoint point;
  TighteningSet tightenings;
  IterationTrace trace;
  /// Evaluation of `point` on the scenario set the method ran on.
  EvaluationReport evaluation;
  bool converged = false;
  /// Tuning only: no iterate met Ê_v^max ≤ ε_v.
  bool target_missed = false;
  std::vector<std::string> warnings;
};

MethodResult run_quantile_method(const Network& net, const ScenarioSet& scenarios, const QuantileLoopConfig& config,
                                 const MethodSettings& settings = {});

struct SigmaEstimate {
  Eigen::VectorXd sigma;  // per connection
  OperatingPoint baseline;
  EvaluationReport report;
};

/// Baseline solve with λ_v = 0 and the population standard deviation of each
/// connection's voltage samples.
SigmaEstimate estimate_sigma(const Network& net, const ScenarioSet& scenarios, double eps_q,
                             const MethodSettings& settings = {});

struct TuningBounds {
  double s_min = 0.0;
  double s_max = 0.0;
};

/// s_min = 0 and s_max = max_c(|v|⁰ − f_v⁰(ε_v)) · 2/σ at the maximizing
/// connection among those with σ > 0. Throws TuningDegenerateError when every σ
/// is zero.
TuningBounds init_tuning_bounds(const Network& net, const SigmaEstimate& estimate, double eps_v);

MethodResult run_tuning_method(const Network& net, const ScenarioSet& scenarios, const TuningLoopConfig& config,
                               const MethodSettings& settings = {});

}  // namespace ccopf
