#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ccopf/feeder.hpp"
#include "ccopf/opf.hpp"
#include "ccopf/powerflow.hpp"
#include "ccopf/scenario.hpp"

namespace ccopf {

/// Sorted sample values of one constrained quantity.
class EmpiricalDistribution {
public:
  EmpiricalDistribution() = default;
  /// Sorts the values; throws InputError when empty or non-finite.
  explicit EmpiricalDistribution(std::vector<double> values, std::string label = {});

  std::size_t size() const { return values_.size(); }
  const std::vector<double>& sorted() const { return values_; }
  const std::string& label() const { return label_; }

  double min() const { return values_.front(); }
  double max() const { return values_.back(); }
  /// Population standard deviation (divides by M), two-pass.
  double stddev() const;

private:
  std::vector<double> values_;
  std::string label_;
};

/// Lower order statistic x_(⌈αM⌉); x_(1) for α = 0. Throws InputError for α
/// outside [0, 1] or an empty distribution.
double quantile(const EmpiricalDistribution& dist, double alpha);

/// Per-inverter reactive capability of every sample, sqrt(max(0, |s|² − p²))
/// in per-unit. Rows are samples.
Eigen::MatrixXd sample_q_limits(const FeederModel& feeder, const ScenarioSet& scenarios);

struct InverterTightenings {
  Eigen::VectorXd upper;
  Eigen::VectorXd lower;
};

/// Margins that keep the nominal reactive box inside the ε_q / 1−ε_q quantiles
/// of the sampled capability.
InverterTightenings inverter_tightenings(const FeederModel& feeder, const ScenarioSet& scenarios, double eps_q);

/// One inverter whose set-point was clipped in a sample.
struct CappingEvent {
  std::size_t sample = 0;
  std::size_t inverter = 0;
  double requested = 0.0;  // per-unit
  double applied = 0.0;    // per-unit
  bool saturated = false;  // p_G > |s|: no reactive capability left
};

struct EvaluationOptions {
  bool capping = false;
  /// 0 picks hardware concurrency.
  unsigned threads = 0;
  PowerFlowSettings powerflow{};
  bool keep_capping_log = true;
};

/// Monte Carlo assessment of one operating point over a scenario set.
struct EvaluationReport {
  std::size_t samples = 0;
  bool capping = false;

  // Empirical violation probabilities, count / M.
  Eigen::VectorXd v_upper;  // per connection
  Eigen::VectorXd v_lower;
  Eigen::VectorXd q_upper;  // per inverter
  Eigen::VectorXd q_lower;

  double v_upper_max = 0.0;
  double v_lower_max = 0.0;
  double q_upper_max = 0.0;
  double q_lower_max = 0.0;
  double v_max = 0.0;  // max of the two voltage worst cases

  /// Samples whose power flow failed; counted as voltage violations everywhere.
  std::vector<std::size_t> failed_samples;

  /// |V| per sample (rows) and connection (columns); NaN rows for failures.
  Eigen::MatrixXd magnitudes;
  /// Σ VUF over three-phase nodes per sample (ratio, NaN for failures).
  std::vector<double> vuf_total;
  /// Mean of vuf_total over converged samples.
  double mean_vuf_total = 0.0;

  /// Inverters violating their upper / lower limit, per sample.
  std::vector<std::uint32_t> q_upper_count;
  std::vector<std::uint32_t> q_lower_count;

  std::vector<CappingEvent> capping_events;
  std::vector<SampleTime> times;
  bool time_structured = false;

  /// Sorted magnitudes of one connection over converged samples.
  EmpiricalDistribution voltage_distribution(std::size_t connection) const;
};

EvaluationReport evaluate(const Network& net, const OperatingPoint& point, const ScenarioSet& scenarios,
                          const EvaluationOptions& options = {});

struct VoltageTightenings {
  Eigen::VectorXd upper;
  Eigen::VectorXd lower;
};

/// λ̄_v = max(0, f_v(1−ε_v) − |v|) and λ̲_v = max(0, |v| − f_v(ε_v)) against
/// the operating point's nominal magnitudes.
VoltageTightenings voltage_quantile_tightenings(const Network& net, const OperatingPoint& point,
                                                const EvaluationReport& report, double eps_v);

}  // namespace ccopf
