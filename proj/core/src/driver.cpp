#include "ccopf/driver.hpp"

#include <cmath>
#include <limits>

#include "ccopf/errors.hpp"

namespace ccopf {

namespace {

TighteningSet with_inverter_tightenings(const FeederModel& feeder, const ScenarioSet& scenarios, double eps_q) {
  TighteningSet t = TighteningSet::zeros(feeder);
  const InverterTightenings q = inverter_tightenings(feeder, scenarios, eps_q);
  t.q_upper = q.upper;
  t.q_lower = q.lower;
  return t;
}

IterationRecord make_record(int iteration, const TighteningSet& t, const OperatingPoint& p,
                            const EvaluationReport& r) {
  IterationRecord rec;
  rec.iteration = iteration;
  rec.tightenings = t;
  rec.q_setpoints = p.q_setpoints;
  rec.objective = p.objective;
  rec.status = p.status;
  rec.v_upper_max = r.v_upper_max;
  rec.v_lower_max = r.v_lower_max;
  rec.q_upper_max = r.q_upper_max;
  rec.q_lower_max = r.q_lower_max;
  rec.v_max = r.v_max;
  rec.failed_samples = r.failed_samples.size();
  return rec;
}

void check_eps(double eps_v, double eps_q) {
  if (!(eps_v >= 0.0 && eps_v <= 1.0)) throw InputError("eps_v must lie in [0, 1]");
  if (!(eps_q >= 0.0 && eps_q <= 1.0)) throw InputError("eps_q must lie in [0, 1]");
}

}  // namespace

MethodResult run_quantile_method(const Network& net, const ScenarioSet& scenarios, const QuantileLoopConfig& config,
                                 const MethodSettings& settings) {
  check_eps(config.eps_v, config.eps_q);
  if (!(config.tol_upper > 0.0 && config.tol_lower > 0.0)) throw InputError("quantile loop tolerances must be positive");
  if (config.max_iter < 1) throw InputError("quantile loop needs at least one iteration");
  const FeederModel& feeder = net.feeder();

  TighteningSet t = with_inverter_tightenings(feeder, scenarios, config.eps_q);
  MethodResult result;
  result.trace.method = "quantile";
  std::optional<MethodResult> best;
  std::optional<OperatingPoint> prev;

  for (int k = 0; k < config.max_iter; ++k) {
    OperatingPoint point = solve_ccr_opf(net, scenarios, t, prev ? &*prev : nullptr, settings.opf);
    EvaluationReport report = evaluate(net, point, scenarios, settings.evaluation);
    const VoltageTightenings next = voltage_quantile_tightenings(net, point, report, config.eps_v);

    IterationRecord rec = make_record(k, t, point, report);
    const double du = t.v_upper.size() ? (next.upper - t.v_upper).cwiseAbs().maxCoeff() : 0.0;
    const double dl = t.v_lower.size() ? (next.lower - t.v_lower).cwiseAbs().maxCoeff() : 0.0;
    rec.delta_upper = du;
    rec.delta_lower = dl;
    result.trace.records.push_back(rec);

    // Converged tightenings must also deliver the target at sample granularity.
    const double m = static_cast<double>(scenarios.size());
    const bool attained = std::round(report.v_max * m) <= std::ceil(config.eps_v * m - 1e-9);
    const bool done = du <= config.tol_upper && dl <= config.tol_lower && attained;
    const bool better = !best || report.v_max < best->evaluation.v_max ||
                        (report.v_max == best->evaluation.v_max && point.objective < best->point.objective);
    if (done || better) {
      MethodResult cand;
      cand.point = point;
      cand.tightenings = t;
      cand.evaluation = std::move(report);
      if (done) {
        result.point = std::move(cand.point);
        result.tightenings = std::move(cand.tightenings);
        result.evaluation = std::move(cand.evaluation);
        result.converged = true;
        return result;
      }
      best = std::move(cand);
    }
    prev = std::move(point);
    t.v_upper = next.upper;
    t.v_lower = next.lower;
  }

  result.point = std::move(best->point);
  result.tightenings = std::move(best->tightenings);
  result.evaluation = std::move(best->evaluation);
  result.warnings.push_back("quantile loop reached " + std::to_string(config.max_iter) +
                            " iterations without converging; returning the iterate with the smallest voltage "
                            "violation probability");
  return result;
}

SigmaEstimate estimate_sigma(const Network& net, const ScenarioSet& scenarios, double eps_q,
                             const MethodSettings& settings) {
  check_eps(0.0, eps_q);
  const FeederModel& feeder = net.feeder();
  const TighteningSet t = with_inverter_tightenings(feeder, scenarios, eps_q);
  SigmaEstimate est;
  est.baseline = solve_ccr_opf(net, scenarios, t, nullptr, settings.opf);
  est.report = evaluate(net, est.baseline, scenarios, settings.evaluation);
  const auto nc = static_cast<Eigen::Index>(feeder.connections().size());
  est.sigma = Eigen::VectorXd::Zero(nc);
  for (Eigen::Index c = 0; c < nc; ++c)
    est.sigma(c) = est.report.voltage_distribution(static_cast<std::size_t>(c)).stddev();
  return est;
}

TuningBounds init_tuning_bounds(const Network& net, const SigmaEstimate& estimate, double eps_v) {
  if (!(eps_v >= 0.0 && eps_v <= 1.0)) throw InputError("eps_v must lie in [0, 1]");
  const Eigen::VectorXd nominal = estimate.baseline.connection_magnitudes(net);
  double worst = -std::numeric_limits<double>::infinity();
  double sigma_star = 0.0;
  for (Eigen::Index c = 0; c < nominal.size(); ++c) {
    if (!(estimate.sigma(c) > 0.0)) continue;
    const double gap =
        nominal(c) - quantile(estimate.report.voltage_distribution(static_cast<std::size_t>(c)), eps_v);
    if (gap > worst) {
      worst = gap;
      sigma_star = estimate.sigma(c);
    }
  }
  if (!(sigma_star > 0.0))
    throw TuningDegenerateError("every voltage standard deviation is zero; tuning bounds are undefined");
  return {0.0, std::max(0.0, worst) * 2.0 / sigma_star};
}

MethodResult run_tuning_method(const Network& net, const ScenarioSet& scenarios, const TuningLoopConfig& config,
                               const MethodSettings& settings) {
  check_eps(config.eps_v, config.eps_q);
  if (!(config.prob_tol > 0.0 && config.bound_tol > 0.0)) throw InputError("tuning tolerances must be positive");
  if (config.max_iter < 1) throw InputError("tuning loop needs at least one iteration");
  const FeederModel& feeder = net.feeder();

  MethodResult result;
  result.trace.method = "tuning";
  const SigmaEstimate est = estimate_sigma(net, scenarios, config.eps_q, settings);
  TuningBounds bounds{0.0, 1.0};
  try {
    bounds = init_tuning_bounds(net, est, config.eps_v);
  } catch (const TuningDegenerateError& e) {
    result.warnings.push_back(std::string(e.what()) + "; using s in [0, 1]");
  }

  TighteningSet t = with_inverter_tightenings(feeder, scenarios, config.eps_q);
  double s_min = bounds.s_min, s_max = bounds.s_max;
  double s = 0.5 * (s_min + s_max);
  std::optional<OperatingPoint> prev = est.baseline;
  std::optional<MethodResult> best_ok, best_any;

  for (int k = 0; k < config.max_iter; ++k) {
    t.v_upper = s * est.sigma;
    t.v_lower = t.v_upper;

    IterationRecord rec;
    double e_v = 0.0;
    try {
      OperatingPoint point = solve_ccr_opf(net, scenarios, t, prev ? &*prev : nullptr, settings.opf);
      EvaluationReport report = evaluate(net, point, scenarios, settings.evaluation);
      rec = make_record(k, t, point, report);
      e_v = report.v_max;
      const bool ok = e_v <= config.eps_v;
      auto keep = [&](std::optional<MethodResult>& slot, bool by_objective) {
        const bool better = !slot || (by_objective ? point.objective < slot->point.objective
                                                   : e_v < slot->evaluation.v_max ||
                                                         (e_v == slot->evaluation.v_max &&
                                                          point.objective < slot->point.objective));
        if (!better) return;
        MethodResult cand;
        cand.point = point;
        cand.tightenings = t;
        cand.evaluation = report;
        slot = std::move(cand);
      };
      if (ok) keep(best_ok, true);
      keep(best_any, false);
      prev = std::move(point);
    } catch (const InfeasibleError&) {
      // Too tight to solve: treat as overshooting and shrink from above.
      rec.iteration = k;
      rec.tightenings = t;
      rec.infeasible = true;
      e_v = 0.0;
    }
    rec.s = s;
    rec.s_min = s_min;
    rec.s_max = s_max;
    result.trace.records.push_back(rec);

    if (e_v <= config.eps_v)
      s_max = s;
    else
      s_min = s;
    if ((!rec.infeasible && std::abs(e_v - config.eps_v) <= config.prob_tol) || s_max - s_min <= config.bound_tol) {
      result.converged = true;
      break;
    }
    s = 0.5 * (s_min + s_max);
  }

  if (best_ok) {
    result.point = std::move(best_ok->point);
    result.tightenings = std::move(best_ok->tightenings);
    result.evaluation = std::move(best_ok->evaluation);
  } else if (best_any) {
    result.point = std::move(best_any->point);
    result.tightenings = std::move(best_any->tightenings);
    result.evaluation = std::move(best_any->evaluation);
    result.target_missed = true;
    result.warnings.push_back("no tuning iterate met the voltage violation target");
  } else {
    throw InfeasibleError("every tuning iterate was infeasible");
  }
  if (!result.converged)
    result.warnings.push_back("tuning loop reached " + std::to_string(config.max_iter) + " iterations");
  return result;
}

}  // namespace ccopf
