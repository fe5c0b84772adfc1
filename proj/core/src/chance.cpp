#include "ccopf/chance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "ccopf/errors.hpp"

namespace ccopf {

EmpiricalDistribution::EmpiricalDistribution(std::vector<double> values, std::string label)
    : values_(std::move(values)), label_(std::move(label)) {
  if (values_.empty()) throw InputError("empirical distribution needs at least one sample");
  for (double v : values_)
    if (!std::isfinite(v)) throw InputError("empirical distribution has a non-finite sample");
  std::sort(values_.begin(), values_.end());
}

double EmpiricalDistribution::stddev() const {
  // The rounded mean of identical values can miss them by an ulp.
  if (min() == max()) return 0.0;
  const double n = static_cast<double>(values_.size());
  double mean = 0.0;
  for (double v : values_) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : values_) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / n);
}

double quantile(const EmpiricalDistribution& dist, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("quantile level must lie in [0, 1]");
  const std::size_t m = dist.size();
  if (m == 0) throw InputError("quantile of an empty distribution");
  auto k = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(m)));
  k = std::clamp<std::size_t>(k, 1, m);
  return dist.sorted()[k - 1];
}

Eigen::MatrixXd sample_q_limits(const FeederModel& feeder, const ScenarioSet& scenarios) {
  const auto& invs = feeder.inverters();
  const auto m = static_cast<Eigen::Index>(scenarios.size());
  Eigen::MatrixXd lim(m, static_cast<Eigen::Index>(invs.size()));
  for (std::size_t k = 0; k < invs.size(); ++k) {
    const double s = invs[k].rating_kva / feeder.s_base_kva();
    const auto col = scenarios.p_gen().col(static_cast<Eigen::Index>(invs[k].house));
    for (Eigen::Index w = 0; w < m; ++w) {
      const double p = col(w) / feeder.s_base_kva();
      lim(w, static_cast<Eigen::Index>(k)) = std::sqrt(std::max(0.0, s * s - p * p));
    }
  }
  return lim;
}

InverterTightenings inverter_tightenings(const FeederModel& feeder, const ScenarioSet& scenarios, double eps_q) {
  if (!(eps_q >= 0.0 && eps_q <= 1.0)) throw InputError("eps_q must lie in [0, 1]");
  const ReactiveLimits nominal = nominal_q_limits(feeder, scenarios);
  const Eigen::MatrixXd lim = sample_q_limits(feeder, scenarios);
  const auto n = lim.cols();
  InverterTightenings t{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    std::vector<double> upper(lim.col(k).data(), lim.col(k).data() + lim.rows());
    std::vector<double> lower(upper.size());
    std::transform(upper.begin(), upper.end(), lower.begin(), [](double v) { return -v; });
    const EmpiricalDistribution f_up(std::move(upper));
    const EmpiricalDistribution f_lo(std::move(lower));
    t.upper(k) = std::max(0.0, nominal.upper(k) - quantile(f_up, eps_q));
    t.lower(k) = std::max(0.0, quantile(f_lo, 1.0 - eps_q) - nominal.lower(k));
  }
  return t;
}

EmpiricalDistribution EvaluationReport::voltage_distribution(std::size_t connection) const {
  const auto c = static_cast<Eigen::Index>(connection);
  std::vector<double> v;
  v.reserve(samples);
  for (Eigen::Index w = 0; w < magnitudes.rows(); ++w)
    if (std::isfinite(magnitudes(w, c))) v.push_back(magnitudes(w, c));
  if (v.empty()) throw SolverError("no converged samples to form a voltage distribution");
  return EmpiricalDistribution(std::move(v));
}

namespace {

struct SampleOutcome {
  bool failed = false;
  double vuf_total = 0.0;
  std::vector<std::uint8_t> q_up, q_lo;
  std::vector<CappingEvent> events;
};

unsigned worker_count(unsigned requested, std::size_t work) {
  unsigned n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(work, 1)));
}

}  // namespace

EvaluationReport evaluate(const Network& net, const OperatingPoint& point, const ScenarioSet& scenarios,
                          const EvaluationOptions& options) {
  const FeederModel& feeder = net.feeder();
  const std::size_t m = scenarios.size();
  const std::size_t ni = feeder.inverters().size();
  const auto nc = static_cast<Eigen::Index>(feeder.connections().size());
  if (m == 0) throw InputError("cannot evaluate on an empty scenario set");
  if (point.q_setpoints.size() != static_cast<Eigen::Index>(ni))
    throw InputError("operating point does not carry a set-point for every inverter");
  if (scenarios.house_count() != feeder.house_ids().size())
    throw InputError("scenario houses do not match the feeder");

  const Eigen::MatrixXd qlim = sample_q_limits(feeder, scenarios);
  EvaluationReport rep;
  rep.samples = m;
  rep.capping = options.capping;
  rep.times = scenarios.times();
  rep.time_structured = scenarios.time_structured();
  rep.magnitudes = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(m), nc, std::numeric_limits<double>::quiet_NaN());
  std::vector<SampleOutcome> outcomes(m);

  auto run = [&](std::size_t w) {
    SampleOutcome& out = outcomes[w];
    const auto row = static_cast<Eigen::Index>(w);
    out.q_up.assign(ni, 0);
    out.q_lo.assign(ni, 0);
    Eigen::VectorXd q = point.q_setpoints;
    for (std::size_t k = 0; k < ni; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const double lim = qlim(row, kk);
      if (options.capping) {
        const double applied = std::clamp(q(kk), -lim, lim);
        if (applied != q(kk) && options.keep_capping_log) {
          const Inverter& inv = feeder.inverters()[k];
          const double p = scenarios.p_gen()(row, static_cast<Eigen::Index>(inv.house)) / feeder.s_base_kva();
          out.events.push_back({w, k, q(kk), applied, p > inv.rating_kva / feeder.s_base_kva()});
        }
        q(kk) = applied;
      }
      if (q(kk) > lim) out.q_up[k] = 1;
      if (q(kk) < -lim) out.q_lo[k] = 1;
    }
    const Injections inj = injections_for(scenarios, w, q, feeder);
    PowerFlowResult pf = solve_pf(net, inj, &point.voltages, options.powerflow);
    if (!pf.converged()) pf = solve_pf(net, inj, nullptr, options.powerflow);
    if (!pf.converged()) {
      out.failed = true;
      return;
    }
    rep.magnitudes.row(row) = net.pack(pf.voltages).tail(nc).transpose();
    double total = 0.0;
    for (std::size_t node : feeder.three_phase_nodes())
      total += std::sqrt(vuf_squared(sequence_voltages(feeder, pf.voltages, node)));
    out.vuf_total = total;
  };

  // Each worker owns a strided subset of slots; nothing is shared but the
  // output rows, so results do not depend on the worker count.
  const unsigned workers = worker_count(options.threads, m);
  if (workers <= 1) {
    for (std::size_t w = 0; w < m; ++w) run(w);
  } else {
    std::vector<std::jthread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned t = 0; t < workers; ++t)
      pool.emplace_back([&, t] {
        try {
          for (std::size_t w = t; w < m; w += workers) run(w);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    pool.clear();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  Eigen::VectorXd vu = Eigen::VectorXd::Zero(nc), vl = Eigen::VectorXd::Zero(nc);
  Eigen::VectorXd qu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ni));
  Eigen::VectorXd ql = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ni));
  double vuf_sum = 0.0;
  std::size_t converged = 0;
  rep.vuf_total.resize(m);
  rep.q_upper_count.assign(m, 0);
  rep.q_lower_count.assign(m, 0);
  for (std::size_t w = 0; w < m; ++w) {
    const SampleOutcome& out = outcomes[w];
    for (std::size_t k = 0; k < ni; ++k) {
      qu(static_cast<Eigen::Index>(k)) += out.q_up[k];
      ql(static_cast<Eigen::Index>(k)) += out.q_lo[k];
      rep.q_upper_count[w] += out.q_up[k];
      rep.q_lower_count[w] += out.q_lo[k];
    }
    rep.capping_events.insert(rep.capping_events.end(), out.events.begin(), out.events.end());
    if (out.failed) {
      rep.failed_samples.push_back(w);
      rep.vuf_total[w] = std::numeric_limits<double>::quiet_NaN();
      vu.array() += 1.0;
      vl.array() += 1.0;
      continue;
    }
    rep.vuf_total[w] = out.vuf_total;
    vuf_sum += out.vuf_total;
    ++converged;
    const auto row = static_cast<Eigen::Index>(w);
    for (Eigen::Index c = 0; c < nc; ++c) {
      const double v = rep.magnitudes(row, c);
      if (v > feeder.v_max()) vu(c) += 1.0;
      if (v < feeder.v_min()) vl(c) += 1.0;
    }
  }
  const double md = static_cast<double>(m);
  rep.v_upper = vu / md;
  rep.v_lower = vl / md;
  rep.q_upper = qu / md;
  rep.q_lower = ql / md;
  rep.v_upper_max = nc ? rep.v_upper.maxCoeff() : 0.0;
  rep.v_lower_max = nc ? rep.v_lower.maxCoeff() : 0.0;
  rep.q_upper_max = ni ? rep.q_upper.maxCoeff() : 0.0;
  rep.q_lower_max = ni ? rep.q_lower.maxCoeff() : 0.0;
  rep.v_max = std::max(rep.v_upper_max, rep.v_lower_max);
  rep.mean_vuf_total = converged ? vuf_sum / static_cast<double>(converged) : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

VoltageTightenings voltage_quantile_tightenings(const Network& net, const OperatingPoint& point,
                                                const EvaluationReport& report, double eps_v) {
  if (!(eps_v >= 0.0 && eps_v <= 1.0)) throw InputError("eps_v must lie in [0, 1]");
  const Eigen::VectorXd nominal = point.connection_magnitudes(net);
  const auto nc = nominal.size();
  VoltageTightenings t{Eigen::VectorXd::Zero(nc), Eigen::VectorXd::Zero(nc)};
  // ε_v = 1 leaves the constraint vacuous.
  if (eps_v >= 1.0) return t;
  for (Eigen::Index c = 0; c < nc; ++c) {
    const EmpiricalDistribution f = report.voltage_distribution(static_cast<std::size_t>(c));
    t.upper(c) = std::max(0.0, quantile(f, 1.0 - eps_v) - nominal(c));
    t.lower(c) = std::max(0.0, nominal(c) - quantile(f, eps_v));
  }
  return t;
}

}  // namespace ccopf
