#include "ccopf/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <thread>

#include "ccopf/errors.hpp"

namespace ccopf {

const char* to_string(SamplingMethod m) {
  switch (m) {
    case SamplingMethod::Random: return "random";
    case SamplingMethod::FullDays: return "full_days";
  }
  return "unknown";
}

const char* to_string(MethodKind m) {
  switch (m) {
    case MethodKind::Quantile: return "quantile";
    case MethodKind::Tuning: return "tuning";
  }
  return "unknown";
}

void ExperimentConfig::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(eps_v)) throw InputError("eps_v must lie in [0, 1]");
  if (!in_unit(eps_q)) throw InputError("eps_q must lie in [0, 1]");
  if (replications < 1) throw InputError("replications must be at least 1");
  if (out_of_sample_days < 1) throw InputError("out_of_sample_days must be at least 1");
  if (!(data.scale > 0.0)) throw InputError("data scale must be positive");
  if (sampling.method == SamplingMethod::Random && sampling.samples < 1)
    throw InputError("random sampling needs at least one sample");
  if (sampling.method == SamplingMethod::FullDays && sampling.days < 1)
    throw InputError("full-day sampling needs at least one day");
  if (!data.csv && data.synth.days <= out_of_sample_days)
    throw InputError("synthetic data must have more days than are held out");
  if (!(quantile.tol_upper > 0.0 && quantile.tol_lower > 0.0)) throw InputError("quantile tolerances must be positive");
  if (!(tuning.prob_tol > 0.0 && tuning.bound_tol > 0.0)) throw InputError("tuning tolerances must be positive");
  if (quantile.max_iter < 1 || tuning.max_iter < 1) throw InputError("loop iteration limits must be positive");
  if (!(powerflow.tolerance > 0.0) || powerflow.max_iter < 1) throw InputError("invalid power flow settings");
  if (!(opf.stationarity_tol > 0.0 && opf.feasibility_tol > 0.0) || opf.max_outer_iter < 1 || opf.multistart < 1)
    throw InputError("invalid OPF settings");
}

Timeseries compute_timeseries(const EvaluationReport& report, const FeederModel& feeder) {
  if (!report.time_structured || report.times.size() != report.samples ||
      report.samples % static_cast<std::size_t>(kMinutesPerDay) != 0)
    throw InputError("timeseries need an evaluation over complete, time-ordered days");
  const auto nc = report.magnitudes.cols();
  const double ni = static_cast<double>(feeder.inverters().size());
  Timeseries ts;
  ts.days = report.samples / static_cast<std::size_t>(kMinutesPerDay);
  ts.rows.assign(kMinutesPerDay, {});
  const double days = static_cast<double>(ts.days);
  const std::vector<std::size_t>& failed = report.failed_samples;

  for (std::size_t w = 0; w < report.samples; ++w) {
    const int minute = report.times[w].minute;
    if (minute < 0 || minute >= kMinutesPerDay) throw InputError("sample minute out of range");
    auto& row = ts.rows[static_cast<std::size_t>(minute)];
    if (std::binary_search(failed.begin(), failed.end(), w)) {
      row[0] += 1.0 / days;
      row[1] += 1.0 / days;
    } else {
      const auto r = static_cast<Eigen::Index>(w);
      std::size_t up = 0, lo = 0;
      for (Eigen::Index c = 0; c < nc; ++c) {
        const double v = report.magnitudes(r, c);
        if (v > feeder.v_max()) {
          ++up;
          row[4] = std::max(row[4], v - feeder.v_max());
        }
        if (v < feeder.v_min()) {
          ++lo;
          row[5] = std::max(row[5], feeder.v_min() - v);
        }
      }
      if (nc > 0) {
        row[0] += static_cast<double>(up) / static_cast<double>(nc) / days;
        row[1] += static_cast<double>(lo) / static_cast<double>(nc) / days;
      }
    }
    if (ni > 0) {
      row[2] += report.q_upper_count[w] / ni / days;
      row[3] += report.q_lower_count[w] / ni / days;
    }
  }
  return ts;
}

void write_timeseries_csv(const Timeseries& ts, std::ostream& out) {
  out << "minute";
  for (const char* name : Timeseries::kNames) out << ',' << name;
  out << '\n';
  out.precision(17);
  for (std::size_t m = 0; m < ts.rows.size(); ++m) {
    out << m;
    for (double v : ts.rows[m]) out << ',' << v;
    out << '\n';
  }
}

std::vector<std::filesystem::path> emit_timeseries(const std::vector<Timeseries>& series,
                                                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto path = dir / ("timeseries_rep" + std::to_string(k) + ".csv");
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    write_timeseries_csv(series[k], out);
    written.push_back(path);
  }
  return written;
}

std::vector<std::filesystem::path> emit_timeseries(const RunReport& report, const std::filesystem::path& dir) {
  std::vector<Timeseries> series;
  for (const ReplicationReport& r : report.replications) {
    if (!r.timeseries) throw InputError("replication " + std::to_string(r.index) + " has no timeseries");
    series.push_back(*r.timeseries);
  }
  return emit_timeseries(series, dir);
}

std::vector<std::pair<std::string, Aggregate>> RunReport::aggregates() const {
  using Getter = double (*)(const ReplicationReport&);
  static const std::vector<std::pair<std::string, Getter>> fields{
      {"objective", [](const ReplicationReport& r) { return r.result.point.objective; }},
      {"iterations", [](const ReplicationReport& r) { return static_cast<double>(r.result.trace.records.size()); }},
      {"nominal_vuf_pct", [](const ReplicationReport& r) { return r.nominal_vuf_pct; }},
      {"in_sample_vuf_pct", [](const ReplicationReport& r) { return r.in_sample_vuf_pct; }},
      {"out_of_sample_vuf_pct", [](const ReplicationReport& r) { return r.out_of_sample_vuf_pct; }},
      {"normalized_vuf_delta", [](const ReplicationReport& r) { return r.normalized_vuf_delta; }},
      {"in_sample.v_upper_max", [](const ReplicationReport& r) { return r.result.evaluation.v_upper_max; }},
      {"in_sample.v_lower_max", [](const ReplicationReport& r) { return r.result.evaluation.v_lower_max; }},
      {"in_sample.q_upper_max", [](const ReplicationReport& r) { return r.result.evaluation.q_upper_max; }},
      {"in_sample.q_lower_max", [](const ReplicationReport& r) { return r.result.evaluation.q_lower_max; }},
      {"in_sample.v_max", [](const ReplicationReport& r) { return r.result.evaluation.v_max; }},
      {"out_of_sample.v_upper_max", [](const ReplicationReport& r) { return r.out_of_sample.v_upper_max; }},
      {"out_of_sample.v_lower_max", [](const ReplicationReport& r) { return r.out_of_sample.v_lower_max; }},
      {"out_of_sample.q_upper_max", [](const ReplicationReport& r) { return r.out_of_sample.q_upper_max; }},
      {"out_of_sample.q_lower_max", [](const ReplicationReport& r) { return r.out_of_sample.q_lower_max; }},
      {"out_of_sample.v_max", [](const ReplicationReport& r) { return r.out_of_sample.v_max; }},
  };
  std::vector<std::pair<std::string, Aggregate>> out;
  if (replications.empty()) return out;
  for (const auto& [name, get] : fields) {
    Aggregate a{0.0, std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const ReplicationReport& r : replications) {
      const double v = get(r);
      a.mean += v;
      a.min = std::min(a.min, v);
      a.max = std::max(a.max, v);
    }
    a.mean /= static_cast<double>(replications.size());
    out.emplace_back(name, a);
  }
  return out;
}

namespace {

RawSeries scaled(RawSeries s, double scale) {
  for (DaySeries& d : s.days) {
    d.p_gen *= scale;
    d.p_load *= scale;
  }
  return s;
}

double total_vuf(const FeederModel& feeder, const VoltageState& v) {
  double total = 0.0;
  for (std::size_t node : feeder.three_phase_nodes())
    total += std::sqrt(vuf_squared(sequence_voltages(feeder, v, node)));
  return total;
}

std::vector<int> day_numbers(const RawSeries& s) {
  std::vector<int> out;
  for (const DaySeries& d : s.days) out.push_back(d.day);
  return out;
}

[[noreturn]] void rethrow_annotated(std::size_t rep) {
  const std::string prefix = "replication " + std::to_string(rep) + ": ";
  try {
    throw;
  } catch (const InfeasibleError& e) {
    throw InfeasibleError(prefix + e.what());
  } catch (const TuningDegenerateError& e) {
    throw TuningDegenerateError(prefix + e.what());
  } catch (const SolverError& e) {
    throw SolverError(prefix + e.what());
  } catch (const InputError& e) {
    throw InputError(prefix + e.what());
  } catch (const NotThreePhaseError& e) {
    throw NotThreePhaseError(prefix + e.what());
  } catch (const DegenerateSequenceError& e) {
    throw DegenerateSequenceError(prefix + e.what());
  }
}

ReplicationReport run_replication(const ExperimentConfig& cfg, const Network& net, const RawSeries& pool,
                                  const ScenarioSet& out_set, const std::vector<int>& out_days, std::size_t index,
                                  unsigned threads) {
  const FeederModel& feeder = net.feeder();
  ReplicationReport rep;
  rep.index = index;
  rep.seed = cfg.sampling.seed + index;
  rep.out_of_sample_days = out_days;

  ScenarioSet in_set;
  if (cfg.sampling.method == SamplingMethod::Random) {
    in_set = draw_random(pool, cfg.sampling.samples, rep.seed);
  } else {
    in_set = draw_full_days(pool, cfg.sampling.days, rep.seed);
    for (std::size_t w = 0; w < in_set.times().size(); w += kMinutesPerDay)
      rep.in_sample_days.push_back(in_set.times()[w].day);
  }

  MethodSettings ms;
  ms.opf = cfg.opf;
  ms.evaluation.capping = cfg.capping;
  ms.evaluation.threads = threads;
  ms.evaluation.powerflow = cfg.powerflow;

  if (cfg.method == MethodKind::Quantile) {
    QuantileLoopConfig q = cfg.quantile;
    q.eps_v = cfg.eps_v;
    q.eps_q = cfg.eps_q;
    rep.result = run_quantile_method(net, in_set, q, ms);
  } else {
    TuningLoopConfig t = cfg.tuning;
    t.eps_v = cfg.eps_v;
    t.eps_q = cfg.eps_q;
    rep.result = run_tuning_method(net, in_set, t, ms);
  }

  rep.out_of_sample = evaluate(net, rep.result.point, out_set, ms.evaluation);
  rep.nominal_vuf_pct = 100.0 * total_vuf(feeder, rep.result.point.voltages);
  rep.in_sample_vuf_pct = 100.0 * rep.result.evaluation.mean_vuf_total;
  rep.out_of_sample_vuf_pct = 100.0 * rep.out_of_sample.mean_vuf_total;
  rep.normalized_vuf_delta = rep.in_sample_vuf_pct > 0.0
                                 ? (rep.out_of_sample_vuf_pct - rep.in_sample_vuf_pct) / rep.in_sample_vuf_pct
                                 : 0.0;
  rep.timeseries = compute_timeseries(rep.out_of_sample, feeder);
  return rep;
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  const FeederModel feeder = load_feeder(config.feeder);
  const Network net(feeder);

  RawSeries raw;
  if (config.data.csv)
    raw = load_timeseries(*config.data.csv, feeder, {config.data.scale, config.data.gaps});
  else
    raw = scaled(synthesize(feeder.house_ids(), config.data.synth.days, config.data.synth.seed, config.data.synth.params),
                 config.data.scale);

  const auto [pool, held_out] = split_days(raw, config.out_of_sample_days, config.out_of_sample_seed);
  const ScenarioSet out_set = all_days(held_out);
  const std::vector<int> out_days = day_numbers(held_out);

  RunReport report;
  report.config = config;
  report.house_ids = feeder.house_ids();
  for (const Connection& c : feeder.connections()) report.connection_labels.push_back(feeder.connection_label(c));
  for (const Inverter& inv : feeder.inverters())
    report.inverter_labels.push_back(feeder.connection_label({inv.node, inv.phase}));

  const std::size_t n = config.replications;
  report.replications.resize(n);
  std::vector<std::exception_ptr> errors(n);
  auto job = [&](std::size_t r, unsigned threads) {
    try {
      report.replications[r] = run_replication(config, net, pool, out_set, out_days, r, threads);
    } catch (...) {
      try {
        rethrow_annotated(r);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };

  const unsigned hw = config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency());
  if (n == 1 || hw == 1) {
    for (std::size_t r = 0; r < n; ++r) job(r, n == 1 ? config.threads : 1);
  } else {
    // Replications in parallel, each evaluating single-threaded.
    const auto workers = static_cast<std::size_t>(std::min<std::size_t>(hw, n));
    std::vector<std::jthread> pool_threads;
    for (std::size_t t = 0; t < workers; ++t)
      pool_threads.emplace_back([&, t] {
        for (std::size_t r = t; r < n; r += workers) job(r, 1);
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return report;
}

}  // namespace ccopf
