#include "ccopf/serialize.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "ccopf/errors.hpp"

namespace ccopf {

namespace {

// Reads members of one JSON object and rejects leftovers.
class ObjectReader {
public:
  ObjectReader(const Json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw InputError(where("") + "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const Json& child(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const Json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw InputError(where(key) + "expected a boolean");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
        throw InputError(where(key) + "expected a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw InputError(where(key) + "expected an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw InputError(where(key) + "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw InputError(where(key) + "expected a string");
    }
    out = v.get<T>();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw InputError(where(it.key()) + "unknown key");
  }

  std::string where(const std::string& key) const {
    std::string path = context_;
    if (!key.empty()) path += path.empty() ? key : "." + key;
    return path.empty() ? std::string() : path + ": ";
  }

private:
  const Json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

Json vec(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vec_from(const Json& a, const std::string& what) {
  if (!a.is_array()) throw InputError(what + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) throw InputError(what + ": expected numbers");
    v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  }
  return v;
}

SynthParams synth_params_from(const Json& j) {
  SynthParams p;
  ObjectReader r(j, "data.synth.params");
  r.get("pv_peak_kw", p.pv_peak_kw);
  r.get("sunrise_minute", p.sunrise_minute);
  r.get("sunset_minute", p.sunset_minute);
  r.get("cloud_persistence", p.cloud_persistence);
  r.get("cloud_sigma", p.cloud_sigma);
  r.get("cloud_bias", p.cloud_bias);
  r.get("shared_cloud_weight", p.shared_cloud_weight);
  r.get("overcast_probability", p.overcast_probability);
  r.get("load_base_kw", p.load_base_kw);
  r.get("morning_peak_kw", p.morning_peak_kw);
  r.get("evening_peak_kw", p.evening_peak_kw);
  r.get("spike_rate_per_hour", p.spike_rate_per_hour);
  r.get("spike_scale_kw", p.spike_scale_kw);
  r.get("spike_tail_index", p.spike_tail_index);
  r.get("spike_max_kw", p.spike_max_kw);
  r.get("spike_mean_minutes", p.spike_mean_minutes);
  r.finish();
  return p;
}

Json to_json(const SynthParams& p) {
  return Json{{"pv_peak_kw", p.pv_peak_kw},
              {"sunrise_minute", p.sunrise_minute},
              {"sunset_minute", p.sunset_minute},
              {"cloud_persistence", p.cloud_persistence},
              {"cloud_sigma", p.cloud_sigma},
              {"cloud_bias", p.cloud_bias},
              {"shared_cloud_weight", p.shared_cloud_weight},
              {"overcast_probability", p.overcast_probability},
              {"load_base_kw", p.load_base_kw},
              {"morning_peak_kw", p.morning_peak_kw},
              {"evening_peak_kw", p.evening_peak_kw},
              {"spike_rate_per_hour", p.spike_rate_per_hour},
              {"spike_scale_kw", p.spike_scale_kw},
              {"spike_tail_index", p.spike_tail_index},
              {"spike_max_kw", p.spike_max_kw},
              {"spike_mean_minutes", p.spike_mean_minutes}};
}

void powerflow_from(const Json& j, const std::string& ctx, PowerFlowSettings& s) {
  ObjectReader r(j, ctx);
  r.get("tolerance", s.tolerance);
  r.get("max_iter", s.max_iter);
  r.get("max_halvings", s.max_halvings);
  r.finish();
}

Json to_json(const PowerFlowSettings& s) {
  return Json{{"tolerance", s.tolerance}, {"max_iter", s.max_iter}, {"max_halvings", s.max_halvings}};
}

}  // namespace

ExperimentConfig experiment_config_from_json(const Json& j, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  ObjectReader r(j, "");
  if (!r.has("feeder")) throw InputError("feeder: required");
  std::string feeder;
  r.get("feeder", feeder);
  c.feeder = resolve(base_dir, feeder);

  if (r.has("data")) {
    ObjectReader d(r.child("data"), "data");
    if (d.has("csv")) {
      std::string csv;
      d.get("csv", csv);
      c.data.csv = resolve(base_dir, csv);
    }
    d.get("scale", c.data.scale);
    if (d.has("gaps")) {
      std::string g;
      d.get("gaps", g);
      if (g == "reject")
        c.data.gaps = GapPolicy::Reject;
      else if (g == "forward_fill")
        c.data.gaps = GapPolicy::ForwardFill;
      else
        throw InputError("data.gaps: expected \"reject\" or \"forward_fill\"");
    }
    if (d.has("synth")) {
      ObjectReader s(d.child("synth"), "data.synth");
      s.get("days", c.data.synth.days);
      s.get("seed", c.data.synth.seed);
      if (s.has("params")) c.data.synth.params = synth_params_from(s.child("params"));
      s.finish();
    }
    d.finish();
  }

  if (r.has("sampling")) {
    ObjectReader s(r.child("sampling"), "sampling");
    if (s.has("method")) {
      std::string m;
      s.get("method", m);
      if (m == "random")
        c.sampling.method = SamplingMethod::Random;
      else if (m == "full_days")
        c.sampling.method = SamplingMethod::FullDays;
      else
        throw InputError("sampling.method: expected \"random\" or \"full_days\"");
    }
    s.get("samples", c.sampling.samples);
    s.get("days", c.sampling.days);
    s.get("seed", c.sampling.seed);
    s.finish();
  }

  r.get("out_of_sample_days", c.out_of_sample_days);
  r.get("out_of_sample_seed", c.out_of_sample_seed);
  if (r.has("method")) {
    std::string m;
    r.get("method", m);
    if (m == "quantile")
      c.method = MethodKind::Quantile;
    else if (m == "tuning")
      c.method = MethodKind::Tuning;
    else
      throw InputError("method: expected \"quantile\" or \"tuning\"");
  }
  r.get("eps_v", c.eps_v);
  r.get("eps_q", c.eps_q);
  r.get("capping", c.capping);
  r.get("replications", c.replications);
  r.get("threads", c.threads);

  if (r.has("opf")) {
    ObjectReader o(r.child("opf"), "opf");
    o.get("max_outer_iter", c.opf.max_outer_iter);
    o.get("penalty_init", c.opf.penalty_init);
    o.get("penalty_growth", c.opf.penalty_growth);
    o.get("stationarity_tol", c.opf.stationarity_tol);
    o.get("feasibility_tol", c.opf.feasibility_tol);
    o.get("multistart", c.opf.multistart);
    o.get("multistart_seed", c.opf.multistart_seed);
    o.get("max_inner_iter", c.opf.max_inner_iter);
    if (o.has("powerflow")) powerflow_from(o.child("powerflow"), "opf.powerflow", c.opf.powerflow);
    o.finish();
  }
  if (r.has("powerflow")) powerflow_from(r.child("powerflow"), "powerflow", c.powerflow);
  if (r.has("quantile")) {
    ObjectReader q(r.child("quantile"), "quantile");
    q.get("tol_upper", c.quantile.tol_upper);
    q.get("tol_lower", c.quantile.tol_lower);
    q.get("max_iter", c.quantile.max_iter);
    q.finish();
  }
  if (r.has("tuning")) {
    ObjectReader t(r.child("tuning"), "tuning");
    t.get("prob_tol", c.tuning.prob_tol);
    t.get("bound_tol", c.tuning.bound_tol);
    t.get("max_iter", c.tuning.max_iter);
    t.finish();
  }
  if (r.has("output")) {
    ObjectReader o(r.child("output"), "output");
    std::string p;
    if (o.has("report")) {
      o.get("report", p);
      c.output.report = resolve(base_dir, p);
    }
    if (o.has("traces")) {
      o.get("traces", p);
      c.output.traces = resolve(base_dir, p);
    }
    if (o.has("timeseries")) {
      o.get("timeseries", p);
      c.output.timeseries = resolve(base_dir, p);
    }
    o.finish();
  }
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j, path.parent_path());
}

Json to_json(const ExperimentConfig& c) {
  Json data{{"scale", c.data.scale}, {"gaps", c.data.gaps == GapPolicy::Reject ? "reject" : "forward_fill"}};
  if (c.data.csv)
    data["csv"] = c.data.csv->generic_string();
  else
    data["synth"] = Json{{"days", c.data.synth.days}, {"seed", c.data.synth.seed}, {"params", to_json(c.data.synth.params)}};
  return Json{
      {"feeder", c.feeder.generic_string()},
      {"data", data},
      {"sampling",
       {{"method", to_string(c.sampling.method)},
        {"samples", c.sampling.samples},
        {"days", c.sampling.days},
        {"seed", c.sampling.seed}}},
      {"out_of_sample_days", c.out_of_sample_days},
      {"out_of_sample_seed", c.out_of_sample_seed},
      {"method", to_string(c.method)},
      {"eps_v", c.eps_v},
      {"eps_q", c.eps_q},
      {"capping", c.capping},
      {"replications", c.replications},
      {"opf",
       {{"max_outer_iter", c.opf.max_outer_iter},
        {"penalty_init", c.opf.penalty_init},
        {"penalty_growth", c.opf.penalty_growth},
        {"stationarity_tol", c.opf.stationarity_tol},
        {"feasibility_tol", c.opf.feasibility_tol},
        {"multistart", c.opf.multistart},
        {"multistart_seed", c.opf.multistart_seed},
        {"max_inner_iter", c.opf.max_inner_iter},
        {"powerflow", to_json(c.opf.powerflow)}}},
      {"powerflow", to_json(c.powerflow)},
      {"quantile",
       {{"tol_upper", c.quantile.tol_upper}, {"tol_lower", c.quantile.tol_lower}, {"max_iter", c.quantile.max_iter}}},
      {"tuning",
       {{"prob_tol", c.tuning.prob_tol}, {"bound_tol", c.tuning.bound_tol}, {"max_iter", c.tuning.max_iter}}},
  };
}

Json to_json(const OperatingPoint& p) {
  return Json{{"q_setpoints", vec(p.q_setpoints)},
              {"objective", p.objective},
              {"status", to_string(p.status)},
              {"outer_iterations", p.outer_iterations},
              {"stationarity", p.stationarity},
              {"feasibility", p.feasibility},
              {"p_slack", vec(p.p_slack)},
              {"q_slack", vec(p.q_slack)},
              {"voltage_magnitude", vec(p.voltages.magnitude)},
              {"voltage_angle", vec(p.voltages.angle)}};
}

OperatingPoint operating_point_from_json(const Json& j, const FeederModel& feeder) {
  if (!j.is_object() || !j.contains("q_setpoints")) throw InputError("operating point needs q_setpoints");
  OperatingPoint p;
  p.q_setpoints = vec_from(j.at("q_setpoints"), "q_setpoints");
  if (p.q_setpoints.size() != static_cast<Eigen::Index>(feeder.inverters().size()))
    throw InputError("q_setpoints has " + std::to_string(p.q_setpoints.size()) + " entries for " +
                     std::to_string(feeder.inverters().size()) + " inverters");
  p.voltages = flat_start(feeder);
  if (j.contains("voltage_magnitude") && j.contains("voltage_angle")) {
    Eigen::VectorXd m = vec_from(j.at("voltage_magnitude"), "voltage_magnitude");
    Eigen::VectorXd a = vec_from(j.at("voltage_angle"), "voltage_angle");
    if (m.size() == p.voltages.magnitude.size() && a.size() == p.voltages.angle.size()) p.voltages = {m, a};
  }
  if (j.contains("objective") && j.at("objective").is_number()) p.objective = j.at("objective").get<double>();
  return p;
}

Json to_json(const TighteningSet& t) {
  return Json{{"v_upper", vec(t.v_upper)}, {"v_lower", vec(t.v_lower)}, {"q_upper", vec(t.q_upper)},
              {"q_lower", vec(t.q_lower)}};
}

Json to_json(const IterationRecord& r) {
  Json j{{"iteration", r.iteration},
         {"objective", r.objective},
         {"status", to_string(r.status)},
         {"infeasible", r.infeasible},
         {"v_upper_max", r.v_upper_max},
         {"v_lower_max", r.v_lower_max},
         {"q_upper_max", r.q_upper_max},
         {"q_lower_max", r.q_lower_max},
         {"v_max", r.v_max},
         {"failed_samples", r.failed_samples}};
  if (r.delta_upper) j["delta_upper"] = *r.delta_upper;
  if (r.delta_lower) j["delta_lower"] = *r.delta_lower;
  if (r.s) j["s"] = *r.s;
  if (r.s_min) j["s_min"] = *r.s_min;
  if (r.s_max) j["s_max"] = *r.s_max;
  j["q_setpoints"] = vec(r.q_setpoints);
  j["tightenings"] = to_json(r.tightenings);
  return j;
}

Json to_json(const EvaluationReport& r) {
  Json failed = Json::array();
  for (std::size_t w : r.failed_samples) failed.push_back(w);
  std::size_t saturated = 0;
  for (const CappingEvent& e : r.capping_events) saturated += e.saturated;
  return Json{{"samples", r.samples},
              {"capping", r.capping},
              {"v_upper_max", r.v_upper_max},
              {"v_lower_max", r.v_lower_max},
              {"q_upper_max", r.q_upper_max},
              {"q_lower_max", r.q_lower_max},
              {"v_max", r.v_max},
              {"mean_vuf_total_pct", 100.0 * r.mean_vuf_total},
              {"failed_samples", failed},
              {"capping_events", r.capping_events.size()},
              {"capping_saturated", saturated},
              {"v_upper", vec(r.v_upper)},
              {"v_lower", vec(r.v_lower)},
              {"q_upper", vec(r.q_upper)},
              {"q_lower", vec(r.q_lower)}};
}

Json to_json(const Timeseries& ts) {
  Json cols = Json::object();
  for (std::size_t k = 0; k < Timeseries::kColumns; ++k) {
    Json a = Json::array();
    for (const auto& row : ts.rows) a.push_back(row[k]);
    cols[Timeseries::kNames[k]] = std::move(a);
  }
  return Json{{"days", ts.days}, {"columns", cols}};
}

Timeseries timeseries_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("columns")) throw InputError("timeseries: missing columns");
  Timeseries ts;
  ts.days = j.value("days", std::size_t{0});
  const Json& cols = j.at("columns");
  ts.rows.assign(kMinutesPerDay, {});
  for (std::size_t k = 0; k < Timeseries::kColumns; ++k) {
    const char* name = Timeseries::kNames[k];
    if (!cols.contains(name)) throw InputError(std::string("timeseries: missing column ") + name);
    const Eigen::VectorXd v = vec_from(cols.at(name), name);
    if (v.size() != kMinutesPerDay) throw InputError(std::string("timeseries: column ") + name + " needs 1440 rows");
    for (std::size_t m = 0; m < ts.rows.size(); ++m) ts.rows[m][k] = v(static_cast<Eigen::Index>(m));
  }
  return ts;
}

Json to_json(const RunReport& r) {
  Json reps = Json::array();
  for (const ReplicationReport& rep : r.replications) {
    Json warnings = Json::array();
    for (const std::string& w : rep.result.warnings) warnings.push_back(w);
    Json j{{"index", rep.index},
           {"seed", rep.seed},
           {"in_sample_days", rep.in_sample_days},
           {"out_of_sample_days", rep.out_of_sample_days},
           {"method", rep.result.trace.method},
           {"converged", rep.result.converged},
           {"target_missed", rep.result.target_missed},
           {"warnings", warnings},
           {"iterations", rep.result.trace.records.size()},
           {"nominal_vuf_pct", rep.nominal_vuf_pct},
           {"in_sample_vuf_pct", rep.in_sample_vuf_pct},
           {"out_of_sample_vuf_pct", rep.out_of_sample_vuf_pct},
           {"normalized_vuf_delta", rep.normalized_vuf_delta},
           {"point", to_json(rep.result.point)},
           {"tightenings", to_json(rep.result.tightenings)},
           {"in_sample", to_json(rep.result.evaluation)},
           {"out_of_sample", to_json(rep.out_of_sample)},
           {"trace", "replication " + std::to_string(rep.index) + " in traces"}};
    if (rep.timeseries) j["timeseries"] = to_json(*rep.timeseries);
    reps.push_back(std::move(j));
  }
  Json agg = Json::object();
  for (const auto& [name, a] : r.aggregates()) agg[name] = Json{{"mean", a.mean}, {"min", a.min}, {"max", a.max}};
  return Json{{"config", to_json(r.config)},
              {"house_ids", r.house_ids},
              {"connections", r.connection_labels},
              {"inverters", r.inverter_labels},
              {"aggregates", agg},
              {"replications", reps}};
}

std::vector<Timeseries> timeseries_from_report(const Json& report) {
  if (!report.is_object() || !report.contains("replications") || !report.at("replications").is_array())
    throw InputError("report has no replications");
  std::vector<Timeseries> out;
  for (const Json& rep : report.at("replications")) {
    if (!rep.contains("timeseries"))
      throw InputError("replication without timeseries; the out-of-sample evaluation must cover full days");
    out.push_back(timeseries_from_json(rep.at("timeseries")));
  }
  return out;
}

void write_traces_jsonl(const RunReport& r, std::ostream& out) {
  for (const ReplicationReport& rep : r.replications)
    for (const IterationRecord& rec : rep.result.trace.records) {
      Json j{{"replication", rep.index}, {"method", rep.result.trace.method}};
      j.update(to_json(rec));
      out << j.dump() << '\n';
    }
}

void write_evaluation_traces_csv(const EvaluationReport& r, const std::vector<std::string>& connection_labels,
                                 std::ostream& out) {
  out << "sample,day,minute,failed,vuf_total";
  for (const std::string& l : connection_labels) out << ",v_" << l;
  out << '\n';
  out.precision(17);
  const bool timed = r.times.size() == r.samples;
  for (std::size_t w = 0; w < r.samples; ++w) {
    const bool failed = std::binary_search(r.failed_samples.begin(), r.failed_samples.end(), w);
    out << w << ',';
    if (timed) out << r.times[w].day << ',' << r.times[w].minute;
    else out << ',';
    out << ',' << (failed ? 1 : 0) << ',';
    if (!failed) out << r.vuf_total[w];
    for (Eigen::Index c = 0; c < r.magnitudes.cols(); ++c) {
      out << ',';
      if (!failed) out << r.magnitudes(static_cast<Eigen::Index>(w), c);
    }
    out << '\n';
  }
}

}  // namespace ccopf
