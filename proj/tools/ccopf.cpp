// ccopf: command-line front end for experiments, data synthesis and
// evaluation of stored operating points.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ccopf/chance.hpp"
#include "ccopf/errors.hpp"
#include "ccopf/experiment.hpp"
#include "ccopf/feeder.hpp"
#include "ccopf/scenario.hpp"
#include "ccopf/serialize.hpp"

namespace fs = std::filesystem;
using namespace ccopf;

namespace {

enum ExitCode : int { kOk = 0, kConfig = 2, kSolver = 3, kInfeasible = 4 };

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void print_summary(const RunReport& report) {
  for (const auto& [name, a] : report.aggregates())
    std::cerr << name << ": mean " << a.mean << " min " << a.min << " max " << a.max << '\n';
  for (const ReplicationReport& rep : report.replications)
    for (const std::string& w : rep.result.warnings) std::cerr << "replication " << rep.index << ": " << w << '\n';
}

struct RunArgs {
  std::string config;
  std::optional<std::string> report;
  std::optional<std::string> traces;
  std::optional<std::string> timeseries;
  std::optional<unsigned> threads;
};

int cmd_run(const RunArgs& a) {
  ExperimentConfig config = load_experiment_config(a.config);
  if (a.report) config.output.report = *a.report;
  if (a.traces) config.output.traces = *a.traces;
  if (a.timeseries) config.output.timeseries = *a.timeseries;
  if (a.threads) config.threads = *a.threads;

  RunReport report = run_experiment(config);
  const std::string text = to_json(report).dump(2);
  if (config.output.report) {
    open_out(*config.output.report) << text << '\n';
  } else {
    std::cout << text << '\n';
  }
  if (config.output.traces) {
    std::ofstream out = open_out(*config.output.traces);
    write_traces_jsonl(report, out);
  }
  if (config.output.timeseries) emit_timeseries(report, *config.output.timeseries);
  print_summary(report);
  return kOk;
}

struct SynthArgs {
  std::size_t houses = 15;
  std::size_t days = 25;
  std::uint64_t seed = 7;
  std::string out = "data";
  std::optional<std::string> feeder;
};

int cmd_synth(const SynthArgs& a) {
  RawSeries series = [&] {
    if (a.feeder) return synthesize(load_feeder(*a.feeder).house_ids(), a.days, a.seed);
    return synthesize(a.houses, a.days, a.seed);
  }();
  const fs::path path = fs::path(a.out) / ("synthetic_seed" + std::to_string(a.seed) + ".csv");
  std::ofstream out = open_out(path);
  write_timeseries_csv(series, out);
  std::cerr << "wrote " << series.days.size() << " days x " << series.house_count() << " houses to " << path.string()
            << '\n';
  return kOk;
}

struct EvaluateArgs {
  std::string point;
  std::string scenarios;
  std::optional<std::string> feeder;
  std::optional<double> scale;
  std::size_t replication = 0;
  bool capping = false;
  unsigned threads = 0;
  std::optional<std::string> out;
  std::optional<std::string> dump_traces;
};

int cmd_evaluate(const EvaluateArgs& a) {
  Json j = read_json(a.point);
  fs::path feeder_path;
  double scale = 20.0;
  Json point_json = j;
  // A full run report carries the feeder and data scale in its config.
  if (j.is_object() && j.contains("replications")) {
    const ExperimentConfig c = experiment_config_from_json(j.at("config"));
    feeder_path = c.feeder;
    scale = c.data.scale;
    const Json& reps = j.at("replications");
    if (a.replication >= reps.size())
      throw InputError("report has " + std::to_string(reps.size()) + " replications");
    point_json = reps.at(a.replication).at("point");
  }
  if (a.feeder) feeder_path = *a.feeder;
  if (a.scale) scale = *a.scale;
  if (feeder_path.empty()) throw InputError("--feeder is required for a bare operating point");

  const FeederModel feeder = load_feeder(feeder_path);
  const Network net(feeder);
  const OperatingPoint point = operating_point_from_json(point_json, feeder);
  TimeseriesOptions ts;
  ts.scale = scale;
  const ScenarioSet scenarios = all_days(load_timeseries(a.scenarios, feeder, ts));

  EvaluationOptions opts;
  opts.capping = a.capping;
  opts.threads = a.threads;
  const EvaluationReport report = evaluate(net, point, scenarios, opts);

  const std::string text = to_json(report).dump(2);
  if (a.out) {
    open_out(*a.out) << text << '\n';
  } else {
    std::cout << text << '\n';
  }
  if (a.dump_traces) {
    std::vector<std::string> labels;
    for (const Connection& c : feeder.connections()) labels.push_back(feeder.connection_label(c));
    std::ofstream out = open_out(*a.dump_traces);
    write_evaluation_traces_csv(report, labels, out);
  }
  std::cerr << "samples " << report.samples << " failed " << report.failed_samples.size() << " max P(v>) "
            << report.v_upper_max << " max P(v<) " << report.v_lower_max << " max P(q>) " << report.q_upper_max
            << " max P(q<) " << report.q_lower_max << '\n';
  return kOk;
}

int cmd_timeseries(const std::string& report_path, const std::string& out_dir) {
  const std::vector<Timeseries> series = timeseries_from_report(read_json(report_path));
  for (const fs::path& p : emit_timeseries(series, out_dir)) std::cerr << "wrote " << p.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chance-constrained reactive power dispatch for unbalanced feeders"};
  app.require_subcommand(1);

  RunArgs run;
  CLI::App* run_cmd = app.add_subcommand("run", "Run an experiment from a JSON config");
  run_cmd->add_option("--config", run.config, "Experiment config")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--report", run.report, "Report path (overrides the config; default stdout)");
  run_cmd->add_option("--traces", run.traces, "Iteration traces as JSON lines");
  run_cmd->add_option("--timeseries", run.timeseries, "Directory for per-minute CSVs");
  run_cmd->add_option("--threads", run.threads, "Worker threads, 0 for all cores");

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Write a synthetic per-house time series CSV");
  synth_cmd->add_option("--houses", synth.houses, "Number of houses")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--days", synth.days, "Number of days")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("--out", synth.out, "Output directory");
  synth_cmd->add_option("--feeder", synth.feeder, "Take house ids from this feeder")->check(CLI::ExistingFile);

  EvaluateArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "Evaluate an operating point on full-day scenarios");
  eval_cmd->add_option("--point", eval.point, "Operating point JSON or run report")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--scenarios", eval.scenarios, "Time series CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--feeder", eval.feeder, "Feeder JSON")->check(CLI::ExistingFile);
  eval_cmd->add_option("--scale", eval.scale, "Multiplier applied to the CSV values");
  eval_cmd->add_option("--replication", eval.replication, "Replication to take from a run report");
  eval_cmd->add_flag("--capping", eval.capping, "Clip set-points to the sampled capability");
  eval_cmd->add_option("--threads", eval.threads, "Worker threads, 0 for all cores");
  eval_cmd->add_option("--out", eval.out, "Report path (default stdout)");
  eval_cmd->add_option("--dump-traces", eval.dump_traces, "Per-sample voltages and VUF as CSV");

  std::string ts_report, ts_out;
  CLI::App* ts_cmd = app.add_subcommand("timeseries", "Write per-minute violation CSVs from a run report");
  ts_cmd->add_option("--report", ts_report, "Run report JSON")->required()->check(CLI::ExistingFile);
  ts_cmd->add_option("--out", ts_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*synth_cmd) return cmd_synth(synth);
    if (*eval_cmd) return cmd_evaluate(eval);
    if (*ts_cmd) return cmd_timeseries(ts_report, ts_out);
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return kInfeasible;
  } catch (const InputError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const Error& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kSolver;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kSolver;
  }
  return kOk;
}
