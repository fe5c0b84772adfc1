#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ccopf/chance.hpp"
#include "ccopf/driver.hpp"
#include "ccopf/scenario.hpp"

namespace ccopf {

enum class SamplingMethod { Random, FullDays };
enum class MethodKind { Quantile, Tuning };

const char* to_string(SamplingMethod m);
const char* to_string(MethodKind m);

struct SynthSource {
  std::size_t days = 25;
  std::uint64_t seed = 7;
  SynthParams params{};
};

/// Either a CSV file or synthetic data; both are multiplied by `scale`.
struct DataSource {
  std::optional<std::filesystem::path> csv;
  SynthSource synth{};
  double scale = 20.0;
  GapPolicy gaps = GapPolicy::Reject;
};

struct SamplingSpec {
  SamplingMethod method = SamplingMethod::Random;
  std::size_t samples = 2880;  // random draws
  std::size_t days = 2;        // full-day draws
  std::uint64_t seed = 1;      // replication r uses seed + r
};

struct OutputSpec {
  std::optional<std::filesystem::path> report;
  std::optional<std::filesystem::path> traces;      // JSON lines
  std::optional<std::filesystem::path> timeseries;  // directory
};

struct ExperimentConfig {
  std::filesystem::path feeder;
  DataSource data{};
  SamplingSpec sampling{};
  std::size_t out_of_sample_days = 5;
  std::uint64_t out_of_sample_seed = 2023;
  MethodKind method = MethodKind::Quantile;
  double eps_v = 0.05;
  double eps_q = 0.05;
  bool capping = false;
  std::size_t replications = 1;
  OpfSettings opf{};
  PowerFlowSettings powerflow{};
  QuantileLoopConfig quantile{};
  TuningLoopConfig tuning{};
  unsigned threads = 0;
  OutputSpec output{};

  /// Throws InputError on out-of-range values.
  void validate() const;
};

/// Per-minute violation statistics of a full-day evaluation.
struct Timeseries {
  static constexpr std::size_t kColumns = 6;
  static constexpr std::array<const char*, kColumns> kNames{
      "frac_v_upper", "frac_v_lower", "frac_q_upper", "frac_q_lower", "worst_v_upper", "worst_v_lower"};
  std::size_t days = 0;
  /// kMinutesPerDay rows of kColumns values in kNames order.
  std::vector<std::array<double, kColumns>> rows;
};

/// Fractions are over all present connections (inverters for the q columns)
/// averaged over the evaluated days; worst columns are the largest excursion
/// beyond the nominal band across connections and days, zero when none.
/// Throws InputError for evaluations without full-day time structure.
Timeseries compute_timeseries(const EvaluationReport& report, const FeederModel& feeder);

struct ReplicationReport {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::vector<int> in_sample_days;   // full-day sampling only
  std::vector<int> out_of_sample_days;
  MethodResult result;
  EvaluationReport out_of_sample;
  double nominal_vuf_pct = 0.0;       // Σ VUF at the operating point
  double in_sample_vuf_pct = 0.0;     // mean per-sample Σ VUF
  double out_of_sample_vuf_pct = 0.0;
  double normalized_vuf_delta = 0.0;  // (out − in) / in
  std::optional<Timeseries> timeseries;
};

struct Aggregate {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct RunReport {
  ExperimentConfig config;
  std::vector<std::string> house_ids;
  std::vector<std::string> connection_labels;
  std::vector<std::string> inverter_labels;
  std::vector<ReplicationReport> replications;

  /// Named statistics across replications, in a fixed order.
  std::vector<std::pair<std::string, Aggregate>> aggregates() const;
};

/// Paths in the config are taken as given; see load_experiment_config for
/// resolution relative to the config file.
RunReport run_experiment(const ExperimentConfig& config);

/// Writes `minute` plus the Timeseries columns as CSV.
void write_timeseries_csv(const Timeseries& ts, std::ostream& out);

/// Writes one CSV per replication (`timeseries_rep<k>.csv`) into `dir`,
/// creating it if needed. Returns the written paths.
std::vector<std::filesystem::path> emit_timeseries(const std::vector<Timeseries>& series,
                                                   const std::filesystem::path& dir);
std::vector<std::filesystem::path> emit_timeseries(const RunReport& report, const std::filesystem::path& dir);

}  // namespace ccopf
