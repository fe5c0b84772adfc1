#pragma once

#include <filesystem>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "ccopf/chance.hpp"
#include "ccopf/driver.hpp"
#include "ccopf/experiment.hpp"
#include "ccopf/opf.hpp"

namespace ccopf {

using Json = nlohmann::ordered_json;

/// Parses an experiment config. Unknown keys and wrong types raise
/// InputError. Relative paths are resolved against `base_dir`.
ExperimentConfig experiment_config_from_json(const Json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
Json to_json(const ExperimentConfig& c);

Json to_json(const OperatingPoint& p);
/// Voltages may be omitted, in which case a flat start for `feeder` is used.
OperatingPoint operating_point_from_json(const Json& j, const FeederModel& feeder);

Json to_json(const TighteningSet& t);
Json to_json(const IterationRecord& r);

/// Summary and per-constraint probabilities; per-sample data is left out.
Json to_json(const EvaluationReport& r);

Json to_json(const Timeseries& ts);
Timeseries timeseries_from_json(const Json& j);

/// Deterministic: contains no timings or host details.
Json to_json(const RunReport& r);

/// Timeseries of every replication stored in a serialized RunReport.
std::vector<Timeseries> timeseries_from_report(const Json& report);

/// One JSON object per line and iteration, tagged with the replication.
void write_traces_jsonl(const RunReport& r, std::ostream& out);

/// Per-sample voltage magnitudes and VUF sums as CSV.
void write_evaluation_traces_csv(const EvaluationReport& r, const std::vector<std::string>& connection_labels,
                                 std::ostream& out);

}  // namespace ccopf
