#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ccopf/feeder.hpp"

namespace ccopf {

inline constexpr int kMinutesPerDay = 1440;

/// One day of minute-resolution data; rows are minutes, columns houses (kW).
struct DaySeries {
  int day = 0;
  Eigen::MatrixXd p_gen;
  Eigen::MatrixXd p_load;
};

/// Day-indexed per-house measurements, columns ordered like house_ids.
struct RawSeries {
  std::vector<std::string> house_ids;
  std::vector<DaySeries> days;

  std::size_t house_count() const { return house_ids.size(); }
};

struct SampleTime {
  int day = 0;
  int minute = 0;

  bool operator==(const SampleTime&) const = default;
};

/// One joint realization across every house.
struct SamplePoint {
  std::vector<double> p_gen_kw;
  std::vector<double> p_load_kw;
  std::optional<SampleTime> time;
};

/// M joint realizations plus their per-house averages and deviations.
/// Immutable after construction.
class ScenarioSet {
public:
  ScenarioSet() = default;
  ScenarioSet(std::vector<std::string> house_ids, Eigen::MatrixXd p_gen, Eigen::MatrixXd p_load,
              std::vector<SampleTime> times, bool time_structured);

  std::size_t size() const { return static_cast<std::size_t>(p_gen_.rows()); }
  std::size_t house_count() const { return house_ids_.size(); }
  const std::vector<std::string>& house_ids() const { return house_ids_; }

  const Eigen::MatrixXd& p_gen() const { return p_gen_; }
  const Eigen::MatrixXd& p_load() const { return p_load_; }
  const Eigen::VectorXd& mean_gen() const { return mean_gen_; }
  const Eigen::VectorXd& mean_load() const { return mean_load_; }
  /// δp = p − p̄, one row per sample.
  const Eigen::MatrixXd& dev_gen() const { return dev_gen_; }
  const Eigen::MatrixXd& dev_load() const { return dev_load_; }

  /// Empty for random draws without timestamps.
  const std::vector<SampleTime>& times() const { return times_; }
  /// True when the set is a sequence of complete days in time order.
  bool time_structured() const { return time_structured_; }

  SamplePoint sample(std::size_t w) const;
  /// The averaged realization (p̄_G, p̄_L); reactive load follows by linearity.
  SamplePoint mean_point() const;

private:
  std::vector<std::string> house_ids_;
  Eigen::MatrixXd p_gen_, p_load_;
  Eigen::VectorXd mean_gen_, mean_load_;
  Eigen::MatrixXd dev_gen_, dev_load_;
  std::vector<SampleTime> times_;
  bool time_structured_ = false;
};

/// Reactive-to-active ratio for a constant power factor load.
double gamma_from_pf(double pf);

enum class GapPolicy { Reject, ForwardFill };

struct TimeseriesOptions {
  double scale = 20.0;
  GapPolicy gaps = GapPolicy::Reject;
};

/// Reads `day,minute,house_id,p_gen_kw,p_load_kw` rows. Columns of the
/// result follow feeder.house_ids(); values are multiplied by options.scale.
RawSeries load_timeseries(const std::filesystem::path& path, const FeederModel& feeder,
                          const TimeseriesOptions& options = {});
RawSeries parse_timeseries(std::istream& in, const FeederModel& feeder,
                           const TimeseriesOptions& options = {});

void write_timeseries_csv(const RawSeries& series, std::ostream& out);

/// Stacks complete days in the given order into a time-structured set.
ScenarioSet scenarios_from_days(const RawSeries& series, const std::vector<std::size_t>& day_positions);
ScenarioSet all_days(const RawSeries& series);

/// Picks n_days distinct days uniformly; M = 1440·n_days, time order kept.
ScenarioSet draw_full_days(const RawSeries& series, std::size_t n_days, std::uint64_t seed);

/// Draws m pooled minutes without replacement; each draw keeps the whole
/// cross-house vector of that minute.
ScenarioSet draw_random(const RawSeries& series, std::size_t m, std::uint64_t seed);

/// Splits days into (in-sample pool, held-out days). Held-out choice depends
/// only on the seed, so it is shared across experiments using that seed.
std::pair<RawSeries, RawSeries> split_days(const RawSeries& series, std::size_t held_out,
                                           std::uint64_t seed);

struct SynthParams {
  double pv_peak_kw = 3.5;
  double sunrise_minute = 360.0;
  double sunset_minute = 1200.0;
  double cloud_persistence = 0.97;  // AR(1) coefficient per minute
  double cloud_sigma = 0.08;
  double cloud_bias = -0.15;        // attenuation is max(0, bias + ar), clipped at 0.9
  double shared_cloud_weight = 0.6;
  double overcast_probability = 0.0;
  double load_base_kw = 0.45;
  double morning_peak_kw = 0.9;
  double evening_peak_kw = 1.7;
  double spike_rate_per_hour = 0.6;
  double spike_scale_kw = 0.7;
  double spike_tail_index = 2.2;   // Pareto shape
  double spike_max_kw = 8.0;       // largest appliance draw, e.g. an EV charger
  double spike_mean_minutes = 12.0;
};

/// Desk-scale stand-in for measured data: bell-shaped PV under AR(1) cloud
/// attenuation and a two-peak load with Pareto-sized appliance spikes.
/// Values are unscaled kW and bit-reproducible for a given seed.
RawSeries synthesize(const std::vector<std::string>& house_ids, std::size_t days, std::uint64_t seed,
                     const SynthParams& params = {});
RawSeries synthesize(std::size_t houses, std::size_t days, std::uint64_t seed,
                     const SynthParams& params = {});
std::vector<std::string> default_house_ids(std::size_t houses);

/// Per-connection net injections in per-unit, ordered like feeder.connections().
struct Injections {
  Eigen::VectorXd p;
  Eigen::VectorXd q;
};

/// p = p_G − p_L and q = q_G − γ_L·p_L summed per connection; q_setpoints are
/// per-unit, one per feeder inverter.
Injections injections_for(const SamplePoint& sample, const Eigen::VectorXd& q_setpoints,
                          const FeederModel& feeder);
Injections injections_for(const ScenarioSet& scenarios, std::size_t w, const Eigen::VectorXd& q_setpoints,
                          const FeederModel& feeder);

}  // namespace ccopf
