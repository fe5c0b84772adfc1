#include "ccopf/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "ccopf/errors.hpp"

namespace ccopf {

ScenarioSet::ScenarioSet(std::vector<std::string> house_ids, Eigen::MatrixXd p_gen, Eigen::MatrixXd p_load,
                         std::vector<SampleTime> times, bool time_structured)
    : house_ids_(std::move(house_ids)),
      p_gen_(std::move(p_gen)),
      p_load_(std::move(p_load)),
      times_(std::move(times)),
      time_structured_(time_structured) {
  const auto h = static_cast<Eigen::Index>(house_ids_.size());
  if (p_gen_.cols() != h || p_load_.cols() != h || p_gen_.rows() != p_load_.rows())
    throw InputError("scenario matrices do not match the house list");
  if (p_gen_.rows() == 0) throw InputError("scenario set is empty");
  if (!times_.empty() && times_.size() != static_cast<std::size_t>(p_gen_.rows()))
    throw InputError("scenario timestamps do not match the sample count");
  if (time_structured_ && times_.empty())
    throw InputError("time-structured scenario set needs timestamps");
  if ((p_gen_.array() < 0.0).any() || (p_load_.array() < 0.0).any())
    throw InputError("scenario contains negative power values");

  mean_gen_ = p_gen_.colwise().mean().transpose();
  mean_load_ = p_load_.colwise().mean().transpose();
  dev_gen_ = p_gen_.rowwise() - mean_gen_.transpose();
  dev_load_ = p_load_.rowwise() - mean_load_.transpose();
}

SamplePoint ScenarioSet::sample(std::size_t w) const {
  const auto row = static_cast<Eigen::Index>(w);
  SamplePoint s;
  s.p_gen_kw.resize(house_count());
  s.p_load_kw.resize(house_count());
  for (std::size_t h = 0; h < house_count(); ++h) {
    s.p_gen_kw[h] = p_gen_(row, static_cast<Eigen::Index>(h));
    s.p_load_kw[h] = p_load_(row, static_cast<Eigen::Index>(h));
  }
  if (!times_.empty()) s.time = times_[w];
  return s;
}

SamplePoint ScenarioSet::mean_point() const {
  SamplePoint s;
  s.p_gen_kw.assign(mean_gen_.data(), mean_gen_.data() + mean_gen_.size());
  s.p_load_kw.assign(mean_load_.data(), mean_load_.data() + mean_load_.size());
  return s;
}

double gamma_from_pf(double pf) {
  if (!(pf > 0.0 && pf <= 1.0))
    throw InputError("power factor must lie in (0, 1]");
  return std::sqrt((1.0 - pf * pf) / (pf * pf));
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    out.push_back(field);
  }
  return out;
}

double parse_number(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InputError("line " + std::to_string(line_no) + ": invalid number \"" + s + "\"");
  }
}

}  // namespace

RawSeries parse_timeseries(std::istream& in, const FeederModel& feeder, const TimeseriesOptions& options) {
  const std::vector<std::string>& houses = feeder.house_ids();
  const auto h_count = static_cast<Eigen::Index>(houses.size());
  constexpr double kUnset = -1.0;

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw InputError("time series file is empty");
  ++line_no;
  const auto header = split_csv_line(line);
  const std::vector<std::string> expected{"day", "minute", "house_id", "p_gen_kw", "p_load_kw"};
  if (header != expected)
    throw InputError("time series header must be day,minute,house_id,p_gen_kw,p_load_kw");

  std::map<int, DaySeries> days;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5)
      throw InputError("line " + std::to_string(line_no) + ": expected 5 fields");
    const int day = static_cast<int>(parse_number(f[0], line_no));
    const int minute = static_cast<int>(parse_number(f[1], line_no));
    if (minute < 0 || minute >= kMinutesPerDay)
      throw InputError("line " + std::to_string(line_no) + ": minute outside 0-1439");
    const auto house = feeder.find_house(f[2]);
    if (!house) throw InputError("line " + std::to_string(line_no) + ": unknown house id \"" + f[2] + "\"");
    const double gen = parse_number(f[3], line_no);
    const double load = parse_number(f[4], line_no);
    if (gen < 0.0 || load < 0.0)
      throw InputError("line " + std::to_string(line_no) + ": negative power value");

    auto [it, fresh] = days.try_emplace(day);
    if (fresh) {
      it->second.day = day;
      it->second.p_gen = Eigen::MatrixXd::Constant(kMinutesPerDay, h_count, kUnset);
      it->second.p_load = Eigen::MatrixXd::Constant(kMinutesPerDay, h_count, kUnset);
    }
    const auto col = static_cast<Eigen::Index>(*house);
    it->second.p_gen(minute, col) = gen * options.scale;
    it->second.p_load(minute, col) = load * options.scale;
  }

  RawSeries out;
  out.house_ids = houses;
  for (auto& [day, ds] : days) {
    for (Eigen::Index h = 0; h < h_count; ++h) {
      for (Eigen::Index m = 0; m < kMinutesPerDay; ++m) {
        if (ds.p_gen(m, h) != kUnset) continue;
        if (options.gaps == GapPolicy::Reject || m == 0) {
          // A house absent for the whole day is reported as a missing house.
          if ((ds.p_gen.col(h).array() == kUnset).all())
            throw InputError("day " + std::to_string(day) + ": no data for house \"" +
                             houses[static_cast<std::size_t>(h)] + "\"");
          throw InputError("incomplete day " + std::to_string(day) + " for house \"" +
                           houses[static_cast<std::size_t>(h)] + "\" (minute " + std::to_string(m) +
                           " missing)");
        }
        ds.p_gen(m, h) = ds.p_gen(m - 1, h);
        ds.p_load(m, h) = ds.p_load(m - 1, h);
      }
    }
    out.days.push_back(std::move(ds));
  }
  if (out.days.empty()) throw InputError("time series file has no data rows");
  return out;
}

RawSeries load_timeseries(const std::filesystem::path& path, const FeederModel& feeder,
                          const TimeseriesOptions& options) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open time series file " + path.string());
  return parse_timeseries(in, feeder, options);
}

void write_timeseries_csv(const RawSeries& series, std::ostream& out) {
  out << "day,minute,house_id,p_gen_kw,p_load_kw\n";
  out.precision(17);
  for (const DaySeries& ds : series.days)
    for (int m = 0; m < kMinutesPerDay; ++m)
      for (std::size_t h = 0; h < series.house_count(); ++h) {
        const auto col = static_cast<Eigen::Index>(h);
        out << ds.day << ',' << m << ',' << series.house_ids[h] << ',' << ds.p_gen(m, col) << ','
            << ds.p_load(m, col) << '\n';
      }
}

ScenarioSet scenarios_from_days(const RawSeries& series, const std::vector<std::size_t>& day_positions) {
  if (day_positions.empty()) throw InputError("no days selected");
  const auto h = static_cast<Eigen::Index>(series.house_count());
  const auto m = static_cast<Eigen::Index>(day_positions.size() * kMinutesPerDay);
  Eigen::MatrixXd gen(m, h), load(m, h);
  std::vector<SampleTime> times;
  times.reserve(static_cast<std::size_t>(m));
  Eigen::Index row = 0;
  for (std::size_t pos : day_positions) {
    const DaySeries& ds = series.days.at(pos);
    gen.middleRows(row, kMinutesPerDay) = ds.p_gen;
    load.middleRows(row, kMinutesPerDay) = ds.p_load;
    for (int minute = 0; minute < kMinutesPerDay; ++minute) times.push_back({ds.day, minute});
    row += kMinutesPerDay;
  }
  return ScenarioSet(series.house_ids, std::move(gen), std::move(load), std::move(times), true);
}

ScenarioSet all_days(const RawSeries& series) {
  std::vector<std::size_t> pos(series.days.size());
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  return scenarios_from_days(series, pos);
}

namespace {

// First k entries of a seeded Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> choose_without_replacement(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

ScenarioSet draw_full_days(const RawSeries& series, std::size_t n_days, std::uint64_t seed) {
  if (n_days == 0) throw InputError("at least one day must be drawn");
  if (n_days > series.days.size())
    throw InputError("insufficient days: requested " + std::to_string(n_days) + " of " +
                     std::to_string(series.days.size()) + " available");
  auto chosen = choose_without_replacement(series.days.size(), n_days, seed);
  std::sort(chosen.begin(), chosen.end());
  return scenarios_from_days(series, chosen);
}

ScenarioSet draw_random(const RawSeries& series, std::size_t m, std::uint64_t seed) {
  const std::size_t pool = series.days.size() * kMinutesPerDay;
  if (m == 0) throw InputError("at least one sample must be drawn");
  if (m > pool)
    throw InputError("m too large: requested " + std::to_string(m) + " samples from a pool of " +
                     std::to_string(pool));
  auto chosen = choose_without_replacement(pool, m, seed);
  std::sort(chosen.begin(), chosen.end());

  const auto h = static_cast<Eigen::Index>(series.house_count());
  Eigen::MatrixXd gen(static_cast<Eigen::Index>(m), h), load(static_cast<Eigen::Index>(m), h);
  std::vector<SampleTime> times;
  times.reserve(m);
  for (std::size_t r = 0; r < m; ++r) {
    const DaySeries& ds = series.days[chosen[r] / kMinutesPerDay];
    const auto minute = static_cast<Eigen::Index>(chosen[r] % kMinutesPerDay);
    gen.row(static_cast<Eigen::Index>(r)) = ds.p_gen.row(minute);
    load.row(static_cast<Eigen::Index>(r)) = ds.p_load.row(minute);
    times.push_back({ds.day, static_cast<int>(minute)});
  }
  return ScenarioSet(series.house_ids, std::move(gen), std::move(load), std::move(times), false);
}

std::pair<RawSeries, RawSeries> split_days(const RawSeries& series, std::size_t held_out, std::uint64_t seed) {
  if (held_out >= series.days.size())
    throw InputError("cannot hold out " + std::to_string(held_out) + " of " +
                     std::to_string(series.days.size()) + " days");
  auto out_pos = choose_without_replacement(series.days.size(), held_out, seed);
  std::sort(out_pos.begin(), out_pos.end());
  RawSeries in_pool{series.house_ids, {}};
  RawSeries out_pool{series.house_ids, {}};
  for (std::size_t i = 0; i < series.days.size(); ++i) {
    if (std::binary_search(out_pos.begin(), out_pos.end(), i))
      out_pool.days.push_back(series.days[i]);
    else
      in_pool.days.push_back(series.days[i]);
  }
  return {std::move(in_pool), std::move(out_pool)};
}

namespace {

Injections injections_impl(const FeederModel& feeder, const Eigen::VectorXd& q_setpoints,
                           const auto& p_gen, const auto& p_load) {
  if (q_setpoints.size() != static_cast<Eigen::Index>(feeder.inverters().size()))
    throw InputError("one reactive set-point per inverter is required");
  const auto nc = static_cast<Eigen::Index>(feeder.connections().size());
  const double s_base = feeder.s_base_kva();
  Injections inj{Eigen::VectorXd::Zero(nc), Eigen::VectorXd::Zero(nc)};
  for (std::size_t k = 0; k < feeder.inverters().size(); ++k) {
    const Inverter& inv = feeder.inverters()[k];
    const auto c = static_cast<Eigen::Index>(*feeder.connection_index(inv.node, inv.phase));
    inj.p(c) += p_gen(inv.house) / s_base;
    inj.q(c) += q_setpoints(static_cast<Eigen::Index>(k));
  }
  for (const Load& ld : feeder.loads()) {
    const auto c = static_cast<Eigen::Index>(*feeder.connection_index(ld.node, ld.phase));
    const double pl = p_load(ld.house) / s_base;
    inj.p(c) -= pl;
    inj.q(c) -= gamma_from_pf(ld.pf) * pl;
  }
  for (const FixedLoad& fl : feeder.fixed_loads()) {
    const auto c = static_cast<Eigen::Index>(*feeder.connection_index(fl.node, fl.phase));
    inj.p(c) -= fl.p_kw / s_base;
    inj.q(c) -= fl.q_kvar / s_base;
  }
  return inj;
}

}  // namespace

Injections injections_for(const SamplePoint& sample, const Eigen::VectorXd& q_setpoints, const FeederModel& feeder) {
  if (sample.p_gen_kw.size() != feeder.house_ids().size() || sample.p_load_kw.size() != feeder.house_ids().size())
    throw InputError("sample does not cover every house of the feeder");
  return injections_impl(
      feeder, q_setpoints, [&](std::size_t h) { return sample.p_gen_kw[h]; },
      [&](std::size_t h) { return sample.p_load_kw[h]; });
}

Injections injections_for(const ScenarioSet& scenarios, std::size_t w, const Eigen::VectorXd& q_setpoints,
                          const FeederModel& feeder) {
  if (scenarios.house_count() != feeder.house_ids().size())
    throw InputError("scenario set does not cover every house of the feeder");
  const auto row = static_cast<Eigen::Index>(w);
  return injections_impl(
      feeder, q_setpoints, [&](std::size_t h) { return scenarios.p_gen()(row, static_cast<Eigen::Index>(h)); },
      [&](std::size_t h) { return scenarios.p_load()(row, static_cast<Eigen::Index>(h)); });
}

}  // namespace ccopf
