#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "ccopf/errors.hpp"
#include "ccopf/scenario.hpp"

namespace ccopf {

std::vector<std::string> default_house_ids(std::size_t houses) {
  std::vector<std::string> ids;
  for (std::size_t h = 1; h <= houses; ++h) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "h%02zu", h);
    ids.emplace_back(buf);
  }
  return ids;
}

namespace {

// Clear-sky shape: raised cosine between sunrise and sunset, 1 at solar noon.
double clear_sky(double minute, const SynthParams& p) {
  if (minute <= p.sunrise_minute || minute >= p.sunset_minute) return 0.0;
  const double x = (minute - p.sunrise_minute) / (p.sunset_minute - p.sunrise_minute);
  const double s = std::sin(std::numbers::pi * x);
  return s * s;
}

double gaussian_bump(double minute, double center, double width) {
  const double z = (minute - center) / width;
  return std::exp(-0.5 * z * z);
}

}  // namespace

RawSeries synthesize(const std::vector<std::string>& house_ids, std::size_t days, std::uint64_t seed,
                     const SynthParams& params) {
  if (house_ids.empty() || days == 0)
    throw InputError("synthesize needs at least one house and one day");
  const std::size_t houses = house_ids.size();
  const auto h_count = static_cast<Eigen::Index>(houses);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  // Fixed per-house traits drawn once.
  std::vector<double> load_level(houses), evening_shift(houses);
  for (std::size_t h = 0; h < houses; ++h) {
    load_level[h] = 0.7 + 0.6 * uniform(rng);
    evening_shift[h] = 60.0 * (uniform(rng) - 0.5);
  }

  const double innov = std::sqrt(1.0 - params.cloud_persistence * params.cloud_persistence);
  const double w_shared = params.shared_cloud_weight;
  const double w_own = std::sqrt(std::max(0.0, 1.0 - w_shared * w_shared));
  const double spike_prob = params.spike_rate_per_hour / 60.0;

  RawSeries out;
  out.house_ids = house_ids;
  for (std::size_t d = 0; d < days; ++d) {
    DaySeries ds;
    ds.day = static_cast<int>(d);
    ds.p_gen = Eigen::MatrixXd::Zero(kMinutesPerDay, h_count);
    ds.p_load = Eigen::MatrixXd::Zero(kMinutesPerDay, h_count);

    const bool overcast = uniform(rng) < params.overcast_probability;
    double shared = 0.0;
    std::vector<double> own(houses, 0.0);
    std::vector<double> spike_left(houses, 0.0), spike_kw(houses, 0.0);

    for (int m = 0; m < kMinutesPerDay; ++m) {
      shared = params.cloud_persistence * shared + innov * normal(rng);
      const double sky = clear_sky(m, params);
      for (std::size_t h = 0; h < houses; ++h) {
        const auto col = static_cast<Eigen::Index>(h);
        own[h] = params.cloud_persistence * own[h] + innov * normal(rng);
        const double ar = params.cloud_sigma / innov * (w_shared * shared + w_own * own[h]);
        double atten = std::clamp(params.cloud_bias + ar, 0.0, 0.9);
        if (overcast) atten = std::max(atten, 0.6);
        ds.p_gen(m, col) = params.pv_peak_kw * sky * (1.0 - atten);

        const double profile = params.load_base_kw +
                               params.morning_peak_kw * gaussian_bump(m, 450.0, 70.0) +
                               params.evening_peak_kw * gaussian_bump(m, 1140.0 + evening_shift[h], 110.0);
        if (spike_left[h] <= 0.0 && uniform(rng) < spike_prob) {
          // Pareto(scale, tail) via inverse transform; exponential duration.
          spike_kw[h] = std::min(params.spike_max_kw,
                                 params.spike_scale_kw / std::pow(1.0 - uniform(rng), 1.0 / params.spike_tail_index));
          spike_left[h] = std::ceil(-params.spike_mean_minutes * std::log(1.0 - uniform(rng)));
        }
        double spike = 0.0;
        if (spike_left[h] > 0.0) {
          spike = spike_kw[h];
          spike_left[h] -= 1.0;
        }
        const double jitter = 1.0 + 0.05 * normal(rng);
        ds.p_load(m, col) = std::max(0.0, load_level[h] * profile * jitter + spike);
      }
    }
    out.days.push_back(std::move(ds));
  }
  return out;
}

RawSeries synthesize(std::size_t houses, std::size_t days, std::uint64_t seed, const SynthParams& params) {
  return synthesize(default_house_ids(houses), days, seed, params);
}

}  // namespace ccopf
