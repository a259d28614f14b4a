#include "shadowem/solar.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <stdexcept>

namespace shadowem {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double wrap_degrees(double deg) {
  double r = std::fmod(deg, 360.0);
  return r < 0.0 ? r + 360.0 : r;
}

const UtcTime kValidFrom = std::chrono::sys_days{std::chrono::year{1900} / 1 / 1};
const UtcTime kValidUntil = std::chrono::sys_days{std::chrono::year{2101} / 1 / 1};

}  // namespace

Eigen::Vector3d direction_from_angles(double azimuth_deg, double elevation_deg) {
  const double az = azimuth_deg * kDeg;
  const double el = elevation_deg * kDeg;
  return {std::sin(az) * std::cos(el), std::cos(az) * std::cos(el), std::sin(el)};
}

SunPosition sun_direction(const SolarQuery& query) {
  query.location.validate();
  if (query.instant < kValidFrom || query.instant >= kValidUntil) {
    throw std::out_of_range("solar ephemeris valid only for 1900-2100: " + format_utc(query.instant));
  }

  const double unix_seconds = static_cast<double>(query.instant.time_since_epoch().count());
  const double julian_day = unix_seconds / 86400.0 + 2440587.5;
  const double T = (julian_day - 2451545.0) / 36525.0;  // Julian centuries since J2000

  const double mean_long = wrap_degrees(280.46646 + T * (36000.76983 + T * 0.0003032));
  const double mean_anom = 357.52911 + T * (35999.05029 - 0.0001537 * T);
  const double ecc = 0.016708634 - T * (0.000042037 + 0.0000001267 * T);
  const double M = mean_anom * kDeg;
  const double center = std::sin(M) * (1.914602 - T * (0.004817 + 0.000014 * T)) +
                        std::sin(2 * M) * (0.019993 - 0.000101 * T) + std::sin(3 * M) * 0.000289;
  const double true_long = mean_long + center;
  const double omega = (125.04 - 1934.136 * T) * kDeg;
  const double apparent_long = (true_long - 0.00569 - 0.00478 * std::sin(omega)) * kDeg;

  const double mean_obliq =
      23.0 + (26.0 + (21.448 - T * (46.815 + T * (0.00059 - T * 0.001813))) / 60.0) / 60.0;
  const double obliq = (mean_obliq + 0.00256 * std::cos(omega)) * kDeg;
  const double declination = std::asin(std::sin(obliq) * std::sin(apparent_long));

  const double y = std::pow(std::tan(obliq / 2.0), 2);
  const double L0 = mean_long * kDeg;
  const double eq_time_min =
      4.0 / kDeg *
      (y * std::sin(2 * L0) - 2 * ecc * std::sin(M) + 4 * ecc * y * std::sin(M) * std::cos(2 * L0) -
       0.5 * y * y * std::sin(4 * L0) - 1.25 * ecc * ecc * std::sin(2 * M));

  const double minutes_of_day = std::fmod(unix_seconds, 86400.0) / 60.0;
  const double true_solar_min = minutes_of_day + eq_time_min + 4.0 * query.location.longitude_deg;
  const double hour_angle = (true_solar_min / 4.0 - 180.0) * kDeg;

  const double lat = query.location.latitude_deg * kDeg;
  Eigen::Vector3d enu{-std::cos(declination) * std::sin(hour_angle),
                      std::cos(lat) * std::sin(declination) -
                          std::sin(lat) * std::cos(declination) * std::cos(hour_angle),
                      std::sin(lat) * std::sin(declination) +
                          std::cos(lat) * std::cos(declination) * std::cos(hour_angle)};
  enu.normalize();

  SunPosition pos;
  pos.direction = enu;
  pos.elevation_deg = std::asin(std::clamp(enu.z(), -1.0, 1.0)) / kDeg;
  pos.azimuth_deg = wrap_degrees(std::atan2(enu.x(), enu.y()) / kDeg);
  pos.above_horizon = enu.z() > 0.0;
  return pos;
}

LightingTable lighting_table(const std::vector<UtcTime>& timestamps, const Geolocation& location) {
  LightingTable table;
  const auto n = static_cast<Index>(timestamps.size());
  table.directions.resize(3, n);
  table.above_horizon.resize(n);
  Index night = 0;
  for (Index t = 0; t < n; ++t) {
    const SunPosition pos = sun_direction({timestamps[static_cast<std::size_t>(t)], location});
    table.directions.col(t) = pos.direction;
    table.above_horizon[t] = pos.above_horizon;
    if (!pos.above_horizon) ++night;
  }
  if (night > 0) {
    std::clog << "warning: " << night << " of " << n
              << " frames have the sun below the horizon and are treated as shadowed\n";
  }
  return table;
}

LightingTable lighting_table(const ImageSequence& seq) {
  return lighting_table(seq.timestamps, seq.location);
}

}  // namespace shadowem
