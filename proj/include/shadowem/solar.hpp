// Sun position from UTC time and geolocation.
//
// Uses the low-cost ephemeris of the NOAA solar calculator (Meeus-based mean
// elements plus the equation of time). Elevations are geometric: no
// atmospheric refraction is applied.
#pragma once

#include "shadowem/core.hpp"

namespace shadowem {

struct SolarQuery {
  UtcTime instant;
  Geolocation location;
};

struct SunPosition {
  Eigen::Vector3d direction;  // unit, East-North-Up
  double azimuth_deg;         // clockwise from North, [0, 360)
  double elevation_deg;
  bool above_horizon;
};

/// Throws std::out_of_range for instants outside 1900-01-01 .. 2100-12-31.
SunPosition sun_direction(const SolarQuery& query);

/// One sun direction per frame. Frames with the sun below the horizon are
/// flagged, and a warning is written to std::clog.
LightingTable lighting_table(const std::vector<UtcTime>& timestamps, const Geolocation& location);
LightingTable lighting_table(const ImageSequence& seq);

/// Unit vector for an azimuth (clockwise from North) and elevation, degrees.
Eigen::Vector3d direction_from_angles(double azimuth_deg, double elevation_deg);

}  // namespace shadowem
