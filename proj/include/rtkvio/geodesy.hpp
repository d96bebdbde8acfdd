#pragma once

// WGS84 geodetic coordinates and local east-north-up frames.

#include "rtkvio/frames.hpp"

namespace rtkvio {

struct Geodetic {
  double latitude = 0.0;   // rad
  double longitude = 0.0;  // rad
  double height = 0.0;     // m above the ellipsoid
};

EcefPosition geodetic_to_ecef(const Geodetic& g);
Geodetic ecef_to_geodetic(const EcefPosition& p);

// Columns are the east, north and up axes expressed in ECEF.
Mat3 enu_to_ecef_rotation(double latitude, double longitude);

// Elevation and azimuth (from north, clockwise) of `target` seen from `from`.
struct LookAngles {
  double azimuth = 0.0;
  double elevation = 0.0;
};
LookAngles look_angles(const EcefPosition& from, const EcefPosition& target);

}  // namespace rtkvio
