#include "rtkvio/geodesy.hpp"

#include <algorithm>
#include <cmath>

namespace rtkvio {

namespace {
constexpr double kA = 6378137.0;
constexpr double kF = 1.0 / 298.257223563;
constexpr double kE2 = kF * (2.0 - kF);
constexpr double kPi = 3.14159265358979323846;
}  // namespace

EcefPosition geodetic_to_ecef(const Geodetic& g) {
  const double s = std::sin(g.latitude);
  const double c = std::cos(g.latitude);
  const double n = kA / std::sqrt(1.0 - kE2 * s * s);
  return EcefPosition((n + g.height) * c * std::cos(g.longitude),
                      (n + g.height) * c * std::sin(g.longitude),
                      (n * (1.0 - kE2) + g.height) * s);
}

Geodetic ecef_to_geodetic(const EcefPosition& p) {
  const double r = std::hypot(p.x(), p.y());
  Geodetic g;
  g.longitude = std::atan2(p.y(), p.x());
  // Fixed-point iteration on latitude; converges to sub-millimeter in a few steps.
  double lat = std::atan2(p.z(), r * (1.0 - kE2));
  double n = kA;
  for (int i = 0; i < 10; ++i) {
    const double s = std::sin(lat);
    n = kA / std::sqrt(1.0 - kE2 * s * s);
    const double next = std::atan2(p.z() + kE2 * n * s, r);
    if (std::abs(next - lat) < 1e-14) {
      lat = next;
      break;
    }
    lat = next;
  }
  g.latitude = lat;
  const double s = std::sin(lat);
  n = kA / std::sqrt(1.0 - kE2 * s * s);
  g.height = std::abs(lat) < kPi / 4 ? r / std::cos(lat) - n
                                     : p.z() / s - n * (1.0 - kE2);
  return g;
}

Mat3 enu_to_ecef_rotation(double latitude, double longitude) {
  const double sl = std::sin(latitude), cl = std::cos(latitude);
  const double so = std::sin(longitude), co = std::cos(longitude);
  Mat3 r;
  r << -so, -sl * co, cl * co,
        co, -sl * so, cl * so,
       0.0,       cl,      sl;
  return r;
}

LookAngles look_angles(const EcefPosition& from, const EcefPosition& target) {
  const Geodetic g = ecef_to_geodetic(from);
  const Vec3 enu = enu_to_ecef_rotation(g.latitude, g.longitude).transpose() *
                   (target - from).normalized();
  LookAngles out;
  out.azimuth = std::atan2(enu.x(), enu.y());
  if (out.azimuth < 0.0) out.azimuth += 2.0 * kPi;
  out.elevation = std::asin(std::clamp(enu.z(), -1.0, 1.0));
  return out;
}

}  // namespace rtkvio
