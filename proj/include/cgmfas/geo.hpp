#pragma once

#include <array>
#include <cmath>

#include "cgmfas/common.hpp"

namespace cgmfas {

inline constexpr double kKmPerDegLat = 111.195;
inline constexpr double kDegPerRad = 180.0 / M_PI;

struct GeoPoint {
    double lat = 0.0;       // degrees
    double lon = 0.0;       // degrees
    double depth_km = 0.0;  // 0 for stations

    void validate() const {
        if (!(lat >= -90.0 && lat <= 90.0)) throw GeometryError("latitude out of range");
        if (!(lon >= -180.0 && lon <= 180.0)) throw GeometryError("longitude out of range");
        if (!(depth_km >= 0.0)) throw GeometryError("negative depth");
    }
};

using Vec2 = std::array<double, 2>;  // km east, km north

/// Equirectangular local frame. Valid over a few hundred km; sub-percent
/// distortion at the ~200 km domain scale this library targets.
struct LocalFrame {
    GeoPoint origin;
    double km_per_deg_lat = kKmPerDegLat;
    double km_per_deg_lon = kKmPerDegLat;
    double validity_km = 350.0;
};

inline LocalFrame make_local_frame(const GeoPoint& origin) {
    origin.validate();
    LocalFrame f;
    f.origin = origin;
    f.km_per_deg_lat = kKmPerDegLat;
    f.km_per_deg_lon = kKmPerDegLat * std::cos(origin.lat / kDegPerRad);
    return f;
}

inline Vec2 project(const LocalFrame& frame, const GeoPoint& p) {
    return {(p.lon - frame.origin.lon) * frame.km_per_deg_lon,
            (p.lat - frame.origin.lat) * frame.km_per_deg_lat};
}

inline GeoPoint unproject(const LocalFrame& frame, const Vec2& xy, double depth_km = 0.0) {
    return {frame.origin.lat + xy[1] / frame.km_per_deg_lat,
            frame.origin.lon + xy[0] / frame.km_per_deg_lon, depth_km};
}

/// Source-site pair geometry. Point-source convention: r_rup is the 3-D
/// hypocentral distance. Azimuth is the source-to-site bearing in degrees,
/// 0 = north, 90 = east, wrapped to [0, 360).
struct PathGeometry {
    Vec2 event_xy{};
    Vec2 station_xy{};
    double event_depth = 0.0;
    double r_rup = 0.0;
    double azimuth_deg = 0.0;
};

inline void check_in_frame(const LocalFrame& frame, const Vec2& xy, const char* what) {
    if (std::fabs(xy[0]) > frame.validity_km || std::fabs(xy[1]) > frame.validity_km)
        throw GeometryError(std::string(what) + " outside local frame validity region");
}

inline PathGeometry path_geometry(const LocalFrame& frame, const GeoPoint& event,
                                  const GeoPoint& station) {
    event.validate();
    station.validate();
    PathGeometry g;
    g.event_xy = project(frame, event);
    g.station_xy = project(frame, station);
    check_in_frame(frame, g.event_xy, "event");
    check_in_frame(frame, g.station_xy, "station");
    const double dx = g.station_xy[0] - g.event_xy[0];
    const double dy = g.station_xy[1] - g.event_xy[1];
    const double horiz = std::hypot(dx, dy);
    g.event_depth = event.depth_km;
    g.r_rup = std::hypot(horiz, event.depth_km);
    if (horiz == 0.0) {
        if (event.depth_km == 0.0)
            throw GeometryError("coincident event/station epicenters at zero depth: azimuth undefined");
        g.azimuth_deg = 0.0;  // vertical path, bearing conventionally north
    } else {
        double az = std::atan2(dx, dy) * kDegPerRad;
        if (az < 0.0) az += 360.0;
        if (az >= 360.0) az -= 360.0;
        g.azimuth_deg = az;
    }
    return g;
}

struct PathDeltas {
    double d_r = 0.0;   // |r_rup difference|, km
    double d_az = 0.0;  // azimuth difference wrapped to [0, 180], degrees
    double d_ss = 0.0;  // station separation, km
};

inline PathDeltas path_deltas(const PathGeometry& a, const PathGeometry& b) {
    PathDeltas d;
    d.d_r = std::fabs(a.r_rup - b.r_rup);
    double az = std::fabs(a.azimuth_deg - b.azimuth_deg);
    az = std::fmod(az, 360.0);
    if (az > 180.0) az = 360.0 - az;
    d.d_az = az;
    d.d_ss = std::hypot(a.station_xy[0] - b.station_xy[0], a.station_xy[1] - b.station_xy[1]);
    return d;
}

}  // namespace cgmfas
