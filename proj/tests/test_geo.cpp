#include <catch2/catch_amalgamated.hpp>

#include "cgmfas/geo.hpp"

using namespace cgmfas;

namespace {

// Independent great-circle oracle for projection sanity checks.
double haversine_km(const GeoPoint& a, const GeoPoint& b) {
    constexpr double r_earth = 6371.0;
    const double lat1 = a.lat / kDegPerRad, lat2 = b.lat / kDegPerRad;
    const double dlat = (b.lat - a.lat) / kDegPerRad;
    const double dlon = (b.lon - a.lon) / kDegPerRad;
    const double s = std::sin(0.5 * dlat) * std::sin(0.5 * dlat) +
                     std::cos(lat1) * std::cos(lat2) * std::sin(0.5 * dlon) * std::sin(0.5 * dlon);
    return 2.0 * r_earth * std::asin(std::sqrt(s));
}

}  // namespace

TEST_CASE("project identity at origin") {
    const auto frame = make_local_frame({37.0, -122.0, 0.0});
    const Vec2 xy = project(frame, {37.0, -122.0, 0.0});
    CHECK(xy[0] == 0.0);
    CHECK(xy[1] == 0.0);
}

TEST_CASE("project one degree of latitude") {
    const auto frame = make_local_frame({37.0, -122.0, 0.0});
    const Vec2 xy = project(frame, {38.0, -122.0, 0.0});
    CHECK(xy[0] == 0.0);
    CHECK(xy[1] == Catch::Approx(111.195).margin(0.01));
}

TEST_CASE("project one degree of longitude vs haversine oracle") {
    const auto frame = make_local_frame({37.0, -122.0, 0.0});
    const GeoPoint p{37.0, -121.0, 0.0};
    const Vec2 xy = project(frame, p);
    CHECK(xy[1] == 0.0);
    const double oracle = haversine_km(frame.origin, p);
    CHECK(std::fabs(xy[0] - oracle) / oracle < 0.005);
    CHECK(xy[0] == Catch::Approx(88.8).margin(0.3));
}

TEST_CASE("project/unproject round trip") {
    const auto frame = make_local_frame({37.7, -122.2, 0.0});
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const GeoPoint p{37.7 + rng.uniform(-1.0, 1.0), -122.2 + rng.uniform(-1.0, 1.0), 0.0};
        const GeoPoint back = unproject(frame, project(frame, p));
        CHECK(std::fabs(back.lat - p.lat) < 1e-9);
        CHECK(std::fabs(back.lon - p.lon) < 1e-9);
    }
}

TEST_CASE("path geometry 6-8-10 triangle") {
    const auto frame = make_local_frame({37.0, -122.0, 0.0});
    const GeoPoint event{37.0, -122.0, 8.0};
    const GeoPoint station = unproject(frame, {0.0, 6.0});
    const PathGeometry g = path_geometry(frame, event, station);
    CHECK(g.r_rup == Catch::Approx(10.0).epsilon(1e-9));
    CHECK(g.azimuth_deg == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("azimuth convention east = 90") {
    const auto frame = make_local_frame({37.0, -122.0, 0.0});
    const GeoPoint event{37.0, -122.0, 0.0};
    const GeoPoint station = unproject(frame, {5.0, 0.0});
    CHECK(path_geometry(frame, event, station).azimuth_deg == Catch::Approx(90.0).margin(1e-9));
}

TEST_CASE("r_rup never below event depth") {
    const auto frame = make_local_frame({37.87, -122.27, 0.0});
    const GeoPoint event{37.87, -122.27, 8.0};  // depth-8 event, any site
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const GeoPoint st = unproject(frame, {rng.uniform(-60, 60), rng.uniform(-60, 60)});
        CHECK(path_geometry(frame, event, st).r_rup >= 8.0);
    }
}

TEST_CASE("coincident epicenters at zero depth rejected") {
    const auto frame = make_local_frame({37.0, -122.0, 0.0});
    const GeoPoint p{37.2, -121.8, 0.0};
    CHECK_THROWS_AS(path_geometry(frame, p, p), GeometryError);
    // Same epicenter at depth is a legal vertical path.
    const GeoPoint deep{37.2, -121.8, 5.0};
    CHECK_NOTHROW(path_geometry(frame, deep, p));
}

TEST_CASE("points outside validity region rejected") {
    const auto frame = make_local_frame({37.0, -122.0, 0.0});
    const GeoPoint far{37.0 + 320.0 / kKmPerDegLat + 1.0, -122.0, 0.0};
    CHECK_THROWS_AS(path_geometry(frame, {37.0, -122.0, 5.0}, far), GeometryError);
}

TEST_CASE("path deltas identical path") {
    const auto frame = make_local_frame({37.0, -122.0, 0.0});
    const auto g = path_geometry(frame, {37.1, -122.1, 7.0}, {37.3, -121.9, 0.0});
    const auto d = path_deltas(g, g);
    CHECK(d.d_r == 0.0);
    CHECK(d.d_az == 0.0);
    CHECK(d.d_ss == 0.0);
}

TEST_CASE("azimuth wrap-around difference") {
    PathGeometry a, b;
    a.azimuth_deg = 350.0;
    b.azimuth_deg = 10.0;
    CHECK(path_deltas(a, b).d_az == Catch::Approx(20.0));
    CHECK(path_deltas(b, a).d_az == Catch::Approx(20.0));
}

TEST_CASE("station separation 3-4-5") {
    PathGeometry a, b;
    a.station_xy = {0.0, 0.0};
    b.station_xy = {3.0, 4.0};
    CHECK(path_deltas(a, b).d_ss == Catch::Approx(5.0));
}

TEST_CASE("path deltas symmetry and ranges over random pairs") {
    const auto frame = make_local_frame({37.0, -122.0, 0.0});
    Rng rng(11);
    for (int i = 0; i < 300; ++i) {
        const GeoPoint e1 = unproject(frame, {rng.uniform(-80, 80), rng.uniform(-80, 80)},
                                      rng.uniform(1, 12));
        const GeoPoint s1 = unproject(frame, {rng.uniform(-80, 80), rng.uniform(-80, 80)});
        const GeoPoint e2 = unproject(frame, {rng.uniform(-80, 80), rng.uniform(-80, 80)},
                                      rng.uniform(1, 12));
        const GeoPoint s2 = unproject(frame, {rng.uniform(-80, 80), rng.uniform(-80, 80)});
        const auto a = path_geometry(frame, e1, s1);
        const auto b = path_geometry(frame, e2, s2);
        const auto dab = path_deltas(a, b);
        const auto dba = path_deltas(b, a);
        CHECK(dab.d_r == dba.d_r);
        CHECK(dab.d_az == dba.d_az);
        CHECK(dab.d_ss == dba.d_ss);
        CHECK(dab.d_az >= 0.0);
        CHECK(dab.d_az <= 180.0);
        CHECK(dab.d_r >= 0.0);
        CHECK(dab.d_ss >= 0.0);
    }
}
