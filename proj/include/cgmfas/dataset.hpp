#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cgmfas/csv.hpp"
#include "cgmfas/geo.hpp"
#include "cgmfas/gp_kernel.hpp"
#include "cgmfas/variogram.hpp"

namespace cgmfas {

enum class GridSpacing { Log, Linear };

struct FrequencyGrid {
    std::vector<double> values_hz;
    GridSpacing spacing = GridSpacing::Log;

    std::size_t size() const { return values_hz.size(); }

    void validate() const {
        if (values_hz.size() < 8) throw DataError("frequency grid needs at least 8 points");
        for (std::size_t i = 1; i < values_hz.size(); ++i)
            if (!(values_hz[i] > values_hz[i - 1]))
                throw DataError("frequency grid must be strictly increasing");
        if (!(values_hz.front() > 0.0)) throw DataError("frequencies must be positive");
    }

    /// Index of the grid point closest to f in log-frequency.
    std::size_t nearest_index(double f) const {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < values_hz.size(); ++i) {
            const double d = std::fabs(std::log(values_hz[i]) - std::log(f));
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        return best;
    }
};

struct GridSpec {
    double f_min = 2.0;
    double f_max = 15.0;
    int n = 128;
    GridSpacing spacing = GridSpacing::Log;
};

inline FrequencyGrid make_grid(const GridSpec& spec) {
    if (spec.n < 8) throw DataError("frequency grid needs at least 8 points");
    if (!(spec.f_min > 0 && spec.f_max > spec.f_min)) throw DataError("bad frequency band");
    FrequencyGrid g;
    g.spacing = spec.spacing;
    g.values_hz.resize(static_cast<std::size_t>(spec.n));
    for (int i = 0; i < spec.n; ++i) {
        const double t = spec.n == 1 ? 0.0 : static_cast<double>(i) / (spec.n - 1);
        g.values_hz[static_cast<std::size_t>(i)] =
            spec.spacing == GridSpacing::Log
                ? spec.f_min * std::pow(spec.f_max / spec.f_min, t)
                : spec.f_min + (spec.f_max - spec.f_min) * t;
    }
    g.validate();
    return g;
}

struct StationInfo {
    std::string id;
    GeoPoint point;  // depth 0
    Vec2 xy{};
};

struct EventInfo {
    std::string id;
    GeoPoint point;
    double magnitude = 0.0;
    Vec2 xy{};
};

struct Recording {
    std::string event_id;
    std::string station_id;
    std::size_t event_index = 0;    // into ResidualDataset::events
    std::size_t station_index = 0;  // into ResidualDataset::stations
    double magnitude = 0.0;
    PathGeometry path;
};

/// Within-site residual spectra keyed by (event, station), on one shared
/// frequency grid and one local planar frame. dws row i belongs to
/// recordings[i]; rows are sorted by (event_id, station_id).
struct ResidualDataset {
    FrequencyGrid grid;
    LocalFrame frame;
    std::vector<Recording> recordings;
    std::vector<StationInfo> stations;
    std::vector<EventInfo> events;
    Eigen::MatrixXd dws;  // [recording x frequency], ln units
    std::vector<std::string> load_warnings;

    std::vector<PathGeometry> paths() const {
        std::vector<PathGeometry> out(recordings.size());
        for (std::size_t i = 0; i < recordings.size(); ++i) out[i] = recordings[i].path;
        return out;
    }

    /// Station bounding box in frame km, the conditioning domain.
    void domain_box(double& x0, double& x1, double& y0, double& y1) const {
        x0 = y0 = std::numeric_limits<double>::infinity();
        x1 = y1 = -std::numeric_limits<double>::infinity();
        for (const auto& s : stations) {
            x0 = std::min(x0, s.xy[0]);
            x1 = std::max(x1, s.xy[0]);
            y0 = std::min(y0, s.xy[1]);
            y1 = std::max(y1, s.xy[1]);
        }
        for (const auto& e : events) {
            x0 = std::min(x0, e.xy[0]);
            x1 = std::max(x1, e.xy[0]);
            y0 = std::min(y0, e.xy[1]);
            y1 = std::max(y1, e.xy[1]);
        }
    }
};

namespace detail {

inline void sort_and_index(ResidualDataset& ds, std::vector<Eigen::VectorXd>& rows) {
    std::vector<std::size_t> order(ds.recordings.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ra = ds.recordings[a];
        const auto& rb = ds.recordings[b];
        return std::tie(ra.event_id, ra.station_id) < std::tie(rb.event_id, rb.station_id);
    });
    std::vector<Recording> sorted;
    sorted.reserve(order.size());
    ds.dws.resize(static_cast<Eigen::Index>(order.size()), static_cast<Eigen::Index>(ds.grid.size()));
    for (std::size_t k = 0; k < order.size(); ++k) {
        sorted.push_back(ds.recordings[order[k]]);
        ds.dws.row(static_cast<Eigen::Index>(k)) = rows[order[k]].transpose();
    }
    ds.recordings = std::move(sorted);

    std::map<std::string, std::size_t> sidx, eidx;
    for (std::size_t i = 0; i < ds.stations.size(); ++i) sidx[ds.stations[i].id] = i;
    for (std::size_t i = 0; i < ds.events.size(); ++i) eidx[ds.events[i].id] = i;
    for (auto& r : ds.recordings) {
        r.station_index = sidx.at(r.station_id);
        r.event_index = eidx.at(r.event_id);
    }
}

/// Linear interpolation in log-frequency. Values at shared grid points are
/// preserved exactly.
inline Eigen::VectorXd resample_log_linear(const std::vector<double>& src_f,
                                           const Eigen::VectorXd& src_v,
                                           const std::vector<double>& dst_f) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(dst_f.size()));
    for (std::size_t k = 0; k < dst_f.size(); ++k) {
        const double f = dst_f[k];
        if (f < src_f.front() - 1e-12 || f > src_f.back() + 1e-12)
            throw DataError("target frequency " + format_g9(f) + " outside source band [" +
                            format_g9(src_f.front()) + ", " + format_g9(src_f.back()) + "]");
        const auto it = std::lower_bound(src_f.begin(), src_f.end(), f);
        std::size_t hi = static_cast<std::size_t>(it - src_f.begin());
        if (hi == 0) {
            out[static_cast<Eigen::Index>(k)] = src_v[0];
            continue;
        }
        if (hi >= src_f.size()) hi = src_f.size() - 1;
        const std::size_t lo = hi - 1;
        if (src_f[hi] == f) {
            out[static_cast<Eigen::Index>(k)] = src_v[static_cast<Eigen::Index>(hi)];
            continue;
        }
        const double t = (std::log(f) - std::log(src_f[lo])) / (std::log(src_f[hi]) - std::log(src_f[lo]));
        out[static_cast<Eigen::Index>(k)] = (1.0 - t) * src_v[static_cast<Eigen::Index>(lo)] +
                                            t * src_v[static_cast<Eigen::Index>(hi)];
    }
    return out;
}

}  // namespace detail

/// Reads the sidecar frequency file: one Hz value per line.
inline std::vector<double> load_frequency_sidecar(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open frequency file: " + path);
    std::vector<double> f;
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = csv::trim(line);
        if (t.empty() || t[0] == '#') continue;
        f.push_back(csv::parse_double(t, "frequency"));
    }
    if (f.empty()) throw DataError("frequency file is empty: " + path);
    for (std::size_t i = 1; i < f.size(); ++i)
        if (!(f[i] > f[i - 1])) throw DataError("sidecar frequencies must be strictly increasing");
    return f;
}

/// Loads the interchange CSV
///   event_id,station_id,event_lat,event_lon,event_depth_km,station_lat,
///   station_lon,magnitude,dws_f1,...,dws_fN
/// with the sidecar frequency list, and resamples every spectrum onto the
/// requested working grid. Rows with missing coordinates are dropped with
/// a per-row diagnostic; structural problems throw DataError.
inline ResidualDataset load_dataset(const std::string& csv_path, const std::string& freq_path,
                                    const GridSpec& grid_spec) {
    const std::vector<double> src_f = load_frequency_sidecar(freq_path);
    const csv::Table t = csv::read_file(csv_path);

    const char* fixed[] = {"event_id", "station_id", "event_lat", "event_lon",
                           "event_depth_km", "station_lat", "station_lon", "magnitude"};
    if (t.header.size() != 8 + src_f.size())
        throw DataError("CSV header has " + std::to_string(t.header.size()) + " columns, expected " +
                        std::to_string(8 + src_f.size()));
    for (int i = 0; i < 8; ++i)
        if (t.header[static_cast<std::size_t>(i)] != fixed[i])
            throw DataError(std::string("CSV schema error: column ") + std::to_string(i + 1) +
                            " must be " + fixed[i]);
    for (std::size_t i = 0; i < src_f.size(); ++i)
        if (t.header[8 + i].rfind("dws_f", 0) != 0)
            throw DataError("CSV schema error: residual columns must be named dws_f*");

    ResidualDataset ds;
    ds.grid = make_grid(grid_spec);

    // Frame centered on the bounding box of all coordinates in the file.
    double lat0 = 0, lon0 = 0;
    {
        double lat_min = 90, lat_max = -90, lon_min = 180, lon_max = -180;
        bool any = false;
        for (const auto& row : t.rows) {
            if (row.size() != t.header.size()) continue;
            for (int c : {2, 5}) {
                if (row[static_cast<std::size_t>(c)].empty() || row[static_cast<std::size_t>(c + 1)].empty())
                    continue;
                const double lat = csv::parse_double(row[static_cast<std::size_t>(c)], "lat");
                const double lon = csv::parse_double(row[static_cast<std::size_t>(c + 1)], "lon");
                lat_min = std::min(lat_min, lat);
                lat_max = std::max(lat_max, lat);
                lon_min = std::min(lon_min, lon);
                lon_max = std::max(lon_max, lon);
                any = true;
            }
        }
        lat0 = any ? 0.5 * (lat_min + lat_max) : 0.0;
        lon0 = any ? 0.5 * (lon_min + lon_max) : 0.0;
    }
    ds.frame = make_local_frame({lat0, lon0, 0.0});

    std::map<std::string, std::size_t> station_index, event_index;
    std::set<std::pair<std::string, std::string>> seen;
    std::vector<Eigen::VectorXd> rows;

    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string where = "row " + std::to_string(r + 2);  // 1-based with header
        if (row.size() != t.header.size())
            throw DataError(where + ": expected " + std::to_string(t.header.size()) + " fields, got " +
                            std::to_string(row.size()));
        bool missing_coord = false;
        for (int c = 2; c <= 6; ++c)
            if (row[static_cast<std::size_t>(c)].empty()) missing_coord = true;
        if (missing_coord) {
            ds.load_warnings.push_back(where + ": missing coordinates, row rejected");
            continue;
        }

        Recording rec;
        rec.event_id = row[0];
        rec.station_id = row[1];
        if (rec.event_id.empty() || rec.station_id.empty())
            throw DataError(where + ": empty event or station id");
        if (!seen.insert({rec.event_id, rec.station_id}).second)
            throw DataError(where + ": duplicate (event, station) pair " + rec.event_id + "/" +
                            rec.station_id);

        const GeoPoint ev{csv::parse_double(row[2], "event_lat"), csv::parse_double(row[3], "event_lon"),
                          csv::parse_double(row[4], "event_depth_km")};
        const GeoPoint st{csv::parse_double(row[5], "station_lat"), csv::parse_double(row[6], "station_lon"),
                          0.0};
        rec.magnitude = csv::parse_double(row[7], "magnitude");

        Eigen::VectorXd raw(static_cast<Eigen::Index>(src_f.size()));
        for (std::size_t k = 0; k < src_f.size(); ++k) {
            const double v = csv::parse_double(row[8 + k], "dws");
            if (!std::isfinite(v)) throw DataError(where + ": non-finite residual value");
            raw[static_cast<Eigen::Index>(k)] = v;
        }
        Eigen::VectorXd resampled = detail::resample_log_linear(src_f, raw, ds.grid.values_hz);
        for (Eigen::Index k = 0; k < resampled.size(); ++k)
            if (std::fabs(resampled[k]) >= 10.0)
                throw DataError(where + ": residual magnitude exceeds sanity bound 10");

        if (auto it = event_index.find(rec.event_id); it == event_index.end()) {
            event_index[rec.event_id] = ds.events.size();
            ds.events.push_back({rec.event_id, ev, rec.magnitude, project(ds.frame, ev)});
        }
        if (auto it = station_index.find(rec.station_id); it == station_index.end()) {
            station_index[rec.station_id] = ds.stations.size();
            ds.stations.push_back({rec.station_id, st, project(ds.frame, st)});
        }
        rec.path = path_geometry(ds.frame, ev, st);
        ds.recordings.push_back(std::move(rec));
        rows.push_back(std::move(resampled));
    }

    detail::sort_and_index(ds, rows);
    return ds;
}

/// Writes a dataset back to the interchange CSV + sidecar, 9 significant
/// digits, rows sorted by (event_id, station_id).
inline void save_dataset(const ResidualDataset& ds, const std::string& csv_path,
                         const std::string& freq_path) {
    {
        std::ofstream f(freq_path);
        if (!f) throw DataError("cannot open for writing: " + freq_path);
        for (double v : ds.grid.values_hz) f << format_g9(v) << "\n";
    }
    csv::Writer w(csv_path);
    std::vector<std::string> header = {"event_id",       "station_id",  "event_lat",
                                       "event_lon",      "event_depth_km", "station_lat",
                                       "station_lon",    "magnitude"};
    for (std::size_t k = 0; k < ds.grid.size(); ++k)
        header.push_back("dws_f" + std::to_string(k + 1));
    w.row(header);
    for (std::size_t i = 0; i < ds.recordings.size(); ++i) {
        const auto& r = ds.recordings[i];
        const auto& ev = ds.events[r.event_index];
        const auto& st = ds.stations[r.station_index];
        std::vector<std::string> row = {r.event_id,
                                        r.station_id,
                                        format_g9(ev.point.lat),
                                        format_g9(ev.point.lon),
                                        format_g9(ev.point.depth_km),
                                        format_g9(st.point.lat),
                                        format_g9(st.point.lon),
                                        format_g9(r.magnitude)};
        for (std::size_t k = 0; k < ds.grid.size(); ++k)
            row.push_back(format_g9(ds.dws(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))));
        w.row(row);
    }
}

// ---------------------------------------------------------------------------
// Synthetic datasets with known ground truth (the verification oracle).

struct SynthConfig {
    int n_stations = 80;
    int n_events = 60;
    int n_recordings = 500;  // pairs sampled without replacement
    double lat_center = 37.7;
    double lon_center = -122.2;
    double half_extent_km = 75.0;  // square domain half width
    double depth_min_km = 2.0;
    double depth_max_km = 12.0;
    double mag_min = 2.0;
    double mag_max = 4.0;
    GpHyperparameters gp;          // phi_p2p may be 0 for the degenerate case
    double freq_corr_octaves = 1.0;  // squared-exponential length in log2 Hz
    GridSpec grid;
};

struct SyntheticTruth {
    GpHyperparameters gp;
    double freq_corr_octaves = 1.0;
    Eigen::MatrixXd path_terms;  // [recording x frequency]
    std::uint64_t seed = 0;
};

/// Draws a zero-mean path-effect field whose covariance is the Kronecker
/// product of the smooth spatial path kernel and a squared-exponential
/// interfrequency kernel in log2 frequency, then adds independent nugget
/// noise per (pair, frequency). Sampling uses the matrix-normal identity
/// T = L_space Z L_freq', so only the two marginal factors are factorized.
inline std::pair<ResidualDataset, SyntheticTruth> synth_generate(const SynthConfig& cfg,
                                                                 std::uint64_t seed) {
    if (cfg.n_stations < 1 || cfg.n_events < 1) throw DataError("need at least one station and event");
    ResidualDataset ds;
    ds.grid = make_grid(cfg.grid);
    ds.frame = make_local_frame({cfg.lat_center, cfg.lon_center, 0.0});

    Rng rng(derive_seed(seed, 0xD5));
    const auto id_of = [](const char* prefix, int i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%s%04d", prefix, i);
        return std::string(buf);
    };

    const double half_lat = cfg.half_extent_km / ds.frame.km_per_deg_lat;
    const double half_lon = cfg.half_extent_km / ds.frame.km_per_deg_lon;
    for (int i = 0; i < cfg.n_stations; ++i) {
        GeoPoint p{cfg.lat_center + rng.uniform(-half_lat, half_lat),
                   cfg.lon_center + rng.uniform(-half_lon, half_lon), 0.0};
        ds.stations.push_back({id_of("st", i), p, project(ds.frame, p)});
    }
    for (int i = 0; i < cfg.n_events; ++i) {
        GeoPoint p{cfg.lat_center + rng.uniform(-half_lat, half_lat),
                   cfg.lon_center + rng.uniform(-half_lon, half_lon),
                   rng.uniform(cfg.depth_min_km, cfg.depth_max_km)};
        ds.events.push_back({id_of("ev", i), p, rng.uniform(cfg.mag_min, cfg.mag_max),
                             project(ds.frame, p)});
    }

    // Sample distinct (event, station) pairs.
    const long total = static_cast<long>(cfg.n_events) * cfg.n_stations;
    const long want = std::min<long>(cfg.n_recordings, total);
    std::set<long> chosen;
    while (static_cast<long>(chosen.size()) < want)
        chosen.insert(static_cast<long>(rng.uniform_index(static_cast<std::uint64_t>(total))));
    std::vector<Eigen::VectorXd> rows;
    for (long code : chosen) {
        const auto e = static_cast<std::size_t>(code / cfg.n_stations);
        const auto s = static_cast<std::size_t>(code % cfg.n_stations);
        Recording rec;
        rec.event_id = ds.events[e].id;
        rec.station_id = ds.stations[s].id;
        rec.magnitude = ds.events[e].magnitude;
        rec.path = path_geometry(ds.frame, ds.events[e].point, ds.stations[s].point);
        ds.recordings.push_back(std::move(rec));
        rows.emplace_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.grid.size())));
    }
    detail::sort_and_index(ds, rows);

    const auto n = static_cast<Eigen::Index>(ds.recordings.size());
    const auto f = static_cast<Eigen::Index>(ds.grid.size());

    SyntheticTruth truth;
    truth.gp = cfg.gp;
    truth.freq_corr_octaves = cfg.freq_corr_octaves;
    truth.seed = seed;
    truth.path_terms = Eigen::MatrixXd::Zero(n, f);

    if (cfg.gp.phi_p2p > 0.0) {
        GpHyperparameters smooth = cfg.gp;
        smooth.phi_sp_ne = 1e-6;  // unused by the smooth block
        const auto paths = ds.paths();
        Eigen::MatrixXd k_space = build_covariance(std::span<const PathGeometry>(paths), smooth, false);
        Eigen::LLT<Eigen::MatrixXd> llt_space;
        bool ok = false;
        for (double jitter : {1e-10, 1e-8, 1e-6}) {
            Eigen::MatrixXd m = k_space;
            m.diagonal().array() += jitter * smooth.phi_p2p * smooth.phi_p2p;
            llt_space.compute(m);
            if (llt_space.info() == Eigen::Success) {
                ok = true;
                break;
            }
        }
        if (!ok) throw NumericalError("synthetic spatial covariance not positive definite after jitter retries");

        Eigen::MatrixXd k_freq(f, f);
        for (Eigen::Index i = 0; i < f; ++i)
            for (Eigen::Index j = 0; j < f; ++j) {
                const double d = std::log2(ds.grid.values_hz[static_cast<std::size_t>(i)]) -
                                 std::log2(ds.grid.values_hz[static_cast<std::size_t>(j)]);
                k_freq(i, j) = std::exp(-0.5 * d * d / (cfg.freq_corr_octaves * cfg.freq_corr_octaves));
            }
        k_freq.diagonal().array() += 1e-10;
        Eigen::LLT<Eigen::MatrixXd> llt_freq(k_freq);
        if (llt_freq.info() != Eigen::Success)
            throw NumericalError("synthetic frequency covariance not positive definite");

        Rng field_rng(derive_seed(seed, 0xF1E1D));
        Eigen::MatrixXd z(n, f);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < f; ++j) z(i, j) = field_rng.normal();
        truth.path_terms = Eigen::MatrixXd(llt_space.matrixL()) * z *
                           Eigen::MatrixXd(llt_freq.matrixL()).transpose();
    }

    Rng noise_rng(derive_seed(seed, 0xB0E5E));
    ds.dws = truth.path_terms;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < f; ++j) ds.dws(i, j) += cfg.gp.phi_sp_ne * noise_rng.normal();

    return {std::move(ds), std::move(truth)};
}

// ---------------------------------------------------------------------------
// Station subsetting for the density experiment.

struct StationSubset {
    std::vector<std::string> station_ids;  // sorted
    bool fewer_than_k = false;             // asked for more clusters than stations
};

/// Thins the station network to a target separation: k-means over station
/// coordinates with k = max(1, floor(area / sep^2)), keeping the station
/// nearest each centroid. Separation is a statistical target, not a hard
/// minimum.
inline StationSubset kmeans_station_subset(const ResidualDataset& ds, double min_separation_km,
                                           std::uint64_t seed) {
    if (!(min_separation_km >= 5.0 && min_separation_km <= 50.0))
        throw DataError("min_separation_km must lie in [5, 50]");
    if (ds.stations.empty()) throw DataError("dataset has no stations");

    double x0, x1, y0, y1;
    ds.domain_box(x0, x1, y0, y1);
    const double area = std::max(1.0, (x1 - x0) * (y1 - y0));
    const auto k_target =
        static_cast<std::size_t>(std::max(1.0, std::floor(area / (min_separation_km * min_separation_km))));

    StationSubset out;
    if (ds.stations.size() <= k_target) {
        out.fewer_than_k = true;
        for (const auto& s : ds.stations) out.station_ids.push_back(s.id);
        std::sort(out.station_ids.begin(), out.station_ids.end());
        return out;
    }

    const std::size_t n = ds.stations.size();
    const std::size_t k = k_target;
    Rng rng(derive_seed(seed, 0x4B6D));

    // Seed centroids with k distinct stations.
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n - 1; i > 0; --i)
        std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
    std::vector<Vec2> centroids(k);
    for (std::size_t c = 0; c < k; ++c) centroids[c] = ds.stations[perm[c]].xy;

    std::vector<std::size_t> assign(n, 0);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double dx = ds.stations[i].xy[0] - centroids[c][0];
                const double dy = ds.stations[i].xy[1] - centroids[c][1];
                const double d = dx * dx + dy * dy;
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        std::vector<double> sx(k, 0), sy(k, 0);
        std::vector<long> cnt(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sx[assign[i]] += ds.stations[i].xy[0];
            sy[assign[i]] += ds.stations[i].xy[1];
            ++cnt[assign[i]];
        }
        for (std::size_t c = 0; c < k; ++c)
            if (cnt[c] > 0) centroids[c] = {sx[c] / cnt[c], sy[c] / cnt[c]};
        if (!changed) break;
    }

    std::set<std::string> picked;
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            const double dx = ds.stations[i].xy[0] - centroids[c][0];
            const double dy = ds.stations[i].xy[1] - centroids[c][1];
            const double d = dx * dx + dy * dy;
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        picked.insert(ds.stations[best].id);
    }
    out.station_ids.assign(picked.begin(), picked.end());
    return out;
}

/// Dataset restricted to recordings whose station belongs to the subset.
inline ResidualDataset subset_by_stations(const ResidualDataset& ds,
                                          const std::vector<std::string>& station_ids) {
    const std::set<std::string> keep(station_ids.begin(), station_ids.end());
    ResidualDataset out;
    out.grid = ds.grid;
    out.frame = ds.frame;
    std::vector<Eigen::VectorXd> rows;
    std::map<std::string, std::size_t> sidx, eidx;
    for (std::size_t i = 0; i < ds.recordings.size(); ++i) {
        const auto& r = ds.recordings[i];
        if (!keep.count(r.station_id)) continue;
        if (!eidx.count(r.event_id)) {
            eidx[r.event_id] = out.events.size();
            out.events.push_back(ds.events[r.event_index]);
        }
        if (!sidx.count(r.station_id)) {
            sidx[r.station_id] = out.stations.size();
            out.stations.push_back(ds.stations[r.station_index]);
        }
        out.recordings.push_back(r);
        rows.emplace_back(ds.dws.row(static_cast<Eigen::Index>(i)).transpose());
    }
    detail::sort_and_index(out, rows);
    return out;
}

/// Correlation lengths of the within-site residual field at one frequency.
inline PathLengthEstimate estimate_path_lengths(const ResidualDataset& ds, std::size_t freq_index,
                                                const PathLengthOptions& opts = {}) {
    if (freq_index >= ds.grid.size()) throw DataError("frequency index out of range");
    const Eigen::VectorXd col = ds.dws.col(static_cast<Eigen::Index>(freq_index));
    const std::vector<double> values(col.data(), col.data() + col.size());
    const auto paths = ds.paths();
    return estimate_path_lengths(std::span<const double>(values),
                                 std::span<const PathGeometry>(paths), opts);
}

}  // namespace cgmfas
