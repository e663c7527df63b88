#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <thread>

#include "cgmfas/cgm_fas.hpp"
#include "cgmfas/dataset.hpp"
#include "cgmfas/gp_regress.hpp"
#include "cgmfas/variogram.hpp"

namespace cgmfas {

namespace detail {

/// Deterministic chunked parallel-for; results must not depend on the
/// thread count (each index writes its own slot).
inline void parallel_for(long n, int threads, const std::function<void(long)>& fn) {
    if (threads <= 1 || n < 2) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<long> next{0};
    std::vector<std::thread> pool;
    const int use = std::min<long>(threads, n);
    pool.reserve(static_cast<std::size_t>(use));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(use));
    for (int t = 0; t < use; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (long i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(t)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Residual decomposition statistics.

/// deltaWSP = deltaWS - deltaP2P, elementwise over [recording x frequency].
inline Eigen::MatrixXd within_path_residuals(const ResidualDataset& ds,
                                             const Eigen::MatrixXd& path_terms) {
    if (path_terms.rows() != ds.dws.rows() || path_terms.cols() != ds.dws.cols())
        throw DataError("path terms misaligned with dataset: " + std::to_string(path_terms.rows()) +
                        "x" + std::to_string(path_terms.cols()) + " vs " +
                        std::to_string(ds.dws.rows()) + "x" + std::to_string(ds.dws.cols()));
    return ds.dws - path_terms;
}

struct ResidualStats {
    Eigen::VectorXd mean;  // per frequency
    Eigen::VectorXd sd;    // per frequency, sample sd
};

inline ResidualStats residual_stats(const Eigen::MatrixXd& residuals) {
    ResidualStats out;
    const auto n = residuals.rows();
    out.mean = residuals.colwise().mean();
    out.sd.resize(residuals.cols());
    for (Eigen::Index f = 0; f < residuals.cols(); ++f) {
        if (n < 2) {
            out.sd[f] = 0.0;
            continue;
        }
        out.sd[f] = std::sqrt((residuals.col(f).array() - out.mean[f]).square().sum() /
                              static_cast<double>(n - 1));
    }
    return out;
}

struct Histogram {
    std::vector<double> edges;   // bins + 1
    std::vector<long> counts;    // bins
    long outside = 0;
};

inline Histogram histogram(std::span<const double> values, int bins = 41, double lo = -2.0,
                           double hi = 2.0) {
    Histogram h;
    h.edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b)
        h.edges[static_cast<std::size_t>(b)] = lo + (hi - lo) * b / bins;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    for (double v : values) {
        if (v < lo || v >= hi) {
            ++h.outside;
            continue;
        }
        auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * bins);
        if (b >= static_cast<std::size_t>(bins)) b = static_cast<std::size_t>(bins) - 1;
        ++h.counts[b];
    }
    return h;
}

// ---------------------------------------------------------------------------
// Interfrequency correlation.

struct CorrelationMatrix {
    std::vector<double> freq_hz;
    Eigen::MatrixXd values;        // [F x F]; NaN where undefined
    std::vector<bool> valid;       // per-frequency variance flag
};

/// Pearson correlation across recordings for every frequency pair.
/// Zero-variance frequencies are flagged and masked (NaN off-diagonal).
inline CorrelationMatrix interfrequency_correlation(const Eigen::MatrixXd& residuals,
                                                    const std::vector<double>& freq_hz = {}) {
    const auto n = residuals.rows();
    const auto f = residuals.cols();
    if (n < 30) throw DataError("interfrequency correlation needs at least 30 recordings");
    CorrelationMatrix cm;
    cm.freq_hz = freq_hz;
    cm.values = Eigen::MatrixXd::Constant(f, f, std::numeric_limits<double>::quiet_NaN());
    cm.valid.assign(static_cast<std::size_t>(f), true);

    Eigen::MatrixXd centered = residuals;
    Eigen::VectorXd sd(f);
    for (Eigen::Index j = 0; j < f; ++j) {
        const double mean = residuals.col(j).mean();
        centered.col(j).array() -= mean;
        sd[j] = std::sqrt(centered.col(j).squaredNorm() / static_cast<double>(n - 1));
        if (!(sd[j] > 0.0)) cm.valid[static_cast<std::size_t>(j)] = false;
    }
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    for (Eigen::Index i = 0; i < f; ++i) {
        cm.values(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < f; ++j) {
            if (!cm.valid[static_cast<std::size_t>(i)] || !cm.valid[static_cast<std::size_t>(j)])
                continue;
            const double r = cov(i, j) / (sd[i] * sd[j]);
            cm.values(i, j) = r;
            cm.values(j, i) = r;
        }
    }
    return cm;
}

// ---------------------------------------------------------------------------
// Gridded map prediction.

struct MapGridSpec {
    double x0 = 0.0, x1 = 0.0, y0 = 0.0, y1 = 0.0;  // frame km bounds
    double spacing_km = 1.0;

    /// Lattice sites, y-major then x, both ascending.
    std::vector<Vec2> sites() const {
        if (!(x1 >= x0 && y1 >= y0 && spacing_km > 0)) throw DataError("bad map grid spec");
        std::vector<Vec2> out;
        const auto nx = static_cast<long>(std::floor((x1 - x0) / spacing_km)) + 1;
        const auto ny = static_cast<long>(std::floor((y1 - y0) / spacing_km)) + 1;
        out.reserve(static_cast<std::size_t>(nx * ny));
        for (long iy = 0; iy < ny; ++iy)
            for (long ix = 0; ix < nx; ++ix)
                out.push_back({x0 + spacing_km * static_cast<double>(ix),
                               y0 + spacing_km * static_cast<double>(iy)});
        return out;
    }
};

struct PredictionMap {
    GeoPoint event;
    double magnitude = 0.0;
    std::vector<Vec2> sites;         // frame km
    std::vector<double> freq_hz;
    Eigen::MatrixXd path_term;       // [site x frequency]
    Eigen::MatrixXd aleatory_std;    // generative predictor only (else 0x0)
    Eigen::MatrixXd epistemic_sd;    // GP predictor only (else 0x0)
};

/// Generative map: ensemble path-term statistics at every lattice site.
/// Per-site latent streams are derived from the root seed by stable
/// hashing of the site index, so the result is independent of threading.
inline PredictionMap predict_map_cgm(const CgmFasModel& model, const GeoPoint& event,
                                     const MapGridSpec& grid, int n = 200,
                                     std::uint64_t root_seed = 0, int threads = 1) {
    event.validate();
    PredictionMap map;
    map.event = event;
    map.sites = grid.sites();
    map.freq_hz = model.norm.freq_hz;
    const auto s = static_cast<long>(map.sites.size());
    const auto f = static_cast<long>(model.arch.n_freq);
    map.path_term.resize(s, f);
    map.aleatory_std.resize(s, f);

    const LocalFrame frame = model.frame();
    const Vec2 event_xy = project(frame, event);
    detail::parallel_for(s, threads, [&](long i) {
        const auto cond = make_cond(model.norm, event_xy, event.depth_km,
                                    map.sites[static_cast<std::size_t>(i)]);
        auto [mean, sd] =
            model.predict_path_term(cond, n, derive_seed(root_seed, static_cast<std::uint64_t>(i)));
        map.path_term.row(i) = mean.transpose();
        map.aleatory_std.row(i) = sd.transpose();
    });
    return map;
}

/// GP map over a frequency subset; one posterior solve per frequency.
inline PredictionMap predict_map_gp(const std::vector<GpFit>& fits,
                                    const std::vector<double>& freq_hz, const LocalFrame& frame,
                                    const GeoPoint& event, const MapGridSpec& grid,
                                    int threads = 1) {
    if (fits.size() != freq_hz.size()) throw DataError("fit/frequency list mismatch");
    event.validate();
    PredictionMap map;
    map.event = event;
    map.sites = grid.sites();
    map.freq_hz = freq_hz;
    const auto s = static_cast<long>(map.sites.size());
    const auto f = static_cast<long>(fits.size());
    map.path_term.resize(s, f);
    map.epistemic_sd.resize(s, f);

    std::vector<PathGeometry> pred_paths(static_cast<std::size_t>(s));
    for (long i = 0; i < s; ++i) {
        const GeoPoint site = unproject(frame, map.sites[static_cast<std::size_t>(i)]);
        pred_paths[static_cast<std::size_t>(i)] = path_geometry(frame, event, site);
    }
    // Site chunks bound the cross-covariance workspace at large lattices.
    constexpr long kChunk = 2048;
    detail::parallel_for(f, threads, [&](long k) {
        for (long begin = 0; begin < s; begin += kChunk) {
            const long len = std::min(kChunk, s - begin);
            const std::span<const PathGeometry> chunk(pred_paths.data() + begin,
                                                      static_cast<std::size_t>(len));
            const auto pred = fits[static_cast<std::size_t>(k)].predict(chunk);
            map.path_term.col(k).segment(begin, len) = pred.mean;
            map.epistemic_sd.col(k).segment(begin, len) = pred.epistemic_sd;
        }
    });
    return map;
}

/// Site-separation semivariogram of one frequency column of a map; the
/// spatial-continuity check. Maps are noise-free, so the fit pins the
/// nugget to zero.
inline VariogramFit map_variogram_fit(const PredictionMap& map, std::size_t freq_index,
                                      const SemivariogramOptions& bins = {2.0, 60.0, 30}) {
    if (freq_index >= static_cast<std::size_t>(map.path_term.cols()))
        throw DataError("frequency index out of range");
    const Eigen::VectorXd col = map.path_term.col(static_cast<Eigen::Index>(freq_index));
    const std::vector<double> values(col.data(), col.data() + col.size());
    const PairDistanceFn dist = [&map](std::size_t i, std::size_t j) {
        return std::hypot(map.sites[i][0] - map.sites[j][0], map.sites[i][1] - map.sites[j][1]);
    };
    const auto sv = empirical_semivariogram(values, dist, bins);
    VariogramFitOptions opts;
    opts.fit_nugget = false;
    return fit_squared_exponential(sv, opts);
}

// ---------------------------------------------------------------------------
// Ensemble convergence.

struct ConvergenceCurve {
    Eigen::MatrixXd running_mean;  // [n x frequency], cumulative over one stream
    Eigen::MatrixXd running_std;
};

/// Raw cumulative statistics of one seeded i.i.d. generation stream.
inline ConvergenceCurve convergence_curve(const CgmFasModel& model, const ConditioningVector& cond,
                                          int max_n, std::uint64_t seed) {
    if (max_n < 2) throw DataError("convergence_curve needs max_n >= 2");
    const Eigen::MatrixXd samples = model.generate(cond, max_n, seed);
    const auto f = samples.cols();
    ConvergenceCurve curve;
    curve.running_mean.resize(max_n, f);
    curve.running_std.resize(max_n, f);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(f), sum2 = Eigen::VectorXd::Zero(f);
    for (int i = 0; i < max_n; ++i) {
        sum += samples.row(i).transpose();
        sum2 += samples.row(i).transpose().cwiseAbs2();
        const double n = i + 1;
        curve.running_mean.row(i) = (sum / n).transpose();
        if (i == 0) {
            curve.running_std.row(i).setZero();
        } else {
            const Eigen::VectorXd var = (sum2 - sum.cwiseAbs2() / n) / (n - 1);
            curve.running_std.row(i) = var.cwiseMax(0.0).cwiseSqrt().transpose();
        }
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Station-density experiment.

struct DensityCell {
    double separation_km = 0.0;
    int subset = 0;
    std::size_t n_stations = 0;
    std::size_t n_recordings = 0;
    double mse = 0.0;     // within-path residual MSE at the probe frequency
    bool available = false;
    std::string note;
};

struct DensityOptions {
    std::vector<double> separations_km{5, 10, 20, 35, 50};
    int n_subsets = 5;
    double probe_freq_hz = 10.0;
    int ensemble_n = 64;
    std::size_t min_recordings = 20;
    int threads = 1;
};

/// Retrains on thinned station networks and measures how prediction error
/// at all original source-site pairs grows with station separation.
inline std::vector<DensityCell> density_experiment(const ResidualDataset& ds,
                                                   const ArchConfig& arch,
                                                   const TrainingConfig& tcfg,
                                                   const DensityOptions& opts,
                                                   std::uint64_t root_seed) {
    const std::size_t probe = ds.grid.nearest_index(opts.probe_freq_hz);
    std::vector<DensityCell> cells(opts.separations_km.size() * static_cast<std::size_t>(opts.n_subsets));

    detail::parallel_for(static_cast<long>(cells.size()), opts.threads, [&](long c) {
        const std::size_t si = static_cast<std::size_t>(c) / static_cast<std::size_t>(opts.n_subsets);
        const int sub = static_cast<int>(static_cast<std::size_t>(c) %
                                         static_cast<std::size_t>(opts.n_subsets));
        DensityCell& cell = cells[static_cast<std::size_t>(c)];
        cell.separation_km = opts.separations_km[si];
        cell.subset = sub;
        try {
            const auto subset = kmeans_station_subset(
                ds, cell.separation_km,
                derive_seed(root_seed, si * 1000 + static_cast<std::uint64_t>(sub)));
            const auto sub_ds = subset_by_stations(ds, subset.station_ids);
            cell.n_stations = subset.station_ids.size();
            cell.n_recordings = sub_ds.recordings.size();
            if (sub_ds.recordings.size() < opts.min_recordings) {
                cell.note = "subset too small to train";
                return;
            }
            TrainingConfig cfg = tcfg;
            cfg.seed = derive_seed(tcfg.seed, static_cast<std::uint64_t>(c));
            const CgmFasModel model = train(sub_ds, arch, cfg);
            const auto [terms, sds] = predict_path_terms_dataset(
                model, ds, opts.ensemble_n, derive_seed(root_seed, 0xDE0 + static_cast<std::uint64_t>(c)));
            const Eigen::VectorXd resid =
                ds.dws.col(static_cast<Eigen::Index>(probe)) - terms.col(static_cast<Eigen::Index>(probe));
            cell.mse = resid.squaredNorm() / static_cast<double>(resid.size());
            cell.available = true;
        } catch (const std::exception& e) {
            cell.note = e.what();
        }
    });
    return cells;
}

// ---------------------------------------------------------------------------
// CSV exports. All floats at 9 significant digits, fixed row order.

inline void export_prediction_map(const PredictionMap& map, const LocalFrame& frame,
                                  const std::string& path) {
    csv::Writer w(path);
    w.row({"lon", "lat", "freq_hz", "path_term", "aleatory_std", "epistemic_sd"});
    const bool has_alea = map.aleatory_std.size() > 0;
    const bool has_epi = map.epistemic_sd.size() > 0;
    for (std::size_t i = 0; i < map.sites.size(); ++i) {
        const GeoPoint p = unproject(frame, map.sites[i]);
        for (std::size_t k = 0; k < map.freq_hz.size(); ++k) {
            w.row({format_g9(p.lon), format_g9(p.lat), format_g9(map.freq_hz[k]),
                   format_g9(map.path_term(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))),
                   has_alea ? format_g9(map.aleatory_std(static_cast<Eigen::Index>(i),
                                                         static_cast<Eigen::Index>(k)))
                            : "",
                   has_epi ? format_g9(map.epistemic_sd(static_cast<Eigen::Index>(i),
                                                        static_cast<Eigen::Index>(k)))
                           : ""});
        }
    }
}

inline void export_residual_stats(const std::vector<double>& freq_hz, const ResidualStats& stats,
                                  const std::string& path) {
    csv::Writer w(path);
    w.row({"freq_hz", "mean", "sd"});
    for (std::size_t k = 0; k < freq_hz.size(); ++k)
        w.row({format_g9(freq_hz[k]), format_g9(stats.mean[static_cast<Eigen::Index>(k)]),
               format_g9(stats.sd[static_cast<Eigen::Index>(k)])});
}

inline void export_histogram(const Histogram& h, const std::string& path) {
    csv::Writer w(path);
    w.row({"bin_lo", "bin_hi", "count"});
    for (std::size_t b = 0; b < h.counts.size(); ++b)
        w.row({format_g9(h.edges[b]), format_g9(h.edges[b + 1]), std::to_string(h.counts[b])});
}

inline void export_correlation_matrix(const CorrelationMatrix& cm, const std::string& path) {
    csv::Writer w(path);
    std::vector<std::string> header{"freq_hz"};
    for (double f : cm.freq_hz) header.push_back(format_g9(f));
    w.row(header);
    for (Eigen::Index i = 0; i < cm.values.rows(); ++i) {
        std::vector<std::string> row{format_g9(cm.freq_hz[static_cast<std::size_t>(i)])};
        for (Eigen::Index j = 0; j < cm.values.cols(); ++j) {
            const double v = cm.values(i, j);
            row.push_back(std::isnan(v) ? "" : format_g9(v));
        }
        w.row(row);
    }
}

inline void export_semivariogram(const Semivariogram& sv, const VariogramFit* fit,
                                 const std::string& path) {
    csv::Writer w(path);
    w.row({"bin_center", "gamma", "count"});
    for (std::size_t b = 0; b < sv.bin_centers.size(); ++b)
        w.row({format_g9(sv.bin_centers[b]), format_g9(sv.gamma[b]), std::to_string(sv.counts[b])});
    if (fit) {
        w.row({"# fit", "", ""});
        w.row({"sill=" + format_g9(fit->sill) + " length=" + format_g9(fit->length) +
                   " nugget=" + format_g9(fit->nugget) + " rmse=" + format_g9(fit->rmse) +
                   (fit->boundary ? " boundary=1" : " boundary=0"),
               "", ""});
    }
}

inline void export_density_table(const std::vector<DensityCell>& cells, const std::string& path) {
    csv::Writer w(path);
    w.row({"separation_km", "subset", "n_stations", "n_recordings", "mse", "available", "note"});
    for (const auto& c : cells)
        w.row({format_g9(c.separation_km), std::to_string(c.subset), std::to_string(c.n_stations),
               std::to_string(c.n_recordings), c.available ? format_g9(c.mse) : "",
               c.available ? "1" : "0", c.note});
}

inline void export_loss_log(const std::vector<LossLogRow>& rows, const std::string& path) {
    csv::Writer w(path);
    w.row({"epoch", "train_total", "train_mse", "train_kl", "val_total"});
    for (const auto& r : rows)
        w.row({std::to_string(r.epoch), format_g9(r.train_total), format_g9(r.train_mse),
               format_g9(r.train_kl), format_g9(r.val_total)});
}

inline void export_calibration_table(const std::vector<CalibrationRow>& rows,
                                     const std::string& path) {
    csv::Writer w(path);
    w.row({"alpha", "residual_std", "abs_gap"});
    for (const auto& r : rows)
        w.row({format_g9(r.alpha), format_g9(r.residual_std), format_g9(r.abs_gap)});
}

}  // namespace cgmfas
