#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cgmfas/common.hpp"
#include "cgmfas/geo.hpp"

namespace cgmfas {

struct Semivariogram {
    std::vector<double> bin_centers;  // km, or degrees on the azimuth axis
    std::vector<double> gamma;        // ln-units^2
    std::vector<long> counts;         // pairs per retained bin
};

struct SemivariogramOptions {
    double bin_width = 2.0;
    double max_lag = 60.0;
    long min_pairs = 30;
};

/// Pairwise separation along one axis. Return a negative value to exclude
/// the pair (used by the conditioning caps in estimate_path_lengths).
using PairDistanceFn = std::function<double(std::size_t, std::size_t)>;

/// Classic empirical semivariogram: gamma(h) = 1/2 mean (v_i - v_j)^2 over
/// pairs binned by separation. Bins thinner than min_pairs are dropped.
inline Semivariogram empirical_semivariogram(std::span<const double> values,
                                             const PairDistanceFn& distance,
                                             const SemivariogramOptions& opts = {}) {
    if (!(opts.bin_width > 0.0)) throw DataError("bin_width must be positive");
    const auto n_bins = static_cast<std::size_t>(std::ceil(opts.max_lag / opts.bin_width));
    std::vector<double> sum(n_bins, 0.0);
    std::vector<long> count(n_bins, 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
        for (std::size_t j = i + 1; j < values.size(); ++j) {
            const double h = distance(i, j);
            if (h < 0.0 || h >= opts.max_lag) continue;
            const auto bin = static_cast<std::size_t>(h / opts.bin_width);
            const double dv = values[i] - values[j];
            sum[bin] += 0.5 * dv * dv;
            ++count[bin];
        }
    }
    Semivariogram sv;
    for (std::size_t b = 0; b < n_bins; ++b) {
        if (count[b] < opts.min_pairs) continue;
        sv.bin_centers.push_back((static_cast<double>(b) + 0.5) * opts.bin_width);
        sv.gamma.push_back(sum[b] / static_cast<double>(count[b]));
        sv.counts.push_back(count[b]);
    }
    if (sv.bin_centers.empty())
        throw DataError("semivariogram has no bins with enough pairs");
    return sv;
}

struct VariogramFit {
    double sill = 0.0;    // ln-units^2
    double length = 0.0;  // correlation length, axis units
    double nugget = 0.0;  // ln-units^2
    double rmse = 0.0;    // weighted fit residual
    bool boundary = false;  // length pinned at the search-grid edge
};

struct VariogramFitOptions {
    bool fit_nugget = true;  // pin to 0 when fitting noise-free predicted maps
    double rho_min = 0.0;    // 0 = derive from bin range
    double rho_max = 0.0;
    int grid_points = 64;
};

namespace detail {

struct WlsEval {
    double sill = 0.0, nugget = 0.0, rmse = 0.0;
};

/// Count-weighted least squares of gamma(h) = nugget + sill (1 - exp(-h^2/2 rho^2))
/// for a fixed rho; nugget optionally pinned at zero, negatives clamped.
inline WlsEval wls_for_rho(const Semivariogram& sv, double rho, bool fit_nugget) {
    const std::size_t m = sv.bin_centers.size();
    double sww = 0, swf = 0, swff = 0, swg = 0, swgf = 0;
    std::vector<double> f(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double h = sv.bin_centers[i];
        f[i] = 1.0 - std::exp(-0.5 * h * h / (rho * rho));
        const double w = static_cast<double>(sv.counts[i]);
        sww += w;
        swf += w * f[i];
        swff += w * f[i] * f[i];
        swg += w * sv.gamma[i];
        swgf += w * sv.gamma[i] * f[i];
    }
    WlsEval e;
    if (fit_nugget) {
        const double det = sww * swff - swf * swf;
        if (std::fabs(det) > 1e-14) {
            e.nugget = (swg * swff - swgf * swf) / det;
            e.sill = (sww * swgf - swf * swg) / det;
        }
        if (e.nugget < 0.0 || e.sill <= 0.0) {
            e.nugget = std::max(0.0, e.nugget);
            e.sill = swff > 0 ? std::max(1e-12, (swgf - e.nugget * swf) / swff) : 1e-12;
        }
    } else {
        e.nugget = 0.0;
        e.sill = swff > 0 ? std::max(1e-12, swgf / swff) : 1e-12;
    }
    double ss = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const double r = sv.gamma[i] - (e.nugget + e.sill * f[i]);
        ss += static_cast<double>(sv.counts[i]) * r * r;
    }
    e.rmse = std::sqrt(ss / sww);
    return e;
}

}  // namespace detail

/// Squared-exponential variogram fit via a log-spaced length grid with
/// golden-section refinement. Deterministic for identical inputs.
inline VariogramFit fit_squared_exponential(const Semivariogram& sv,
                                            const VariogramFitOptions& opts = {}) {
    if (sv.bin_centers.size() < 4) throw DataError("variogram fit needs at least 4 bins");
    const double h_min = sv.bin_centers.front();
    const double h_max = sv.bin_centers.back();
    const double rho_min = opts.rho_min > 0 ? opts.rho_min : std::max(1e-3, 0.25 * h_min);
    const double rho_max = opts.rho_max > 0 ? opts.rho_max : 2.0 * h_max;

    const int g = std::max(8, opts.grid_points);
    int best_i = 0;
    double best_rmse = std::numeric_limits<double>::infinity();
    std::vector<double> rhos(static_cast<std::size_t>(g));
    for (int i = 0; i < g; ++i) {
        rhos[static_cast<std::size_t>(i)] =
            rho_min * std::pow(rho_max / rho_min, static_cast<double>(i) / (g - 1));
        const auto e = detail::wls_for_rho(sv, rhos[static_cast<std::size_t>(i)], opts.fit_nugget);
        if (e.rmse < best_rmse) {
            best_rmse = e.rmse;
            best_i = i;
        }
    }

    double a = rhos[static_cast<std::size_t>(std::max(0, best_i - 1))];
    double b = rhos[static_cast<std::size_t>(std::min(g - 1, best_i + 1))];
    constexpr double kInvPhi = 0.6180339887498949;
    double x1 = b - kInvPhi * (b - a), x2 = a + kInvPhi * (b - a);
    double f1 = detail::wls_for_rho(sv, x1, opts.fit_nugget).rmse;
    double f2 = detail::wls_for_rho(sv, x2, opts.fit_nugget).rmse;
    for (int it = 0; it < 200 && (b - a) > 1e-9 * b; ++it) {
        if (f1 > f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + kInvPhi * (b - a);
            f2 = detail::wls_for_rho(sv, x2, opts.fit_nugget).rmse;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - kInvPhi * (b - a);
            f1 = detail::wls_for_rho(sv, x1, opts.fit_nugget).rmse;
        }
    }
    const double rho = 0.5 * (a + b);
    const auto e = detail::wls_for_rho(sv, rho, opts.fit_nugget);
    VariogramFit fit;
    fit.length = rho;
    fit.sill = e.sill;
    fit.nugget = e.nugget;
    fit.rmse = e.rmse;
    fit.boundary = best_i == 0 || best_i == g - 1;
    return fit;
}

struct PathLengthOptions {
    // Conditioning caps on the two "other" axes when isolating one axis.
    double cap_d_r = 10.0;   // km
    double cap_d_az = 15.0;  // degrees
    double cap_d_ss = 10.0;  // km
    SemivariogramOptions dist_bins{2.0, 60.0, 30};  // dR and dSS axes
    SemivariogramOptions az_bins{5.0, 90.0, 30};    // dAz axis
};

struct PathLengthEstimate {
    double rho_r = 0.0;
    double rho_az = 0.0;
    double rho_s = 0.0;
    VariogramFit fit_r, fit_az, fit_s;
};

/// Marginal-axis correlation lengths of a residual field over paths.
/// For each of (dR, dAz, dSS) the pair set is restricted to pairs whose
/// other two deltas fall under the conditioning caps, then the usual
/// semivariogram + squared-exponential fit runs on that axis.
inline PathLengthEstimate estimate_path_lengths(std::span<const double> values,
                                                std::span<const PathGeometry> paths,
                                                const PathLengthOptions& opts = {}) {
    if (values.size() != paths.size()) throw DataError("values/paths length mismatch");
    if (values.size() < 100) throw DataError("estimate_path_lengths needs at least 100 recordings");

    const auto axis_variogram = [&](int axis) {
        const PairDistanceFn fn = [&, axis](std::size_t i, std::size_t j) {
            const PathDeltas d = path_deltas(paths[i], paths[j]);
            switch (axis) {
                case 0:
                    return (d.d_az <= opts.cap_d_az && d.d_ss <= opts.cap_d_ss) ? d.d_r : -1.0;
                case 1:
                    return (d.d_r <= opts.cap_d_r && d.d_ss <= opts.cap_d_ss) ? d.d_az : -1.0;
                default:
                    return (d.d_r <= opts.cap_d_r && d.d_az <= opts.cap_d_az) ? d.d_ss : -1.0;
            }
        };
        return empirical_semivariogram(values, fn, axis == 1 ? opts.az_bins : opts.dist_bins);
    };

    PathLengthEstimate est;
    est.fit_r = fit_squared_exponential(axis_variogram(0));
    est.fit_az = fit_squared_exponential(axis_variogram(1));
    est.fit_s = fit_squared_exponential(axis_variogram(2));
    est.rho_r = est.fit_r.length;
    est.rho_az = est.fit_az.length;
    est.rho_s = est.fit_s.length;
    return est;
}

}  // namespace cgmfas
