#pragma once

#include <Eigen/Dense>
#include <span>

#include "cgmfas/geo.hpp"

namespace cgmfas {

/// Hyperparameters of the composite path covariance at one frequency.
struct GpHyperparameters {
    double phi_p2p = 0.3;   // sd of spatially correlated path effects, ln units
    double phi_sp_ne = 0.4; // sd of within-path residuals (nugget), ln units
    double rho_r = 30.0;    // rupture-distance correlation length, km
    double rho_az = 25.0;   // azimuth correlation length, degrees
    double rho_s = 15.0;    // site separation correlation length, km

    void validate() const {
        if (!(phi_p2p > 0.0 && phi_sp_ne > 0.0 && rho_r > 0.0 && rho_az > 0.0 && rho_s > 0.0))
            throw DataError("GP hyperparameters must be strictly positive");
        if (phi_sp_ne > 1.0) throw DataError("phi_sp_ne exceeds sanity bound 1.0");
    }
};

/// Covariance between two paths: a squared-exponential product over the
/// rupture-distance, azimuth, and site-separation differences, plus the
/// within-path variance when both refer to the same (event, station) pair.
inline double path_covariance(const PathGeometry& a, const PathGeometry& b,
                              const GpHyperparameters& theta, bool same_path) {
    const PathDeltas d = path_deltas(a, b);
    const double smooth = theta.phi_p2p * theta.phi_p2p *
                          std::exp(-0.5 * d.d_r * d.d_r / (theta.rho_r * theta.rho_r)) *
                          std::exp(-0.5 * d.d_az * d.d_az / (theta.rho_az * theta.rho_az)) *
                          std::exp(-0.5 * d.d_ss * d.d_ss / (theta.rho_s * theta.rho_s));
    return smooth + (same_path ? theta.phi_sp_ne * theta.phi_sp_ne : 0.0);
}

/// Smooth (nugget-free) cross-covariance matrix between two path sets.
/// The regression adds phi_sp_ne^2 * I to the observation block exactly
/// once, so the smooth part here never carries the delta term.
inline Eigen::MatrixXd build_covariance(std::span<const PathGeometry> a,
                                        std::span<const PathGeometry> b,
                                        const GpHyperparameters& theta) {
    theta.validate();
    Eigen::MatrixXd k(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j)
            k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                path_covariance(a[i], b[j], theta, false);
    return k;
}

/// Self covariance of one observation set. Rows are distinct observations
/// (a dataset never repeats an (event, station) pair), so the nugget is a
/// diagonal phi_sp_ne^2 contribution when requested.
inline Eigen::MatrixXd build_covariance(std::span<const PathGeometry> paths,
                                        const GpHyperparameters& theta, bool include_nugget) {
    theta.validate();
    const auto n = static_cast<Eigen::Index>(paths.size());
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        k(i, i) = theta.phi_p2p * theta.phi_p2p;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = path_covariance(paths[static_cast<std::size_t>(i)],
                                             paths[static_cast<std::size_t>(j)], theta, false);
            k(i, j) = v;
            k(j, i) = v;
        }
    }
    if (include_nugget)
        k.diagonal().array() += theta.phi_sp_ne * theta.phi_sp_ne;
    return k;
}

}  // namespace cgmfas
