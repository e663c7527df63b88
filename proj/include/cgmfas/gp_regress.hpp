#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cgmfas/csv.hpp"
#include "cgmfas/gp_kernel.hpp"

namespace cgmfas {

struct JitterPolicy {
    // Escalating absolute diagonal jitter tried before declaring failure.
    std::vector<double> ladder{0.0, 1e-8, 1e-6, 1e-4};
};

namespace detail {

/// Cholesky with jitter escalation. Throws NumericalError carrying a
/// minimum-eigenvalue estimate once the ladder is exhausted.
inline Eigen::LLT<Eigen::MatrixXd> robust_llt(const Eigen::MatrixXd& a, const JitterPolicy& policy) {
    for (double jitter : policy.ladder) {
        Eigen::MatrixXd m = a;
        if (jitter > 0.0) m.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(m);
        if (llt.info() == Eigen::Success) return llt;
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
    throw NumericalError("covariance factorization failed after jitter escalation; min eigenvalue ~= " +
                         format_g9(es.eigenvalues().minCoeff()));
}

}  // namespace detail

/// Marginal log likelihood of the observed residual vector under the path
/// GP: -1/2 y' (K + phi_sp^2 I)^-1 y - 1/2 log|K + phi_sp^2 I| - n/2 log(2 pi),
/// with the smooth covariance K built from the path geometry.
inline double log_likelihood(const Eigen::VectorXd& obs, std::span<const PathGeometry> paths,
                             const GpHyperparameters& theta, const JitterPolicy& policy = {}) {
    if (obs.size() < 1) throw DataError("log_likelihood needs at least one observation");
    if (!obs.allFinite()) throw DataError("non-finite observation passed to log_likelihood");
    if (static_cast<std::size_t>(obs.size()) != paths.size())
        throw DataError("observation/path length mismatch");
    Eigen::MatrixXd a = build_covariance(paths, theta, false);
    a.diagonal().array() += theta.phi_sp_ne * theta.phi_sp_ne;
    const auto llt = detail::robust_llt(a, policy);
    const Eigen::VectorXd alpha = llt.solve(obs);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    const double n = static_cast<double>(obs.size());
    return -0.5 * obs.dot(alpha) - 0.5 * logdet - 0.5 * n * std::log(2.0 * M_PI);
}

struct FixedLengths {
    double rho_r = 30.0;
    double rho_az = 25.0;
    double rho_s = 15.0;
};

struct FitVariancesResult {
    double phi_p2p = 0.0;
    double phi_sp_ne = 0.0;
    double loglik = 0.0;
    bool converged = false;
    int sweeps = 0;
};

struct FitVariancesOptions {
    double lo = 1e-3;       // search box for both standard deviations
    double hi = 2.0;
    int coarse_grid = 24;   // log-spaced coarse scan per axis
    int max_sweeps = 60;
    double tol = 1e-7;      // log-space convergence tolerance
};

/// Variance-term MLE with the correlation lengths held fixed. A single
/// symmetric eigendecomposition of the unit-variance correlation matrix
/// makes each likelihood evaluation O(n): with C = Q L Q' and q = Q'y,
///   2 LL = -sum q_i^2/(s l_i + t) - sum log(s l_i + t) - n log(2 pi)
/// where s = phi_p2p^2 and t = phi_sp_ne^2. A coarse log-space grid scan
/// is refined by golden-section coordinate sweeps; fully deterministic.
inline FitVariancesResult fit_variances(const Eigen::VectorXd& obs,
                                        std::span<const PathGeometry> paths,
                                        const FixedLengths& lengths,
                                        const FitVariancesOptions& opts = {}) {
    const auto n = obs.size();
    if (n < 10) throw DataError("fit_variances needs at least 10 observations");
    if (static_cast<std::size_t>(n) != paths.size())
        throw DataError("observation/path length mismatch");
    if (!(lengths.rho_r > 0 && lengths.rho_az > 0 && lengths.rho_s > 0))
        throw DataError("correlation lengths must be positive");

    GpHyperparameters unit;
    unit.phi_p2p = 1.0;
    unit.phi_sp_ne = 1e-6;  // validate() placeholder; nugget handled analytically
    unit.rho_r = lengths.rho_r;
    unit.rho_az = lengths.rho_az;
    unit.rho_s = lengths.rho_s;
    const Eigen::MatrixXd c = build_covariance(paths, unit, false);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed in fit_variances");
    const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
    const Eigen::VectorXd q2 = (es.eigenvectors().transpose() * obs).array().square();

    const auto loglik_at = [&](double log_phi_p, double log_phi_sp) {
        const double s = std::exp(2.0 * log_phi_p);
        const double t = std::exp(2.0 * log_phi_sp);
        double quad = 0.0, logdet = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d = s * lam[i] + t;
            quad += q2[i] / d;
            logdet += std::log(d);
        }
        return -0.5 * quad - 0.5 * logdet - 0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
    };

    const double llo = std::log(opts.lo), lhi = std::log(opts.hi);
    double best[2] = {std::log(0.3), std::log(0.3)};
    double best_ll = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < opts.coarse_grid; ++i) {
        const double a = llo + (lhi - llo) * i / (opts.coarse_grid - 1);
        for (int j = 0; j < opts.coarse_grid; ++j) {
            const double b = llo + (lhi - llo) * j / (opts.coarse_grid - 1);
            const double ll = loglik_at(a, b);
            if (ll > best_ll) {
                best_ll = ll;
                best[0] = a;
                best[1] = b;
            }
        }
    }

    constexpr double kInvPhi = 0.6180339887498949;
    const auto golden = [&](int axis) {
        double a = llo, b = lhi;
        double x1 = b - kInvPhi * (b - a), x2 = a + kInvPhi * (b - a);
        const auto eval = [&](double x) {
            return axis == 0 ? loglik_at(x, best[1]) : loglik_at(best[0], x);
        };
        double f1 = eval(x1), f2 = eval(x2);
        while (b - a > 1e-10) {
            if (f1 < f2) {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + kInvPhi * (b - a);
                f2 = eval(x2);
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - kInvPhi * (b - a);
                f1 = eval(x1);
            }
        }
        best[axis] = 0.5 * (a + b);
    };

    FitVariancesResult res;
    int sweep = 0;
    for (; sweep < opts.max_sweeps; ++sweep) {
        const double prev0 = best[0], prev1 = best[1];
        golden(0);
        golden(1);
        if (std::fabs(best[0] - prev0) < opts.tol && std::fabs(best[1] - prev1) < opts.tol) {
            res.converged = true;
            ++sweep;
            break;
        }
    }
    res.sweeps = sweep;
    res.phi_p2p = std::exp(best[0]);
    res.phi_sp_ne = std::exp(best[1]);
    res.loglik = loglik_at(best[0], best[1]);
    return res;
}

struct GpPrediction {
    Eigen::VectorXd mean;          // path-term posterior mean, ln units
    Eigen::VectorXd epistemic_sd;  // posterior sd, ln units
};

/// Trained single-frequency GP: hyperparameters plus the cached symmetric
/// factorization of (K_obs,obs + phi_sp_ne^2 I) and the weight vector.
class GpFit {
public:
    GpFit(Eigen::VectorXd obs, std::vector<PathGeometry> paths, GpHyperparameters theta,
          double validity_km = 350.0, const JitterPolicy& policy = {})
        : obs_(std::move(obs)), paths_(std::move(paths)), theta_(theta), validity_km_(validity_km) {
        theta_.validate();
        if (static_cast<std::size_t>(obs_.size()) != paths_.size())
            throw DataError("observation/path length mismatch");
        Eigen::MatrixXd a = build_covariance(std::span<const PathGeometry>(paths_), theta_, false);
        a.diagonal().array() += theta_.phi_sp_ne * theta_.phi_sp_ne;
        llt_ = detail::robust_llt(a, policy);
        weights_ = llt_.solve(obs_);
    }

    const GpHyperparameters& theta() const { return theta_; }
    const std::vector<PathGeometry>& paths() const { return paths_; }
    const Eigen::VectorXd& observations() const { return obs_; }

    /// Posterior mean and epistemic sd at new paths. Negative round-off
    /// variances clamp to zero.
    GpPrediction predict(std::span<const PathGeometry> pred_paths) const {
        for (const auto& p : pred_paths) {
            if (std::fabs(p.station_xy[0]) > validity_km_ || std::fabs(p.station_xy[1]) > validity_km_ ||
                std::fabs(p.event_xy[0]) > validity_km_ || std::fabs(p.event_xy[1]) > validity_km_)
                throw GeometryError("prediction path outside frame validity region");
        }
        const Eigen::MatrixXd k_op =
            build_covariance(std::span<const PathGeometry>(paths_), pred_paths, theta_);
        GpPrediction out;
        out.mean = k_op.transpose() * weights_;
        const Eigen::MatrixXd v = llt_.matrixL().solve(k_op);
        const double prior_var = theta_.phi_p2p * theta_.phi_p2p;
        out.epistemic_sd.resize(k_op.cols());
        for (Eigen::Index j = 0; j < k_op.cols(); ++j) {
            const double var = prior_var - v.col(j).squaredNorm();
            out.epistemic_sd[j] = std::sqrt(std::max(0.0, var));
        }
        return out;
    }

private:
    Eigen::VectorXd obs_;
    std::vector<PathGeometry> paths_;
    GpHyperparameters theta_;
    double validity_km_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::VectorXd weights_;
};

/// Per-frequency fit summary, the unit of the fit file format.
struct GpFrequencyFit {
    double freq_hz = 0.0;
    GpHyperparameters theta;
    double loglik = 0.0;
    bool converged = false;
};

inline void save_gp_fits(const std::string& path, const std::vector<GpFrequencyFit>& fits) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "format = cgmfas-gp-fit-v1\n";
    out << "n_frequencies = " << fits.size() << "\n";
    for (std::size_t i = 0; i < fits.size(); ++i) {
        const auto& f = fits[i];
        const std::string p = "freq." + std::to_string(i) + ".";
        out << p << "hz = " << format_g9(f.freq_hz) << "\n";
        out << p << "phi_p2p = " << format_g9(f.theta.phi_p2p) << "\n";
        out << p << "phi_sp_ne = " << format_g9(f.theta.phi_sp_ne) << "\n";
        out << p << "rho_r = " << format_g9(f.theta.rho_r) << "\n";
        out << p << "rho_az = " << format_g9(f.theta.rho_az) << "\n";
        out << p << "rho_s = " << format_g9(f.theta.rho_s) << "\n";
        out << p << "loglik = " << format_g9(f.loglik) << "\n";
        out << p << "converged = " << (f.converged ? 1 : 0) << "\n";
    }
}

inline std::map<std::string, std::string> read_key_value_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = csv::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw DataError("malformed key-value line: " + t);
        kv[csv::trim(t.substr(0, eq))] = csv::trim(t.substr(eq + 1));
    }
    return kv;
}

inline std::vector<GpFrequencyFit> load_gp_fits(const std::string& path) {
    const auto kv = read_key_value_file(path);
    const auto need = [&](const std::string& k) {
        const auto it = kv.find(k);
        if (it == kv.end()) throw DataError("missing key in gp fit file: " + k);
        return it->second;
    };
    if (need("format") != "cgmfas-gp-fit-v1") throw DataError("unknown gp fit file format");
    const int n = std::stoi(need("n_frequencies"));
    std::vector<GpFrequencyFit> fits(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const std::string p = "freq." + std::to_string(i) + ".";
        auto& f = fits[static_cast<std::size_t>(i)];
        f.freq_hz = csv::parse_double(need(p + "hz"), "hz");
        f.theta.phi_p2p = csv::parse_double(need(p + "phi_p2p"), "phi_p2p");
        f.theta.phi_sp_ne = csv::parse_double(need(p + "phi_sp_ne"), "phi_sp_ne");
        f.theta.rho_r = csv::parse_double(need(p + "rho_r"), "rho_r");
        f.theta.rho_az = csv::parse_double(need(p + "rho_az"), "rho_az");
        f.theta.rho_s = csv::parse_double(need(p + "rho_s"), "rho_s");
        f.loglik = csv::parse_double(need(p + "loglik"), "loglik");
        f.converged = need(p + "converged") == "1";
    }
    return fits;
}

}  // namespace cgmfas
