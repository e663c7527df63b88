#pragma once

#include <chrono>
#include <filesystem>
#include <iostream>
#include <thread>

#include "cgmfas/analysis.hpp"
#include "cgmfas/cgm_fas.hpp"
#include "cgmfas/dataset.hpp"
#include "cgmfas/gp_regress.hpp"

namespace cgmfas::cli {

namespace fs = std::filesystem;

inline int effective_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Every command writes a manifest of its full effective configuration;
/// identical manifests reproduce byte-identical outputs.
inline void write_manifest(const std::string& out_dir, const std::string& command,
                           std::map<std::string, std::string> kv) {
    kv["command"] = command;
    kv["version"] = kVersion;
    std::ofstream out(fs::path(out_dir) / "manifest.txt");
    if (!out) throw DataError("cannot write manifest in " + out_dir);
    for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
}

inline void ensure_out_dir(const std::string& out_dir) {
    if (out_dir.empty()) throw UsageError("--out directory is required");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create output directory " + out_dir + ": " + ec.message());
}

inline std::string out_file(const std::string& out_dir, const std::string& name) {
    return (fs::path(out_dir) / name).string();
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 1;
};

inline SynthConfig parse_synth_config(const std::string& path) {
    const auto kv = read_key_value_file(path);
    SynthConfig cfg;
    const auto geti = [&](const char* k, int dflt) {
        const auto it = kv.find(k);
        return it == kv.end() ? dflt : std::stoi(it->second);
    };
    const auto getd = [&](const char* k, double dflt) {
        const auto it = kv.find(k);
        return it == kv.end() ? dflt : csv::parse_double(it->second, k);
    };
    cfg.n_stations = geti("n_stations", cfg.n_stations);
    cfg.n_events = geti("n_events", cfg.n_events);
    cfg.n_recordings = geti("n_recordings", cfg.n_recordings);
    cfg.lat_center = getd("lat_center", cfg.lat_center);
    cfg.lon_center = getd("lon_center", cfg.lon_center);
    cfg.half_extent_km = getd("half_extent_km", cfg.half_extent_km);
    cfg.depth_min_km = getd("depth_min_km", cfg.depth_min_km);
    cfg.depth_max_km = getd("depth_max_km", cfg.depth_max_km);
    cfg.mag_min = getd("mag_min", cfg.mag_min);
    cfg.mag_max = getd("mag_max", cfg.mag_max);
    cfg.gp.phi_p2p = getd("phi_p2p", cfg.gp.phi_p2p);
    cfg.gp.phi_sp_ne = getd("phi_sp_ne", cfg.gp.phi_sp_ne);
    cfg.gp.rho_r = getd("rho_r", cfg.gp.rho_r);
    cfg.gp.rho_az = getd("rho_az", cfg.gp.rho_az);
    cfg.gp.rho_s = getd("rho_s", cfg.gp.rho_s);
    cfg.freq_corr_octaves = getd("freq_corr_octaves", cfg.freq_corr_octaves);
    cfg.grid.f_min = getd("f_min", cfg.grid.f_min);
    cfg.grid.f_max = getd("f_max", cfg.grid.f_max);
    cfg.grid.n = geti("n_freq", cfg.grid.n);
    if (const auto it = kv.find("spacing"); it != kv.end())
        cfg.grid.spacing = it->second == "linear" ? GridSpacing::Linear : GridSpacing::Log;
    return cfg;
}

inline std::map<std::string, std::string> synth_manifest(const SynthConfig& cfg,
                                                         std::uint64_t seed) {
    std::map<std::string, std::string> kv;
    kv["seed"] = std::to_string(seed);
    kv["n_stations"] = std::to_string(cfg.n_stations);
    kv["n_events"] = std::to_string(cfg.n_events);
    kv["n_recordings"] = std::to_string(cfg.n_recordings);
    kv["lat_center"] = format_g9(cfg.lat_center);
    kv["lon_center"] = format_g9(cfg.lon_center);
    kv["half_extent_km"] = format_g9(cfg.half_extent_km);
    kv["depth_min_km"] = format_g9(cfg.depth_min_km);
    kv["depth_max_km"] = format_g9(cfg.depth_max_km);
    kv["phi_p2p"] = format_g9(cfg.gp.phi_p2p);
    kv["phi_sp_ne"] = format_g9(cfg.gp.phi_sp_ne);
    kv["rho_r"] = format_g9(cfg.gp.rho_r);
    kv["rho_az"] = format_g9(cfg.gp.rho_az);
    kv["rho_s"] = format_g9(cfg.gp.rho_s);
    kv["freq_corr_octaves"] = format_g9(cfg.freq_corr_octaves);
    kv["f_min"] = format_g9(cfg.grid.f_min);
    kv["f_max"] = format_g9(cfg.grid.f_max);
    kv["n_freq"] = std::to_string(cfg.grid.n);
    kv["spacing"] = cfg.grid.spacing == GridSpacing::Linear ? "linear" : "log";
    return kv;
}

inline void cmd_synth(const SynthOptions& opts) {
    ensure_out_dir(opts.out_dir);
    const SynthConfig cfg = parse_synth_config(opts.config_path);
    const auto [ds, truth] = synth_generate(cfg, opts.seed);
    save_dataset(ds, out_file(opts.out_dir, "dataset.csv"), out_file(opts.out_dir, "frequencies.csv"));

    csv::Writer tw(out_file(opts.out_dir, "truth.csv"));
    std::vector<std::string> header{"event_id", "station_id"};
    for (std::size_t k = 0; k < ds.grid.size(); ++k)
        header.push_back("truth_f" + std::to_string(k + 1));
    tw.row(header);
    for (std::size_t i = 0; i < ds.recordings.size(); ++i) {
        std::vector<std::string> row{ds.recordings[i].event_id, ds.recordings[i].station_id};
        for (std::size_t k = 0; k < ds.grid.size(); ++k)
            row.push_back(format_g9(
                truth.path_terms(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))));
        tw.row(row);
    }
    write_manifest(opts.out_dir, "synth", synth_manifest(cfg, opts.seed));
    std::cout << "synth: " << ds.recordings.size() << " recordings, " << ds.stations.size()
              << " stations, " << ds.events.size() << " events\n";
}

// ---------------------------------------------------------------------------
// fit-gp

struct FitGpOptions {
    std::string dataset_path;
    std::string freqs_path;
    std::string out_dir;
    GridSpec grid;
    int freq_stride = 1;       // fit every k-th working frequency
    PathLengthOptions caps;    // variogram conditioning
    bool desk_scale_caps = false;  // widen caps for few-hundred-recording sets
};

inline void cmd_fit_gp(const FitGpOptions& opts) {
    ensure_out_dir(opts.out_dir);
    const ResidualDataset ds = load_dataset(opts.dataset_path, opts.freqs_path, opts.grid);
    for (const auto& w : ds.load_warnings) std::cerr << "warning: " << w << "\n";
    if (ds.recordings.empty()) throw DataError("dataset has no recordings");

    PathLengthOptions caps = opts.caps;
    if (opts.desk_scale_caps) {
        caps.cap_d_r = 15;
        caps.cap_d_az = 30;
        caps.cap_d_ss = 20;
        caps.dist_bins = {3.0, 60.0, 20};
        caps.az_bins = {7.5, 90.0, 20};
    }

    const auto paths = ds.paths();
    std::vector<GpFrequencyFit> fits;
    for (std::size_t k = 0; k < ds.grid.size(); k += static_cast<std::size_t>(opts.freq_stride)) {
        const auto lengths = estimate_path_lengths(ds, k, caps);
        const auto mle = fit_variances(ds.dws.col(static_cast<Eigen::Index>(k)),
                                       std::span<const PathGeometry>(paths),
                                       {lengths.rho_r, lengths.rho_az, lengths.rho_s});
        GpFrequencyFit f;
        f.freq_hz = ds.grid.values_hz[k];
        f.theta.phi_p2p = mle.phi_p2p;
        f.theta.phi_sp_ne = mle.phi_sp_ne;
        f.theta.rho_r = lengths.rho_r;
        f.theta.rho_az = lengths.rho_az;
        f.theta.rho_s = lengths.rho_s;
        f.loglik = mle.loglik;
        f.converged = mle.converged;
        fits.push_back(f);
    }
    save_gp_fits(out_file(opts.out_dir, "gp_fit.txt"), fits);

    csv::Writer dw(out_file(opts.out_dir, "gp_diagnostics.csv"));
    dw.row({"freq_hz", "rho_r", "rho_az", "rho_s", "phi_p2p", "phi_sp_ne", "loglik", "converged"});
    for (const auto& f : fits)
        dw.row({format_g9(f.freq_hz), format_g9(f.theta.rho_r), format_g9(f.theta.rho_az),
                format_g9(f.theta.rho_s), format_g9(f.theta.phi_p2p), format_g9(f.theta.phi_sp_ne),
                format_g9(f.loglik), f.converged ? "1" : "0"});

    std::map<std::string, std::string> kv;
    kv["dataset"] = opts.dataset_path;
    kv["frequencies"] = opts.freqs_path;
    kv["f_min"] = format_g9(opts.grid.f_min);
    kv["f_max"] = format_g9(opts.grid.f_max);
    kv["n_freq"] = std::to_string(opts.grid.n);
    kv["freq_stride"] = std::to_string(opts.freq_stride);
    kv["desk_scale_caps"] = opts.desk_scale_caps ? "1" : "0";
    kv["cap_d_r"] = format_g9(caps.cap_d_r);
    kv["cap_d_az"] = format_g9(caps.cap_d_az);
    kv["cap_d_ss"] = format_g9(caps.cap_d_ss);
    write_manifest(opts.out_dir, "fit-gp", kv);
    std::cout << "fit-gp: " << fits.size() << " frequencies fitted\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
    std::string dataset_path;
    std::string freqs_path;
    std::string out_dir;
    GridSpec grid;
    ArchConfig arch;
    TrainingConfig tcfg;
    bool calibrate = false;
    std::vector<double> alpha_grid{5e-7, 2e-6, 8e-6, 3e-5, 1e-4, 3e-4};
    double target_phi = 0.40;
    double target_tol = 0.03;
    int ensemble_n = 200;
    bool full_scale = false;  // switch defaults to the published dimensions
};

inline std::map<std::string, std::string> train_manifest(const TrainOptions& opts) {
    std::map<std::string, std::string> kv;
    kv["dataset"] = opts.dataset_path;
    kv["frequencies"] = opts.freqs_path;
    kv["f_min"] = format_g9(opts.grid.f_min);
    kv["f_max"] = format_g9(opts.grid.f_max);
    kv["n_freq"] = std::to_string(opts.grid.n);
    kv["conv_layers"] = std::to_string(opts.arch.conv_layers);
    kv["channels"] = std::to_string(opts.arch.channels);
    kv["kernel_size"] = std::to_string(opts.arch.kernel_size);
    kv["stride"] = std::to_string(opts.arch.stride);
    kv["latent_dim"] = std::to_string(opts.arch.latent_dim);
    kv["embed_width"] = std::to_string(opts.arch.embed_width);
    kv["embed_layers"] = std::to_string(opts.arch.embed_layers);
    kv["alpha"] = format_g9(opts.tcfg.alpha);
    kv["lr"] = format_g9(opts.tcfg.lr);
    kv["batch_size"] = std::to_string(opts.tcfg.batch_size);
    kv["max_epochs"] = std::to_string(opts.tcfg.max_epochs);
    kv["patience"] = std::to_string(opts.tcfg.patience);
    kv["val_fraction"] = format_g9(opts.tcfg.val_fraction);
    kv["seed"] = std::to_string(opts.tcfg.seed);
    kv["calibrate"] = opts.calibrate ? "1" : "0";
    if (opts.calibrate) {
        std::string grid_str;
        for (double a : opts.alpha_grid) grid_str += (grid_str.empty() ? "" : ",") + format_g9(a);
        kv["alpha_grid"] = grid_str;
        kv["target_phi"] = format_g9(opts.target_phi);
        kv["target_tol"] = format_g9(opts.target_tol);
        kv["ensemble_n"] = std::to_string(opts.ensemble_n);
    }
    kv["full_scale"] = opts.full_scale ? "1" : "0";
    return kv;
}

inline void cmd_train(TrainOptions opts) {
    ensure_out_dir(opts.out_dir);
    if (opts.full_scale) {
        opts.grid.n = 911;
        opts.arch.n_freq = 896;  // nearest stride-compatible size below 911
        opts.arch.channels = 32;
        opts.arch.latent_dim = 16;
    }
    const ResidualDataset ds = load_dataset(opts.dataset_path, opts.freqs_path, opts.grid);
    for (const auto& w : ds.load_warnings) std::cerr << "warning: " << w << "\n";
    opts.arch.n_freq = static_cast<int>(ds.grid.size());

    std::vector<LossLogRow> log;
    if (opts.calibrate) {
        const auto result = calibrate_alpha(ds, opts.arch, opts.tcfg, opts.alpha_grid,
                                            opts.target_phi, opts.target_tol, opts.ensemble_n,
                                            &log);
        export_calibration_table(result.table, out_file(opts.out_dir, "calibration_table.csv"));
        save_checkpoint(result.model, out_file(opts.out_dir, "checkpoint.cgmfas"));
        std::cout << "train: calibrated alpha* = " << format_g9(result.alpha_star)
                  << (result.within_tol ? "" : " (outside tolerance)") << "\n";
    } else {
        const CgmFasModel model = train(ds, opts.arch, opts.tcfg, &log);
        save_checkpoint(model, out_file(opts.out_dir, "checkpoint.cgmfas"));
        std::cout << "train: " << log.size() << " epochs\n";
    }
    export_loss_log(log, out_file(opts.out_dir, "loss_log.csv"));
    write_manifest(opts.out_dir, "train", train_manifest(opts));
}

// ---------------------------------------------------------------------------
// predict-map

struct PredictMapOptions {
    std::string model_path;    // checkpoint; or
    std::string gp_fit_path;   // gp fit file + dataset for observations
    std::string dataset_path;
    std::string freqs_path;
    GridSpec grid;
    std::string out_dir;
    GeoPoint event{37.85, -122.26, 8.0};
    double magnitude = 3.8;
    double grid_km = 1.0;
    std::vector<double> map_freqs{10.0};
    bool all_freqs = false;
    int ensemble_n = 200;
    std::uint64_t seed = 1;
    int threads = 0;
};

inline void cmd_predict_map(const PredictMapOptions& opts) {
    ensure_out_dir(opts.out_dir);
    if (opts.model_path.empty() == opts.gp_fit_path.empty())
        throw UsageError("exactly one of --model or --gp-fit is required");
    const int threads = effective_threads(opts.threads);
    const auto t0 = std::chrono::steady_clock::now();

    PredictionMap map;
    LocalFrame frame;
    if (!opts.model_path.empty()) {
        const CgmFasModel model = load_checkpoint(opts.model_path);
        frame = model.frame();
        MapGridSpec grid{model.norm.domain_x0, model.norm.domain_x1, model.norm.domain_y0,
                         model.norm.domain_y1, opts.grid_km};
        map = predict_map_cgm(model, opts.event, grid, opts.ensemble_n, opts.seed, threads);
        if (!opts.all_freqs) {
            // Thin the frequency axis to the requested probes.
            std::vector<std::size_t> keep;
            for (double f : opts.map_freqs) keep.push_back(model.norm.freq_hz.empty()
                                                               ? 0
                                                               : FrequencyGrid{model.norm.freq_hz}
                                                                     .nearest_index(f));
            std::sort(keep.begin(), keep.end());
            keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
            PredictionMap thin;
            thin.event = map.event;
            thin.magnitude = opts.magnitude;
            thin.sites = map.sites;
            thin.path_term.resize(static_cast<Eigen::Index>(map.sites.size()),
                                  static_cast<Eigen::Index>(keep.size()));
            thin.aleatory_std.resize(thin.path_term.rows(), thin.path_term.cols());
            for (std::size_t c = 0; c < keep.size(); ++c) {
                thin.freq_hz.push_back(map.freq_hz[keep[c]]);
                thin.path_term.col(static_cast<Eigen::Index>(c)) =
                    map.path_term.col(static_cast<Eigen::Index>(keep[c]));
                thin.aleatory_std.col(static_cast<Eigen::Index>(c)) =
                    map.aleatory_std.col(static_cast<Eigen::Index>(keep[c]));
            }
            map = std::move(thin);
        }
    } else {
        if (opts.dataset_path.empty() || opts.freqs_path.empty())
            throw UsageError("--gp-fit requires --dataset and --freqs for the observations");
        const ResidualDataset ds = load_dataset(opts.dataset_path, opts.freqs_path, opts.grid);
        const auto all_fits = load_gp_fits(opts.gp_fit_path);
        frame = ds.frame;
        const auto paths = ds.paths();
        std::vector<GpFit> fits;
        std::vector<double> freqs;
        std::vector<double> wanted = opts.map_freqs;
        if (opts.all_freqs) {
            wanted.clear();
            for (const auto& f : all_fits) wanted.push_back(f.freq_hz);
        }
        for (double want : wanted) {
            // Nearest fitted frequency and nearest dataset column.
            std::size_t best = 0;
            for (std::size_t i = 1; i < all_fits.size(); ++i)
                if (std::fabs(std::log(all_fits[i].freq_hz) - std::log(want)) <
                    std::fabs(std::log(all_fits[best].freq_hz) - std::log(want)))
                    best = i;
            const auto col = ds.grid.nearest_index(all_fits[best].freq_hz);
            fits.emplace_back(ds.dws.col(static_cast<Eigen::Index>(col)), paths,
                              all_fits[best].theta);
            freqs.push_back(all_fits[best].freq_hz);
        }
        double x0, x1, y0, y1;
        ds.domain_box(x0, x1, y0, y1);
        MapGridSpec grid{x0, x1, y0, y1, opts.grid_km};
        map = predict_map_gp(fits, freqs, frame, opts.event, grid, threads);
    }
    map.magnitude = opts.magnitude;
    export_prediction_map(map, frame, out_file(opts.out_dir, "map.csv"));

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "predict-map: " << map.sites.size() << " sites x " << map.freq_hz.size()
              << " frequencies in " << format_g9(wall) << " s\n";

    std::map<std::string, std::string> kv;
    kv["model"] = opts.model_path;
    kv["gp_fit"] = opts.gp_fit_path;
    kv["dataset"] = opts.dataset_path;
    kv["event_lat"] = format_g9(opts.event.lat);
    kv["event_lon"] = format_g9(opts.event.lon);
    kv["event_depth_km"] = format_g9(opts.event.depth_km);
    kv["magnitude"] = format_g9(opts.magnitude);
    kv["grid_km"] = format_g9(opts.grid_km);
    kv["ensemble_n"] = std::to_string(opts.ensemble_n);
    kv["seed"] = std::to_string(opts.seed);
    kv["all_freqs"] = opts.all_freqs ? "1" : "0";
    write_manifest(opts.out_dir, "predict-map", kv);
}

// ---------------------------------------------------------------------------
// validate

struct ValidateOptions {
    std::string model_path;
    std::string gp_fit_path;  // optional
    std::string dataset_path;
    std::string freqs_path;
    GridSpec grid;
    std::string out_dir;
    int ensemble_n = 200;
    double probe_freq_hz = 10.0;
    std::uint64_t seed = 1;
    bool desk_scale_caps = false;
};

inline void cmd_validate(const ValidateOptions& opts) {
    ensure_out_dir(opts.out_dir);
    if (opts.model_path.empty()) throw UsageError("--model is required");
    const ResidualDataset ds = load_dataset(opts.dataset_path, opts.freqs_path, opts.grid);
    const CgmFasModel model = load_checkpoint(opts.model_path);
    if (static_cast<int>(ds.grid.size()) != model.arch.n_freq)
        throw DataError("dataset grid does not match the model");

    // Generative path terms and within-path residuals.
    const auto [terms, term_sds] =
        predict_path_terms_dataset(model, ds, opts.ensemble_n, derive_seed(opts.seed, 0x11A));
    const Eigen::MatrixXd resid = within_path_residuals(ds, terms);
    export_residual_stats(ds.grid.values_hz, residual_stats(resid),
                          out_file(opts.out_dir, "residual_stats_cgm.csv"));
    const std::size_t probe = ds.grid.nearest_index(opts.probe_freq_hz);
    {
        const Eigen::VectorXd col = resid.col(static_cast<Eigen::Index>(probe));
        const std::vector<double> vals(col.data(), col.data() + col.size());
        export_histogram(histogram(vals), out_file(opts.out_dir, "histogram_cgm.csv"));
    }

    // Interfrequency correlation: observed vs reconstructed.
    export_correlation_matrix(interfrequency_correlation(ds.dws, ds.grid.values_hz),
                              out_file(opts.out_dir, "interfreq_empirical.csv"));
    Eigen::MatrixXd recon(ds.dws.rows(), ds.dws.cols());
    for (Eigen::Index i = 0; i < ds.dws.rows(); ++i) {
        const auto cond = model.cond_for(ds.recordings[static_cast<std::size_t>(i)].path);
        recon.row(i) = model
                           .reconstruct(ds.dws.row(i).transpose(), cond,
                                        derive_seed(opts.seed, 0x300 + static_cast<std::uint64_t>(i)))
                           .transpose();
    }
    export_correlation_matrix(interfrequency_correlation(recon, ds.grid.values_hz),
                              out_file(opts.out_dir, "interfreq_reconstructed.csv"));

    // Variogram fits of the residual field at the probe frequency.
    {
        PathLengthOptions caps;
        if (opts.desk_scale_caps) {
            caps.cap_d_r = 15;
            caps.cap_d_az = 30;
            caps.cap_d_ss = 20;
            caps.dist_bins = {3.0, 60.0, 20};
            caps.az_bins = {7.5, 90.0, 20};
        }
        csv::Writer vw(out_file(opts.out_dir, "variogram_fits.csv"));
        vw.row({"freq_hz", "axis", "length", "sill", "nugget", "rmse", "boundary"});
        try {
            const auto est = estimate_path_lengths(ds, probe, caps);
            const auto row = [&](const char* axis, const VariogramFit& f) {
                vw.row({format_g9(ds.grid.values_hz[probe]), axis, format_g9(f.length),
                        format_g9(f.sill), format_g9(f.nugget), format_g9(f.rmse),
                        f.boundary ? "1" : "0"});
            };
            row("d_r", est.fit_r);
            row("d_az", est.fit_az);
            row("d_ss", est.fit_s);
        } catch (const DataError& e) {
            vw.row({format_g9(ds.grid.values_hz[probe]), "error", e.what(), "", "", "", ""});
        }
    }

    // Optional GP within-path residuals at the observation paths.
    if (!opts.gp_fit_path.empty()) {
        const auto all_fits = load_gp_fits(opts.gp_fit_path);
        const auto paths = ds.paths();
        Eigen::MatrixXd gp_resid(ds.dws.rows(), static_cast<Eigen::Index>(all_fits.size()));
        std::vector<double> gp_freqs;
        for (std::size_t k = 0; k < all_fits.size(); ++k) {
            const auto col = ds.grid.nearest_index(all_fits[k].freq_hz);
            const GpFit fit(ds.dws.col(static_cast<Eigen::Index>(col)), paths, all_fits[k].theta);
            const auto pred = fit.predict(paths);
            gp_resid.col(static_cast<Eigen::Index>(k)) =
                ds.dws.col(static_cast<Eigen::Index>(col)) - pred.mean;
            gp_freqs.push_back(all_fits[k].freq_hz);
        }
        export_residual_stats(gp_freqs, residual_stats(gp_resid),
                              out_file(opts.out_dir, "residual_stats_gp.csv"));
        std::size_t gk = 0;
        for (std::size_t k = 1; k < gp_freqs.size(); ++k)
            if (std::fabs(gp_freqs[k] - opts.probe_freq_hz) <
                std::fabs(gp_freqs[gk] - opts.probe_freq_hz))
                gk = k;
        const Eigen::VectorXd col = gp_resid.col(static_cast<Eigen::Index>(gk));
        const std::vector<double> vals(col.data(), col.data() + col.size());
        export_histogram(histogram(vals), out_file(opts.out_dir, "histogram_gp.csv"));
    }

    std::map<std::string, std::string> kv;
    kv["model"] = opts.model_path;
    kv["gp_fit"] = opts.gp_fit_path;
    kv["dataset"] = opts.dataset_path;
    kv["ensemble_n"] = std::to_string(opts.ensemble_n);
    kv["probe_freq_hz"] = format_g9(opts.probe_freq_hz);
    kv["seed"] = std::to_string(opts.seed);
    write_manifest(opts.out_dir, "validate", kv);
    std::cout << "validate: " << ds.recordings.size() << " recordings\n";
}

// ---------------------------------------------------------------------------
// density

struct DensityCliOptions {
    std::string dataset_path;
    std::string freqs_path;
    GridSpec grid;
    std::string out_dir;
    ArchConfig arch;
    TrainingConfig tcfg;
    DensityOptions density;
    std::uint64_t seed = 1;
};

inline void cmd_density(const DensityCliOptions& opts) {
    ensure_out_dir(opts.out_dir);
    const ResidualDataset ds = load_dataset(opts.dataset_path, opts.freqs_path, opts.grid);
    ArchConfig arch = opts.arch;
    arch.n_freq = static_cast<int>(ds.grid.size());
    const auto cells = density_experiment(ds, arch, opts.tcfg, opts.density, opts.seed);
    export_density_table(cells, out_file(opts.out_dir, "density_mse.csv"));

    std::map<std::string, std::string> kv;
    kv["dataset"] = opts.dataset_path;
    std::string seps;
    for (double s : opts.density.separations_km) seps += (seps.empty() ? "" : ",") + format_g9(s);
    kv["separations_km"] = seps;
    kv["n_subsets"] = std::to_string(opts.density.n_subsets);
    kv["probe_freq_hz"] = format_g9(opts.density.probe_freq_hz);
    kv["ensemble_n"] = std::to_string(opts.density.ensemble_n);
    kv["max_epochs"] = std::to_string(opts.tcfg.max_epochs);
    kv["alpha"] = format_g9(opts.tcfg.alpha);
    kv["seed"] = std::to_string(opts.seed);
    kv["train_seed"] = std::to_string(opts.tcfg.seed);
    write_manifest(opts.out_dir, "density", kv);
    std::cout << "density: " << cells.size() << " cells\n";
}

}  // namespace cgmfas::cli
