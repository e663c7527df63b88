#include <CLI11.hpp>
#include <iostream>

#include "cgmfas/cli.hpp"

using namespace cgmfas;

namespace {

void add_grid_flags(CLI::App* app, GridSpec& grid) {
    app->add_option("--f-min", grid.f_min, "Lower edge of the working band, Hz");
    app->add_option("--f-max", grid.f_max, "Upper edge of the working band, Hz");
    app->add_option("--n-freq", grid.n, "Working grid length");
}

void add_arch_flags(CLI::App* app, ArchConfig& arch) {
    app->add_option("--conv-layers", arch.conv_layers, "Encoder/decoder conv layers");
    app->add_option("--channels", arch.channels, "Conv channels");
    app->add_option("--kernel-size", arch.kernel_size, "Conv kernel size (odd)");
    app->add_option("--latent-dim", arch.latent_dim, "Latent dimension");
    app->add_option("--embed-width", arch.embed_width, "Coordinate embedding width");
    app->add_option("--embed-layers", arch.embed_layers, "Coordinate embedding layers");
}

void add_train_flags(CLI::App* app, TrainingConfig& cfg) {
    app->add_option("--lr", cfg.lr, "Learning rate");
    app->add_option("--batch-size", cfg.batch_size, "Mini-batch size");
    app->add_option("--max-epochs", cfg.max_epochs, "Epoch budget");
    app->add_option("--patience", cfg.patience, "Early-stop patience, epochs");
    app->add_option("--val-fraction", cfg.val_fraction, "Validation fraction, split by event");
    app->add_option("--seed", cfg.seed, "Training seed");
}

GeoPoint parse_event(const std::string& text) {
    const auto parts = csv::split_line(text);
    if (parts.size() < 3) throw UsageError("--event expects lat,lon,depth_km[,magnitude]");
    GeoPoint p{csv::parse_double(parts[0], "event lat"), csv::parse_double(parts[1], "event lon"),
               csv::parse_double(parts[2], "event depth")};
    p.validate();
    return p;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Non-ergodic path-effect modeling for Fourier amplitude spectra"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    int threads = 0;
    app.add_option("--threads", threads, "Worker thread cap (0 = machine parallelism)");

    // synth
    cli::SynthOptions synth;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset with known truth");
    synth_cmd->add_option("--config", synth.config_path, "Key-value synthetic config")->required();
    synth_cmd->add_option("--out", synth.out_dir, "Output directory")->required();
    synth_cmd->add_option("--seed", synth.seed, "Generator seed");

    // fit-gp
    cli::FitGpOptions fitgp;
    auto* fitgp_cmd = app.add_subcommand("fit-gp", "Estimate GP hyperparameters per frequency");
    fitgp_cmd->add_option("--dataset", fitgp.dataset_path, "Residual dataset CSV")->required();
    fitgp_cmd->add_option("--freqs", fitgp.freqs_path, "Frequency sidecar CSV")->required();
    fitgp_cmd->add_option("--out", fitgp.out_dir, "Output directory")->required();
    add_grid_flags(fitgp_cmd, fitgp.grid);
    fitgp_cmd->add_option("--freq-stride", fitgp.freq_stride, "Fit every k-th grid frequency");
    fitgp_cmd->add_option("--cap-dr", fitgp.caps.cap_d_r, "Rupture-distance conditioning cap, km");
    fitgp_cmd->add_option("--cap-daz", fitgp.caps.cap_d_az, "Azimuth conditioning cap, degrees");
    fitgp_cmd->add_option("--cap-dss", fitgp.caps.cap_d_ss, "Site-separation conditioning cap, km");
    fitgp_cmd->add_flag("--desk-scale-caps", fitgp.desk_scale_caps,
                        "Widen caps/bins for few-hundred-recording datasets");

    // train
    cli::TrainOptions train;
    auto* train_cmd = app.add_subcommand("train", "Train the conditional generative model");
    train_cmd->add_option("--dataset", train.dataset_path, "Residual dataset CSV")->required();
    train_cmd->add_option("--freqs", train.freqs_path, "Frequency sidecar CSV")->required();
    train_cmd->add_option("--out", train.out_dir, "Output directory")->required();
    add_grid_flags(train_cmd, train.grid);
    add_arch_flags(train_cmd, train.arch);
    add_train_flags(train_cmd, train.tcfg);
    train_cmd->add_option("--alpha", train.tcfg.alpha, "KL weight");
    train_cmd->add_flag("--calibrate", train.calibrate,
                        "Sweep the KL weight and pick the aleatory-matched point");
    train_cmd->add_option("--alpha-grid", train.alpha_grid, "Calibration sweep values")
        ->delimiter(',');
    train_cmd->add_option("--target-phi", train.target_phi, "Aleatory sd target, ln units");
    train_cmd->add_option("--target-tol", train.target_tol, "Calibration tolerance");
    train_cmd->add_option("--ensemble-n", train.ensemble_n, "Generations per path term");
    train_cmd->add_flag("--full-scale", train.full_scale,
                        "Published dimensions (911-point grid, larger network)");

    // predict-map
    cli::PredictMapOptions pmap;
    std::string event_text = "37.85,-122.26,8.0";
    auto* pmap_cmd = app.add_subcommand("predict-map", "Path-effect map over a site lattice");
    pmap_cmd->add_option("--model", pmap.model_path, "Trained checkpoint");
    pmap_cmd->add_option("--gp-fit", pmap.gp_fit_path, "GP fit file (needs --dataset/--freqs)");
    pmap_cmd->add_option("--dataset", pmap.dataset_path, "Observation dataset for the GP path");
    pmap_cmd->add_option("--freqs", pmap.freqs_path, "Frequency sidecar for the GP path");
    add_grid_flags(pmap_cmd, pmap.grid);
    pmap_cmd->add_option("--out", pmap.out_dir, "Output directory")->required();
    pmap_cmd->add_option("--event", event_text, "Event as lat,lon,depth_km");
    pmap_cmd->add_option("--magnitude", pmap.magnitude, "Event magnitude (metadata)");
    pmap_cmd->add_option("--grid-km", pmap.grid_km, "Lattice spacing, km");
    pmap_cmd->add_option("--map-freqs", pmap.map_freqs, "Frequencies to export, Hz")
        ->delimiter(',');
    pmap_cmd->add_flag("--all-freqs", pmap.all_freqs, "Export every model frequency");
    pmap_cmd->add_option("--ensemble-n", pmap.ensemble_n, "Generations per site");
    pmap_cmd->add_option("--seed", pmap.seed, "Generation seed");

    // validate
    cli::ValidateOptions val;
    auto* val_cmd = app.add_subcommand("validate", "Residual, correlation, and variogram reports");
    val_cmd->add_option("--model", val.model_path, "Trained checkpoint")->required();
    val_cmd->add_option("--gp-fit", val.gp_fit_path, "Optional GP fit for side-by-side stats");
    val_cmd->add_option("--dataset", val.dataset_path, "Residual dataset CSV")->required();
    val_cmd->add_option("--freqs", val.freqs_path, "Frequency sidecar CSV")->required();
    add_grid_flags(val_cmd, val.grid);
    val_cmd->add_option("--out", val.out_dir, "Output directory")->required();
    val_cmd->add_option("--ensemble-n", val.ensemble_n, "Generations per path term");
    val_cmd->add_option("--probe-freq", val.probe_freq_hz, "Histogram/variogram frequency, Hz");
    val_cmd->add_option("--seed", val.seed, "Generation seed");
    val_cmd->add_flag("--desk-scale-caps", val.desk_scale_caps,
                      "Widen variogram caps for small datasets");

    // density
    cli::DensityCliOptions dens;
    auto* dens_cmd = app.add_subcommand("density", "Station-density retraining experiment");
    dens_cmd->add_option("--dataset", dens.dataset_path, "Residual dataset CSV")->required();
    dens_cmd->add_option("--freqs", dens.freqs_path, "Frequency sidecar CSV")->required();
    add_grid_flags(dens_cmd, dens.grid);
    dens_cmd->add_option("--out", dens.out_dir, "Output directory")->required();
    add_arch_flags(dens_cmd, dens.arch);
    add_train_flags(dens_cmd, dens.tcfg);
    dens_cmd->add_option("--alpha", dens.tcfg.alpha, "KL weight");
    dens_cmd->add_option("--separations", dens.density.separations_km, "Separation sweep, km")
        ->delimiter(',');
    dens_cmd->add_option("--subsets", dens.density.n_subsets, "Subsets per separation");
    dens_cmd->add_option("--probe-freq", dens.density.probe_freq_hz, "MSE probe frequency, Hz");
    dens_cmd->add_option("--ensemble-n", dens.density.ensemble_n, "Generations per path term");
    dens_cmd->add_option("--subset-seed", dens.seed, "Station subset selection seed");

    try {
        app.parse(argc, argv);
        if (synth_cmd->parsed()) {
            cli::cmd_synth(synth);
        } else if (fitgp_cmd->parsed()) {
            cli::cmd_fit_gp(fitgp);
        } else if (train_cmd->parsed()) {
            cli::cmd_train(train);
        } else if (pmap_cmd->parsed()) {
            pmap.event = parse_event(event_text);
            pmap.threads = threads;
            cli::cmd_predict_map(pmap);
        } else if (val_cmd->parsed()) {
            cli::cmd_validate(val);
        } else if (dens_cmd->parsed()) {
            dens.density.threads = cli::effective_threads(threads);
            cli::cmd_density(dens);
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
