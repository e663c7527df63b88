#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "cgmfas/analysis.hpp"

using namespace cgmfas;

namespace {

SynthConfig small_synth(int n_freq, int n_rec = 60) {
    SynthConfig cfg;
    cfg.n_stations = 20;
    cfg.n_events = 15;
    cfg.n_recordings = n_rec;
    cfg.gp.phi_p2p = 0.4;
    cfg.gp.phi_sp_ne = 0.3;
    cfg.grid.n = n_freq;
    return cfg;
}

ArchConfig tiny_arch(int n_freq) {
    ArchConfig a;
    a.n_freq = n_freq;
    a.conv_layers = 2;
    a.channels = 8;
    a.kernel_size = 3;
    a.latent_dim = 4;
    a.embed_width = 8;
    a.embed_layers = 2;
    return a;
}

}  // namespace

TEST_CASE("within-path residual identities") {
    const auto [ds, truth] = synth_generate(small_synth(8, 40), 3);
    const Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(ds.dws.rows(), ds.dws.cols());

    SECTION("zero path terms leave the observations") {
        CHECK(within_path_residuals(ds, zeros) == ds.dws);
    }
    SECTION("path terms equal to observations zero the residuals") {
        const Eigen::MatrixXd r = within_path_residuals(ds, ds.dws);
        CHECK(r.cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("round trip is exact") {
        Eigen::MatrixXd terms = ds.dws * 0.5;
        const Eigen::MatrixXd r = within_path_residuals(ds, terms);
        CHECK((r + terms - ds.dws).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("misaligned path terms rejected") {
        CHECK_THROWS_AS(within_path_residuals(ds, Eigen::MatrixXd::Zero(3, 8)), DataError);
    }
}

TEST_CASE("residual statistics") {
    SECTION("zero residuals give zero stats") {
        const auto st = residual_stats(Eigen::MatrixXd::Zero(10, 4));
        CHECK(st.mean.cwiseAbs().maxCoeff() == 0.0);
        CHECK(st.sd.cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("gaussian residuals recover moments") {
        Rng rng(5);
        Eigen::MatrixXd r(4000, 3);
        for (Eigen::Index i = 0; i < r.rows(); ++i)
            for (Eigen::Index j = 0; j < 3; ++j) r(i, j) = 0.1 + 0.4 * rng.normal();
        const auto st = residual_stats(r);
        for (int j = 0; j < 3; ++j) {
            CHECK(st.mean[j] == Catch::Approx(0.1).margin(0.02));
            CHECK(st.sd[j] == Catch::Approx(0.4).margin(0.02));
        }
    }
}

TEST_CASE("histogram binning") {
    std::vector<double> v{-3.0, -1.99, 0.0, 0.5, 1.99, 2.5};
    const auto h = histogram(v, 4, -2, 2);
    CHECK(h.counts.size() == 4);
    CHECK(h.outside == 2);
    CHECK(h.counts[0] == 1);  // -1.99
    CHECK(h.counts[2] == 2);  // 0.0, 0.5
    CHECK(h.counts[3] == 1);  // 1.99
}

TEST_CASE("interfrequency correlation basics") {
    SECTION("rows proportional to one spectrum give the all-ones matrix") {
        Eigen::MatrixXd r(40, 6);
        Eigen::VectorXd base(6);
        base << 0.3, 0.2, 0.5, 0.1, 0.4, 0.2;
        Rng rng(7);
        for (Eigen::Index i = 0; i < 40; ++i)
            r.row(i) = base.transpose() * (1.0 + 0.5 * rng.uniform());
        const auto cm = interfrequency_correlation(r);
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 6; ++j) CHECK(cm.values(i, j) == Catch::Approx(1.0).margin(1e-9));
    }
    SECTION("iid noise has near-zero off-diagonals") {
        Rng rng(11);
        const int n = 2000;
        Eigen::MatrixXd r(n, 8);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < 8; ++j) r(i, j) = rng.normal();
        const auto cm = interfrequency_correlation(r);
        const double bound = 3.0 / std::sqrt(static_cast<double>(n));
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j)
                if (i != j) CHECK(std::fabs(cm.values(i, j)) <= bound);
    }
    SECTION("zero-variance frequency is masked") {
        Rng rng(13);
        Eigen::MatrixXd r(50, 4);
        for (Eigen::Index i = 0; i < 50; ++i)
            for (Eigen::Index j = 0; j < 4; ++j) r(i, j) = j == 2 ? 1.0 : rng.normal();
        const auto cm = interfrequency_correlation(r);
        CHECK(!cm.valid[2]);
        CHECK(std::isnan(cm.values(0, 2)));
        CHECK(cm.values(2, 2) == 1.0);
        CHECK(!std::isnan(cm.values(0, 1)));
    }
    SECTION("too few recordings rejected") {
        CHECK_THROWS_AS(interfrequency_correlation(Eigen::MatrixXd::Zero(10, 4)), DataError);
    }
}

TEST_CASE("correlation matrix symmetry and eigenvalue bound") {
    const auto [ds, truth] = synth_generate(small_synth(12, 200), 17);
    const auto cm = interfrequency_correlation(ds.dws, ds.grid.values_hz);
    CHECK((cm.values - cm.values.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    for (int i = 0; i < 12; ++i) CHECK(cm.values(i, i) == 1.0);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cm.values, Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);
}

TEST_CASE("synthetic interfrequency correlation matches the analytic kernel") {
    SynthConfig cfg;
    cfg.n_stations = 150;
    cfg.n_events = 120;
    cfg.n_recordings = 1500;
    cfg.half_extent_km = 100.0;
    cfg.gp.phi_p2p = 0.5;
    cfg.gp.phi_sp_ne = 0.25;
    cfg.gp.rho_r = 8;
    cfg.gp.rho_az = 8;
    cfg.gp.rho_s = 6;
    cfg.freq_corr_octaves = 1.0;
    cfg.grid.n = 16;

    // Monte Carlo over seeds; a single realization fluctuates a few
    // hundredths per entry.
    Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(16, 16);
    const int n_seeds = 4;
    std::vector<double> freqs;
    for (int s = 0; s < n_seeds; ++s) {
        const auto [ds, truth] = synth_generate(cfg, 100 + static_cast<std::uint64_t>(s));
        freqs = ds.grid.values_hz;
        avg += interfrequency_correlation(ds.dws, ds.grid.values_hz).values / n_seeds;
    }
    const double s2 = cfg.gp.phi_p2p * cfg.gp.phi_p2p;
    const double t2 = cfg.gp.phi_sp_ne * cfg.gp.phi_sp_ne;
    double worst = 0.0;
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) {
            if (i == j) continue;
            const double d = std::log2(freqs[static_cast<std::size_t>(i)]) -
                             std::log2(freqs[static_cast<std::size_t>(j)]);
            const double analytic = s2 * std::exp(-0.5 * d * d) / (s2 + t2);
            worst = std::max(worst, std::fabs(avg(i, j) - analytic));
        }
    CHECK(worst < 0.05);
}

TEST_CASE("gp map interpolates observations at station sites as nugget vanishes") {
    // Stations on an exact 10 km lattice so map sites coincide with them.
    const auto frame = make_local_frame({37.5, -122.0, 0.0});
    const GeoPoint event{37.5, -122.0, 6.0};
    std::vector<PathGeometry> obs_paths;
    Eigen::VectorXd obs(9);
    Rng rng(19);
    int k = 0;
    for (int ix = -1; ix <= 1; ++ix)
        for (int iy = -1; iy <= 1; ++iy) {
            const GeoPoint st = unproject(frame, {ix * 10.0, iy * 10.0});
            obs_paths.push_back(path_geometry(frame, event, st));
            obs[k++] = 0.5 * rng.normal();
        }
    GpHyperparameters theta;
    theta.phi_p2p = 0.5;
    theta.phi_sp_ne = 1e-7;
    std::vector<GpFit> fits;
    fits.emplace_back(obs, obs_paths, theta);
    MapGridSpec grid{-10.0, 10.0, -10.0, 10.0, 10.0};
    const auto map = predict_map_gp(fits, {10.0}, frame, event, grid);
    REQUIRE(map.sites.size() == 9);
    // Map site order is y-major; match each site to its observation.
    for (std::size_t s = 0; s < map.sites.size(); ++s) {
        for (std::size_t o = 0; o < obs_paths.size(); ++o) {
            if (std::fabs(obs_paths[o].station_xy[0] - map.sites[s][0]) < 1e-9 &&
                std::fabs(obs_paths[o].station_xy[1] - map.sites[s][1]) < 1e-9) {
                CHECK(map.path_term(static_cast<Eigen::Index>(s), 0) ==
                      Catch::Approx(obs[static_cast<Eigen::Index>(o)]).margin(1e-6));
                CHECK(map.epistemic_sd(static_cast<Eigen::Index>(s), 0) < 1e-3);
            }
        }
    }
}

TEST_CASE("gp map reverts to the prior far from observations") {
    const auto frame = make_local_frame({37.5, -122.0, 0.0});
    const GeoPoint event{37.5, -122.0, 6.0};
    std::vector<PathGeometry> obs_paths{
        path_geometry(frame, event, unproject(frame, {100.0, 100.0}))};
    Eigen::VectorXd obs(1);
    obs << 0.9;
    GpHyperparameters theta;
    theta.phi_p2p = 0.5;
    theta.phi_sp_ne = 0.3;
    theta.rho_r = 5;
    theta.rho_az = 5;
    theta.rho_s = 5;
    std::vector<GpFit> fits;
    fits.emplace_back(obs, obs_paths, theta);
    MapGridSpec grid{-100.0, -90.0, -100.0, -90.0, 5.0};
    const auto map = predict_map_gp(fits, {10.0}, frame, event, grid);
    CHECK(map.path_term.cwiseAbs().maxCoeff() < 1e-6);
    CHECK((map.epistemic_sd.array() - 0.5).abs().maxCoeff() < 1e-6);
}

TEST_CASE("generative map prediction is deterministic across thread counts") {
    const auto [ds, truth] = synth_generate(small_synth(16, 50), 23);
    ArchConfig arch = tiny_arch(16);
    TrainingConfig tcfg;
    tcfg.alpha = 1e-4;
    tcfg.max_epochs = 10;
    tcfg.batch_size = 16;
    tcfg.seed = 11;
    const CgmFasModel model = train(ds, arch, tcfg);

    const GeoPoint event{ds.events[0].point};
    MapGridSpec grid{-20.0, 20.0, -20.0, 20.0, 10.0};
    const auto m1 = predict_map_cgm(model, event, grid, 32, 5, 1);
    const auto m2 = predict_map_cgm(model, event, grid, 32, 5, 4);
    CHECK(m1.path_term == m2.path_term);
    CHECK(m1.aleatory_std == m2.aleatory_std);
    CHECK(m1.sites.size() == 25);
    for (Eigen::Index i = 0; i < m1.aleatory_std.rows(); ++i)
        for (Eigen::Index j = 0; j < m1.aleatory_std.cols(); ++j)
            CHECK(m1.aleatory_std(i, j) > 0.0);
}

TEST_CASE("convergence curve running statistics") {
    const auto [ds, truth] = synth_generate(small_synth(16, 50), 29);
    ArchConfig arch = tiny_arch(16);
    TrainingConfig tcfg;
    tcfg.alpha = 1e-4;
    tcfg.max_epochs = 10;
    tcfg.batch_size = 16;
    tcfg.seed = 13;
    const CgmFasModel model = train(ds, arch, tcfg);
    const auto cond = model.cond_for(ds.recordings[0].path);

    const int max_n = 256;
    const auto curve = convergence_curve(model, cond, max_n, 31);

    SECTION("running mean at max_n equals the batch mean") {
        const Eigen::MatrixXd all = model.generate(cond, max_n, 31);
        const Eigen::VectorXd batch_mean = all.colwise().mean();
        CHECK((curve.running_mean.row(max_n - 1).transpose() - batch_mean).cwiseAbs().maxCoeff() <
              1e-9);
    }

    SECTION("running std drift decays like 1/sqrt(n)") {
        // Summed over frequencies, |std_n - std_final| should shrink
        // roughly as 1/sqrt(n); compare early vs late drift.
        const Eigen::VectorXd final_std = curve.running_std.row(max_n - 1).transpose();
        const auto drift = [&](int n) {
            return (curve.running_std.row(n - 1).transpose() - final_std).norm() /
                   final_std.norm();
        };
        // Average drift over windows to tame noise.
        double early = 0, late = 0;
        for (int n = 16; n < 24; ++n) early += drift(n) / 8;
        for (int n = 192; n < 200; ++n) late += drift(n) / 8;
        CHECK(late < early);
        CHECK(late < 0.2);
    }
}

TEST_CASE("density experiment smoke: degenerate subset reproduces full-data training") {
    SynthConfig scfg = small_synth(16, 120);
    scfg.n_stations = 12;
    scfg.half_extent_km = 20.0;  // tiny domain: 5 km separation keeps all stations
    const auto [ds, truth] = synth_generate(scfg, 37);

    ArchConfig arch = tiny_arch(16);
    TrainingConfig tcfg;
    tcfg.alpha = 1e-4;
    tcfg.max_epochs = 8;
    tcfg.batch_size = 16;
    tcfg.seed = 19;

    DensityOptions opts;
    opts.separations_km = {5.0};
    opts.n_subsets = 1;
    opts.ensemble_n = 16;
    const auto cells = density_experiment(ds, arch, tcfg, opts, 7);
    REQUIRE(cells.size() == 1);
    REQUIRE(cells[0].available);
    CHECK(cells[0].n_stations == 12);

    // Reproduce the cell by hand: same derived seed, full dataset.
    TrainingConfig cfg2 = tcfg;
    cfg2.seed = derive_seed(tcfg.seed, 0);
    const CgmFasModel model = train(ds, arch, cfg2);
    const auto [terms, sds] =
        predict_path_terms_dataset(model, ds, opts.ensemble_n, derive_seed(7, 0xDE0));
    const std::size_t probe = ds.grid.nearest_index(10.0);
    const Eigen::VectorXd resid =
        ds.dws.col(static_cast<Eigen::Index>(probe)) - terms.col(static_cast<Eigen::Index>(probe));
    const double mse = resid.squaredNorm() / static_cast<double>(resid.size());
    CHECK(cells[0].mse == Catch::Approx(mse).epsilon(1e-12));
}

TEST_CASE("density experiment flags unavailable cells") {
    SynthConfig scfg = small_synth(16, 30);
    scfg.n_stations = 4;
    scfg.n_events = 8;
    const auto [ds, truth] = synth_generate(scfg, 41);
    ArchConfig arch = tiny_arch(16);
    TrainingConfig tcfg;
    tcfg.max_epochs = 4;
    DensityOptions opts;
    opts.separations_km = {50.0};
    opts.n_subsets = 1;
    opts.min_recordings = 1000;  // force unavailability
    const auto cells = density_experiment(ds, arch, tcfg, opts, 3);
    REQUIRE(cells.size() == 1);
    CHECK(!cells[0].available);
    CHECK(cells[0].note == "subset too small to train");
}

TEST_CASE("csv exports are deterministic") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "cgmfas_analysis_csv";
    fs::create_directories(dir);

    const auto [ds, truth] = synth_generate(small_synth(8, 40), 43);
    const auto stats = residual_stats(ds.dws);
    const std::string p1 = (dir / "stats1.csv").string(), p2 = (dir / "stats2.csv").string();
    export_residual_stats(ds.grid.values_hz, stats, p1);
    export_residual_stats(ds.grid.values_hz, stats, p2);
    std::ifstream f1(p1), f2(p2);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK(b1.find("freq_hz,mean,sd") == 0);
    fs::remove_all(dir);
}
