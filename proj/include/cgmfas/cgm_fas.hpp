#pragma once

#include <Eigen/Dense>
#include <cstring>
#include <fstream>

#include "cgmfas/dataset.hpp"
#include "cgmfas/nn.hpp"

namespace cgmfas {

struct ArchConfig {
    int n_freq = 128;
    int conv_layers = 3;
    int channels = 32;
    int kernel_size = 5;
    int stride = 2;
    int latent_dim = 16;
    int embed_width = 32;
    int embed_layers = 2;

    void validate() const {
        if (conv_layers < 1 || channels < 1 || latent_dim < 2 || embed_width < 1 ||
            embed_layers < 1)
            throw DataError("bad architecture config");
        if (kernel_size < 3 || kernel_size % 2 == 0)
            throw DataError("kernel_size must be odd and >= 3");
        if (stride < 1) throw DataError("stride must be positive");
        int len = n_freq;
        for (int i = 0; i < conv_layers; ++i) {
            if (len % stride != 0)
                throw DataError("n_freq incompatible with the conv stride chain");
            len /= stride;
        }
        if (len < 1) throw DataError("conv stack collapses the spectrum");
    }

    int encoded_len() const {
        int len = n_freq;
        for (int i = 0; i < conv_layers; ++i) len /= stride;
        return len;
    }
    int pad() const { return (kernel_size - 1) / 2; }
    int out_pad() const { return stride - 1; }
};

struct TrainingConfig {
    double alpha = 3e-5;
    double lr = 1e-3;
    int batch_size = 64;
    int max_epochs = 120;
    std::uint64_t seed = 1;
    int patience = 12;          // early-stop patience, epochs
    double min_delta = 1e-4;    // required val improvement
    double val_fraction = 0.10; // held-out fraction, split by event id
};

/// Per-frequency standardization constants plus the conditioning box and
/// the geographic frame; everything needed to run the model standalone.
/// The conditioning box (x_min..) carries extrapolation margins; the raw
/// station/event bounding box (domain_*) is kept for default map extents.
struct Normalization {
    double origin_lat = 0.0, origin_lon = 0.0;
    std::vector<double> freq_hz;
    std::vector<double> freq_mean, freq_scale;
    double x_min = -1, x_max = 1, y_min = -1, y_max = 1, depth_max = 1;
    double domain_x0 = -1, domain_x1 = 1, domain_y0 = -1, domain_y1 = 1;
};

/// Normalized conditioning inputs: event (x, y, depth) and station (x, y).
struct ConditioningVector {
    float v[5] = {0, 0, 0, 0, 0};
};

inline ConditioningVector make_cond(const Normalization& nrm, const Vec2& event_xy,
                                    double event_depth, const Vec2& station_xy) {
    const auto scale01 = [](double x, double lo, double hi) {
        if (hi <= lo) return 0.0;
        return 2.0 * (x - lo) / (hi - lo) - 1.0;
    };
    ConditioningVector c;
    c.v[0] = static_cast<float>(scale01(event_xy[0], nrm.x_min, nrm.x_max));
    c.v[1] = static_cast<float>(scale01(event_xy[1], nrm.y_min, nrm.y_max));
    c.v[2] = static_cast<float>(nrm.depth_max > 0 ? 2.0 * event_depth / nrm.depth_max - 1.0 : 0.0);
    c.v[3] = static_cast<float>(scale01(station_xy[0], nrm.x_min, nrm.x_max));
    c.v[4] = static_cast<float>(scale01(station_xy[1], nrm.y_min, nrm.y_max));
    for (float x : c.v)
        if (!(x >= -1.5f && x <= 1.5f))
            throw GeometryError("conditioning coordinates outside the normalized range");
    return c;
}

struct LatentDistribution {
    Eigen::VectorXf mu;
    Eigen::VectorXf log_sigma;
};

namespace detail_nn {

struct DenseParams {
    nn::Tensor w, b;
};
struct ConvParams {
    nn::Tensor w, b;
};

struct ModelParams {
    std::vector<DenseParams> embed;
    std::vector<ConvParams> enc_conv;
    DenseParams enc_head;
    DenseParams dec_in;
    std::vector<ConvParams> dec_deconv;

    std::vector<std::pair<std::string, nn::Tensor>> named() const {
        std::vector<std::pair<std::string, nn::Tensor>> out;
        for (std::size_t i = 0; i < embed.size(); ++i) {
            out.emplace_back("embed." + std::to_string(i) + ".w", embed[i].w);
            out.emplace_back("embed." + std::to_string(i) + ".b", embed[i].b);
        }
        for (std::size_t i = 0; i < enc_conv.size(); ++i) {
            out.emplace_back("enc_conv." + std::to_string(i) + ".w", enc_conv[i].w);
            out.emplace_back("enc_conv." + std::to_string(i) + ".b", enc_conv[i].b);
        }
        out.emplace_back("enc_head.w", enc_head.w);
        out.emplace_back("enc_head.b", enc_head.b);
        out.emplace_back("dec_in.w", dec_in.w);
        out.emplace_back("dec_in.b", dec_in.b);
        for (std::size_t i = 0; i < dec_deconv.size(); ++i) {
            out.emplace_back("dec_deconv." + std::to_string(i) + ".w", dec_deconv[i].w);
            out.emplace_back("dec_deconv." + std::to_string(i) + ".b", dec_deconv[i].b);
        }
        return out;
    }
};

inline nn::Tensor init_weight(nn::Shape shape, long fan_in, double gain, Rng& rng) {
    nn::Tensor t = nn::make_leaf(std::move(shape), true);
    const double sd = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
    for (long i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(sd * rng.normal());
    return t;
}

inline ModelParams init_params(const ArchConfig& a, Rng& rng) {
    ModelParams p;
    int in = 5;
    for (int l = 0; l < a.embed_layers; ++l) {
        DenseParams d;
        d.w = init_weight({a.embed_width, in}, in, 1.0, rng);
        d.b = nn::make_leaf({a.embed_width}, true);
        p.embed.push_back(d);
        in = a.embed_width;
    }
    int ch = 1 + a.embed_width;
    for (int l = 0; l < a.conv_layers; ++l) {
        ConvParams c;
        c.w = init_weight({a.channels, ch, a.kernel_size},
                          static_cast<long>(ch) * a.kernel_size, 1.0, rng);
        c.b = nn::make_leaf({a.channels}, true);
        p.enc_conv.push_back(c);
        ch = a.channels;
    }
    const int flat = a.channels * a.encoded_len();
    p.enc_head.w = init_weight({2 * a.latent_dim, flat}, flat, 0.5, rng);
    p.enc_head.b = nn::make_leaf({2 * a.latent_dim}, true);

    const int dec_in_dim = a.latent_dim + a.embed_width;
    p.dec_in.w = init_weight({flat, dec_in_dim}, dec_in_dim, 1.0, rng);
    p.dec_in.b = nn::make_leaf({flat}, true);
    for (int l = 0; l < a.conv_layers; ++l) {
        const bool last = l == a.conv_layers - 1;
        ConvParams c;
        // Deconv weight layout matches conv: [in_channels, out_channels, K].
        c.w = init_weight({a.channels, last ? 1 : a.channels, a.kernel_size},
                          static_cast<long>(a.channels) * a.kernel_size, last ? 0.5 : 1.0, rng);
        c.b = nn::make_leaf({last ? 1 : a.channels}, true);
        p.dec_deconv.push_back(c);
    }
    return p;
}

inline nn::Tensor embed_forward(nn::Tape& tape, const ArchConfig& a, const ModelParams& p,
                                const nn::Tensor& cond) {
    nn::Tensor h = cond;
    for (std::size_t l = 0; l < p.embed.size(); ++l) {
        h = nn::dense(tape, h, p.embed[l].w, p.embed[l].b);
        if (l + 1 < p.embed.size()) h = nn::relu(tape, h);
    }
    (void)a;
    return h;
}

inline std::pair<nn::Tensor, nn::Tensor> encode_forward(nn::Tape& tape, const ArchConfig& a,
                                                        const ModelParams& p, const nn::Tensor& x,
                                                        const nn::Tensor& emb) {
    nn::Tensor eb = nn::broadcast_channels(tape, emb, a.n_freq);
    nn::Tensor h = nn::concat_channels(tape, x, eb);
    for (const auto& c : p.enc_conv)
        h = nn::relu(tape, nn::conv1d(tape, h, c.w, c.b, a.stride, a.pad()));
    nn::Tensor flat = nn::reshape(tape, h, {x.dim(0), a.channels * a.encoded_len()});
    nn::Tensor head = nn::dense(tape, flat, p.enc_head.w, p.enc_head.b);
    nn::Tensor mu = nn::slice_cols(tape, head, 0, a.latent_dim);
    nn::Tensor log_sigma = nn::slice_cols(tape, head, a.latent_dim, a.latent_dim);
    return {mu, log_sigma};
}

inline nn::Tensor decode_forward(nn::Tape& tape, const ArchConfig& a, const ModelParams& p,
                                 const nn::Tensor& z, const nn::Tensor& emb) {
    nn::Tensor h = nn::concat_vec(tape, z, emb);
    h = nn::relu(tape, nn::dense(tape, h, p.dec_in.w, p.dec_in.b));
    nn::Tensor h3 = nn::reshape(tape, h, {z.dim(0), a.channels, a.encoded_len()});
    for (std::size_t l = 0; l < p.dec_deconv.size(); ++l) {
        h3 = nn::deconv1d(tape, h3, p.dec_deconv[l].w, p.dec_deconv[l].b, a.stride, a.pad(),
                          a.out_pad());
        if (l + 1 < p.dec_deconv.size()) h3 = nn::relu(tape, h3);
    }
    return nn::reshape(tape, h3, {z.dim(0), a.n_freq});
}

/// Inverse standard normal CDF (Acklam's rational approximation, ~1e-9).
inline double inverse_normal_cdf(double p) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1 - plow;
    if (!(p > 0.0 && p < 1.0)) throw NumericalError("inverse_normal_cdf domain");
    if (p < plow) {
        const double q = std::sqrt(-2 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    if (p > phigh) {
        const double q = std::sqrt(-2 * std::log(1 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    const double q = p - 0.5, r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

}  // namespace detail_nn

struct LossBreakdown {
    double total = 0.0;
    double mse = 0.0;
    double kl = 0.0;
};

struct LossLogRow {
    int epoch = 0;
    double train_total = 0.0, train_mse = 0.0, train_kl = 0.0, val_total = 0.0;
};

/// Trained conditional generative model for within-site residual spectra.
class CgmFasModel {
public:
    ArchConfig arch;
    Normalization norm;
    double alpha = 0.0;
    std::uint64_t seed = 0;
    detail_nn::ModelParams params;

    LocalFrame frame() const {
        return make_local_frame({norm.origin_lat, norm.origin_lon, 0.0});
    }

    ConditioningVector cond_for(const PathGeometry& g) const {
        return make_cond(norm, g.event_xy, g.event_depth, g.station_xy);
    }

    /// Embedding of one conditioning vector (inference).
    Eigen::VectorXf embed(const ConditioningVector& cond) const {
        nn::Tape tape(false);
        nn::Tensor c = nn::make_leaf({1, 5}, false);
        std::copy(cond.v, cond.v + 5, c.data());
        nn::Tensor e = detail_nn::embed_forward(tape, arch, params, c);
        return Eigen::Map<const Eigen::VectorXf>(e.data(), e.size());
    }

    /// Latent posterior of one raw residual spectrum.
    LatentDistribution encode(const Eigen::VectorXd& dws_raw, const ConditioningVector& cond) const {
        if (dws_raw.size() != arch.n_freq) throw DataError("spectrum length does not match arch");
        nn::Tape tape(false);
        nn::Tensor x = nn::make_leaf({1, 1, arch.n_freq}, false);
        for (int f = 0; f < arch.n_freq; ++f)
            x.data()[f] = static_cast<float>((dws_raw[f] - norm.freq_mean[static_cast<std::size_t>(f)]) /
                                             norm.freq_scale[static_cast<std::size_t>(f)]);
        nn::Tensor c = nn::make_leaf({1, 5}, false);
        std::copy(cond.v, cond.v + 5, c.data());
        nn::Tensor e = detail_nn::embed_forward(tape, arch, params, c);
        auto [mu, ls] = detail_nn::encode_forward(tape, arch, params, x, e);
        LatentDistribution out;
        out.mu = Eigen::Map<const Eigen::VectorXf>(mu.data(), mu.size());
        out.log_sigma = Eigen::Map<const Eigen::VectorXf>(ls.data(), ls.size());
        return out;
    }

    /// Decodes one latent vector to a raw (de-standardized) spectrum.
    Eigen::VectorXd decode(const Eigen::VectorXf& z, const ConditioningVector& cond) const {
        if (z.size() != arch.latent_dim) throw DataError("latent size does not match arch");
        Eigen::MatrixXf zs(1, arch.latent_dim);
        zs.row(0) = z.transpose();
        const Eigen::MatrixXd out = decode_batch(zs, cond);
        return out.row(0).transpose();
    }

    /// Batched decode of many latents under one conditioning vector;
    /// rows of z are samples. Returns raw spectra [n x n_freq].
    Eigen::MatrixXd decode_batch(const Eigen::MatrixXf& z, const ConditioningVector& cond) const {
        const int n = static_cast<int>(z.rows());
        nn::Tape tape(false);
        nn::Tensor zt = nn::make_leaf({n, arch.latent_dim}, false);
        for (int i = 0; i < n; ++i)
            for (int d = 0; d < arch.latent_dim; ++d)
                zt.data()[static_cast<long>(i) * arch.latent_dim + d] = z(i, d);
        nn::Tensor c = nn::make_leaf({n, 5}, false);
        for (int i = 0; i < n; ++i) std::copy(cond.v, cond.v + 5, c.data() + static_cast<long>(i) * 5);
        nn::Tensor e = detail_nn::embed_forward(tape, arch, params, c);
        nn::Tensor y = detail_nn::decode_forward(tape, arch, params, zt, e);
        Eigen::MatrixXd out(n, arch.n_freq);
        for (int i = 0; i < n; ++i)
            for (int f = 0; f < arch.n_freq; ++f)
                out(i, f) = static_cast<double>(y.data()[static_cast<long>(i) * arch.n_freq + f]) *
                                norm.freq_scale[static_cast<std::size_t>(f)] +
                            norm.freq_mean[static_cast<std::size_t>(f)];
        return out;
    }

    /// n independent prior generations (z ~ N(0, I) from the seeded stream).
    Eigen::MatrixXd generate(const ConditioningVector& cond, int n, std::uint64_t gen_seed) const {
        if (n < 1) throw DataError("generate needs n >= 1");
        Rng rng(derive_seed(gen_seed, 0x6E));
        Eigen::MatrixXf z(n, arch.latent_dim);
        for (int i = 0; i < n; ++i)
            for (int d = 0; d < arch.latent_dim; ++d) z(i, d) = static_cast<float>(rng.normal());
        return decode_batch(z, cond);
    }

    /// Ensemble path-term estimate: mean spectrum is the path effect, the
    /// ensemble sd the aleatory variability. The latent design is a seeded
    /// latin-hypercube whitened to exact zero mean and identity sample
    /// covariance, which removes the O(1/sqrt(n)) Monte Carlo drift of the
    /// ensemble statistics (raw independent draws stay available through
    /// generate()).
    std::pair<Eigen::VectorXd, Eigen::VectorXd> predict_path_term(const ConditioningVector& cond,
                                                                  int n = 200,
                                                                  std::uint64_t gen_seed = 0) const {
        if (n < 2) throw DataError("predict_path_term needs n >= 2");
        const Eigen::MatrixXf z = latent_design(n, gen_seed);
        const Eigen::MatrixXd samples = decode_batch(z, cond);
        Eigen::VectorXd mean = samples.colwise().mean();
        Eigen::VectorXd sd(arch.n_freq);
        for (int f = 0; f < arch.n_freq; ++f)
            sd[f] = std::sqrt((samples.col(f).array() - mean[f]).square().sum() / (n - 1));
        return {std::move(mean), std::move(sd)};
    }

    /// Posterior reconstruction of one observed spectrum (z ~ q(z|x)).
    Eigen::VectorXd reconstruct(const Eigen::VectorXd& dws_raw, const ConditioningVector& cond,
                                std::uint64_t eps_seed) const {
        const LatentDistribution ld = encode(dws_raw, cond);
        Rng rng(derive_seed(eps_seed, 0x7C));
        Eigen::VectorXf z(arch.latent_dim);
        for (int d = 0; d < arch.latent_dim; ++d)
            z[d] = ld.mu[d] + std::exp(ld.log_sigma[d]) * static_cast<float>(rng.normal());
        return decode(z, cond);
    }

    /// Whitened latin-hypercube latent batch used by ensemble statistics.
    Eigen::MatrixXf latent_design(int n, std::uint64_t gen_seed) const {
        Eigen::MatrixXd z(n, arch.latent_dim);
        std::vector<double> probit(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            probit[static_cast<std::size_t>(i)] =
                detail_nn::inverse_normal_cdf((i + 0.5) / static_cast<double>(n));
        for (int d = 0; d < arch.latent_dim; ++d) {
            Rng rng(derive_seed(gen_seed, 0x11 + static_cast<std::uint64_t>(d)));
            std::vector<int> perm(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
            for (int i = n - 1; i > 0; --i)
                std::swap(perm[static_cast<std::size_t>(i)],
                          perm[rng.uniform_index(static_cast<std::uint64_t>(i) + 1)]);
            for (int i = 0; i < n; ++i)
                z(i, d) = probit[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
        }
        // Columns have exactly zero mean by symmetry; whiten the sample
        // covariance to the identity.
        const Eigen::MatrixXd s = z.transpose() * z / static_cast<double>(n - 1);
        const Eigen::LLT<Eigen::MatrixXd> llt(s);
        if (llt.info() == Eigen::Success) {
            z = llt.matrixL().solve(z.transpose()).transpose();
        }
        return z.cast<float>();
    }
};

/// Loss of one batch under the reparameterized objective
/// total = MSE(standardized) + alpha * mean KL. eps supplies the latent
/// noise, one value per (sample, latent dim).
inline LossBreakdown compute_loss(const CgmFasModel& model, const Eigen::MatrixXd& dws_raw,
                                  const std::vector<ConditioningVector>& conds,
                                  const std::vector<float>& eps, double alpha) {
    const int n = static_cast<int>(dws_raw.rows());
    if (n == 0) throw DataError("loss needs a nonempty batch");
    if (static_cast<int>(conds.size()) != n) throw DataError("batch cond mismatch");
    const ArchConfig& a = model.arch;
    nn::Tape tape(false);
    nn::Tensor x = nn::make_leaf({n, 1, a.n_freq}, false);
    std::vector<float> target(static_cast<std::size_t>(n) * a.n_freq);
    for (int i = 0; i < n; ++i)
        for (int f = 0; f < a.n_freq; ++f) {
            const float v = static_cast<float>(
                (dws_raw(i, f) - model.norm.freq_mean[static_cast<std::size_t>(f)]) /
                model.norm.freq_scale[static_cast<std::size_t>(f)]);
            x.data()[static_cast<long>(i) * a.n_freq + f] = v;
            target[static_cast<std::size_t>(i) * a.n_freq + f] = v;
        }
    nn::Tensor c = nn::make_leaf({n, 5}, false);
    for (int i = 0; i < n; ++i) std::copy(conds[static_cast<std::size_t>(i)].v,
                                          conds[static_cast<std::size_t>(i)].v + 5,
                                          c.data() + static_cast<long>(i) * 5);
    nn::Tensor e = detail_nn::embed_forward(tape, a, model.params, c);
    auto [mu, ls] = detail_nn::encode_forward(tape, a, model.params, x, e);
    nn::Tensor z = nn::reparameterize(tape, mu, ls, eps);
    nn::Tensor recon = detail_nn::decode_forward(tape, a, model.params, z, e);
    nn::Tensor mse = nn::mse_mean(tape, recon, target);
    nn::Tensor kl = nn::kl_diag_gaussian(tape, mu, ls);
    LossBreakdown out;
    out.mse = mse.data()[0];
    out.kl = kl.data()[0];
    out.total = out.mse + alpha * out.kl;
    return out;
}

namespace detail_nn {

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char ch : s) {
        h ^= static_cast<unsigned char>(ch);
        h *= 1099511628211ULL;
    }
    return h;
}

inline Normalization normalization_from(const ResidualDataset& ds) {
    Normalization nrm;
    nrm.origin_lat = ds.frame.origin.lat;
    nrm.origin_lon = ds.frame.origin.lon;
    nrm.freq_hz = ds.grid.values_hz;
    const auto f = static_cast<std::size_t>(ds.grid.size());
    nrm.freq_mean.resize(f);
    nrm.freq_scale.resize(f);
    for (std::size_t k = 0; k < f; ++k) {
        const auto col = ds.dws.col(static_cast<Eigen::Index>(k));
        const double mean = ds.dws.rows() > 0 ? col.mean() : 0.0;
        double var = 0.0;
        if (ds.dws.rows() > 1) var = (col.array() - mean).square().sum() / (col.size() - 1);
        nrm.freq_mean[k] = mean;
        nrm.freq_scale[k] = std::max(1e-3, std::sqrt(var));
    }
    ds.domain_box(nrm.x_min, nrm.x_max, nrm.y_min, nrm.y_max);
    nrm.domain_x0 = nrm.x_min;
    nrm.domain_x1 = nrm.x_max;
    nrm.domain_y0 = nrm.y_min;
    nrm.domain_y1 = nrm.y_max;
    nrm.depth_max = 0.0;
    for (const auto& e : ds.events) nrm.depth_max = std::max(nrm.depth_max, e.point.depth_km);
    // Generous margins so nearby prediction targets stay inside the
    // normalized box.
    const double mx = 0.15 * (nrm.x_max - nrm.x_min) + 1.0;
    const double my = 0.15 * (nrm.y_max - nrm.y_min) + 1.0;
    nrm.x_min -= mx;
    nrm.x_max += mx;
    nrm.y_min -= my;
    nrm.y_max += my;
    nrm.depth_max = std::max(1.0, nrm.depth_max * 1.2);
    return nrm;
}

}  // namespace detail_nn

/// Trains a model on the dataset. Deterministic per (dataset, arch, cfg):
/// seeded init, seeded shuffling, seeded latent noise, single-threaded
/// updates. Early stop restores the best validation snapshot.
inline CgmFasModel train(const ResidualDataset& ds, const ArchConfig& arch,
                         const TrainingConfig& cfg, std::vector<LossLogRow>* loss_log = nullptr) {
    arch.validate();
    if (ds.recordings.empty()) throw DataError("training needs a nonempty dataset");
    if (static_cast<int>(ds.grid.size()) != arch.n_freq)
        throw DataError("dataset grid length does not match arch.n_freq");
    if (!(cfg.alpha > 0.0)) throw DataError("alpha must be positive");

    CgmFasModel model;
    model.arch = arch;
    model.alpha = cfg.alpha;
    model.seed = cfg.seed;
    model.norm = detail_nn::normalization_from(ds);
    Rng init_rng(derive_seed(cfg.seed, 0xA11CE));
    model.params = detail_nn::init_params(arch, init_rng);

    const int n_all = static_cast<int>(ds.recordings.size());
    // Standardized data and conditioning, in float.
    Eigen::MatrixXf x_std(n_all, arch.n_freq);
    std::vector<ConditioningVector> conds(static_cast<std::size_t>(n_all));
    for (int i = 0; i < n_all; ++i) {
        for (int f = 0; f < arch.n_freq; ++f)
            x_std(i, f) = static_cast<float>(
                (ds.dws(i, f) - model.norm.freq_mean[static_cast<std::size_t>(f)]) /
                model.norm.freq_scale[static_cast<std::size_t>(f)]);
        conds[static_cast<std::size_t>(i)] = model.cond_for(ds.recordings[static_cast<std::size_t>(i)].path);
    }

    // Validation split by event id, so recordings of one event never
    // straddle the split.
    std::vector<int> train_idx, val_idx;
    for (int i = 0; i < n_all; ++i) {
        const auto h = splitmix64(detail_nn::fnv1a(ds.recordings[static_cast<std::size_t>(i)].event_id) ^
                                  derive_seed(cfg.seed, 0x5917));
        if (static_cast<double>(h % 10000) < cfg.val_fraction * 10000.0)
            val_idx.push_back(i);
        else
            train_idx.push_back(i);
    }
    if (train_idx.empty()) train_idx.swap(val_idx);

    auto named = model.params.named();
    nn::AdamOptimizer opt(named, {cfg.lr});
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5FF));
    Rng eps_rng(derive_seed(cfg.seed, 0xE9));

    const auto run_batch = [&](const std::vector<int>& idx, std::size_t begin, std::size_t end,
                               bool update, bool sample_latent) {
        const int bs = static_cast<int>(end - begin);
        nn::Tape tape(update);
        nn::Tensor x = nn::make_leaf({bs, 1, arch.n_freq}, false);
        std::vector<float> target(static_cast<std::size_t>(bs) * arch.n_freq);
        nn::Tensor c = nn::make_leaf({bs, 5}, false);
        for (int i = 0; i < bs; ++i) {
            const int row = idx[begin + static_cast<std::size_t>(i)];
            for (int f = 0; f < arch.n_freq; ++f) {
                const float v = x_std(row, f);
                x.data()[static_cast<long>(i) * arch.n_freq + f] = v;
                target[static_cast<std::size_t>(i) * arch.n_freq + f] = v;
            }
            std::copy(conds[static_cast<std::size_t>(row)].v, conds[static_cast<std::size_t>(row)].v + 5,
                      c.data() + static_cast<long>(i) * 5);
        }
        std::vector<float> eps(static_cast<std::size_t>(bs) * arch.latent_dim, 0.0f);
        if (sample_latent)
            for (auto& e : eps) e = static_cast<float>(eps_rng.normal());

        nn::Tensor emb = detail_nn::embed_forward(tape, arch, model.params, c);
        auto [mu, ls] = detail_nn::encode_forward(tape, arch, model.params, x, emb);
        nn::Tensor z = nn::reparameterize(tape, mu, ls, eps);
        nn::Tensor recon = detail_nn::decode_forward(tape, arch, model.params, z, emb);
        nn::Tensor mse = nn::mse_mean(tape, recon, target);
        nn::Tensor kl = nn::kl_diag_gaussian(tape, mu, ls);
        nn::Tensor total = nn::add_scaled(tape, mse, kl, static_cast<float>(cfg.alpha));

        LossBreakdown lb;
        lb.mse = mse.data()[0];
        lb.kl = kl.data()[0];
        lb.total = total.data()[0];
        if (update) {
            tape.backward(total);
            opt.step();
        }
        return lb;
    };

    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    std::vector<std::vector<float>> best_snapshot;
    const auto snapshot = [&] {
        best_snapshot.clear();
        for (const auto& [name, t] : named) best_snapshot.push_back(t.node()->value);
    };
    const auto restore = [&] {
        for (std::size_t p = 0; p < named.size(); ++p) named[p].second.node()->value = best_snapshot[p];
    };

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        // Seeded Fisher-Yates shuffle of the training order.
        for (std::size_t i = train_idx.size() - 1; i > 0; --i)
            std::swap(train_idx[i], train_idx[shuffle_rng.uniform_index(i + 1)]);

        double tr_total = 0, tr_mse = 0, tr_kl = 0;
        long seen = 0;
        for (std::size_t b = 0; b < train_idx.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t e = std::min(train_idx.size(), b + static_cast<std::size_t>(cfg.batch_size));
            const auto lb = run_batch(train_idx, b, e, true, true);
            if (!std::isfinite(lb.total) || lb.total > 1e3)
                throw NumericalError("training diverged at epoch " + std::to_string(epoch) +
                                     ", batch " + std::to_string(b / static_cast<std::size_t>(cfg.batch_size)) +
                                     ": loss = " + format_g9(lb.total));
            const auto bs = static_cast<long>(e - b);
            tr_total += lb.total * static_cast<double>(bs);
            tr_mse += lb.mse * static_cast<double>(bs);
            tr_kl += lb.kl * static_cast<double>(bs);
            seen += bs;
        }

        double val_total = 0;
        if (!val_idx.empty()) {
            long vseen = 0;
            for (std::size_t b = 0; b < val_idx.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
                const std::size_t e = std::min(val_idx.size(), b + static_cast<std::size_t>(cfg.batch_size));
                // Deterministic validation: z = mu.
                const auto lb = run_batch(val_idx, b, e, false, false);
                val_total += lb.total * static_cast<double>(e - b);
                vseen += static_cast<long>(e - b);
            }
            val_total /= static_cast<double>(vseen);
        } else {
            val_total = tr_total / static_cast<double>(seen);
        }

        if (loss_log)
            loss_log->push_back({epoch, tr_total / static_cast<double>(seen),
                                 tr_mse / static_cast<double>(seen),
                                 tr_kl / static_cast<double>(seen), val_total});

        if (val_total < best_val - cfg.min_delta) {
            best_val = val_total;
            best_epoch = epoch;
            snapshot();
        } else if (epoch - best_epoch >= cfg.patience) {
            break;
        }
    }
    if (!best_snapshot.empty()) restore();
    return model;
}

/// Path-term ensemble means (and sds) for every recording of a dataset.
/// Per-recording latent streams derive from the root seed by stable
/// hashing of the recording index.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> predict_path_terms_dataset(
    const CgmFasModel& model, const ResidualDataset& ds, int n = 200, std::uint64_t root_seed = 0) {
    const auto nrec = static_cast<int>(ds.recordings.size());
    Eigen::MatrixXd means(nrec, model.arch.n_freq), sds(nrec, model.arch.n_freq);
    for (int i = 0; i < nrec; ++i) {
        const auto cond = model.cond_for(ds.recordings[static_cast<std::size_t>(i)].path);
        auto [mean, sd] =
            model.predict_path_term(cond, n, derive_seed(root_seed, static_cast<std::uint64_t>(i)));
        means.row(i) = mean.transpose();
        sds.row(i) = sd.transpose();
    }
    return {std::move(means), std::move(sds)};
}

/// Interior 60% of the frequency grid, where edge artifacts of the conv
/// stack are excluded.
inline std::pair<std::size_t, std::size_t> mid_band(std::size_t n_freq) {
    const auto lo = static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(n_freq)));
    return {lo, n_freq - lo};
}

/// Within-path residual sd over the mid-band, the calibration statistic.
inline double mid_band_residual_std(const CgmFasModel& model, const ResidualDataset& ds,
                                    const Eigen::MatrixXd& path_terms) {
    const auto [lo, hi] = mid_band(static_cast<std::size_t>(model.arch.n_freq));
    double acc = 0.0;
    long count = 0;
    for (Eigen::Index i = 0; i < ds.dws.rows(); ++i)
        for (std::size_t f = lo; f < hi; ++f) {
            const double r = ds.dws(i, static_cast<Eigen::Index>(f)) -
                             path_terms(i, static_cast<Eigen::Index>(f));
            acc += r * r;
            ++count;
        }
    return std::sqrt(acc / static_cast<double>(count));
}

struct CalibrationRow {
    double alpha = 0.0;
    double residual_std = 0.0;
    double abs_gap = 0.0;
};

struct CalibrationResult {
    double alpha_star = 0.0;
    bool within_tol = false;
    std::vector<CalibrationRow> table;  // ascending alpha
    CgmFasModel model;                  // trained at alpha_star
};

/// Sweeps the KL weight over the grid, trains one model per point, and
/// selects the alpha whose mid-band within-path residual sd is nearest the
/// target. The grid must span at least two decades.
inline CalibrationResult calibrate_alpha(const ResidualDataset& ds, const ArchConfig& arch,
                                         const TrainingConfig& base, std::vector<double> alpha_grid,
                                         double target_phi = 0.40, double tol = 0.03,
                                         int ensemble_n = 200,
                                         std::vector<LossLogRow>* loss_log = nullptr) {
    if (alpha_grid.size() < 2) throw DataError("alpha grid needs at least 2 points");
    std::sort(alpha_grid.begin(), alpha_grid.end());
    if (alpha_grid.back() / alpha_grid.front() < 100.0)
        throw DataError("alpha grid must span at least two decades");

    CalibrationResult out;
    double best_gap = std::numeric_limits<double>::infinity();
    for (double alpha : alpha_grid) {
        TrainingConfig cfg = base;
        cfg.alpha = alpha;
        std::vector<LossLogRow> log;
        CgmFasModel model = train(ds, arch, cfg, &log);
        const auto [terms, sds] = predict_path_terms_dataset(model, ds, ensemble_n,
                                                             derive_seed(base.seed, 0xCA1));
        CalibrationRow row;
        row.alpha = alpha;
        row.residual_std = mid_band_residual_std(model, ds, terms);
        row.abs_gap = std::fabs(row.residual_std - target_phi);
        out.table.push_back(row);
        if (row.abs_gap < best_gap) {
            best_gap = row.abs_gap;
            out.alpha_star = alpha;
            out.model = std::move(model);
            if (loss_log) *loss_log = log;
        }
    }
    out.within_tol = best_gap <= tol;
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: single binary file, little-endian, bit-exact round trip.
// Layout: magic "CGMFASCK" | u32 version | arch (8 x i32) | f64 alpha |
// u64 seed | normalization block | u32 n_weights | per-weight records
// (name, dims, f32 data).

namespace detail_nn {

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("truncated checkpoint");
    return v;
}
inline void put_vec(std::ostream& out, const std::vector<double>& v) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v.size()));
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<long>(v.size() * sizeof(double)));
}
inline std::vector<double> get_vec(std::istream& in) {
    const auto n = get<std::uint32_t>(in);
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<long>(n * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint");
    return v;
}

}  // namespace detail_nn

inline void save_checkpoint(const CgmFasModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write("CGMFASCK", 8);
    detail_nn::put<std::uint32_t>(out, 1);
    const ArchConfig& a = model.arch;
    for (int v : {a.n_freq, a.conv_layers, a.channels, a.kernel_size, a.stride, a.latent_dim,
                  a.embed_width, a.embed_layers})
        detail_nn::put<std::int32_t>(out, v);
    detail_nn::put<double>(out, model.alpha);
    detail_nn::put<std::uint64_t>(out, model.seed);
    detail_nn::put<double>(out, model.norm.origin_lat);
    detail_nn::put<double>(out, model.norm.origin_lon);
    detail_nn::put_vec(out, model.norm.freq_hz);
    detail_nn::put_vec(out, model.norm.freq_mean);
    detail_nn::put_vec(out, model.norm.freq_scale);
    for (double v : {model.norm.x_min, model.norm.x_max, model.norm.y_min, model.norm.y_max,
                     model.norm.depth_max, model.norm.domain_x0, model.norm.domain_x1,
                     model.norm.domain_y0, model.norm.domain_y1})
        detail_nn::put<double>(out, v);
    const auto named = model.params.named();
    detail_nn::put<std::uint32_t>(out, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, t] : named) {
        detail_nn::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<long>(name.size()));
        detail_nn::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape().size()));
        for (int d : t.shape()) detail_nn::put<std::int32_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<long>(t.size() * sizeof(float)));
    }
}

inline CgmFasModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "CGMFASCK", 8) != 0)
        throw DataError("not a cgmfas checkpoint: " + path);
    if (detail_nn::get<std::uint32_t>(in) != 1) throw DataError("unknown checkpoint version");
    CgmFasModel model;
    ArchConfig& a = model.arch;
    a.n_freq = detail_nn::get<std::int32_t>(in);
    a.conv_layers = detail_nn::get<std::int32_t>(in);
    a.channels = detail_nn::get<std::int32_t>(in);
    a.kernel_size = detail_nn::get<std::int32_t>(in);
    a.stride = detail_nn::get<std::int32_t>(in);
    a.latent_dim = detail_nn::get<std::int32_t>(in);
    a.embed_width = detail_nn::get<std::int32_t>(in);
    a.embed_layers = detail_nn::get<std::int32_t>(in);
    a.validate();
    model.alpha = detail_nn::get<double>(in);
    model.seed = detail_nn::get<std::uint64_t>(in);
    model.norm.origin_lat = detail_nn::get<double>(in);
    model.norm.origin_lon = detail_nn::get<double>(in);
    model.norm.freq_hz = detail_nn::get_vec(in);
    model.norm.freq_mean = detail_nn::get_vec(in);
    model.norm.freq_scale = detail_nn::get_vec(in);
    model.norm.x_min = detail_nn::get<double>(in);
    model.norm.x_max = detail_nn::get<double>(in);
    model.norm.y_min = detail_nn::get<double>(in);
    model.norm.y_max = detail_nn::get<double>(in);
    model.norm.depth_max = detail_nn::get<double>(in);
    model.norm.domain_x0 = detail_nn::get<double>(in);
    model.norm.domain_x1 = detail_nn::get<double>(in);
    model.norm.domain_y0 = detail_nn::get<double>(in);
    model.norm.domain_y1 = detail_nn::get<double>(in);

    Rng dummy(0);
    model.params = detail_nn::init_params(a, dummy);
    auto named = model.params.named();
    const auto n_weights = detail_nn::get<std::uint32_t>(in);
    if (n_weights != named.size()) throw DataError("checkpoint weight count mismatch");
    for (auto& [name, t] : named) {
        const auto name_len = detail_nn::get<std::uint32_t>(in);
        std::string stored(name_len, '\0');
        in.read(stored.data(), name_len);
        if (stored != name) throw DataError("checkpoint weight order mismatch at " + stored);
        const auto ndim = detail_nn::get<std::uint32_t>(in);
        nn::Shape shape(ndim);
        for (auto& d : shape) d = detail_nn::get<std::int32_t>(in);
        if (shape != t.shape()) throw DataError("checkpoint weight shape mismatch at " + name);
        in.read(reinterpret_cast<char*>(t.data()), static_cast<long>(t.size() * sizeof(float)));
        if (!in) throw DataError("truncated checkpoint");
    }
    return model;
}

}  // namespace cgmfas
