#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "cgmfas/tensor.hpp"

namespace cgmfas::nn {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>;  // column-major
using MapRowMajor =
    Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMapRowMajor =
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace detail {

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw NumericalError("shape error: " + msg);
}

inline int conv_out_len(int len, int kernel, int stride, int pad) {
    return (len + 2 * pad - kernel) / stride + 1;
}

/// col(c*K+k, b*Lo+t) = x[b, c, t*stride + k - pad], zero outside.
inline MatF im2col(const float* x, int batch, int ch, int len, int kernel, int stride, int pad,
                   int out_len) {
    MatF col = MatF::Zero(ch * kernel, static_cast<long>(batch) * out_len);
    for (int b = 0; b < batch; ++b) {
        const float* xb = x + static_cast<long>(b) * ch * len;
        for (int t = 0; t < out_len; ++t) {
            float* dst = col.data() + (static_cast<long>(b) * out_len + t) * (ch * kernel);
            const int base = t * stride - pad;
            for (int c = 0; c < ch; ++c) {
                const float* xc = xb + static_cast<long>(c) * len;
                for (int k = 0; k < kernel; ++k) {
                    const int src = base + k;
                    dst[c * kernel + k] = (src >= 0 && src < len) ? xc[src] : 0.0f;
                }
            }
        }
    }
    return col;
}

/// Adjoint of im2col: scatter-add columns back into [batch, ch, len].
inline void col2im_add(const MatF& col, float* x, int batch, int ch, int len, int kernel,
                       int stride, int pad, int out_len) {
    for (int b = 0; b < batch; ++b) {
        float* xb = x + static_cast<long>(b) * ch * len;
        for (int t = 0; t < out_len; ++t) {
            const float* src = col.data() + (static_cast<long>(b) * out_len + t) * (ch * kernel);
            const int base = t * stride - pad;
            for (int c = 0; c < ch; ++c) {
                float* xc = xb + static_cast<long>(c) * len;
                for (int k = 0; k < kernel; ++k) {
                    const int dst = base + k;
                    if (dst >= 0 && dst < len) xc[dst] += src[c * kernel + k];
                }
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops.

inline Tensor relu(Tape& tape, const Tensor& x) {
    Tensor y = tape.emit(x.shape(), {x.node()});
    const float* xv = x.data();
    float* yv = y.data();
    for (long i = 0; i < x.size(); ++i) yv[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
    if (y.requires_grad()) {
        auto xn = x.node();
        auto yn = y.node();
        y.node()->backward = [xn, yn] {
            xn->ensure_grad();
            for (std::size_t i = 0; i < yn->grad.size(); ++i)
                if (xn->value[i] > 0.0f) xn->grad[i] += yn->grad[i];
        };
    }
    return y;
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::check(a.shape() == b.shape(), "add operands " + shape_str(a.shape()) + " vs " +
                                              shape_str(b.shape()));
    Tensor y = tape.emit(a.shape(), {a.node(), b.node()});
    for (long i = 0; i < a.size(); ++i) y.data()[i] = a.data()[i] + b.data()[i];
    if (y.requires_grad()) {
        auto an = a.node(), bn = b.node(), yn = y.node();
        y.node()->backward = [an, bn, yn] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += yn->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < yn->grad.size(); ++i) bn->grad[i] += yn->grad[i];
            }
        };
    }
    return y;
}

/// total = a + w * b for scalars; the loss combiner.
inline Tensor add_scaled(Tape& tape, const Tensor& a, const Tensor& b, float w) {
    detail::check(a.size() == 1 && b.size() == 1, "add_scaled expects scalars");
    Tensor y = tape.emit({1}, {a.node(), b.node()});
    y.data()[0] = a.data()[0] + w * b.data()[0];
    if (y.requires_grad()) {
        auto an = a.node(), bn = b.node(), yn = y.node();
        y.node()->backward = [an, bn, yn, w] {
            if (an->requires_grad) {
                an->ensure_grad();
                an->grad[0] += yn->grad[0];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                bn->grad[0] += w * yn->grad[0];
            }
        };
    }
    return y;
}

inline Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape) {
    detail::check(shape_size(new_shape) == x.size(),
                  "reshape " + shape_str(x.shape()) + " to " + shape_str(new_shape));
    Tensor y = tape.emit(std::move(new_shape), {x.node()});
    std::copy(x.data(), x.data() + x.size(), y.data());
    if (y.requires_grad()) {
        auto xn = x.node(), yn = y.node();
        y.node()->backward = [xn, yn] {
            xn->ensure_grad();
            for (std::size_t i = 0; i < yn->grad.size(); ++i) xn->grad[i] += yn->grad[i];
        };
    }
    return y;
}

/// Concatenate along the last axis of 2-D tensors: [B,D1] + [B,D2].
inline Tensor concat_vec(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::check(a.shape().size() == 2 && b.shape().size() == 2 && a.dim(0) == b.dim(0),
                  "concat_vec " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int batch = a.dim(0), d1 = a.dim(1), d2 = b.dim(1);
    Tensor y = tape.emit({batch, d1 + d2}, {a.node(), b.node()});
    for (int i = 0; i < batch; ++i) {
        std::copy(a.data() + static_cast<long>(i) * d1, a.data() + static_cast<long>(i + 1) * d1,
                  y.data() + static_cast<long>(i) * (d1 + d2));
        std::copy(b.data() + static_cast<long>(i) * d2, b.data() + static_cast<long>(i + 1) * d2,
                  y.data() + static_cast<long>(i) * (d1 + d2) + d1);
    }
    if (y.requires_grad()) {
        auto an = a.node(), bn = b.node(), yn = y.node();
        y.node()->backward = [an, bn, yn, batch, d1, d2] {
            for (int i = 0; i < batch; ++i) {
                const float* g = yn->grad.data() + static_cast<long>(i) * (d1 + d2);
                if (an->requires_grad) {
                    an->ensure_grad();
                    for (int k = 0; k < d1; ++k) an->grad[static_cast<long>(i) * d1 + k] += g[k];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (int k = 0; k < d2; ++k) bn->grad[static_cast<long>(i) * d2 + k] += g[d1 + k];
                }
            }
        };
    }
    return y;
}

/// Concatenate along the channel axis of [B,C,L] tensors.
inline Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::check(a.shape().size() == 3 && b.shape().size() == 3 && a.dim(0) == b.dim(0) &&
                      a.dim(2) == b.dim(2),
                  "concat_channels " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int batch = a.dim(0), c1 = a.dim(1), c2 = b.dim(1), len = a.dim(2);
    Tensor y = tape.emit({batch, c1 + c2, len}, {a.node(), b.node()});
    for (int i = 0; i < batch; ++i) {
        std::copy(a.data() + static_cast<long>(i) * c1 * len,
                  a.data() + static_cast<long>(i + 1) * c1 * len,
                  y.data() + static_cast<long>(i) * (c1 + c2) * len);
        std::copy(b.data() + static_cast<long>(i) * c2 * len,
                  b.data() + static_cast<long>(i + 1) * c2 * len,
                  y.data() + static_cast<long>(i) * (c1 + c2) * len + static_cast<long>(c1) * len);
    }
    if (y.requires_grad()) {
        auto an = a.node(), bn = b.node(), yn = y.node();
        y.node()->backward = [an, bn, yn, batch, c1, c2, len] {
            for (int i = 0; i < batch; ++i) {
                const float* g = yn->grad.data() + static_cast<long>(i) * (c1 + c2) * len;
                if (an->requires_grad) {
                    an->ensure_grad();
                    float* ga = an->grad.data() + static_cast<long>(i) * c1 * len;
                    for (long k = 0; k < static_cast<long>(c1) * len; ++k) ga[k] += g[k];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    float* gb = bn->grad.data() + static_cast<long>(i) * c2 * len;
                    for (long k = 0; k < static_cast<long>(c2) * len; ++k)
                        gb[k] += g[static_cast<long>(c1) * len + k];
                }
            }
        };
    }
    return y;
}

/// Broadcast a [B,D] vector to [B,D,L] constant channels.
inline Tensor broadcast_channels(Tape& tape, const Tensor& v, int len) {
    detail::check(v.shape().size() == 2, "broadcast_channels wants [B,D]");
    const int batch = v.dim(0), d = v.dim(1);
    Tensor y = tape.emit({batch, d, len}, {v.node()});
    for (int i = 0; i < batch; ++i)
        for (int c = 0; c < d; ++c)
            std::fill_n(y.data() + (static_cast<long>(i) * d + c) * len, len,
                        v.data()[static_cast<long>(i) * d + c]);
    if (y.requires_grad()) {
        auto vn = v.node(), yn = y.node();
        y.node()->backward = [vn, yn, batch, d, len] {
            vn->ensure_grad();
            for (int i = 0; i < batch; ++i)
                for (int c = 0; c < d; ++c) {
                    const float* g = yn->grad.data() + (static_cast<long>(i) * d + c) * len;
                    float acc = 0.0f;
                    for (int t = 0; t < len; ++t) acc += g[t];
                    vn->grad[static_cast<long>(i) * d + c] += acc;
                }
        };
    }
    return y;
}

inline Tensor slice_cols(Tape& tape, const Tensor& x, int start, int len) {
    detail::check(x.shape().size() == 2 && start >= 0 && start + len <= x.dim(1),
                  "slice_cols out of range");
    const int batch = x.dim(0), d = x.dim(1);
    Tensor y = tape.emit({batch, len}, {x.node()});
    for (int i = 0; i < batch; ++i)
        std::copy(x.data() + static_cast<long>(i) * d + start,
                  x.data() + static_cast<long>(i) * d + start + len,
                  y.data() + static_cast<long>(i) * len);
    if (y.requires_grad()) {
        auto xn = x.node(), yn = y.node();
        y.node()->backward = [xn, yn, batch, d, start, len] {
            xn->ensure_grad();
            for (int i = 0; i < batch; ++i)
                for (int k = 0; k < len; ++k)
                    xn->grad[static_cast<long>(i) * d + start + k] +=
                        yn->grad[static_cast<long>(i) * len + k];
        };
    }
    return y;
}

// ---------------------------------------------------------------------------
// Dense and convolutional layers.

/// y[B,O] = x[B,I] W[O,I]^T + b[O]
inline Tensor dense(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
    detail::check(x.shape().size() == 2 && w.shape().size() == 2 && x.dim(1) == w.dim(1),
                  "dense " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
    detail::check(b.size() == w.dim(0), "dense bias size");
    const int batch = x.dim(0), in = x.dim(1), out = w.dim(0);
    Tensor y = tape.emit({batch, out}, {x.node(), w.node(), b.node()});
    {
        ConstMapRowMajor xm(x.data(), batch, in);
        ConstMapRowMajor wm(w.data(), out, in);
        MapRowMajor ym(y.data(), batch, out);
        ym.noalias() = xm * wm.transpose();
        for (int i = 0; i < batch; ++i)
            for (int j = 0; j < out; ++j) ym(i, j) += b.data()[j];
    }
    if (y.requires_grad()) {
        auto xn = x.node(), wn = w.node(), bn = b.node(), yn = y.node();
        y.node()->backward = [xn, wn, bn, yn, batch, in, out] {
            ConstMapRowMajor gy(yn->grad.data(), batch, out);
            ConstMapRowMajor xm(xn->value.data(), batch, in);
            ConstMapRowMajor wm(wn->value.data(), out, in);
            if (xn->requires_grad) {
                xn->ensure_grad();
                MapRowMajor gx(xn->grad.data(), batch, in);
                gx.noalias() += gy * wm;
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                MapRowMajor gw(wn->grad.data(), out, in);
                gw.noalias() += gy.transpose() * xm;
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int i = 0; i < batch; ++i)
                    for (int j = 0; j < out; ++j) bn->grad[j] += gy(i, j);
            }
        };
    }
    return y;
}

/// Cross-correlation over [B,C,L] with weight [F,C,K]; standard strided
/// zero-padded semantics, output [B,F,Lo].
inline Tensor conv1d(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                     int pad) {
    detail::check(x.shape().size() == 3 && w.shape().size() == 3 && x.dim(1) == w.dim(1),
                  "conv1d " + shape_str(x.shape()) + " with " + shape_str(w.shape()));
    const int batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
    const int filters = w.dim(0), kernel = w.dim(2);
    detail::check(b.size() == filters, "conv1d bias size");
    detail::check(len + 2 * pad >= kernel, "conv1d input shorter than kernel");
    const int out_len = detail::conv_out_len(len, kernel, stride, pad);

    Tensor y = tape.emit({batch, filters, out_len}, {x.node(), w.node(), b.node()});
    MatF col = detail::im2col(x.data(), batch, ch, len, kernel, stride, pad, out_len);
    {
        ConstMapRowMajor wm(w.data(), filters, ch * kernel);
        MatF ym = wm * col;  // [F, B*Lo]
        for (int i = 0; i < batch; ++i)
            for (int f = 0; f < filters; ++f) {
                float* dst = y.data() + (static_cast<long>(i) * filters + f) * out_len;
                for (int t = 0; t < out_len; ++t)
                    dst[t] = ym(f, static_cast<long>(i) * out_len + t) + b.data()[f];
            }
    }
    if (y.requires_grad()) {
        auto xn = x.node(), wn = w.node(), bn = b.node(), yn = y.node();
        y.node()->backward = [xn, wn, bn, yn, col = std::move(col), batch, ch, len, filters,
                              kernel, stride, pad, out_len] {
            MatF gy(filters, static_cast<long>(batch) * out_len);
            for (int i = 0; i < batch; ++i)
                for (int f = 0; f < filters; ++f) {
                    const float* src = yn->grad.data() + (static_cast<long>(i) * filters + f) * out_len;
                    for (int t = 0; t < out_len; ++t) gy(f, static_cast<long>(i) * out_len + t) = src[t];
                }
            if (wn->requires_grad) {
                wn->ensure_grad();
                MapRowMajor gw(wn->grad.data(), filters, ch * kernel);
                gw.noalias() += gy * col.transpose();
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int f = 0; f < filters; ++f) bn->grad[f] += gy.row(f).sum();
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                ConstMapRowMajor wm(wn->value.data(), filters, ch * kernel);
                MatF gcol = wm.transpose() * gy;
                detail::col2im_add(gcol, xn->grad.data(), batch, ch, len, kernel, stride, pad,
                                   out_len);
            }
        };
    }
    return y;
}

/// Transposed convolution: the exact adjoint of conv1d with the same
/// weight layout [F,C,K]. Maps [B,F,Li] to [B,C,Lo] with
/// Lo = (Li-1) stride - 2 pad + K + out_pad.
inline Tensor deconv1d(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                       int pad, int out_pad) {
    detail::check(x.shape().size() == 3 && w.shape().size() == 3 && x.dim(1) == w.dim(0),
                  "deconv1d " + shape_str(x.shape()) + " with " + shape_str(w.shape()));
    const int batch = x.dim(0), filters = x.dim(1), in_len = x.dim(2);
    const int ch = w.dim(1), kernel = w.dim(2);
    detail::check(b.size() == ch, "deconv1d bias size");
    const int out_len = (in_len - 1) * stride - 2 * pad + kernel + out_pad;
    detail::check(out_len > 0, "deconv1d produces empty output");

    Tensor y = tape.emit({batch, ch, out_len}, {x.node(), w.node(), b.node()});
    {
        MatF xm(filters, static_cast<long>(batch) * in_len);
        for (int i = 0; i < batch; ++i)
            for (int f = 0; f < filters; ++f) {
                const float* src = x.data() + (static_cast<long>(i) * filters + f) * in_len;
                for (int t = 0; t < in_len; ++t) xm(f, static_cast<long>(i) * in_len + t) = src[t];
            }
        ConstMapRowMajor wm(w.data(), filters, ch * kernel);
        MatF m = wm.transpose() * xm;  // [C*K, B*Li]
        detail::col2im_add(m, y.data(), batch, ch, out_len, kernel, stride, pad, in_len);
        for (int i = 0; i < batch; ++i)
            for (int c = 0; c < ch; ++c) {
                float* dst = y.data() + (static_cast<long>(i) * ch + c) * out_len;
                for (int t = 0; t < out_len; ++t) dst[t] += b.data()[c];
            }
    }
    if (y.requires_grad()) {
        auto xn = x.node(), wn = w.node(), bn = b.node(), yn = y.node();
        y.node()->backward = [xn, wn, bn, yn, batch, filters, in_len, ch, kernel, stride, pad,
                              out_len] {
            // dY enters the conv-forward direction: im2col(dY) at the same
            // stride/pad reproduces the adjoint pairing.
            MatF gcol =
                detail::im2col(yn->grad.data(), batch, ch, out_len, kernel, stride, pad, in_len);
            if (xn->requires_grad) {
                xn->ensure_grad();
                ConstMapRowMajor wm(wn->value.data(), filters, ch * kernel);
                MatF gx = wm * gcol;  // [F, B*Li]
                for (int i = 0; i < batch; ++i)
                    for (int f = 0; f < filters; ++f) {
                        float* dst = xn->grad.data() + (static_cast<long>(i) * filters + f) * in_len;
                        for (int t = 0; t < in_len; ++t)
                            dst[t] += gx(f, static_cast<long>(i) * in_len + t);
                    }
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                MatF xm(filters, static_cast<long>(batch) * in_len);
                for (int i = 0; i < batch; ++i)
                    for (int f = 0; f < filters; ++f) {
                        const float* src = xn->value.data() + (static_cast<long>(i) * filters + f) * in_len;
                        for (int t = 0; t < in_len; ++t)
                            xm(f, static_cast<long>(i) * in_len + t) = src[t];
                    }
                MapRowMajor gw(wn->grad.data(), filters, ch * kernel);
                gw.noalias() += xm * gcol.transpose();
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int i = 0; i < batch; ++i)
                    for (int c = 0; c < ch; ++c) {
                        const float* g = yn->grad.data() + (static_cast<long>(i) * ch + c) * out_len;
                        float acc = 0.0f;
                        for (int t = 0; t < out_len; ++t) acc += g[t];
                        bn->grad[c] += acc;
                    }
            }
        };
    }
    return y;
}

// ---------------------------------------------------------------------------
// Latent-space utilities and losses.

/// z = mu + exp(log_sigma) .* eps; gradients flow to mu and log_sigma.
inline Tensor reparameterize(Tape& tape, const Tensor& mu, const Tensor& log_sigma,
                             const std::vector<float>& eps) {
    detail::check(mu.shape() == log_sigma.shape(), "reparameterize shapes");
    detail::check(static_cast<long>(eps.size()) == mu.size(), "epsilon size");
    Tensor z = tape.emit(mu.shape(), {mu.node(), log_sigma.node()});
    for (long i = 0; i < mu.size(); ++i)
        z.data()[i] = mu.data()[i] + std::exp(log_sigma.data()[i]) * eps[static_cast<std::size_t>(i)];
    if (z.requires_grad()) {
        auto mn = mu.node(), sn = log_sigma.node(), zn = z.node();
        z.node()->backward = [mn, sn, zn, eps] {
            if (mn->requires_grad) {
                mn->ensure_grad();
                for (std::size_t i = 0; i < zn->grad.size(); ++i) mn->grad[i] += zn->grad[i];
            }
            if (sn->requires_grad) {
                sn->ensure_grad();
                for (std::size_t i = 0; i < zn->grad.size(); ++i)
                    sn->grad[i] += zn->grad[i] * std::exp(sn->value[i]) * eps[i];
            }
        };
    }
    return z;
}

/// KL(N(mu, sigma^2) || N(0, I)) summed over latent dims, averaged over the
/// batch: mean_b 1/2 sum_d (mu^2 + sigma^2 - 1 - log sigma^2).
inline Tensor kl_diag_gaussian(Tape& tape, const Tensor& mu, const Tensor& log_sigma) {
    detail::check(mu.shape().size() == 2 && mu.shape() == log_sigma.shape(), "kl shapes");
    const int batch = mu.dim(0);
    Tensor y = tape.emit({1}, {mu.node(), log_sigma.node()});
    double acc = 0.0;
    for (long i = 0; i < mu.size(); ++i) {
        const double m = mu.data()[i];
        const double ls = log_sigma.data()[i];
        acc += 0.5 * (m * m + std::exp(2.0 * ls) - 1.0 - 2.0 * ls);
    }
    y.data()[0] = static_cast<float>(acc / batch);
    if (y.requires_grad()) {
        auto mn = mu.node(), sn = log_sigma.node(), yn = y.node();
        y.node()->backward = [mn, sn, yn, batch] {
            const float g = yn->grad[0] / static_cast<float>(batch);
            if (mn->requires_grad) {
                mn->ensure_grad();
                for (std::size_t i = 0; i < mn->value.size(); ++i)
                    mn->grad[i] += g * mn->value[i];
            }
            if (sn->requires_grad) {
                sn->ensure_grad();
                for (std::size_t i = 0; i < sn->value.size(); ++i)
                    sn->grad[i] += g * (std::exp(2.0f * sn->value[i]) - 1.0f);
            }
        };
    }
    return y;
}

/// Mean squared error over every element, against a constant target.
inline Tensor mse_mean(Tape& tape, const Tensor& pred, const std::vector<float>& target) {
    detail::check(static_cast<long>(target.size()) == pred.size(), "mse target size");
    Tensor y = tape.emit({1}, {pred.node()});
    double acc = 0.0;
    for (long i = 0; i < pred.size(); ++i) {
        const double d = pred.data()[i] - target[static_cast<std::size_t>(i)];
        acc += d * d;
    }
    y.data()[0] = static_cast<float>(acc / pred.size());
    if (y.requires_grad()) {
        auto pn = pred.node(), yn = y.node();
        y.node()->backward = [pn, yn, target] {
            pn->ensure_grad();
            const float g = 2.0f * yn->grad[0] / static_cast<float>(pn->value.size());
            for (std::size_t i = 0; i < pn->value.size(); ++i)
                pn->grad[i] += g * (pn->value[i] - target[i]);
        };
    }
    return y;
}

// ---------------------------------------------------------------------------
// Optimizer: adaptive per-parameter steps from running first/second moment
// averages with bias correction.

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamOptimizer {
public:
    AdamOptimizer(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t p = 0; p < params_.size(); ++p) {
            m_[p].assign(static_cast<std::size_t>(params_[p].second.size()), 0.0f);
            v_[p].assign(static_cast<std::size_t>(params_[p].second.size()), 0.0f);
        }
    }

    /// One update; gradients are consumed and zeroed.
    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t p = 0; p < params_.size(); ++p) {
            Tensor& param = params_[p].second;
            param.node()->ensure_grad();
            float* g = param.node()->grad.data();
            float* val = param.data();
            float* m = m_[p].data();
            float* v = v_[p].data();
            const long n = param.size();
            for (long i = 0; i < n; ++i) {
                if (!std::isfinite(g[i]))
                    throw NumericalError("non-finite gradient in parameter " + params_[p].first);
                m[i] = static_cast<float>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i]);
                v[i] = static_cast<float>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i]);
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                val[i] -= static_cast<float>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
                g[i] = 0.0f;
            }
        }
    }

    void zero_grad() {
        for (auto& [name, param] : params_) {
            param.node()->ensure_grad();
            std::fill(param.node()->grad.begin(), param.node()->grad.end(), 0.0f);
        }
    }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    AdamConfig cfg_;
    std::vector<std::vector<float>> m_, v_;
    long t_ = 0;
};

}  // namespace cgmfas::nn
