#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "vgat/autodiff.hpp"

namespace vgat {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kProbabilityFloor = 1e-12;

// ---------------------------------------------------------------------------
// Value-level helpers (no tape)
// ---------------------------------------------------------------------------

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline void softmax_inplace(std::span<double> row) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double total = 0.0;
    for (double& v : row) {
        v = std::exp(v - mx);
        total += v;
    }
    for (double& v : row) v /= total;
}

inline Matrix softmax_rows(const Matrix& x) {
    Matrix y = x;
    for (std::size_t r = 0; r < y.rows(); ++r) softmax_inplace(y.row(r));
    return y;
}

inline Matrix gelu(const Matrix& x) {
    Matrix y = x;
    for (double& v : y.values()) v = gelu(v);
    return y;
}

// KL(r || g) for probability vectors; 0 log 0 = 0 and g is floored before division.
inline double kl_divergence(std::span<const double> r, std::span<const double> g) {
    if (r.size() != g.size()) {
        throw Error(ErrorKind::dimension, "kl_divergence: lengths " + std::to_string(r.size()) + " and " +
                                              std::to_string(g.size()) + " differ");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (r[i] <= 0.0) continue;
        total += r[i] * std::log(r[i] / std::max(g[i], kProbabilityFloor));
    }
    return std::max(total, 0.0);
}

// ---------------------------------------------------------------------------
// Differentiable ops
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.cols() != bv.rows()) {
        throw Error(ErrorKind::dimension, "matmul: cannot multiply " + shape_string(av) + " by " + shape_string(bv));
    }
    Matrix out(av.rows(), bv.cols());
    kernel::gemm_nn(av.data(), bv.data(), out.data(), av.rows(), av.cols(), bv.cols());
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& A = t.value(ia);
        const Matrix& B = t.value(ib);
        if (t.requires_grad(ia)) kernel::gemm_nt(g.data(), B.data(), t.grad(ia).data(), A.rows(), B.cols(), A.cols());
        if (t.requires_grad(ib)) kernel::gemm_tn(A.data(), g.data(), t.grad(ib).data(), A.rows(), A.cols(), B.cols());
    });
}

// a * b^T
inline Var matmul_nt(Var a, Var b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.cols() != bv.cols()) {
        throw Error(ErrorKind::dimension,
                    "matmul_nt: cannot multiply " + shape_string(av) + " by transpose of " + shape_string(bv));
    }
    Matrix out(av.rows(), bv.rows());
    kernel::gemm_nt(av.data(), bv.data(), out.data(), av.rows(), av.cols(), bv.rows());
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& A = t.value(ia);
        const Matrix& B = t.value(ib);
        // dA = g B, dB = g^T A
        if (t.requires_grad(ia)) kernel::gemm_nn(g.data(), B.data(), t.grad(ia).data(), A.rows(), B.rows(), A.cols());
        if (t.requires_grad(ib)) kernel::gemm_tn(g.data(), A.data(), t.grad(ib).data(), A.rows(), B.rows(), A.cols());
    });
}

inline Var add(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "add");
    Matrix out = a.value();
    const Matrix& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        for (std::size_t id : {ia, ib}) {
            if (!t.requires_grad(id)) continue;
            Matrix& d = t.grad(id);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
    });
}

// x + bias, with bias a 1 x cols row broadcast over every row of x.
inline Var add_row(Var x, Var bias) {
    const Matrix& xv = x.value();
    const Matrix& bv = bias.value();
    if (bv.rows() != 1 || bv.cols() != xv.cols()) {
        throw Error(ErrorKind::dimension, "add_row: bias " + shape_string(bv) + " does not match " + shape_string(xv));
    }
    Matrix out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
    const std::size_t ix = x.id(), ib = bias.id();
    return x.tape().record(std::move(out), {x, bias}, [ix, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        if (t.requires_grad(ix)) {
            Matrix& d = t.grad(ix);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (t.requires_grad(ib)) {
            Matrix& d = t.grad(ib);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) d[c] += g(r, c);
        }
    });
}

inline Var scale(Var x, double s) {
    Matrix out = x.value();
    for (double& v : out.values()) v *= s;
    const std::size_t ix = x.id();
    return x.tape().record(std::move(out), {x}, [ix, s](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Matrix& d = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += s * g[i];
    });
}

inline Var gelu(Var x) {
    Matrix out = gelu(x.value());
    const std::size_t ix = x.id();
    return x.tape().record(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& xv = t.value(ix);
        Matrix& d = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * gelu_derivative(xv[i]);
    });
}

inline Var softmax_rows(Var x) {
    Matrix out = softmax_rows(x.value());
    const std::size_t ix = x.id();
    return x.tape().record(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& y = t.value(self);
        Matrix& d = t.grad(ix);
        for (std::size_t r = 0; r < y.rows(); ++r) {
            const auto yr = y.row(r);
            const auto gr = g.row(r);
            double dot = 0.0;
            for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr[c];
            auto dr = d.row(r);
            for (std::size_t c = 0; c < yr.size(); ++c) dr[c] += yr[c] * (gr[c] - dot);
        }
    });
}

// Per-row normalization to zero mean / unit variance (variance floored by eps),
// followed by an affine map with 1 x cols gain and bias.
inline Var layer_norm(Var x, Var gain, Var bias) {
    const Matrix& xv = x.value();
    const std::size_t n = xv.rows(), m = xv.cols();
    if (gain.value().size() != m || bias.value().size() != m) {
        throw Error(ErrorKind::dimension, "layer_norm: gain/bias length must equal " + std::to_string(m));
    }
    Matrix xhat(n, m);
    std::vector<double> inv_std(n);
    Matrix out(n, m);
    const Matrix& gv = gain.value();
    const Matrix& bv = bias.value();
    for (std::size_t r = 0; r < n; ++r) {
        const auto row = xv.row(r);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(m);
        inv_std[r] = 1.0 / std::sqrt(var + kLayerNormEps);
        for (std::size_t c = 0; c < m; ++c) {
            xhat(r, c) = (row[c] - mean) * inv_std[r];
            out(r, c) = xhat(r, c) * gv[c] + bv[c];
        }
    }
    const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
    return x.tape().record(
        std::move(out), {x, gain, bias},
        [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
            const Matrix& g = t.grad(self);
            const Matrix& gv = t.value(ig);
            const std::size_t n = g.rows(), m = g.cols();
            if (t.requires_grad(ig)) {
                Matrix& dg = t.grad(ig);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < m; ++c) dg[c] += g(r, c) * xhat(r, c);
            }
            if (t.requires_grad(ib)) {
                Matrix& db = t.grad(ib);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < m; ++c) db[c] += g(r, c);
            }
            if (t.requires_grad(ix)) {
                Matrix& dx = t.grad(ix);
                std::vector<double> dxhat(m);
                for (std::size_t r = 0; r < n; ++r) {
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::size_t c = 0; c < m; ++c) {
                        dxhat[c] = g(r, c) * gv[c];
                        mean_d += dxhat[c];
                        mean_dx += dxhat[c] * xhat(r, c);
                    }
                    mean_d /= static_cast<double>(m);
                    mean_dx /= static_cast<double>(m);
                    for (std::size_t c = 0; c < m; ++c)
                        dx(r, c) += inv_std[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
                }
            }
        });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw Error(ErrorKind::dimension, "concat_rows: no inputs");
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    for (const Var& p : parts) {
        if (p.cols() != cols) throw Error(ErrorKind::dimension, "concat_rows: column counts differ");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    std::vector<std::size_t> ids, offsets;
    std::size_t at = 0;
    for (const Var& p : parts) {
        std::copy_n(p.value().data(), p.value().size(), out.data() + at * cols);
        ids.push_back(p.id());
        offsets.push_back(at);
        at += p.rows();
    }
    return parts.front().tape().record(std::move(out), parts, [ids, offsets](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!t.requires_grad(ids[k])) continue;
            Matrix& d = t.grad(ids[k]);
            const double* src = g.data() + offsets[k] * g.cols();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += src[i];
        }
    });
}

// Horizontal concatenation of two matrices with equal row counts.
inline Var concat_cols(Var a, Var b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.rows() != bv.rows()) {
        throw Error(ErrorKind::dimension, "concat_cols: " + shape_string(av) + " and " + shape_string(bv));
    }
    Matrix out(av.rows(), av.cols() + bv.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        std::copy_n(av.row(r).begin(), av.cols(), out.row(r).begin());
        std::copy_n(bv.row(r).begin(), bv.cols(), out.row(r).begin() + av.cols());
    }
    const std::size_t ia = a.id(), ib = b.id(), ca = av.cols();
    return a.tape().record(std::move(out), {a, b}, [ia, ib, ca](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            if (t.requires_grad(ia)) {
                auto d = t.grad(ia).row(r);
                for (std::size_t c = 0; c < ca; ++c) d[c] += g(r, c);
            }
            if (t.requires_grad(ib)) {
                auto d = t.grad(ib).row(r);
                for (std::size_t c = 0; c < d.size(); ++c) d[c] += g(r, ca + c);
            }
        }
    });
}

inline Var slice_rows(Var x, std::size_t begin, std::size_t count) {
    const Matrix& xv = x.value();
    if (begin + count > xv.rows()) {
        throw Error(ErrorKind::dimension, "slice_rows: [" + std::to_string(begin) + ", " +
                                              std::to_string(begin + count) + ") exceeds " + shape_string(xv));
    }
    Matrix out(count, xv.cols());
    std::copy_n(xv.data() + begin * xv.cols(), count * xv.cols(), out.data());
    const std::size_t ix = x.id();
    return x.tape().record(std::move(out), {x}, [ix, begin](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        double* dst = t.grad(ix).data() + begin * g.cols();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    });
}

// Row gather with repetition allowed; gradients of repeated rows accumulate.
inline Var gather_rows(Var x, std::vector<std::size_t> indices) {
    Matrix out = gather_rows(x.value(), indices);
    const std::size_t ix = x.id();
    return x.tape().record(std::move(out), {x}, [ix, indices = std::move(indices)](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Matrix& d = t.grad(ix);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            auto dr = d.row(indices[i]);
            const auto gr = g.row(i);
            for (std::size_t c = 0; c < gr.size(); ++c) dr[c] += gr[c];
        }
    });
}

// Column-wise mean over rows -> 1 x cols.
inline Var mean_rows(Var x) {
    const Matrix& xv = x.value();
    Matrix out(1, xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r)
        for (std::size_t c = 0; c < xv.cols(); ++c) out[c] += xv(r, c);
    const double inv = 1.0 / static_cast<double>(xv.rows());
    for (double& v : out.values()) v *= inv;
    const std::size_t ix = x.id();
    return x.tape().record(std::move(out), {x}, [ix, inv](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Matrix& d = t.grad(ix);
        for (std::size_t r = 0; r < d.rows(); ++r)
            for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) += g[c] * inv;
    });
}

// Scalar <x, w> against a constant weight matrix of the same shape.
inline Var weighted_sum(Var x, const Matrix& w) {
    require_same_shape(x.value(), w, "weighted_sum");
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) total += x.value()[i] * w[i];
    const std::size_t ix = x.id();
    return x.tape().record(Matrix(1, 1, total), {x}, [ix, w](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        Matrix& d = t.grad(ix);
        for (std::size_t i = 0; i < w.size(); ++i) d[i] += g * w[i];
    });
}

// Depthwise 2-D cross-correlation over tokens laid out on a side x side grid
// (row-major token order). `kernel` is channels x (k*k); zero "same" padding.
inline Var depthwise_conv_grid(Var x, Var kernel, std::size_t side) {
    const Matrix& xv = x.value();
    const Matrix& kv = kernel.value();
    const std::size_t channels = xv.cols();
    if (xv.rows() != side * side) {
        throw Error(ErrorKind::dimension, "depthwise_conv_grid: " + shape_string(xv) + " is not a " +
                                              std::to_string(side) + "x" + std::to_string(side) + " grid");
    }
    const auto k = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(kv.cols()))));
    if (kv.rows() != channels || k * k != kv.cols() || k % 2 == 0) {
        throw Error(ErrorKind::dimension, "depthwise_conv_grid: kernel " + shape_string(kv) +
                                              " must be channels x (odd k)^2 for " + std::to_string(channels) +
                                              " channels");
    }
    const long half = static_cast<long>(k / 2);
    const long s = static_cast<long>(side);
    // Visits every (output cell, input cell, kernel tap) triple with in-bounds input.
    auto for_each_tap = [half, s, k](auto&& fn) {
        for (long i = 0; i < s; ++i)
            for (long j = 0; j < s; ++j)
                for (long u = 0; u < static_cast<long>(k); ++u) {
                    const long ii = i + u - half;
                    if (ii < 0 || ii >= s) continue;
                    for (long v = 0; v < static_cast<long>(k); ++v) {
                        const long jj = j + v - half;
                        if (jj < 0 || jj >= s) continue;
                        fn(static_cast<std::size_t>(i * s + j), static_cast<std::size_t>(ii * s + jj),
                           static_cast<std::size_t>(u * static_cast<long>(k) + v));
                    }
                }
    };
    Matrix out(xv.rows(), channels);
    for_each_tap([&](std::size_t o, std::size_t in, std::size_t tap) {
        const double* xr = xv.data() + in * channels;
        double* orow = out.data() + o * channels;
        for (std::size_t c = 0; c < channels; ++c) orow[c] += kv(c, tap) * xr[c];
    });
    const std::size_t ix = x.id(), ik = kernel.id();
    return x.tape().record(std::move(out), {x, kernel}, [ix, ik, for_each_tap](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& xv = t.value(ix);
        const Matrix& kv = t.value(ik);
        const std::size_t channels = g.cols();
        const bool need_x = t.requires_grad(ix), need_k = t.requires_grad(ik);
        Matrix* dx = need_x ? &t.grad(ix) : nullptr;
        Matrix* dk = need_k ? &t.grad(ik) : nullptr;
        for_each_tap([&](std::size_t o, std::size_t in, std::size_t tap) {
            const double* gr = g.data() + o * channels;
            if (dx != nullptr) {
                double* dxr = dx->data() + in * channels;
                for (std::size_t c = 0; c < channels; ++c) dxr[c] += kv(c, tap) * gr[c];
            }
            if (dk != nullptr) {
                const double* xr = xv.data() + in * channels;
                for (std::size_t c = 0; c < channels; ++c) (*dk)(c, tap) += xr[c] * gr[c];
            }
        });
    });
}

// KL(r || g) where r is a recorded probability row and g a constant distribution.
inline Var kl_divergence(Var r, const Matrix& g) {
    const Matrix& rv = r.value();
    if (rv.size() != g.size()) {
        throw Error(ErrorKind::dimension, "kl_divergence: lengths " + std::to_string(rv.size()) + " and " +
                                              std::to_string(g.size()) + " differ");
    }
    const double value = kl_divergence(rv.values(), g.values());
    const std::size_t ir = r.id();
    return r.tape().record(Matrix(1, 1, value), {r}, [ir, g](Tape& t, std::size_t self) {
        const double gs = t.grad(self)[0];
        const Matrix& rv = t.value(ir);
        Matrix& d = t.grad(ir);
        for (std::size_t i = 0; i < rv.size(); ++i) {
            const double ri = std::max(rv[i], kProbabilityFloor);
            d[i] += gs * (std::log(ri / std::max(g[i], kProbabilityFloor)) + 1.0);
        }
    });
}

inline Var mse_loss(Var x, const Matrix& target) {
    require_same_shape(x.value(), target, "mse_loss");
    const Matrix& xv = x.value();
    double total = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) total += (xv[i] - target[i]) * (xv[i] - target[i]);
    const double n = static_cast<double>(xv.size());
    const std::size_t ix = x.id();
    return x.tape().record(Matrix(1, 1, total / n), {x}, [ix, target, n](Tape& t, std::size_t self) {
        const double gs = t.grad(self)[0];
        const Matrix& xv = t.value(ix);
        Matrix& d = t.grad(ix);
        for (std::size_t i = 0; i < xv.size(); ++i) d[i] += gs * 2.0 * (xv[i] - target[i]) / n;
    });
}

inline Var l1_loss(Var x, const Matrix& target) {
    require_same_shape(x.value(), target, "l1_loss");
    const Matrix& xv = x.value();
    double total = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) total += std::abs(xv[i] - target[i]);
    const double n = static_cast<double>(xv.size());
    const std::size_t ix = x.id();
    return x.tape().record(Matrix(1, 1, total / n), {x}, [ix, target, n](Tape& t, std::size_t self) {
        const double gs = t.grad(self)[0];
        const Matrix& xv = t.value(ix);
        Matrix& d = t.grad(ix);
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const double diff = xv[i] - target[i];
            const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
            d[i] += gs * sign / n;
        }
    });
}

// 1 - cos(x, target); defined as 1 with zero gradient when either norm < 1e-12.
inline Var cosine_loss(Var x, const Matrix& target) {
    require_same_shape(x.value(), target, "cosine_loss");
    const Matrix& xv = x.value();
    double dot = 0.0, nx = 0.0, nt = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        dot += xv[i] * target[i];
        nx += xv[i] * xv[i];
        nt += target[i] * target[i];
    }
    nx = std::sqrt(nx);
    nt = std::sqrt(nt);
    const bool degenerate = nx < 1e-12 || nt < 1e-12;
    const double value = degenerate ? 1.0 : 1.0 - dot / (nx * nt);
    const std::size_t ix = x.id();
    return x.tape().record(Matrix(1, 1, value), {x},
                           [ix, target, dot, nx, nt, degenerate](Tape& t, std::size_t self) {
                               if (degenerate) return;
                               const double gs = t.grad(self)[0];
                               const Matrix& xv = t.value(ix);
                               Matrix& d = t.grad(ix);
                               const double cosv = dot / (nx * nt);
                               for (std::size_t i = 0; i < xv.size(); ++i) {
                                   const double dcos = target[i] / (nx * nt) - cosv * xv[i] / (nx * nx);
                                   d[i] -= gs * dcos;
                               }
                           });
}

}  // namespace vgat
