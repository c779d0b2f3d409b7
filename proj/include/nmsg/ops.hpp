#ifndef NMSG_OPS_HPP
#define NMSG_OPS_HPP

// Differentiable primitives. Each op computes its value eagerly and records a
// backward closure that accumulates into the gradients of its inputs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "nmsg/autodiff.hpp"

namespace nmsg {

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op)
{
    if (a.size() != b.size())
        throw DimensionError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    Shape out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i] || b[i] == 1) out[i] = a[i];
        else if (a[i] == 1) out[i] = b[i];
        else throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    return out;
}

// Row-major strides with zero stride on broadcast axes.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out)
{
    std::vector<std::size_t> st(out.size(), 0);
    std::size_t s = 1;
    for (std::size_t i = in.size(); i-- > 0;) {
        st[i] = (in[i] == 1 && out[i] != 1) ? 0 : s;
        s *= in[i];
    }
    return st;
}

// Calls f(out_index, a_index, b_index) for every element of the broadcast result.
template <typename F>
void for_each_broadcast(const Shape& a, const Shape& b, const Shape& out, F&& f)
{
    const std::size_t n = shape_numel(out);
    if (a == out && b == out) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    const auto sa = broadcast_strides(a, out);
    const auto sb = broadcast_strides(b, out);
    const std::size_t r = out.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            ia -= sa[d] * idx[d];
            ib -= sb[d] * idx[d];
            idx[d] = 0;
        }
    }
}

struct AxisSplit {
    std::size_t outer, axis, inner;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis)
{
    AxisSplit r{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

template <typename Fwd, typename Dfdx>
Var unary(Var a, const char* op, Fwd fwd, Dfdx dfdx)
{
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    return a.tape().record(std::move(out), {a}, [dfdx](Tape& t, std::size_t self) {
        const std::size_t ia = t.input(self, 0);
        if (!t.wants_grad(ia)) return;
        const Tensor& g = t.grad_of(self);
        const Tensor& x = t.value_of(ia);
        const Tensor& y = t.value_of(self);
        Tensor& ga = t.grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
    }, op);
}

template <typename Fwd, typename Da, typename Db>
Var binary(Var a, Var b, const char* op, Fwd fwd, Da da, Db db)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Shape os = broadcast_shape(av.shape(), bv.shape(), op);
    Tensor out(os);
    for_each_broadcast(av.shape(), bv.shape(), os, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        out[i] = fwd(av[ia], bv[ib]);
    });
    return a.tape().record(std::move(out), {a, b}, [da, db](Tape& t, std::size_t self) {
        const std::size_t ia = t.input(self, 0), ib = t.input(self, 1);
        const bool wa = t.wants_grad(ia), wb = t.wants_grad(ib);
        if (!wa && !wb) return;
        const Tensor& g = t.grad_of(self);
        const Tensor& x = t.value_of(ia);
        const Tensor& y = t.value_of(ib);
        const Shape& os = t.value_of(self).shape();
        Tensor* ga = wa ? &t.grad_slot(ia) : nullptr;
        Tensor* gb = wb ? &t.grad_slot(ib) : nullptr;
        for_each_broadcast(x.shape(), y.shape(), os, [&](std::size_t i, std::size_t ja, std::size_t jb) {
            if (ga) (*ga)[ja] += g[i] * da(x[ja], y[jb]);
            if (gb) (*gb)[jb] += g[i] * db(x[ja], y[jb]);
        });
    }, op);
}

} // namespace detail

// ---- elementwise --------------------------------------------------------------------

/// Elementwise sum with broadcasting over size-1 axes (operands of equal rank).
inline Var add(Var a, Var b)
{
    return detail::binary(a, b, "add", [](double x, double y) { return x + y; },
                          [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b)
{
    return detail::binary(a, b, "sub", [](double x, double y) { return x - y; },
                          [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Var mul(Var a, Var b)
{
    return detail::binary(a, b, "mul", [](double x, double y) { return x * y; },
                          [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Var add_scalar(Var a, double s)
{
    return detail::unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Var mul_scalar(Var a, double s)
{
    return detail::unary(a, "mul_scalar", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

inline double sigmoid_value(double x)
{
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Var sigmoid(Var a)
{
    return detail::unary(a, "sigmoid", sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(Var a)
{
    return detail::unary(a, "tanh", [](double x) { return std::tanh(x); },
                         [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(Var a)
{
    return detail::unary(a, "relu", [](double x) { return x > 0 ? x : 0.0; },
                         [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Var exp(Var a)
{
    return detail::unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a)
{
    return detail::unary(a, "log", [](double x) {
        if (x <= 0) throw NumericalError("log: non-positive argument");
        return std::log(x);
    }, [](double x, double) { return 1.0 / x; });
}

// ---- linear algebra ------------------------------------------------------------------

inline Var matmul(Var a, Var b)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
        throw DimensionError("matmul: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    const std::size_t m = av.dim(0), n = av.dim(1), p = bv.dim(1);
    Tensor out({m, p});
    for (std::size_t i = 0; i < m; ++i) {
        double* o = out.data() + i * p;
        for (std::size_t k = 0; k < n; ++k) {
            const double s = av[i * n + k];
            if (s == 0.0) continue;
            const double* br = bv.data() + k * p;
            for (std::size_t j = 0; j < p; ++j) o[j] += s * br[j];
        }
    }
    return a.tape().record(std::move(out), {a, b}, [m, n, p](Tape& t, std::size_t self) {
        const std::size_t ia = t.input(self, 0), ib = t.input(self, 1);
        const Tensor& g = t.grad_of(self);
        const Tensor& A = t.value_of(ia);
        const Tensor& B = t.value_of(ib);
        if (t.wants_grad(ia)) {
            // dA = g . B^T
            Tensor& ga = t.grad_slot(ia);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t k = 0; k < n; ++k) {
                    double s = 0.0;
                    const double* gr = g.data() + i * p;
                    const double* br = B.data() + k * p;
                    for (std::size_t j = 0; j < p; ++j) s += gr[j] * br[j];
                    ga[i * n + k] += s;
                }
        }
        if (t.wants_grad(ib)) {
            // dB = A^T . g
            Tensor& gb = t.grad_slot(ib);
            for (std::size_t i = 0; i < m; ++i) {
                const double* gr = g.data() + i * p;
                for (std::size_t k = 0; k < n; ++k) {
                    const double s = A[i * n + k];
                    if (s == 0.0) continue;
                    double* o = gb.data() + k * p;
                    for (std::size_t j = 0; j < p; ++j) o[j] += s * gr[j];
                }
            }
        }
    }, "matmul");
}

inline Var transpose(Var a)
{
    const Tensor& av = a.value();
    if (av.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(av.shape()));
    const std::size_t r = av.dim(0), c = av.dim(1);
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
    return a.tape().record(std::move(out), {a}, [r, c](Tape& t, std::size_t self) {
        const std::size_t ia = t.input(self, 0);
        if (!t.wants_grad(ia)) return;
        const Tensor& g = t.grad_of(self);
        Tensor& ga = t.grad_slot(ia);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    }, "transpose");
}

/// Row-wise softmax over the last axis, stabilized by subtracting the row max.
inline Var softmax_rows(Var a)
{
    const Tensor& av = a.value();
    if (av.rank() == 0 || av.size() == 0) throw DimensionError("softmax_rows: empty input");
    const std::size_t n = av.shape().back();
    const std::size_t rows = av.size() / n;
    Tensor out(av.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av.data() + r * n;
        double* y = out.data() + r * n;
        const double mx = *std::max_element(x, x + n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < n; ++j) y[j] /= s;
    }
    return a.tape().record(std::move(out), {a}, [rows, n](Tape& t, std::size_t self) {
        const std::size_t ia = t.input(self, 0);
        if (!t.wants_grad(ia)) return;
        const Tensor& g = t.grad_of(self);
        const Tensor& y = t.value_of(self);
        Tensor& ga = t.grad_slot(ia);
        for (std::size_t r = 0; r < rows; ++r) {
            double d = 0.0;
            for (std::size_t j = 0; j < n; ++j) d += g[r * n + j] * y[r * n + j];
            for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += y[r * n + j] * (g[r * n + j] - d);
        }
    }, "softmax_rows");
}

// ---- structural ----------------------------------------------------------------------

inline Var reshape(Var a, Shape s)
{
    Tensor out = a.value().reshaped(std::move(s));
    return a.tape().record(std::move(out), {a}, [](Tape& t, std::size_t self) {
        const std::size_t ia = t.input(self, 0);
        if (!t.wants_grad(ia)) return;
        const Tensor& g = t.grad_of(self);
        Tensor& ga = t.grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }, "reshape");
}

/// Concatenate along `axis`; all other extents must agree.
inline Var concat(const std::vector<Var>& parts, std::size_t axis)
{
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw DimensionError("concat: axis out of range for " + shape_str(s0));
    Shape os = s0;
    os[axis] = 0;
    for (const Var& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i)
            if (i != axis && s[i] != s0[i]) ok = false;
        if (!ok) throw DimensionError("concat: " + shape_str(s0) + " vs " + shape_str(s));
        os[axis] += s[axis];
    }
    const auto so = detail::split_at(os, axis);
    Tensor out(os);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        const auto sp = detail::split_at(v.shape(), axis);
        for (std::size_t o = 0; o < so.outer; ++o)
            std::copy_n(v.data() + o * sp.axis * sp.inner, sp.axis * sp.inner,
                        out.data() + (o * so.axis + off) * so.inner);
        offsets.push_back(off);
        off += sp.axis;
    }
    return parts[0].tape().record(std::move(out), parts, [axis, offsets, so](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        for (std::size_t k = 0; k < offsets.size(); ++k) {
            const std::size_t in = t.input(self, k);
            if (!t.wants_grad(in)) continue;
            Tensor& gi = t.grad_slot(in);
            const auto sp = detail::split_at(gi.shape(), axis);
            for (std::size_t o = 0; o < so.outer; ++o) {
                const double* src = g.data() + (o * so.axis + offsets[k]) * so.inner;
                double* dst = gi.data() + o * sp.axis * sp.inner;
                for (std::size_t i = 0; i < sp.axis * sp.inner; ++i) dst[i] += src[i];
            }
        }
    }, "concat");
}

/// Half-open range [begin, end) along `axis`.
inline Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end)
{
    const Tensor& av = a.value();
    if (axis >= av.rank() || begin >= end || end > av.dim(axis))
        throw DimensionError("slice: [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                             std::to_string(axis) + " of " + shape_str(av.shape()));
    Shape os = av.shape();
    os[axis] = end - begin;
    const auto si = detail::split_at(av.shape(), axis);
    const std::size_t len = (end - begin) * si.inner;
    Tensor out(os);
    for (std::size_t o = 0; o < si.outer; ++o)
        std::copy_n(av.data() + (o * si.axis + begin) * si.inner, len, out.data() + o * len);
    return a.tape().record(std::move(out), {a}, [si, begin, len](Tape& t, std::size_t self) {
        const std::size_t ia = t.input(self, 0);
        if (!t.wants_grad(ia)) return;
        const Tensor& g = t.grad_of(self);
        Tensor& ga = t.grad_slot(ia);
        for (std::size_t o = 0; o < si.outer; ++o) {
            double* dst = ga.data() + (o * si.axis + begin) * si.inner;
            const double* src = g.data() + o * len;
            for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
    }, "slice");
}

// ---- reductions ----------------------------------------------------------------------

inline Var sum(Var a)
{
    const Tensor& av = a.value();
    double s = 0.0;
    for (double v : av.values()) s += v;
    return a.tape().record(Tensor::scalar(s), {a}, [](Tape& t, std::size_t self) {
        const std::size_t ia = t.input(self, 0);
        if (!t.wants_grad(ia)) return;
        const double g = t.grad_of(self)[0];
        Tensor& ga = t.grad_slot(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    }, "sum");
}

inline Var mean(Var a)
{
    const double n = static_cast<double>(a.value().size());
    return mul_scalar(sum(a), 1.0 / n);
}

// ---- convolutional -------------------------------------------------------------------

/// 2-D convolution, stride 1, zero "same" padding. x: [B,H,W,C], w: [K,K,C,F] with odd K.
inline Var conv2d(Var x, Var w)
{
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(0) != wv.dim(1) || wv.dim(0) % 2 == 0 || wv.dim(2) != xv.dim(3))
        throw DimensionError("conv2d: input " + shape_str(xv.shape()) + " filter " + shape_str(wv.shape()));
    const std::size_t B = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
    const std::size_t K = wv.dim(0), F = wv.dim(3);
    const long pad = static_cast<long>(K / 2);
    Tensor out({B, H, W, F});
    auto for_taps = [=](auto&& body) {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t xx = 0; xx < W; ++xx)
                    for (std::size_t dy = 0; dy < K; ++dy) {
                        const long iy = static_cast<long>(y + dy) - pad;
                        if (iy < 0 || iy >= static_cast<long>(H)) continue;
                        for (std::size_t dx = 0; dx < K; ++dx) {
                            const long ix = static_cast<long>(xx + dx) - pad;
                            if (ix < 0 || ix >= static_cast<long>(W)) continue;
                            const std::size_t in_base = ((b * H + iy) * W + ix) * C;
                            const std::size_t w_base = (dy * K + dx) * C * F;
                            const std::size_t out_base = ((b * H + y) * W + xx) * F;
                            body(in_base, w_base, out_base);
                        }
                    }
    };
    for_taps([&](std::size_t ib, std::size_t wb, std::size_t ob) {
        double* o = out.data() + ob;
        for (std::size_t c = 0; c < C; ++c) {
            const double xi = xv[ib + c];
            if (xi == 0.0) continue;
            const double* wr = wv.data() + wb + c * F;
            for (std::size_t f = 0; f < F; ++f) o[f] += xi * wr[f];
        }
    });
    return x.tape().record(std::move(out), {x, w}, [for_taps, C, F](Tape& t, std::size_t self) {
        const std::size_t ix = t.input(self, 0), iw = t.input(self, 1);
        const bool wx = t.wants_grad(ix), ww = t.wants_grad(iw);
        const Tensor& g = t.grad_of(self);
        const Tensor& xv = t.value_of(ix);
        const Tensor& wv = t.value_of(iw);
        Tensor* gx = wx ? &t.grad_slot(ix) : nullptr;
        Tensor* gw = ww ? &t.grad_slot(iw) : nullptr;
        for_taps([&](std::size_t ib, std::size_t wb, std::size_t ob) {
            const double* go = g.data() + ob;
            for (std::size_t c = 0; c < C; ++c) {
                const double* wr = wv.data() + wb + c * F;
                if (gx) {
                    double s = 0.0;
                    for (std::size_t f = 0; f < F; ++f) s += go[f] * wr[f];
                    (*gx)[ib + c] += s;
                }
                if (gw) {
                    const double xi = xv[ib + c];
                    if (xi == 0.0) continue;
                    double* gwr = gw->data() + wb + c * F;
                    for (std::size_t f = 0; f < F; ++f) gwr[f] += xi * go[f];
                }
            }
        });
    }, "conv2d");
}

/// 2x2 max-pool with stride 2 on [B,H,W,C]; odd trailing rows/columns are dropped.
inline Var maxpool2x2(Var x)
{
    const Tensor& xv = x.value();
    if (xv.rank() != 4 || xv.dim(1) < 2 || xv.dim(2) < 2)
        throw DimensionError("maxpool2x2: input " + shape_str(xv.shape()));
    const std::size_t B = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
    const std::size_t Ho = H / 2, Wo = W / 2;
    Tensor out({B, Ho, Wo, C});
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < Ho; ++y)
            for (std::size_t xx = 0; xx < Wo; ++xx)
                for (std::size_t c = 0; c < C; ++c) {
                    std::size_t best = ((b * H + 2 * y) * W + 2 * xx) * C + c;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t i = ((b * H + 2 * y + dy) * W + 2 * xx + dx) * C + c;
                            if (xv[i] > xv[best]) best = i;
                        }
                    const std::size_t o = ((b * Ho + y) * Wo + xx) * C + c;
                    out[o] = xv[best];
                    argmax[o] = best;
                }
    return x.tape().record(std::move(out), {x}, [argmax = std::move(argmax)](Tape& t, std::size_t self) {
        const std::size_t ix = t.input(self, 0);
        if (!t.wants_grad(ix)) return;
        const Tensor& g = t.grad_of(self);
        Tensor& gx = t.grad_slot(ix);
        for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += g[o];
    }, "maxpool2x2");
}

/// Running statistics owned by a batch-norm layer.
struct BatchNormStats {
    Tensor mean;
    Tensor var;
    double momentum = 0.1;
    double eps = 1e-5;
};

/// Batch normalization over every axis but the last (channels). In training mode the
/// batch statistics are used and folded into `stats`; otherwise `stats` is used as-is.
inline Var batch_norm(Var x, Var gamma, Var beta, BatchNormStats& stats, bool training)
{
    const Tensor& xv = x.value();
    const std::size_t C = xv.shape().back();
    const std::size_t N = xv.size() / C;
    if (gamma.value().size() != C || beta.value().size() != C || stats.mean.size() != C)
        throw DimensionError("batch_norm: channel mismatch for input " + shape_str(xv.shape()));
    std::vector<double> mu(C, 0.0), var(C, 0.0);
    if (training) {
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t c = 0; c < C; ++c) mu[c] += xv[i * C + c];
        for (double& m : mu) m /= static_cast<double>(N);
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t c = 0; c < C; ++c) {
                const double d = xv[i * C + c] - mu[c];
                var[c] += d * d;
            }
        for (std::size_t c = 0; c < C; ++c) {
            const double unbiased = N > 1 ? var[c] / static_cast<double>(N - 1) : 0.0;
            var[c] /= static_cast<double>(N);
            stats.mean[c] = (1.0 - stats.momentum) * stats.mean[c] + stats.momentum * mu[c];
            stats.var[c] = (1.0 - stats.momentum) * stats.var[c] + stats.momentum * unbiased;
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mu[c] = stats.mean[c];
            var[c] = stats.var[c];
        }
    }
    std::vector<double> inv(C);
    for (std::size_t c = 0; c < C; ++c) inv[c] = 1.0 / std::sqrt(var[c] + stats.eps);
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    Tensor xhat(xv.shape());
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t c = 0; c < C; ++c) {
            const double h = (xv[i * C + c] - mu[c]) * inv[c];
            xhat[i * C + c] = h;
            out[i * C + c] = gv[c] * h + bv[c];
        }
    return x.tape().record(std::move(out), {x, gamma, beta},
        [xhat = std::move(xhat), inv = std::move(inv), N, C, training](Tape& t, std::size_t self) {
            const std::size_t ix = t.input(self, 0), ig = t.input(self, 1), ib = t.input(self, 2);
            const Tensor& g = t.grad_of(self);
            const Tensor& gv = t.value_of(ig);
            std::vector<double> sg(C, 0.0), sgx(C, 0.0);
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t c = 0; c < C; ++c) {
                    sg[c] += g[i * C + c];
                    sgx[c] += g[i * C + c] * xhat[i * C + c];
                }
            if (t.wants_grad(ig)) {
                Tensor& gg = t.grad_slot(ig);
                for (std::size_t c = 0; c < C; ++c) gg[c] += sgx[c];
            }
            if (t.wants_grad(ib)) {
                Tensor& gb = t.grad_slot(ib);
                for (std::size_t c = 0; c < C; ++c) gb[c] += sg[c];
            }
            if (t.wants_grad(ix)) {
                Tensor& gx = t.grad_slot(ix);
                const double n = static_cast<double>(N);
                for (std::size_t i = 0; i < N; ++i)
                    for (std::size_t c = 0; c < C; ++c) {
                        const std::size_t k = i * C + c;
                        if (training)
                            gx[k] += gv[c] * inv[c] * (g[k] - sg[c] / n - xhat[k] * sgx[c] / n);
                        else
                            gx[k] += gv[c] * inv[c] * g[k];
                    }
            }
        }, "batch_norm");
}

} // namespace nmsg

#endif
