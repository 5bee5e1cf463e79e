#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mostdsa/tensor.hpp"

// Numeric kernels: each forward op has its adjoint(s) next to it. All loops
// use a fixed summation order so results are bit-reproducible run to run.

namespace mostdsa {
namespace kernels {

struct ConvSpec {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
};

inline int conv_out_dim(int in, int k, int stride, int pad, int dil) {
    return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

namespace detail {

inline int ceil_div(int a, int b) {
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

// Output-index range [lo, hi) for which in = out*stride - pad + tap stays in [0, size).
inline void tap_bounds(int tap, int stride, int pad, int in_size, int out_size,
                       int& lo, int& hi) {
    lo = std::max(0, ceil_div(pad - tap, stride));
    hi = std::min(out_size, ceil_div(in_size + pad - tap, stride));
    if (hi < lo) hi = lo;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// GEMM: C (MxN) = A (MxK) B (KxN) or C += ..., row-major contiguous.
// Register-tiled 4x8 microkernel; the compiler vectorizes the j loops.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void gemm(const T* a, const T* b, T* c, int m_dim, int k_dim, int n_dim, bool accumulate) {
    constexpr int MR = 4, NR = 8;
    for (int m0 = 0; m0 < m_dim; m0 += MR) {
        const int mb = std::min(MR, m_dim - m0);
        for (int j0 = 0; j0 < n_dim; j0 += NR) {
            const int nb = std::min(NR, n_dim - j0);
            if (mb == MR && nb == NR) {
                T acc[MR][NR];
                for (int i = 0; i < MR; ++i)
                    for (int j = 0; j < NR; ++j)
                        acc[i][j] = accumulate ? c[std::size_t(m0 + i) * n_dim + j0 + j] : T(0);
                const T* a0 = a + std::size_t(m0) * k_dim;
                for (int k = 0; k < k_dim; ++k) {
                    const T* brow = b + std::size_t(k) * n_dim + j0;
                    const T av0 = a0[k];
                    const T av1 = a0[k_dim + k];
                    const T av2 = a0[2 * std::size_t(k_dim) + k];
                    const T av3 = a0[3 * std::size_t(k_dim) + k];
                    for (int j = 0; j < NR; ++j) {
                        const T bv = brow[j];
                        acc[0][j] += av0 * bv;
                        acc[1][j] += av1 * bv;
                        acc[2][j] += av2 * bv;
                        acc[3][j] += av3 * bv;
                    }
                }
                for (int i = 0; i < MR; ++i)
                    for (int j = 0; j < NR; ++j)
                        c[std::size_t(m0 + i) * n_dim + j0 + j] = acc[i][j];
            } else {
                for (int i = 0; i < mb; ++i)
                    for (int j = 0; j < nb; ++j) {
                        T acc = accumulate ? c[std::size_t(m0 + i) * n_dim + j0 + j] : T(0);
                        const T* arow = a + std::size_t(m0 + i) * k_dim;
                        const T* bcol = b + j0 + j;
                        for (int k = 0; k < k_dim; ++k)
                            acc += arow[k] * bcol[std::size_t(k) * n_dim];
                        c[std::size_t(m0 + i) * n_dim + j0 + j] = acc;
                    }
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: zero padding, optional per-output-channel bias of shape (1,C,1,1).
// Lowered to GEMM over im2col strips; strips bound the packing buffer.
// ---------------------------------------------------------------------------

namespace detail {

struct ConvDims {
    int in_c, in_h, in_w;
    int out_c, oh, ow;
    int kh, kw;
};

// Packs output rows [oy0, oy1) into the column matrix: row (ic,ky,kx),
// column (oy-oy0)*ow + ox. Out-of-image taps are zero.
template <typename T>
void im2col_strip(const T* in, const ConvDims& d, const ConvSpec& s, int oy0, int oy1, T* cols) {
    const int ncol = (oy1 - oy0) * d.ow;
    for (int ic = 0; ic < d.in_c; ++ic) {
        const T* plane = in + std::size_t(ic) * d.in_h * d.in_w;
        for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
                T* crow = cols + (std::size_t(ic) * d.kh * d.kw + std::size_t(ky) * d.kw + kx) * ncol;
                int xlo, xhi;
                tap_bounds(kx * s.dilation, s.stride, s.padding, d.in_w, d.ow, xlo, xhi);
                for (int oy = oy0; oy < oy1; ++oy) {
                    T* dst = crow + std::size_t(oy - oy0) * d.ow;
                    const int iy = oy * s.stride - s.padding + ky * s.dilation;
                    if (iy < 0 || iy >= d.in_h) {
                        for (int ox = 0; ox < d.ow; ++ox) dst[ox] = T(0);
                        continue;
                    }
                    const T* src = plane + std::size_t(iy) * d.in_w - s.padding + kx * s.dilation;
                    for (int ox = 0; ox < xlo; ++ox) dst[ox] = T(0);
                    if (s.stride == 1) {
                        for (int ox = xlo; ox < xhi; ++ox) dst[ox] = src[ox];
                    } else {
                        for (int ox = xlo; ox < xhi; ++ox)
                            dst[ox] = src[std::size_t(ox) * s.stride];
                    }
                    for (int ox = xhi; ox < d.ow; ++ox) dst[ox] = T(0);
                }
            }
    }
}

// Scatter-add of a column-matrix strip back into the input gradient.
template <typename T>
void col2im_strip_add(const T* cols, const ConvDims& d, const ConvSpec& s, int oy0, int oy1,
                      T* din) {
    const int ncol = (oy1 - oy0) * d.ow;
    for (int ic = 0; ic < d.in_c; ++ic) {
        T* plane = din + std::size_t(ic) * d.in_h * d.in_w;
        for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
                const T* crow =
                    cols + (std::size_t(ic) * d.kh * d.kw + std::size_t(ky) * d.kw + kx) * ncol;
                int xlo, xhi;
                tap_bounds(kx * s.dilation, s.stride, s.padding, d.in_w, d.ow, xlo, xhi);
                for (int oy = oy0; oy < oy1; ++oy) {
                    const int iy = oy * s.stride - s.padding + ky * s.dilation;
                    if (iy < 0 || iy >= d.in_h) continue;
                    const T* src = crow + std::size_t(oy - oy0) * d.ow;
                    T* dst = plane + std::size_t(iy) * d.in_w - s.padding + kx * s.dilation;
                    if (s.stride == 1) {
                        for (int ox = xlo; ox < xhi; ++ox) dst[ox] += src[ox];
                    } else {
                        for (int ox = xlo; ox < xhi; ++ox)
                            dst[std::size_t(ox) * s.stride] += src[ox];
                    }
                }
            }
    }
}

inline int conv_strip_rows(int kk_rows, int ow, int oh) {
    // keep the packing buffer around 1 MB
    const std::int64_t budget = 262144;
    const std::int64_t per_row = std::int64_t(kk_rows) * ow;
    return std::max(1, std::min<int>(oh, int(budget / std::max<std::int64_t>(1, per_row))));
}

template <typename T>
ConvDims conv_check(const Shape& xs, const Shape& ws, const Tensor<T>& bias, const ConvSpec& s) {
    if (ws.c != xs.c)
        throw ConfigError("conv2d: input shape " + xs.str() + " incompatible with weight shape " +
                          ws.str());
    if (s.stride < 1 || s.dilation < 1)
        throw ConfigError("conv2d: stride and dilation must be >= 1");
    if (!bias.empty() && (bias.shape().c != ws.n || bias.shape().numel() != ws.n))
        throw ConfigError("conv2d: bias shape " + bias.shape().str() +
                          " does not match out channels of weight " + ws.str());
    ConvDims d;
    d.in_c = xs.c;
    d.in_h = xs.h;
    d.in_w = xs.w;
    d.out_c = ws.n;
    d.kh = ws.h;
    d.kw = ws.w;
    d.oh = conv_out_dim(xs.h, ws.h, s.stride, s.padding, s.dilation);
    d.ow = conv_out_dim(xs.w, ws.w, s.stride, s.padding, s.dilation);
    if (d.oh <= 0 || d.ow <= 0)
        throw ConfigError("conv2d: empty output for input " + xs.str() + " weight " + ws.str());
    return d;
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 const ConvSpec& s) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    const detail::ConvDims d = detail::conv_check(xs, ws, bias, s);
    const int kk = d.in_c * d.kh * d.kw;

    Tensor<T> out(Shape(xs.n, d.out_c, d.oh, d.ow));
    const bool unit_kernel = d.kh == 1 && d.kw == 1 && s.stride == 1 && s.padding == 0;
    std::vector<T, CountingAllocator<T>> cols;
    const int strip = detail::conv_strip_rows(kk, d.ow, d.oh);
    if (!unit_kernel) cols.resize(std::size_t(kk) * strip * d.ow);

    for (int n = 0; n < xs.n; ++n) {
        const T* in = x.data() + x.idx(n, 0, 0, 0);
        T* outp = out.data() + out.idx(n, 0, 0, 0);
        if (unit_kernel) {
            detail::gemm(w.data(), in, outp, d.out_c, kk, d.oh * d.ow, false);
        } else {
            for (int oy0 = 0; oy0 < d.oh; oy0 += strip) {
                const int oy1 = std::min(d.oh, oy0 + strip);
                detail::im2col_strip(in, d, s, oy0, oy1, cols.data());
                // output rows of a strip are contiguous only per channel, so
                // partial strips go through a dense temporary
                const int ncol = (oy1 - oy0) * d.ow;
                if (oy0 == 0 && oy1 == d.oh) {
                    detail::gemm(w.data(), cols.data(), outp, d.out_c, kk, ncol, false);
                } else {
                    static thread_local std::vector<T, CountingAllocator<T>> tmp;
                    tmp.resize(std::size_t(d.out_c) * ncol);
                    detail::gemm(w.data(), cols.data(), tmp.data(), d.out_c, kk, ncol, false);
                    for (int oc = 0; oc < d.out_c; ++oc)
                        std::copy(tmp.data() + std::size_t(oc) * ncol,
                                  tmp.data() + std::size_t(oc + 1) * ncol,
                                  outp + (std::size_t(oc) * d.oh + oy0) * d.ow);
                }
            }
        }
        if (!bias.empty()) {
            for (int oc = 0; oc < d.out_c; ++oc) {
                const T b = bias.data()[oc];
                T* row = outp + std::size_t(oc) * d.oh * d.ow;
                for (int i = 0; i < d.oh * d.ow; ++i) row[i] += b;
            }
        }
    }
    return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& s,
                     const Tensor<T>& gout, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* dbias) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    const Shape& gs = gout.shape();
    const detail::ConvDims d = detail::conv_check(xs, ws, Tensor<T>(), s);
    const int kk = d.in_c * d.kh * d.kw;

    if (dbias && !dbias->empty()) {
        for (int oc = 0; oc < ws.n; ++oc) {
            T acc = 0;
            for (int n = 0; n < gs.n; ++n) {
                const T* g = gout.data() + gout.idx(n, oc, 0, 0);
                for (int i = 0; i < gs.h * gs.w; ++i) acc += g[i];
            }
            dbias->data()[oc] += acc;
        }
    }
    if (!dx && !dw) return;

    // W^T packed as (kk x out_c) for the dx GEMM
    std::vector<T, CountingAllocator<T>> wt;
    if (dx) {
        wt.resize(std::size_t(kk) * d.out_c);
        for (int oc = 0; oc < d.out_c; ++oc)
            for (int r = 0; r < kk; ++r)
                wt[std::size_t(r) * d.out_c + oc] = w.data()[std::size_t(oc) * kk + r];
    }

    const bool unit_kernel = d.kh == 1 && d.kw == 1 && s.stride == 1 && s.padding == 0;
    const int strip = detail::conv_strip_rows(kk, d.ow, d.oh);
    std::vector<T, CountingAllocator<T>> cols, gstrip, colsg;
    if (!unit_kernel) cols.resize(std::size_t(kk) * strip * d.ow);
    gstrip.resize(std::size_t(d.out_c) * strip * d.ow);
    if (dx && !unit_kernel) colsg.resize(std::size_t(kk) * strip * d.ow);

    for (int n = 0; n < xs.n; ++n) {
        const T* in = x.data() + x.idx(n, 0, 0, 0);
        const T* g = gout.data() + gout.idx(n, 0, 0, 0);
        if (unit_kernel) {
            // dw += g . x^T, dx += W^T . g; both plain GEMMs on full planes
            const int ncol = d.oh * d.ow;
            if (dw) {
                static thread_local std::vector<T, CountingAllocator<T>> xt;
                xt.resize(std::size_t(ncol) * kk);
                for (int r = 0; r < kk; ++r)
                    for (int j = 0; j < ncol; ++j)
                        xt[std::size_t(j) * kk + r] = in[std::size_t(r) * ncol + j];
                detail::gemm(g, xt.data(), dw->data(), d.out_c, ncol, kk, true);
            }
            if (dx)
                detail::gemm(wt.data(), g, dx->data() + dx->idx(n, 0, 0, 0), kk, d.out_c, ncol,
                             true);
            continue;
        }
        for (int oy0 = 0; oy0 < d.oh; oy0 += strip) {
            const int oy1 = std::min(d.oh, oy0 + strip);
            const int ncol = (oy1 - oy0) * d.ow;
            // gather the strip of output gradients into (out_c x ncol)
            for (int oc = 0; oc < d.out_c; ++oc)
                std::copy(g + (std::size_t(oc) * d.oh + oy0) * d.ow,
                          g + (std::size_t(oc) * d.oh + oy1) * d.ow,
                          gstrip.data() + std::size_t(oc) * ncol);
            if (dw) {
                detail::im2col_strip(in, d, s, oy0, oy1, cols.data());
                // dw (out_c x kk) += gstrip (out_c x ncol) . cols^T (ncol x kk)
                static thread_local std::vector<T, CountingAllocator<T>> colst;
                colst.resize(std::size_t(ncol) * kk);
                for (int r = 0; r < kk; ++r)
                    for (int j = 0; j < ncol; ++j)
                        colst[std::size_t(j) * kk + r] = cols[std::size_t(r) * ncol + j];
                detail::gemm(gstrip.data(), colst.data(), dw->data(), d.out_c, ncol, kk, true);
            }
            if (dx) {
                detail::gemm(wt.data(), gstrip.data(), colsg.data(), kk, d.out_c, ncol, false);
                detail::col2im_strip_add(colsg.data(), d, s, oy0, oy1,
                                         dx->data() + dx->idx(n, 0, 0, 0));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// prelu: per-channel negative slope.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope) {
    const Shape& s = x.shape();
    if (slope.numel() != s.c)
        throw ConfigError("prelu: slope count " + std::to_string(slope.numel()) +
                          " != channels of " + s.str());
    Tensor<T> out(s);
    const std::size_t plane = std::size_t(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T a = slope.data()[c];
            const T* in = x.data() + x.idx(n, c, 0, 0);
            T* o = out.data() + out.idx(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) o[i] = in[i] >= T(0) ? in[i] : a * in[i];
        }
    return out;
}

template <typename T>
void prelu_backward(const Tensor<T>& x, const Tensor<T>& slope, const Tensor<T>& gout,
                    Tensor<T>* dx, Tensor<T>* dslope) {
    const Shape& s = x.shape();
    const std::size_t plane = std::size_t(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T a = slope.data()[c];
            const T* in = x.data() + x.idx(n, c, 0, 0);
            const T* g = gout.data() + gout.idx(n, c, 0, 0);
            T* dxp = dx ? dx->data() + dx->idx(n, c, 0, 0) : nullptr;
            T sacc = 0;
            for (std::size_t i = 0; i < plane; ++i) {
                if (in[i] >= T(0)) {
                    if (dxp) dxp[i] += g[i];
                } else {
                    if (dxp) dxp[i] += a * g[i];
                    sacc += g[i] * in[i];
                }
            }
            if (dslope) dslope->data()[c] += sacc;
        }
    return;
}

// ---------------------------------------------------------------------------
// softmax along one axis (max-subtracted).
// ---------------------------------------------------------------------------

namespace detail {

// Walks all 1-D lines along `axis`; f(base_offset, count, stride).
template <typename F>
void for_each_line(const Shape& s, int axis, F&& f) {
    const int dims[4] = {s.n, s.c, s.h, s.w};
    const std::size_t strides[4] = {std::size_t(s.c) * s.h * s.w, std::size_t(s.h) * s.w,
                                    std::size_t(s.w), 1};
    const int count = dims[axis];
    const std::size_t stride = strides[axis];
    int outer[4];
    for (outer[0] = 0; outer[0] < (axis == 0 ? 1 : dims[0]); ++outer[0])
        for (outer[1] = 0; outer[1] < (axis == 1 ? 1 : dims[1]); ++outer[1])
            for (outer[2] = 0; outer[2] < (axis == 2 ? 1 : dims[2]); ++outer[2])
                for (outer[3] = 0; outer[3] < (axis == 3 ? 1 : dims[3]); ++outer[3]) {
                    std::size_t base = 0;
                    for (int d = 0; d < 4; ++d)
                        if (d != axis) base += outer[d] * strides[d];
                    f(base, count, stride);
                }
}

}  // namespace detail

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    if (axis < 0 || axis > 3) throw ConfigError("softmax: axis out of range");
    Tensor<T> out(x.shape());
    const T* in = x.data();
    T* o = out.data();
    detail::for_each_line(x.shape(), axis, [&](std::size_t base, int count, std::size_t stride) {
        T mx = in[base];
        for (int i = 1; i < count; ++i) mx = std::max(mx, in[base + i * stride]);
        T sum = 0;
        for (int i = 0; i < count; ++i) {
            T e = std::exp(in[base + i * stride] - mx);
            o[base + i * stride] = e;
            sum += e;
        }
        const T inv = T(1) / sum;
        for (int i = 0; i < count; ++i) o[base + i * stride] *= inv;
    });
    return out;
}

template <typename T>
void softmax_backward(const Tensor<T>& y, int axis, const Tensor<T>& gout, Tensor<T>* dx) {
    const T* yp = y.data();
    const T* g = gout.data();
    T* d = dx->data();
    detail::for_each_line(y.shape(), axis, [&](std::size_t base, int count, std::size_t stride) {
        T dot = 0;
        for (int i = 0; i < count; ++i) dot += g[base + i * stride] * yp[base + i * stride];
        for (int i = 0; i < count; ++i) {
            const std::size_t k = base + i * stride;
            d[k] += yp[k] * (g[k] - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// Batched matmul over the trailing two axes; leading axes broadcast when 1.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta = false, bool tb = false) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    const int am = ta ? as.w : as.h, ak = ta ? as.h : as.w;
    const int bk = tb ? bs.w : bs.h, bn = tb ? bs.h : bs.w;
    if (ak != bk)
        throw ConfigError("matmul: inner dims disagree, " + as.str() + (ta ? "^T" : "") + " x " +
                          bs.str() + (tb ? "^T" : ""));
    if ((as.n != bs.n && as.n != 1 && bs.n != 1) || (as.c != bs.c && as.c != 1 && bs.c != 1))
        throw ConfigError("matmul: batch dims not broadcastable, " + as.str() + " x " + bs.str());

    const int on = std::max(as.n, bs.n), oc = std::max(as.c, bs.c);
    Tensor<T> out(Shape(on, oc, am, bn));
    for (int n = 0; n < on; ++n) {
        for (int c = 0; c < oc; ++c) {
            const T* ap = a.data() + a.idx(n % as.n, c % as.c, 0, 0);
            const T* bp = b.data() + b.idx(n % bs.n, c % bs.c, 0, 0);
            T* op = out.data() + out.idx(n, c, 0, 0);
            for (int m = 0; m < am; ++m) {
                T* orow = op + std::size_t(m) * bn;
                for (int k = 0; k < ak; ++k) {
                    const T av = ta ? ap[std::size_t(k) * as.w + m] : ap[std::size_t(m) * as.w + k];
                    if (av == T(0)) continue;
                    if (!tb) {
                        const T* brow = bp + std::size_t(k) * bs.w;
                        for (int j = 0; j < bn; ++j) orow[j] += av * brow[j];
                    } else {
                        const T* bcol = bp + k;
                        for (int j = 0; j < bn; ++j) orow[j] += av * bcol[std::size_t(j) * bs.w];
                    }
                }
            }
        }
    }
    return out;
}

// Reduces `g` (full batch shape) into `acc` whose leading axes may be 1.
template <typename T>
void reduce_broadcast_into(const Tensor<T>& g, Tensor<T>* acc) {
    const Shape& gs = g.shape();
    const Shape& as = acc->shape();
    if (gs == as) {
        T* d = acc->data();
        const T* s = g.data();
        for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += s[i];
        return;
    }
    for (int n = 0; n < gs.n; ++n)
        for (int c = 0; c < gs.c; ++c) {
            const T* s = g.data() + g.idx(n, c, 0, 0);
            T* d = acc->data() + acc->idx(n % as.n, c % as.c, 0, 0);
            for (std::size_t i = 0; i < std::size_t(gs.h) * gs.w; ++i) d[i] += s[i];
        }
}

template <typename T>
void matmul_backward(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb,
                     const Tensor<T>& gout, Tensor<T>* da, Tensor<T>* db) {
    // d(AB) = (G B^T, A^T G); transposition flags fold into recursive matmuls.
    if (da) {
        Tensor<T> ga = ta ? matmul(b, gout, tb, true) : matmul(gout, b, false, !tb);
        reduce_broadcast_into(ga, da);
    }
    if (db) {
        Tensor<T> gb = tb ? matmul(gout, a, true, ta) : matmul(a, gout, !ta, false);
        reduce_broadcast_into(gb, db);
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "add");
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* o = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) o[i] = pa[i] + pb[i];
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "mul");
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* o = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) o[i] = pa[i] * pb[i];
    return out;
}

// out = scale * x + shift, elementwise with scalar coefficients.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, double scale, double shift) {
    Tensor<T> out(x.shape());
    const T* p = x.data();
    T* o = out.data();
    const T a = static_cast<T>(scale), b = static_cast<T>(shift);
    for (std::int64_t i = 0; i < x.numel(); ++i) o[i] = a * p[i] + b;
    return out;
}

template <typename T>
Tensor<T> abs_val(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* p = x.data();
    T* o = out.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) o[i] = std::abs(p[i]);
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* p = x.data();
    T* o = out.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const T v = p[i];
        o[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                         : std::exp(v) / (T(1) + std::exp(v));
    }
    return out;
}

template <typename T>
Tensor<T> clamp_range(const Tensor<T>& x, double lo, double hi) {
    Tensor<T> out(x.shape());
    const T* p = x.data();
    T* o = out.data();
    const T l = static_cast<T>(lo), h = static_cast<T>(hi);
    for (std::int64_t i = 0; i < x.numel(); ++i) o[i] = std::min(h, std::max(l, p[i]));
    return out;
}

template <typename T>
Tensor<T> clamp01(const Tensor<T>& x) {
    return clamp_range(x, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// concat / slice / zero-pad along image axes.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ConfigError("concat: no inputs");
    if (axis < 0 || axis > 3) throw ConfigError("concat: axis out of range");
    Shape s = parts[0].shape();
    int total = 0;
    for (const auto& p : parts) {
        const Shape& ps = p.shape();
        int dims[4] = {ps.n, ps.c, ps.h, ps.w};
        int ref[4] = {s.n, s.c, s.h, s.w};
        for (int d = 0; d < 4; ++d)
            if (d != axis && dims[d] != ref[d])
                throw ConfigError("concat: shape " + ps.str() + " incompatible with " + s.str() +
                                  " on axis " + std::to_string(axis));
        total += dims[axis];
    }
    int dims[4] = {s.n, s.c, s.h, s.w};
    dims[axis] = total;
    Tensor<T> out(Shape(dims[0], dims[1], dims[2], dims[3]));

    int offset = 0;
    for (const auto& p : parts) {
        const Shape& ps = p.shape();
        for (int n = 0; n < ps.n; ++n)
            for (int c = 0; c < ps.c; ++c)
                for (int h = 0; h < ps.h; ++h) {
                    int dn = n + (axis == 0 ? offset : 0);
                    int dc = c + (axis == 1 ? offset : 0);
                    int dh = h + (axis == 2 ? offset : 0);
                    int dw = axis == 3 ? offset : 0;
                    const T* src = p.data() + p.idx(n, c, h, 0);
                    T* dst = out.data() + out.idx(dn, dc, dh, dw);
                    std::copy(src, src + ps.w, dst);
                }
        int pdims[4] = {ps.n, ps.c, ps.h, ps.w};
        offset += pdims[axis];
    }
    return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int start, int len) {
    const Shape& s = x.shape();
    int dims[4] = {s.n, s.c, s.h, s.w};
    if (axis < 0 || axis > 3 || start < 0 || len <= 0 || start + len > dims[axis])
        throw ConfigError("slice: range [" + std::to_string(start) + "," +
                          std::to_string(start + len) + ") on axis " + std::to_string(axis) +
                          " invalid for " + s.str());
    int odims[4] = {dims[0], dims[1], dims[2], dims[3]};
    odims[axis] = len;
    Tensor<T> out(Shape(odims[0], odims[1], odims[2], odims[3]));
    for (int n = 0; n < odims[0]; ++n)
        for (int c = 0; c < odims[1]; ++c)
            for (int h = 0; h < odims[2]; ++h) {
                int sn = n + (axis == 0 ? start : 0);
                int sc = c + (axis == 1 ? start : 0);
                int sh = h + (axis == 2 ? start : 0);
                int sw = axis == 3 ? start : 0;
                const T* src = x.data() + x.idx(sn, sc, sh, sw);
                T* dst = out.data() + out.idx(n, c, h, 0);
                std::copy(src, src + odims[3], dst);
            }
    return out;
}

// Adds a slice gradient back into the enclosing tensor's gradient.
template <typename T>
void slice_backward(const Tensor<T>& gout, int axis, int start, Tensor<T>* dx) {
    const Shape& gs = gout.shape();
    for (int n = 0; n < gs.n; ++n)
        for (int c = 0; c < gs.c; ++c)
            for (int h = 0; h < gs.h; ++h) {
                int dn = n + (axis == 0 ? start : 0);
                int dc = c + (axis == 1 ? start : 0);
                int dh = h + (axis == 2 ? start : 0);
                int dw = axis == 3 ? start : 0;
                const T* src = gout.data() + gout.idx(n, c, h, 0);
                T* dst = dx->data() + dx->idx(dn, dc, dh, dw);
                for (int w = 0; w < gs.w; ++w) dst[w] += src[w];
            }
}

// Zero padding on the bottom/right of the spatial axes.
template <typename T>
Tensor<T> pad_hw(const Tensor<T>& x, int new_h, int new_w) {
    const Shape& s = x.shape();
    if (new_h < s.h || new_w < s.w)
        throw ConfigError("pad_hw: target smaller than input " + s.str());
    Tensor<T> out(Shape(s.n, s.c, new_h, new_w));
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < s.h; ++h) {
                const T* src = x.data() + x.idx(n, c, h, 0);
                T* dst = out.data() + out.idx(n, c, h, 0);
                std::copy(src, src + s.w, dst);
            }
    return out;
}

// ---------------------------------------------------------------------------
// pixel shuffle / unshuffle.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int factor) {
    const Shape& s = x.shape();
    if (factor < 1) throw ConfigError("pixel_shuffle: factor must be >= 1");
    if (s.c % (factor * factor) != 0)
        throw ConfigError("pixel_shuffle: channels " + std::to_string(s.c) +
                          " not divisible by factor^2 = " + std::to_string(factor * factor));
    const int oc = s.c / (factor * factor);
    Tensor<T> out(Shape(s.n, oc, s.h * factor, s.w * factor));
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < oc; ++c)
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx) {
                    const int sc = c * factor * factor + dy * factor + dx;
                    for (int y = 0; y < s.h; ++y) {
                        const T* src = x.data() + x.idx(n, sc, y, 0);
                        T* dst = out.data() + out.idx(n, c, y * factor + dy, dx);
                        for (int xx = 0; xx < s.w; ++xx) dst[std::size_t(xx) * factor] = src[xx];
                    }
                }
    return out;
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int factor) {
    const Shape& s = x.shape();
    if (factor < 1) throw ConfigError("pixel_unshuffle: factor must be >= 1");
    if (s.h % factor != 0 || s.w % factor != 0)
        throw ConfigError("pixel_unshuffle: spatial dims of " + s.str() +
                          " not divisible by factor");
    const int oh = s.h / factor, ow = s.w / factor;
    Tensor<T> out(Shape(s.n, s.c * factor * factor, oh, ow));
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx) {
                    const int ocn = c * factor * factor + dy * factor + dx;
                    for (int y = 0; y < oh; ++y) {
                        const T* src = x.data() + x.idx(n, c, y * factor + dy, dx);
                        T* dst = out.data() + out.idx(n, ocn, y, 0);
                        for (int xx = 0; xx < ow; ++xx) dst[xx] = src[std::size_t(xx) * factor];
                    }
                }
    return out;
}

// ---------------------------------------------------------------------------
// Bilinear resize. Sample coordinates are clamped to the image so constants
// are preserved; identity when the size is unchanged.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> resample(const Tensor<T>& x, int out_h, int out_w) {
    const Shape& s = x.shape();
    if (out_h < 1 || out_w < 1) throw ConfigError("resample: output size must be positive");
    if (out_h == s.h && out_w == s.w) return x;
    Tensor<T> out(Shape(s.n, s.c, out_h, out_w));
    const double sy = double(s.h) / out_h, sx = double(s.w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), double(s.h - 1));
        const int y0 = std::min(int(fy), s.h - 1);
        const int y1 = std::min(y0 + 1, s.h - 1);
        const T wy = static_cast<T>(fy - y0);
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), double(s.w - 1));
            const int x0 = std::min(int(fx), s.w - 1);
            const int x1 = std::min(x0 + 1, s.w - 1);
            const T wx = static_cast<T>(fx - x0);
            for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < s.c; ++c) {
                    const T v00 = x.at(n, c, y0, x0), v01 = x.at(n, c, y0, x1);
                    const T v10 = x.at(n, c, y1, x0), v11 = x.at(n, c, y1, x1);
                    out.at(n, c, oy, ox) = (T(1) - wy) * ((T(1) - wx) * v00 + wx * v01) +
                                           wy * ((T(1) - wx) * v10 + wx * v11);
                }
        }
    }
    return out;
}

template <typename T>
void resample_backward(const Shape& in_shape, const Tensor<T>& gout, Tensor<T>* dx) {
    const Shape& gs = gout.shape();
    if (gs.h == in_shape.h && gs.w == in_shape.w) {
        const T* g = gout.data();
        T* d = dx->data();
        for (std::int64_t i = 0; i < gout.numel(); ++i) d[i] += g[i];
        return;
    }
    const double sy = double(in_shape.h) / gs.h, sx = double(in_shape.w) / gs.w;
    for (int oy = 0; oy < gs.h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), double(in_shape.h - 1));
        const int y0 = std::min(int(fy), in_shape.h - 1);
        const int y1 = std::min(y0 + 1, in_shape.h - 1);
        const T wy = static_cast<T>(fy - y0);
        for (int ox = 0; ox < gs.w; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), double(in_shape.w - 1));
            const int x0 = std::min(int(fx), in_shape.w - 1);
            const int x1 = std::min(x0 + 1, in_shape.w - 1);
            const T wx = static_cast<T>(fx - x0);
            for (int n = 0; n < gs.n; ++n)
                for (int c = 0; c < gs.c; ++c) {
                    const T g = gout.at(n, c, oy, ox);
                    dx->at(n, c, y0, x0) += (T(1) - wy) * (T(1) - wx) * g;
                    dx->at(n, c, y0, x1) += (T(1) - wy) * wx * g;
                    dx->at(n, c, y1, x0) += wy * (T(1) - wx) * g;
                    dx->at(n, c, y1, x1) += wy * wx * g;
                }
        }
    }
}

// ---------------------------------------------------------------------------
// Backward warp: out(x,y) = src(x + u, y + v), bilinear, zeros outside.
// flow has 2 channels (u, v) in pixels.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> backwarp(const Tensor<T>& src, const Tensor<T>& flow) {
    const Shape& s = src.shape();
    const Shape& fs = flow.shape();
    if (fs.c != 2 || fs.n != s.n || fs.h != s.h || fs.w != s.w)
        throw ConfigError("backwarp: flow shape " + fs.str() + " incompatible with source " +
                          s.str());
    Tensor<T> out(s);
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                const double px = x + double(flow.at(n, 0, y, x));
                const double py = y + double(flow.at(n, 1, y, x));
                const int x0 = int(std::floor(px)), y0 = int(std::floor(py));
                const T fx = static_cast<T>(px - x0), fy = static_cast<T>(py - y0);
                if (x0 < -1 || x0 >= s.w || y0 < -1 || y0 >= s.h) continue;
                for (int c = 0; c < s.c; ++c) {
                    auto tap = [&](int yy, int xx) -> T {
                        return (xx >= 0 && xx < s.w && yy >= 0 && yy < s.h) ? src.at(n, c, yy, xx)
                                                                            : T(0);
                    };
                    out.at(n, c, y, x) = (T(1) - fy) * ((T(1) - fx) * tap(y0, x0) + fx * tap(y0, x0 + 1)) +
                                         fy * ((T(1) - fx) * tap(y0 + 1, x0) + fx * tap(y0 + 1, x0 + 1));
                }
            }
    return out;
}

template <typename T>
void backwarp_backward(const Tensor<T>& src, const Tensor<T>& flow, const Tensor<T>& gout,
                       Tensor<T>* dsrc, Tensor<T>* dflow) {
    const Shape& s = src.shape();
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                const double px = x + double(flow.at(n, 0, y, x));
                const double py = y + double(flow.at(n, 1, y, x));
                const int x0 = int(std::floor(px)), y0 = int(std::floor(py));
                const T fx = static_cast<T>(px - x0), fy = static_cast<T>(py - y0);
                if (x0 < -1 || x0 >= s.w || y0 < -1 || y0 >= s.h) continue;
                T du = 0, dv = 0;
                for (int c = 0; c < s.c; ++c) {
                    const T g = gout.at(n, c, y, x);
                    if (g == T(0) && !dflow) continue;
                    auto inside = [&](int yy, int xx) {
                        return xx >= 0 && xx < s.w && yy >= 0 && yy < s.h;
                    };
                    auto tap = [&](int yy, int xx) -> T {
                        return inside(yy, xx) ? src.at(n, c, yy, xx) : T(0);
                    };
                    const T v00 = tap(y0, x0), v01 = tap(y0, x0 + 1);
                    const T v10 = tap(y0 + 1, x0), v11 = tap(y0 + 1, x0 + 1);
                    if (dsrc) {
                        if (inside(y0, x0)) dsrc->at(n, c, y0, x0) += g * (T(1) - fy) * (T(1) - fx);
                        if (inside(y0, x0 + 1)) dsrc->at(n, c, y0, x0 + 1) += g * (T(1) - fy) * fx;
                        if (inside(y0 + 1, x0)) dsrc->at(n, c, y0 + 1, x0) += g * fy * (T(1) - fx);
                        if (inside(y0 + 1, x0 + 1)) dsrc->at(n, c, y0 + 1, x0 + 1) += g * fy * fx;
                    }
                    if (dflow) {
                        du += g * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                        dv += g * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
                    }
                }
                if (dflow) {
                    dflow->at(n, 0, y, x) += du;
                    dflow->at(n, 1, y, x) += dv;
                }
            }
}

// ---------------------------------------------------------------------------
// Per-token standardization over the last axis with learned scale/shift.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-6) {
    const Shape& s = x.shape();
    if (gamma.numel() != s.w || beta.numel() != s.w)
        throw ConfigError("layer_norm: scale/shift length must equal last dim of " + s.str());
    Tensor<T> out(s);
    const std::int64_t rows = s.numel() / s.w;
    const T* g = gamma.data();
    const T* b = beta.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* in = x.data() + r * s.w;
        T* o = out.data() + r * s.w;
        T mean = 0;
        for (int i = 0; i < s.w; ++i) mean += in[i];
        mean /= T(s.w);
        T var = 0;
        for (int i = 0; i < s.w; ++i) {
            const T d = in[i] - mean;
            var += d * d;
        }
        var /= T(s.w);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
        for (int i = 0; i < s.w; ++i) o[i] = g[i] * ((in[i] - mean) * inv) + b[i];
    }
    return out;
}

template <typename T>
void layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& gout,
                         double eps, Tensor<T>* dx, Tensor<T>* dgamma, Tensor<T>* dbeta) {
    const Shape& s = x.shape();
    const std::int64_t rows = s.numel() / s.w;
    const int d = s.w;
    const T* gm = gamma.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* in = x.data() + r * d;
        const T* g = gout.data() + r * d;
        T mean = 0;
        for (int i = 0; i < d; ++i) mean += in[i];
        mean /= T(d);
        T var = 0;
        for (int i = 0; i < d; ++i) {
            const T dd = in[i] - mean;
            var += dd * dd;
        }
        var /= T(d);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));

        T sum_gg = 0, sum_ggx = 0;
        for (int i = 0; i < d; ++i) {
            const T xhat = (in[i] - mean) * inv;
            const T gg = g[i] * gm[i];
            sum_gg += gg;
            sum_ggx += gg * xhat;
            if (dgamma) dgamma->data()[i] += g[i] * xhat;
            if (dbeta) dbeta->data()[i] += g[i];
        }
        if (dx) {
            T* dxp = dx->data() + r * d;
            for (int i = 0; i < d; ++i) {
                const T xhat = (in[i] - mean) * inv;
                const T gg = g[i] * gm[i];
                dxp[i] += inv * (gg - sum_gg / T(d) - xhat * sum_ggx / T(d));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Token layout permutations.
// ---------------------------------------------------------------------------

// (N, 1, n, C) tokens -> (N, C, h, w) grid with n = h * w.
template <typename T>
Tensor<T> tokens_to_grid(const Tensor<T>& x, int h, int w) {
    const Shape& s = x.shape();
    if (s.c != 1 || s.h != h * w)
        throw ConfigError("tokens_to_grid: shape " + s.str() + " incompatible with grid " +
                          std::to_string(h) + "x" + std::to_string(w));
    Tensor<T> out(Shape(s.n, s.w, h, w));
    for (int n = 0; n < s.n; ++n)
        for (int t = 0; t < s.h; ++t) {
            const T* row = x.data() + x.idx(n, 0, t, 0);
            for (int c = 0; c < s.w; ++c) out.at(n, c, t / w, t % w) = row[c];
        }
    return out;
}

// (N, C, h, w) grid -> (N, 1, n, C) tokens.
template <typename T>
Tensor<T> grid_to_tokens(const Tensor<T>& x) {
    const Shape& s = x.shape();
    Tensor<T> out(Shape(s.n, 1, s.h * s.w, s.c));
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y) {
                const T* row = x.data() + x.idx(n, c, y, 0);
                for (int xx = 0; xx < s.w; ++xx) out.at(n, 0, y * s.w + xx, c) = row[xx];
            }
    return out;
}

// (N, 1, n, D) -> (N, heads, n, D/heads), splitting the feature axis.
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int heads) {
    const Shape& s = x.shape();
    if (s.c != 1 || s.w % heads != 0)
        throw ConfigError("split_heads: shape " + s.str() + " not splittable into " +
                          std::to_string(heads) + " heads");
    const int dh = s.w / heads;
    Tensor<T> out(Shape(s.n, heads, s.h, dh));
    for (int n = 0; n < s.n; ++n)
        for (int t = 0; t < s.h; ++t) {
            const T* row = x.data() + x.idx(n, 0, t, 0);
            for (int hh = 0; hh < heads; ++hh) {
                T* o = out.data() + out.idx(n, hh, t, 0);
                std::copy(row + hh * dh, row + (hh + 1) * dh, o);
            }
        }
    return out;
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
    const Shape& s = x.shape();
    Tensor<T> out(Shape(s.n, 1, s.h, s.c * s.w));
    for (int n = 0; n < s.n; ++n)
        for (int t = 0; t < s.h; ++t) {
            T* row = out.data() + out.idx(n, 0, t, 0);
            for (int hh = 0; hh < s.c; ++hh) {
                const T* src = x.data() + x.idx(n, hh, t, 0);
                std::copy(src, src + s.w, row + hh * s.w);
            }
        }
    return out;
}

// ---------------------------------------------------------------------------
// Scoped position-lambda application. For query grids of n = h*w tokens,
// out[q] = sum_{m in N_r(q)} (Q[q] . E[offset(q,m)]) * V[m], i.e. the
// position lambda contracted against the query without materializing any
// per-position (k x v) matrices. Batch axes broadcast when 1.
//   Q: (Bq, heads, n, k)   V: (Bv, heads, n, v)   E: (heads, k, r, r)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> position_lambda_apply(const Tensor<T>& q, const Tensor<T>& v, const Tensor<T>& e,
                                int grid_h, int grid_w) {
    const Shape& qs = q.shape();
    const Shape& vs = v.shape();
    const Shape& es = e.shape();
    if (qs.h != grid_h * grid_w || vs.h != qs.h)
        throw ConfigError("position_lambda_apply: token count mismatch, Q " + qs.str() + " V " +
                          vs.str() + " grid " + std::to_string(grid_h) + "x" +
                          std::to_string(grid_w));
    if (es.h != es.w || es.h % 2 == 0)
        throw ConfigError("position_lambda_apply: scope must be odd and square, got " + es.str());
    if (es.n != qs.c || es.c != qs.w)
        throw ConfigError("position_lambda_apply: embedding shape " + es.str() +
                          " incompatible with queries " + qs.str());
    if (qs.n != vs.n && qs.n != 1 && vs.n != 1)
        throw ConfigError("position_lambda_apply: batch dims not broadcastable");

    const int r = es.h, rr = r / 2, k = qs.w, vd = vs.w, heads = qs.c;
    const int bn = std::max(qs.n, vs.n);
    Tensor<T> out(Shape(bn, heads, qs.h, vd));
    for (int b = 0; b < bn; ++b) {
        const int qb = b % qs.n, vb = b % vs.n;
        for (int hh = 0; hh < heads; ++hh) {
            for (int qy = 0; qy < grid_h; ++qy)
                for (int qx = 0; qx < grid_w; ++qx) {
                    const int qi = qy * grid_w + qx;
                    const T* qrow = q.data() + q.idx(qb, hh, qi, 0);
                    T* orow = out.data() + out.idx(b, hh, qi, 0);
                    const int dylo = std::max(-rr, -qy), dyhi = std::min(rr, grid_h - 1 - qy);
                    const int dxlo = std::max(-rr, -qx), dxhi = std::min(rr, grid_w - 1 - qx);
                    for (int dy = dylo; dy <= dyhi; ++dy)
                        for (int dx = dxlo; dx <= dxhi; ++dx) {
                            const int mi = (qy + dy) * grid_w + (qx + dx);
                            T a = 0;
                            for (int j = 0; j < k; ++j)
                                a += qrow[j] * e.at(hh, j, dy + rr, dx + rr);
                            const T* vrow = v.data() + v.idx(vb, hh, mi, 0);
                            for (int u = 0; u < vd; ++u) orow[u] += a * vrow[u];
                        }
                }
        }
    }
    return out;
}

template <typename T>
void position_lambda_backward(const Tensor<T>& q, const Tensor<T>& v, const Tensor<T>& e,
                              int grid_h, int grid_w, const Tensor<T>& gout, Tensor<T>* dq,
                              Tensor<T>* dv, Tensor<T>* de) {
    const Shape& qs = q.shape();
    const Shape& vs = v.shape();
    const Shape& es = e.shape();
    const int r = es.h, rr = r / 2, k = qs.w, vd = vs.w, heads = qs.c;
    const int bn = std::max(qs.n, vs.n);
    for (int b = 0; b < bn; ++b) {
        const int qb = b % qs.n, vb = b % vs.n;
        for (int hh = 0; hh < heads; ++hh) {
            for (int qy = 0; qy < grid_h; ++qy)
                for (int qx = 0; qx < grid_w; ++qx) {
                    const int qi = qy * grid_w + qx;
                    const T* qrow = q.data() + q.idx(qb, hh, qi, 0);
                    const T* grow = gout.data() + gout.idx(b, hh, qi, 0);
                    T* dqrow = dq ? dq->data() + dq->idx(qb, hh, qi, 0) : nullptr;
                    const int dylo = std::max(-rr, -qy), dyhi = std::min(rr, grid_h - 1 - qy);
                    const int dxlo = std::max(-rr, -qx), dxhi = std::min(rr, grid_w - 1 - qx);
                    for (int dy = dylo; dy <= dyhi; ++dy)
                        for (int dx = dxlo; dx <= dxhi; ++dx) {
                            const int mi = (qy + dy) * grid_w + (qx + dx);
                            const T* vrow = v.data() + v.idx(vb, hh, mi, 0);
                            if (dv) {
                                T a = 0;
                                for (int j = 0; j < k; ++j)
                                    a += qrow[j] * e.at(hh, j, dy + rr, dx + rr);
                                T* dvrow = dv->data() + dv->idx(vb, hh, mi, 0);
                                for (int u = 0; u < vd; ++u) dvrow[u] += a * grow[u];
                            }
                            if (dqrow || de) {
                                T scal = 0;
                                for (int u = 0; u < vd; ++u) scal += grow[u] * vrow[u];
                                for (int j = 0; j < k; ++j) {
                                    if (dqrow) dqrow[j] += scal * e.at(hh, j, dy + rr, dx + rr);
                                    if (de) de->at(hh, j, dy + rr, dx + rr) += scal * qrow[j];
                                }
                            }
                        }
                }
        }
    }
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    T acc = 0;
    const T* p = x.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) acc += p[i];
    Tensor<T> out(Shape(1, 1, 1, 1));
    out.data()[0] = acc / static_cast<T>(x.numel());
    return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T acc = 0;
    const T* p = x.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) acc += p[i];
    Tensor<T> out(Shape(1, 1, 1, 1));
    out.data()[0] = acc;
    return out;
}

}  // namespace kernels
}  // namespace mostdsa
