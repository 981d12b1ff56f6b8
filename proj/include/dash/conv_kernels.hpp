#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "dash/fft.hpp"

// Raw convolution loops shared by the three strategies. Circular indexing is
// split into contiguous segments so the hot loops stay branch-free; the 2D
// variants are toy-scale and use plain modulo indexing.

namespace dash::detail {

// y[i] += s * sum_p w[p] * x[(i - p*d) mod n], taps at stride d (dilated
// kernel walked without materializing the zeros).
inline void circ_conv_dilated_accum(const double* x, int n, const double* w, int k, int d,
                                    double s, double* y) {
    for (int p = 0; p < k; ++p) {
        const double wp = w[p] * s;
        int off = static_cast<int>((static_cast<std::int64_t>(p) * d) % n);
        // y[(i + off) mod n] += wp * x[i]
        int split = n - off;
        for (int i = 0; i < split; ++i) y[i + off] += wp * x[i];
        for (int i = split; i < n; ++i) y[i + off - n] += wp * x[i];
    }
}

// Zero-padded causal variant: y[i] += s * sum_p w[p] * x[i - p*d], x zero
// outside [0, n).
inline void same_conv_dilated_accum(const double* x, int n, const double* w, int k, int d,
                                    double s, double* y) {
    for (int p = 0; p < k; ++p) {
        const double wp = w[p] * s;
        std::int64_t off = static_cast<std::int64_t>(p) * d;
        if (off >= n) break;
        for (int i = 0; i < n - static_cast<int>(off); ++i) y[i + off] += wp * x[i];
    }
}

// dx[t] += s * sum_p w[p] * g[(t + p*d) mod n]  (adjoint of the dilated conv)
inline void circ_corr_dilated_accum(const double* g, int n, const double* w, int k, int d,
                                    double s, double* dx) {
    for (int p = 0; p < k; ++p) {
        const double wp = w[p] * s;
        int off = static_cast<int>((static_cast<std::int64_t>(p) * d) % n);
        int split = n - off;
        for (int t = 0; t < split; ++t) dx[t] += wp * g[t + off];
        for (int t = split; t < n; ++t) dx[t] += wp * g[t + off - n];
    }
}

inline void same_corr_dilated_accum(const double* g, int n, const double* w, int k, int d,
                                    double s, double* dx) {
    for (int p = 0; p < k; ++p) {
        const double wp = w[p] * s;
        std::int64_t off = static_cast<std::int64_t>(p) * d;
        if (off >= n) break;
        for (int t = 0; t < n - static_cast<int>(off); ++t) dx[t] += wp * g[t + off];
    }
}

// dw[p] += s * sum_i g[i] * x[(i - p*d) mod n]
inline void circ_kernel_grad_dilated(const double* g, const double* x, int n, int k, int d,
                                     double s, double* dw) {
    for (int p = 0; p < k; ++p) {
        int off = static_cast<int>((static_cast<std::int64_t>(p) * d) % n);
        double acc = 0.0;
        int split = n - off;
        for (int i = 0; i < split; ++i) acc += g[i + off] * x[i];
        for (int i = split; i < n; ++i) acc += g[i + off - n] * x[i];
        dw[p] += s * acc;
    }
}

inline void same_kernel_grad_dilated(const double* g, const double* x, int n, int k, int d,
                                     double s, double* dw) {
    for (int p = 0; p < k; ++p) {
        std::int64_t off = static_cast<std::int64_t>(p) * d;
        if (off >= n) break;
        double acc = 0.0;
        for (int i = 0; i < n - static_cast<int>(off); ++i) acc += g[i + off] * x[i];
        dw[p] += s * acc;
    }
}

// Dense merged-kernel versions (stride-1 taps, length L <= n).
inline void circ_conv_dense_accum(const double* x, int n, const double* w, int L, double* y) {
    circ_conv_dilated_accum(x, n, w, L, 1, 1.0, y);
}
inline void same_conv_dense_accum(const double* x, int n, const double* w, int L, double* y) {
    same_conv_dilated_accum(x, n, w, L, 1, 1.0, y);
}
inline void circ_corr_dense_accum(const double* g, int n, const double* w, int L, double* dx) {
    circ_corr_dilated_accum(g, n, w, L, 1, 1.0, dx);
}
inline void same_corr_dense_accum(const double* g, int n, const double* w, int L, double* dx) {
    same_corr_dilated_accum(g, n, w, L, 1, 1.0, dx);
}
inline void circ_kernel_grad_dense(const double* g, const double* x, int n, int L, double* dw) {
    circ_kernel_grad_dilated(g, x, n, L, 1, 1.0, dw);
}
inline void same_kernel_grad_dense(const double* g, const double* x, int n, int L, double* dw) {
    same_kernel_grad_dilated(g, x, n, L, 1, 1.0, dw);
}

// ---- 2D (toy scale) ---------------------------------------------------------

inline int wrap(int a, int n) {
    int r = a % n;
    return r < 0 ? r + n : r;
}

// y[p,q] += s * sum_{u,v} w[u,v] * x[(p-u*d) mod h, (q-v*d) mod w], taps k*k.
inline void circ_conv2d_dilated_accum(const double* x, int h, int w, const double* ker, int k,
                                      int d, double s, double* y) {
    for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) {
            const double wv = ker[static_cast<std::size_t>(u) * k + v] * s;
            const int oh = wrap(u * d, h), ow = wrap(v * d, w);
            for (int p = 0; p < h; ++p) {
                const int tp = p + oh >= h ? p + oh - h : p + oh;
                const double* xr = x + static_cast<std::size_t>(p) * w;
                double* yr = y + static_cast<std::size_t>(tp) * w;
                for (int q = 0; q < w; ++q) {
                    const int tq = q + ow >= w ? q + ow - w : q + ow;
                    yr[tq] += wv * xr[q];
                }
            }
        }
}

inline void same_conv2d_dilated_accum(const double* x, int h, int w, const double* ker, int k,
                                      int d, double s, double* y) {
    for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) {
            const double wv = ker[static_cast<std::size_t>(u) * k + v] * s;
            const int oh = u * d, ow = v * d;
            if (oh >= h || ow >= w) continue;
            for (int p = 0; p + oh < h; ++p)
                for (int q = 0; q + ow < w; ++q)
                    y[static_cast<std::size_t>(p + oh) * w + (q + ow)] +=
                        wv * x[static_cast<std::size_t>(p) * w + q];
        }
}

inline void circ_corr2d_dilated_accum(const double* g, int h, int w, const double* ker, int k,
                                      int d, double s, double* dx) {
    for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) {
            const double wv = ker[static_cast<std::size_t>(u) * k + v] * s;
            const int oh = wrap(u * d, h), ow = wrap(v * d, w);
            for (int p = 0; p < h; ++p) {
                const int tp = p + oh >= h ? p + oh - h : p + oh;
                const double* gr = g + static_cast<std::size_t>(tp) * w;
                double* dr = dx + static_cast<std::size_t>(p) * w;
                for (int q = 0; q < w; ++q) {
                    const int tq = q + ow >= w ? q + ow - w : q + ow;
                    dr[q] += wv * gr[tq];
                }
            }
        }
}

inline void same_corr2d_dilated_accum(const double* g, int h, int w, const double* ker, int k,
                                      int d, double s, double* dx) {
    for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) {
            const double wv = ker[static_cast<std::size_t>(u) * k + v] * s;
            const int oh = u * d, ow = v * d;
            if (oh >= h || ow >= w) continue;
            for (int p = 0; p + oh < h; ++p)
                for (int q = 0; q + ow < w; ++q)
                    dx[static_cast<std::size_t>(p) * w + q] +=
                        wv * g[static_cast<std::size_t>(p + oh) * w + (q + ow)];
        }
}

inline void circ_kernel_grad2d_dilated(const double* g, const double* x, int h, int w, int k,
                                       int d, double s, double* dker) {
    for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) {
            const int oh = wrap(u * d, h), ow = wrap(v * d, w);
            double acc = 0.0;
            for (int p = 0; p < h; ++p) {
                const int tp = p + oh >= h ? p + oh - h : p + oh;
                const double* gr = g + static_cast<std::size_t>(tp) * w;
                const double* xr = x + static_cast<std::size_t>(p) * w;
                for (int q = 0; q < w; ++q) {
                    const int tq = q + ow >= w ? q + ow - w : q + ow;
                    acc += gr[tq] * xr[q];
                }
            }
            dker[static_cast<std::size_t>(u) * k + v] += s * acc;
        }
}

inline void same_kernel_grad2d_dilated(const double* g, const double* x, int h, int w, int k,
                                       int d, double s, double* dker) {
    for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) {
            const int oh = u * d, ow = v * d;
            if (oh >= h || ow >= w) continue;
            double acc = 0.0;
            for (int p = 0; p + oh < h; ++p)
                for (int q = 0; q + ow < w; ++q)
                    acc += g[static_cast<std::size_t>(p + oh) * w + (q + ow)] *
                           x[static_cast<std::size_t>(p) * w + q];
            dker[static_cast<std::size_t>(u) * k + v] += s * acc;
        }
}

// ---- 2D FFT helper ------------------------------------------------------------

// In-place 2D transform of an mh*mw row-major complex grid: rows first, then
// columns through a scratch buffer.
inline void fft2d(const FftPlan& ph, const FftPlan& pw, std::vector<double>& re,
                  std::vector<double>& im, bool inverse) {
    const std::size_t mh = ph.length(), mw = pw.length();
    ComplexBuffer row(mw);
    for (std::size_t r = 0; r < mh; ++r) {
        for (std::size_t c = 0; c < mw; ++c) {
            row.re[c] = re[r * mw + c];
            row.im[c] = im[r * mw + c];
        }
        if (inverse)
            pw.inverse(row);
        else
            pw.forward(row);
        for (std::size_t c = 0; c < mw; ++c) {
            re[r * mw + c] = row.re[c];
            im[r * mw + c] = row.im[c];
        }
    }
    ComplexBuffer col(mh);
    for (std::size_t c = 0; c < mw; ++c) {
        for (std::size_t r = 0; r < mh; ++r) {
            col.re[r] = re[r * mw + c];
            col.im[r] = im[r * mw + c];
        }
        if (inverse)
            ph.inverse(col);
        else
            ph.forward(col);
        for (std::size_t r = 0; r < mh; ++r) {
            re[r * mw + c] = col.re[r];
            im[r * mw + c] = col.im[r];
        }
    }
}

// Shared per-thread plan cache; plans are immutable so reads are safe, and
// each thread owns its cache.
inline const FftPlan& plan_for(std::size_t m) {
    thread_local std::vector<std::unique_ptr<FftPlan>> cache;
    for (auto& p : cache)
        if (p->length() == m) return *p;
    cache.push_back(std::make_unique<FftPlan>(m));
    return *cache.back();
}

}  // namespace dash::detail
