#pragma once

#include <memory>
#include <stdexcept>
#include <vector>

#include "dash/conv.hpp"

// Strategy engines for the aggregated convolution and the graph nodes that
// wrap them. The 1D path is the primary one; 2D mirrors it at toy scale.

namespace dash::detail {

// FFT length policy: length n straight when the task is circular and n is a
// power of two; otherwise extend so the linear convolution of the merged
// kernel fits, and wrap the result back explicitly.
inline std::size_t dash_fft_len(int n, int lm, PaddingMode mode) {
    if (mode == PaddingMode::Circular && is_pow2(static_cast<std::size_t>(n)))
        return static_cast<std::size_t>(n);
    return next_pow2(static_cast<std::size_t>(n) + static_cast<std::size_t>(lm) - 1);
}

struct AggSaved {
    // mixed-weights / dash
    std::vector<double> merged;
    int lm = 0, lh = 0, lw = 0;
    // dash spectra
    std::size_t m = 0, mh = 0, mw = 0;
    std::vector<double> xre, xim;  // [B][c_in][m]   (or mh*mw)
    std::vector<double> wre, wim;  // [c_out][c_in][m]
};

// ---------------------------------------------------------------------------
// 1D engines. x: [B][c_in][n], y: [B][c_out][n], alpha: [ops].
// ---------------------------------------------------------------------------

inline void mr1d_forward(const double* x, int B, int cin, int n, const KernelBank& bank,
                         const double* alpha, PaddingMode mode, double* y) {
    const int cout = bank.c_out;
    std::vector<double> tmp(static_cast<std::size_t>(n));
    for (std::size_t e = 0; e < bank.entries.size(); ++e) {
        const BankEntry& be = bank.entries[e];
        const double a = alpha[e];
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < cout; ++o) {
                std::fill(tmp.begin(), tmp.end(), 0.0);
                for (int c = 0; c < cin; ++c) {
                    const double* xp = x + (static_cast<std::size_t>(b) * cin + c) * n;
                    const double* w = be.weight.data.data() + (static_cast<std::size_t>(o) * cin + c) * be.k;
                    if (mode == PaddingMode::Circular)
                        circ_conv_dilated_accum(xp, n, w, be.k, be.d, 1.0, tmp.data());
                    else
                        same_conv_dilated_accum(xp, n, w, be.k, be.d, 1.0, tmp.data());
                }
                double* yp = y + (static_cast<std::size_t>(b) * cout + o) * n;
                for (int i = 0; i < n; ++i) yp[i] += a * tmp[static_cast<std::size_t>(i)];
            }
    }
}

inline void mr1d_backward(const double* gy, const double* x, int B, int cin, int n,
                          const KernelBank& bank, const double* alpha, PaddingMode mode,
                          double* dx, double* dalpha, const std::vector<double*>& dbank) {
    const int cout = bank.c_out;
    std::vector<double> tmp(static_cast<std::size_t>(n));
    for (std::size_t e = 0; e < bank.entries.size(); ++e) {
        const BankEntry& be = bank.entries[e];
        const double a = alpha[e];
        double da = 0.0;
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < cout; ++o) {
                const double* gp = gy + (static_cast<std::size_t>(b) * cout + o) * n;
                for (int c = 0; c < cin; ++c) {
                    const double* xp = x + (static_cast<std::size_t>(b) * cin + c) * n;
                    const double* w = be.weight.data.data() + (static_cast<std::size_t>(o) * cin + c) * be.k;
                    std::fill(tmp.begin(), tmp.end(), 0.0);
                    if (mode == PaddingMode::Circular)
                        circ_corr_dilated_accum(gp, n, w, be.k, be.d, 1.0, tmp.data());
                    else
                        same_corr_dilated_accum(gp, n, w, be.k, be.d, 1.0, tmp.data());
                    if (dx) {
                        double* dxp = dx + (static_cast<std::size_t>(b) * cin + c) * n;
                        for (int i = 0; i < n; ++i) dxp[i] += a * tmp[static_cast<std::size_t>(i)];
                    }
                    if (dalpha) {
                        double dot = 0.0;
                        for (int i = 0; i < n; ++i) dot += tmp[static_cast<std::size_t>(i)] * xp[i];
                        da += dot;
                    }
                    if (dbank[e]) {
                        double* dw = dbank[e] + (static_cast<std::size_t>(o) * cin + c) * be.k;
                        if (mode == PaddingMode::Circular)
                            circ_kernel_grad_dilated(gp, xp, n, be.k, be.d, a, dw);
                        else
                            same_kernel_grad_dilated(gp, xp, n, be.k, be.d, a, dw);
                    }
                }
            }
        if (dalpha) dalpha[e] += da;
    }
}

inline void mw1d_forward(const double* x, int B, int cin, int n, const KernelBank& bank,
                         const double* alpha, const SearchSpace& space, PaddingMode mode,
                         DilationImpl impl, double* y, AggSaved& sv) {
    build_merged_1d(bank, alpha, space, n, mode, impl, sv.merged, sv.lm);
    const int cout = bank.c_out;
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < cout; ++o) {
            double* yp = y + (static_cast<std::size_t>(b) * cout + o) * n;
            for (int c = 0; c < cin; ++c) {
                const double* xp = x + (static_cast<std::size_t>(b) * cin + c) * n;
                const double* m = sv.merged.data() + (static_cast<std::size_t>(o) * cin + c) * sv.lm;
                if (mode == PaddingMode::Circular)
                    circ_conv_dense_accum(xp, n, m, sv.lm, yp);
                else
                    same_conv_dense_accum(xp, n, m, sv.lm, yp);
            }
        }
}

inline void mw1d_backward(const double* gy, const double* x, int B, int cin, int n,
                          const KernelBank& bank, const double* alpha, const SearchSpace& space,
                          PaddingMode mode, double* dx, double* dalpha,
                          const std::vector<double*>& dbank, const AggSaved& sv) {
    const int cout = bank.c_out;
    std::vector<double> dmerged(sv.merged.size(), 0.0);
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < cout; ++o) {
            const double* gp = gy + (static_cast<std::size_t>(b) * cout + o) * n;
            for (int c = 0; c < cin; ++c) {
                const double* xp = x + (static_cast<std::size_t>(b) * cin + c) * n;
                if (dx) {
                    const double* m = sv.merged.data() + (static_cast<std::size_t>(o) * cin + c) * sv.lm;
                    double* dxp = dx + (static_cast<std::size_t>(b) * cin + c) * n;
                    if (mode == PaddingMode::Circular)
                        circ_corr_dense_accum(gp, n, m, sv.lm, dxp);
                    else
                        same_corr_dense_accum(gp, n, m, sv.lm, dxp);
                }
                double* dm = dmerged.data() + (static_cast<std::size_t>(o) * cin + c) * sv.lm;
                if (mode == PaddingMode::Circular)
                    circ_kernel_grad_dense(gp, xp, n, sv.lm, dm);
                else
                    same_kernel_grad_dense(gp, xp, n, sv.lm, dm);
            }
        }
    merged_backward_1d(bank, alpha, space, n, mode, dmerged, sv.lm, dalpha, dbank);
}

inline void dash1d_forward(const double* x, int B, int cin, int n, const KernelBank& bank,
                           const double* alpha, const SearchSpace& space, PaddingMode mode,
                           DilationImpl impl, double* y, AggSaved& sv) {
    build_merged_1d(bank, alpha, space, n, mode, impl, sv.merged, sv.lm);
    const int cout = bank.c_out;
    sv.m = dash_fft_len(n, sv.lm, mode);
    const std::size_t m = sv.m;
    const FftPlan& plan = plan_for(m);
    ComplexBuffer buf(m);

    // input spectra, one transform per (batch, c_in)
    sv.xre.assign(static_cast<std::size_t>(B) * cin * m, 0.0);
    sv.xim.assign(sv.xre.size(), 0.0);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < cin; ++c) {
            const double* xp = x + (static_cast<std::size_t>(b) * cin + c) * n;
            std::fill(buf.re.begin(), buf.re.end(), 0.0);
            std::fill(buf.im.begin(), buf.im.end(), 0.0);
            std::copy(xp, xp + n, buf.re.begin());
            plan.forward(buf);
            std::size_t base = (static_cast<std::size_t>(b) * cin + c) * m;
            std::copy(buf.re.begin(), buf.re.end(), sv.xre.begin() + base);
            std::copy(buf.im.begin(), buf.im.end(), sv.xim.begin() + base);
            ++conv_counters().input_ffts;
        }

    // kernel spectra, one transform per (c_out, c_in) -- batch independent
    sv.wre.assign(static_cast<std::size_t>(cout) * cin * m, 0.0);
    sv.wim.assign(sv.wre.size(), 0.0);
    for (int o = 0; o < cout; ++o)
        for (int c = 0; c < cin; ++c) {
            const double* mm = sv.merged.data() + (static_cast<std::size_t>(o) * cin + c) * sv.lm;
            std::fill(buf.re.begin(), buf.re.end(), 0.0);
            std::fill(buf.im.begin(), buf.im.end(), 0.0);
            std::copy(mm, mm + sv.lm, buf.re.begin());
            plan.forward(buf);
            std::size_t base = (static_cast<std::size_t>(o) * cin + c) * m;
            std::copy(buf.re.begin(), buf.re.end(), sv.wre.begin() + base);
            std::copy(buf.im.begin(), buf.im.end(), sv.wim.begin() + base);
            ++conv_counters().kernel_ffts;
        }

    // channel sum in the frequency domain, then one inverse per (batch, c_out)
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < cout; ++o) {
            std::fill(buf.re.begin(), buf.re.end(), 0.0);
            std::fill(buf.im.begin(), buf.im.end(), 0.0);
            for (int c = 0; c < cin; ++c) {
                const double* xr = sv.xre.data() + (static_cast<std::size_t>(b) * cin + c) * m;
                const double* xi = sv.xim.data() + (static_cast<std::size_t>(b) * cin + c) * m;
                const double* wr = sv.wre.data() + (static_cast<std::size_t>(o) * cin + c) * m;
                const double* wi = sv.wim.data() + (static_cast<std::size_t>(o) * cin + c) * m;
                for (std::size_t i = 0; i < m; ++i) {
                    buf.re[i] += xr[i] * wr[i] - xi[i] * wi[i];
                    buf.im[i] += xr[i] * wi[i] + xi[i] * wr[i];
                }
            }
            plan.inverse(buf);
            ++conv_counters().inverse_ffts;
            double* yp = y + (static_cast<std::size_t>(b) * cout + o) * n;
            if (mode == PaddingMode::Circular) {
                for (std::size_t u = 0; u < m; ++u) yp[u % static_cast<std::size_t>(n)] += buf.re[u];
            } else {
                for (int i = 0; i < n; ++i) yp[i] += buf.re[static_cast<std::size_t>(i)];
            }
        }
}

inline void dash1d_backward(const double* gy, const double* /*x*/, int B, int cin, int n,
                            const KernelBank& bank, const double* alpha, const SearchSpace& space,
                            PaddingMode mode, double* dx, double* dalpha,
                            const std::vector<double*>& dbank, const AggSaved& sv) {
    const int cout = bank.c_out;
    const std::size_t m = sv.m;
    const FftPlan& plan = plan_for(m);
    ComplexBuffer buf(m);

    // spectra of the upstream gradient; the embedding is the adjoint of the
    // fold (circular) or the truncation (zero-padded)
    std::vector<double> gre(static_cast<std::size_t>(B) * cout * m, 0.0);
    std::vector<double> gim(gre.size(), 0.0);
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < cout; ++o) {
            const double* gp = gy + (static_cast<std::size_t>(b) * cout + o) * n;
            std::fill(buf.im.begin(), buf.im.end(), 0.0);
            if (mode == PaddingMode::Circular) {
                for (std::size_t u = 0; u < m; ++u) buf.re[u] = gp[u % static_cast<std::size_t>(n)];
            } else {
                std::fill(buf.re.begin(), buf.re.end(), 0.0);
                std::copy(gp, gp + n, buf.re.begin());
            }
            plan.forward(buf);
            std::size_t base = (static_cast<std::size_t>(b) * cout + o) * m;
            std::copy(buf.re.begin(), buf.re.end(), gre.begin() + base);
            std::copy(buf.im.begin(), buf.im.end(), gim.begin() + base);
            ++conv_counters().backward_ffts;
        }

    if (dx) {
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < cin; ++c) {
                std::fill(buf.re.begin(), buf.re.end(), 0.0);
                std::fill(buf.im.begin(), buf.im.end(), 0.0);
                for (int o = 0; o < cout; ++o) {
                    const double* gr = gre.data() + (static_cast<std::size_t>(b) * cout + o) * m;
                    const double* gi = gim.data() + (static_cast<std::size_t>(b) * cout + o) * m;
                    const double* wr = sv.wre.data() + (static_cast<std::size_t>(o) * cin + c) * m;
                    const double* wi = sv.wim.data() + (static_cast<std::size_t>(o) * cin + c) * m;
                    // G * conj(W)
                    for (std::size_t i = 0; i < m; ++i) {
                        buf.re[i] += gr[i] * wr[i] + gi[i] * wi[i];
                        buf.im[i] += gi[i] * wr[i] - gr[i] * wi[i];
                    }
                }
                plan.inverse(buf);
                ++conv_counters().backward_ffts;
                double* dxp = dx + (static_cast<std::size_t>(b) * cin + c) * n;
                for (int i = 0; i < n; ++i) dxp[i] += buf.re[static_cast<std::size_t>(i)];
            }
    }

    bool want_kernel = dalpha != nullptr;
    for (double* p : dbank) want_kernel = want_kernel || p != nullptr;
    if (want_kernel) {
        std::vector<double> dmerged(sv.merged.size(), 0.0);
        for (int o = 0; o < cout; ++o)
            for (int c = 0; c < cin; ++c) {
                std::fill(buf.re.begin(), buf.re.end(), 0.0);
                std::fill(buf.im.begin(), buf.im.end(), 0.0);
                for (int b = 0; b < B; ++b) {
                    const double* gr = gre.data() + (static_cast<std::size_t>(b) * cout + o) * m;
                    const double* gi = gim.data() + (static_cast<std::size_t>(b) * cout + o) * m;
                    const double* xr = sv.xre.data() + (static_cast<std::size_t>(b) * cin + c) * m;
                    const double* xi = sv.xim.data() + (static_cast<std::size_t>(b) * cin + c) * m;
                    // G * conj(X)
                    for (std::size_t i = 0; i < m; ++i) {
                        buf.re[i] += gr[i] * xr[i] + gi[i] * xi[i];
                        buf.im[i] += gi[i] * xr[i] - gr[i] * xi[i];
                    }
                }
                plan.inverse(buf);
                ++conv_counters().backward_ffts;
                double* dm = dmerged.data() + (static_cast<std::size_t>(o) * cin + c) * sv.lm;
                for (int t = 0; t < sv.lm; ++t) dm[t] += buf.re[static_cast<std::size_t>(t)];
            }
        merged_backward_1d(bank, alpha, space, n, mode, dmerged, sv.lm, dalpha, dbank);
    }
}

// ---------------------------------------------------------------------------
// 2D engines (toy scale). x: [B][c_in][h][w].
// ---------------------------------------------------------------------------

inline void mr2d_forward(const double* x, int B, int cin, int h, int w, const KernelBank& bank,
                         const double* alpha, PaddingMode mode, double* y) {
    const int cout = bank.c_out;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> tmp(hw);
    for (std::size_t e = 0; e < bank.entries.size(); ++e) {
        const BankEntry& be = bank.entries[e];
        const double a = alpha[e];
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < cout; ++o) {
                std::fill(tmp.begin(), tmp.end(), 0.0);
                for (int c = 0; c < cin; ++c) {
                    const double* xp = x + (static_cast<std::size_t>(b) * cin + c) * hw;
                    const double* ww =
                        be.weight.data.data() + (static_cast<std::size_t>(o) * cin + c) * be.k * be.k;
                    if (mode == PaddingMode::Circular)
                        circ_conv2d_dilated_accum(xp, h, w, ww, be.k, be.d, 1.0, tmp.data());
                    else
                        same_conv2d_dilated_accum(xp, h, w, ww, be.k, be.d, 1.0, tmp.data());
                }
                double* yp = y + (static_cast<std::size_t>(b) * cout + o) * hw;
                for (std::size_t i = 0; i < hw; ++i) yp[i] += a * tmp[i];
            }
    }
}

inline void mr2d_backward(const double* gy, const double* x, int B, int cin, int h, int w,
                          const KernelBank& bank, const double* alpha, PaddingMode mode,
                          double* dx, double* dalpha, const std::vector<double*>& dbank) {
    const int cout = bank.c_out;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> tmp(hw);
    for (std::size_t e = 0; e < bank.entries.size(); ++e) {
        const BankEntry& be = bank.entries[e];
        const double a = alpha[e];
        double da = 0.0;
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < cout; ++o) {
                const double* gp = gy + (static_cast<std::size_t>(b) * cout + o) * hw;
                for (int c = 0; c < cin; ++c) {
                    const double* xp = x + (static_cast<std::size_t>(b) * cin + c) * hw;
                    const double* ww =
                        be.weight.data.data() + (static_cast<std::size_t>(o) * cin + c) * be.k * be.k;
                    std::fill(tmp.begin(), tmp.end(), 0.0);
                    if (mode == PaddingMode::Circular)
                        circ_corr2d_dilated_accum(gp, h, w, ww, be.k, be.d, 1.0, tmp.data());
                    else
                        same_corr2d_dilated_accum(gp, h, w, ww, be.k, be.d, 1.0, tmp.data());
                    if (dx) {
                        double* dxp = dx + (static_cast<std::size_t>(b) * cin + c) * hw;
                        for (std::size_t i = 0; i < hw; ++i) dxp[i] += a * tmp[i];
                    }
                    if (dalpha) {
                        double dot = 0.0;
                        for (std::size_t i = 0; i < hw; ++i) dot += tmp[i] * xp[i];
                        da += dot;
                    }
                    if (dbank[e]) {
                        double* dw = dbank[e] + (static_cast<std::size_t>(o) * cin + c) * be.k * be.k;
                        if (mode == PaddingMode::Circular)
                            circ_kernel_grad2d_dilated(gp, xp, h, w, be.k, be.d, a, dw);
                        else
                            same_kernel_grad2d_dilated(gp, xp, h, w, be.k, be.d, a, dw);
                    }
                }
            }
        if (dalpha) dalpha[e] += da;
    }
}

inline void mw2d_forward(const double* x, int B, int cin, int h, int w, const KernelBank& bank,
                         const double* alpha, const SearchSpace& space, PaddingMode mode,
                         DilationImpl impl, double* y, AggSaved& sv) {
    build_merged_2d(bank, alpha, space, h, w, mode, impl, sv.merged, sv.lh, sv.lw);
    const int cout = bank.c_out;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    // walk the dense merged kernel with the stride-1 2D loops
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < cout; ++o) {
            double* yp = y + (static_cast<std::size_t>(b) * cout + o) * hw;
            for (int c = 0; c < cin; ++c) {
                const double* xp = x + (static_cast<std::size_t>(b) * cin + c) * hw;
                const double* m =
                    sv.merged.data() + (static_cast<std::size_t>(o) * cin + c) * sv.lh * sv.lw;
                for (int u = 0; u < sv.lh; ++u)
                    for (int v = 0; v < sv.lw; ++v) {
                        const double wv = m[static_cast<std::size_t>(u) * sv.lw + v];
                        for (int p = 0; p < h; ++p) {
                            int tp = mode == PaddingMode::Circular ? wrap(p + u, h) : p + u;
                            if (tp >= h) break;
                            for (int q = 0; q < w; ++q) {
                                int tq = mode == PaddingMode::Circular ? wrap(q + v, w) : q + v;
                                if (tq >= w) break;
                                yp[static_cast<std::size_t>(tp) * w + tq] +=
                                    wv * xp[static_cast<std::size_t>(p) * w + q];
                            }
                        }
                    }
            }
        }
}

inline void mw2d_backward(const double* gy, const double* x, int B, int cin, int h, int w,
                          const KernelBank& bank, const double* alpha, const SearchSpace& space,
                          PaddingMode mode, double* dx, double* dalpha,
                          const std::vector<double*>& dbank, const AggSaved& sv) {
    const int cout = bank.c_out;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> dmerged(sv.merged.size(), 0.0);
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < cout; ++o) {
            const double* gp = gy + (static_cast<std::size_t>(b) * cout + o) * hw;
            for (int c = 0; c < cin; ++c) {
                const double* xp = x + (static_cast<std::size_t>(b) * cin + c) * hw;
                const double* m =
                    sv.merged.data() + (static_cast<std::size_t>(o) * cin + c) * sv.lh * sv.lw;
                double* dm = dmerged.data() + (static_cast<std::size_t>(o) * cin + c) * sv.lh * sv.lw;
                for (int u = 0; u < sv.lh; ++u)
                    for (int v = 0; v < sv.lw; ++v) {
                        const double wv = m[static_cast<std::size_t>(u) * sv.lw + v];
                        double acc = 0.0;
                        for (int p = 0; p < h; ++p) {
                            int tp = mode == PaddingMode::Circular ? wrap(p + u, h) : p + u;
                            if (tp >= h) break;
                            for (int q = 0; q < w; ++q) {
                                int tq = mode == PaddingMode::Circular ? wrap(q + v, w) : q + v;
                                if (tq >= w) break;
                                const double gval = gp[static_cast<std::size_t>(tp) * w + tq];
                                if (dx) dx[(static_cast<std::size_t>(b) * cin + c) * hw +
                                           static_cast<std::size_t>(p) * w + q] += wv * gval;
                                acc += gval * xp[static_cast<std::size_t>(p) * w + q];
                            }
                        }
                        dm[static_cast<std::size_t>(u) * sv.lw + v] += acc;
                    }
            }
        }
    merged_backward_2d(bank, alpha, space, h, w, mode, dmerged, sv.lh, sv.lw, dalpha, dbank);
}

inline void dash2d_forward(const double* x, int B, int cin, int h, int w, const KernelBank& bank,
                           const double* alpha, const SearchSpace& space, PaddingMode mode,
                           DilationImpl impl, double* y, AggSaved& sv) {
    build_merged_2d(bank, alpha, space, h, w, mode, impl, sv.merged, sv.lh, sv.lw);
    const int cout = bank.c_out;
    sv.mh = dash_fft_len(h, sv.lh, mode);
    sv.mw = dash_fft_len(w, sv.lw, mode);
    const FftPlan& ph = plan_for(sv.mh);
    const FftPlan& pw = plan_for(sv.mw);
    const std::size_t mm = sv.mh * sv.mw;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> re(mm), im(mm);

    sv.xre.assign(static_cast<std::size_t>(B) * cin * mm, 0.0);
    sv.xim.assign(sv.xre.size(), 0.0);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < cin; ++c) {
            const double* xp = x + (static_cast<std::size_t>(b) * cin + c) * hw;
            std::fill(re.begin(), re.end(), 0.0);
            std::fill(im.begin(), im.end(), 0.0);
            for (int p = 0; p < h; ++p)
                for (int q = 0; q < w; ++q)
                    re[static_cast<std::size_t>(p) * sv.mw + q] = xp[static_cast<std::size_t>(p) * w + q];
            fft2d(ph, pw, re, im, false);
            std::size_t base = (static_cast<std::size_t>(b) * cin + c) * mm;
            std::copy(re.begin(), re.end(), sv.xre.begin() + base);
            std::copy(im.begin(), im.end(), sv.xim.begin() + base);
            ++conv_counters().input_ffts;
        }

    sv.wre.assign(static_cast<std::size_t>(cout) * cin * mm, 0.0);
    sv.wim.assign(sv.wre.size(), 0.0);
    for (int o = 0; o < cout; ++o)
        for (int c = 0; c < cin; ++c) {
            const double* m = sv.merged.data() + (static_cast<std::size_t>(o) * cin + c) * sv.lh * sv.lw;
            std::fill(re.begin(), re.end(), 0.0);
            std::fill(im.begin(), im.end(), 0.0);
            for (int u = 0; u < sv.lh; ++u)
                for (int v = 0; v < sv.lw; ++v)
                    re[static_cast<std::size_t>(u) * sv.mw + v] = m[static_cast<std::size_t>(u) * sv.lw + v];
            fft2d(ph, pw, re, im, false);
            std::size_t base = (static_cast<std::size_t>(o) * cin + c) * mm;
            std::copy(re.begin(), re.end(), sv.wre.begin() + base);
            std::copy(im.begin(), im.end(), sv.wim.begin() + base);
            ++conv_counters().kernel_ffts;
        }

    for (int b = 0; b < B; ++b)
        for (int o = 0; o < cout; ++o) {
            std::fill(re.begin(), re.end(), 0.0);
            std::fill(im.begin(), im.end(), 0.0);
            for (int c = 0; c < cin; ++c) {
                const double* xr = sv.xre.data() + (static_cast<std::size_t>(b) * cin + c) * mm;
                const double* xi = sv.xim.data() + (static_cast<std::size_t>(b) * cin + c) * mm;
                const double* wr = sv.wre.data() + (static_cast<std::size_t>(o) * cin + c) * mm;
                const double* wi = sv.wim.data() + (static_cast<std::size_t>(o) * cin + c) * mm;
                for (std::size_t i = 0; i < mm; ++i) {
                    re[i] += xr[i] * wr[i] - xi[i] * wi[i];
                    im[i] += xr[i] * wi[i] + xi[i] * wr[i];
                }
            }
            fft2d(ph, pw, re, im, true);
            ++conv_counters().inverse_ffts;
            double* yp = y + (static_cast<std::size_t>(b) * cout + o) * hw;
            if (mode == PaddingMode::Circular) {
                for (std::size_t u = 0; u < sv.mh; ++u)
                    for (std::size_t v = 0; v < sv.mw; ++v)
                        yp[(u % static_cast<std::size_t>(h)) * w + (v % static_cast<std::size_t>(w))] +=
                            re[u * sv.mw + v];
            } else {
                for (int p = 0; p < h; ++p)
                    for (int q = 0; q < w; ++q)
                        yp[static_cast<std::size_t>(p) * w + q] += re[static_cast<std::size_t>(p) * sv.mw + q];
            }
        }
}

inline void dash2d_backward(const double* gy, const double* /*x*/, int B, int cin, int h, int w,
                            const KernelBank& bank, const double* alpha, const SearchSpace& space,
                            PaddingMode mode, double* dx, double* dalpha,
                            const std::vector<double*>& dbank, const AggSaved& sv) {
    const int cout = bank.c_out;
    const FftPlan& ph = plan_for(sv.mh);
    const FftPlan& pw = plan_for(sv.mw);
    const std::size_t mm = sv.mh * sv.mw;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> re(mm), im(mm);

    std::vector<double> gre(static_cast<std::size_t>(B) * cout * mm, 0.0);
    std::vector<double> gim(gre.size(), 0.0);
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < cout; ++o) {
            const double* gp = gy + (static_cast<std::size_t>(b) * cout + o) * hw;
            std::fill(im.begin(), im.end(), 0.0);
            if (mode == PaddingMode::Circular) {
                for (std::size_t u = 0; u < sv.mh; ++u)
                    for (std::size_t v = 0; v < sv.mw; ++v)
                        re[u * sv.mw + v] = gp[(u % static_cast<std::size_t>(h)) * w +
                                               (v % static_cast<std::size_t>(w))];
            } else {
                std::fill(re.begin(), re.end(), 0.0);
                for (int p = 0; p < h; ++p)
                    for (int q = 0; q < w; ++q)
                        re[static_cast<std::size_t>(p) * sv.mw + q] = gp[static_cast<std::size_t>(p) * w + q];
            }
            fft2d(ph, pw, re, im, false);
            std::size_t base = (static_cast<std::size_t>(b) * cout + o) * mm;
            std::copy(re.begin(), re.end(), gre.begin() + base);
            std::copy(im.begin(), im.end(), gim.begin() + base);
            ++conv_counters().backward_ffts;
        }

    if (dx) {
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < cin; ++c) {
                std::fill(re.begin(), re.end(), 0.0);
                std::fill(im.begin(), im.end(), 0.0);
                for (int o = 0; o < cout; ++o) {
                    const double* gr = gre.data() + (static_cast<std::size_t>(b) * cout + o) * mm;
                    const double* gi = gim.data() + (static_cast<std::size_t>(b) * cout + o) * mm;
                    const double* wr = sv.wre.data() + (static_cast<std::size_t>(o) * cin + c) * mm;
                    const double* wi = sv.wim.data() + (static_cast<std::size_t>(o) * cin + c) * mm;
                    for (std::size_t i = 0; i < mm; ++i) {
                        re[i] += gr[i] * wr[i] + gi[i] * wi[i];
                        im[i] += gi[i] * wr[i] - gr[i] * wi[i];
                    }
                }
                fft2d(ph, pw, re, im, true);
                ++conv_counters().backward_ffts;
                double* dxp = dx + (static_cast<std::size_t>(b) * cin + c) * hw;
                for (int p = 0; p < h; ++p)
                    for (int q = 0; q < w; ++q)
                        dxp[static_cast<std::size_t>(p) * w + q] += re[static_cast<std::size_t>(p) * sv.mw + q];
            }
    }

    bool want_kernel = dalpha != nullptr;
    for (double* p : dbank) want_kernel = want_kernel || p != nullptr;
    if (want_kernel) {
        std::vector<double> dmerged(sv.merged.size(), 0.0);
        for (int o = 0; o < cout; ++o)
            for (int c = 0; c < cin; ++c) {
                std::fill(re.begin(), re.end(), 0.0);
                std::fill(im.begin(), im.end(), 0.0);
                for (int b = 0; b < B; ++b) {
                    const double* gr = gre.data() + (static_cast<std::size_t>(b) * cout + o) * mm;
                    const double* gi = gim.data() + (static_cast<std::size_t>(b) * cout + o) * mm;
                    const double* xr = sv.xre.data() + (static_cast<std::size_t>(b) * cin + c) * mm;
                    const double* xi = sv.xim.data() + (static_cast<std::size_t>(b) * cin + c) * mm;
                    for (std::size_t i = 0; i < mm; ++i) {
                        re[i] += gr[i] * xr[i] + gi[i] * xi[i];
                        im[i] += gi[i] * xr[i] - gr[i] * xi[i];
                    }
                }
                fft2d(ph, pw, re, im, true);
                ++conv_counters().backward_ffts;
                double* dm = dmerged.data() + (static_cast<std::size_t>(o) * cin + c) * sv.lh * sv.lw;
                for (int u = 0; u < sv.lh; ++u)
                    for (int v = 0; v < sv.lw; ++v)
                        dm[static_cast<std::size_t>(u) * sv.lw + v] += re[static_cast<std::size_t>(u) * sv.mw + v];
            }
        merged_backward_2d(bank, alpha, space, h, w, mode, dmerged, sv.lh, sv.lw, dalpha, dbank);
    }
}

}  // namespace dash::detail

namespace dash {

// ---------------------------------------------------------------------------
// Graph nodes
// ---------------------------------------------------------------------------

// The aggregated convolution as one tape node: inputs are x and the simplex
// weights; the bank tensors enter as leaves so the optimizer sees their
// gradients directly.
inline Var aggconv(Graph& g, Var x, KernelBank& bank, Var alpha, const SearchSpace& space,
                   Strategy strategy, DilationImpl impl, PaddingMode mode) {
    const Shape& xs = g.shape(x);
    const bool two_d = bank.dims == 2;
    if (xs.size() != (two_d ? 4u : 3u))
        throw std::invalid_argument("aggconv: input rank does not match bank dims");
    if (xs[1] != bank.c_in) throw std::invalid_argument("aggconv: channel mismatch");
    if (g.shape(alpha) != Shape{space.num_ops()})
        throw std::invalid_argument("aggconv: alpha length != |K||D|");
    if (static_cast<int>(bank.entries.size()) != space.num_ops())
        throw std::invalid_argument("aggconv: bank does not match space");

    const int B = xs[0], cin = xs[1];
    const int n = xs[2];
    const int h = two_d ? xs[2] : 0, w = two_d ? xs[3] : 0;

    auto wvars = std::make_shared<std::vector<Var>>();
    bool bank_grad = false;
    for (auto& e : bank.entries) {
        wvars->push_back(g.param(e.weight));
        bank_grad = bank_grad || e.weight.requires_grad;
    }
    bool ng = g.needs_grad(x) || g.needs_grad(alpha) || bank_grad;

    Shape out_shape = two_d ? Shape{B, bank.c_out, h, w} : Shape{B, bank.c_out, n};
    Var out = g.make_node(out_shape, ng, nullptr);
    auto saved = std::make_shared<detail::AggSaved>();

    ++conv_counters().strategy_forwards;
    const double* xp = g.value(x).data();
    const double* ap = g.value(alpha).data();
    double* yp = g.value_mut(out).data();
    KernelBank* bank_ptr = &bank;

    if (!two_d) {
        switch (strategy) {
            case Strategy::MixedResults: detail::mr1d_forward(xp, B, cin, n, bank, ap, mode, yp); break;
            case Strategy::MixedWeights:
                detail::mw1d_forward(xp, B, cin, n, bank, ap, space, mode, impl, yp, *saved);
                break;
            case Strategy::DashFourier:
                detail::dash1d_forward(xp, B, cin, n, bank, ap, space, mode, impl, yp, *saved);
                break;
        }
    } else {
        switch (strategy) {
            case Strategy::MixedResults: detail::mr2d_forward(xp, B, cin, h, w, bank, ap, mode, yp); break;
            case Strategy::MixedWeights:
                detail::mw2d_forward(xp, B, cin, h, w, bank, ap, space, mode, impl, yp, *saved);
                break;
            case Strategy::DashFourier:
                detail::dash2d_forward(xp, B, cin, h, w, bank, ap, space, mode, impl, yp, *saved);
                break;
        }
    }

    const SearchSpace* space_ptr = &space;
    g.set_backprop(out, [out, x, alpha, wvars, saved, bank_ptr, space_ptr, strategy, mode, B, cin,
                         n, h, w, two_d](Graph& gg) {
        const double* gy = gg.grad(out).data();
        const double* xv = gg.value(x).data();
        const double* av = gg.value(alpha).data();
        double* dx = gg.needs_grad(x) ? gg.grad_mut(x).data() : nullptr;
        double* dal = gg.needs_grad(alpha) ? gg.grad_mut(alpha).data() : nullptr;
        std::vector<double*> dbank(wvars->size(), nullptr);
        for (std::size_t i = 0; i < wvars->size(); ++i)
            if (gg.needs_grad((*wvars)[i])) dbank[i] = gg.grad_mut((*wvars)[i]).data();
        if (!two_d) {
            switch (strategy) {
                case Strategy::MixedResults:
                    detail::mr1d_backward(gy, xv, B, cin, n, *bank_ptr, av, mode, dx, dal, dbank);
                    break;
                case Strategy::MixedWeights:
                    detail::mw1d_backward(gy, xv, B, cin, n, *bank_ptr, av, *space_ptr, mode, dx, dal,
                                          dbank, *saved);
                    break;
                case Strategy::DashFourier:
                    detail::dash1d_backward(gy, xv, B, cin, n, *bank_ptr, av, *space_ptr, mode, dx,
                                            dal, dbank, *saved);
                    break;
            }
        } else {
            switch (strategy) {
                case Strategy::MixedResults:
                    detail::mr2d_backward(gy, xv, B, cin, h, w, *bank_ptr, av, mode, dx, dal, dbank);
                    break;
                case Strategy::MixedWeights:
                    detail::mw2d_backward(gy, xv, B, cin, h, w, *bank_ptr, av, *space_ptr, mode, dx,
                                          dal, dbank, *saved);
                    break;
                case Strategy::DashFourier:
                    detail::dash2d_backward(gy, xv, B, cin, h, w, *bank_ptr, av, *space_ptr, mode, dx,
                                            dal, dbank, *saved);
                    break;
            }
        }
    });
    return out;
}

// Plain single-(k,d) convolution used by discretized models and pointwise
// shortcuts. weight: [c_out, c_in, k] (1D) or [c_out, c_in, k, k] (2D).
inline Var single_conv(Graph& g, Var x, Tensor& weight, int d, PaddingMode mode) {
    const Shape& xs = g.shape(x);
    const Shape& ws = weight.shape;
    const bool two_d = ws.size() == 4;
    if (xs.size() != (two_d ? 4u : 3u)) throw std::invalid_argument("single_conv: rank mismatch");
    if (xs[1] != ws[1]) throw std::invalid_argument("single_conv: channel mismatch");
    if (d < 1) throw std::invalid_argument("single_conv: dilation must be >= 1");
    const int B = xs[0], cin = xs[1], cout = ws[0], k = ws[2];
    const int n = xs[2];
    const int h = two_d ? xs[2] : 0, w = two_d ? xs[3] : 0;

    Var wv = g.param(weight);
    bool ng = g.needs_grad(x) || weight.requires_grad;
    Shape out_shape = two_d ? Shape{B, cout, h, w} : Shape{B, cout, n};
    Var out = g.make_node(out_shape, ng, nullptr);

    const double* xp = g.value(x).data();
    const double* wp = g.value(wv).data();
    double* yp = g.value_mut(out).data();
    const std::size_t hw = two_d ? static_cast<std::size_t>(h) * w : static_cast<std::size_t>(n);
    const std::size_t ksz = two_d ? static_cast<std::size_t>(k) * k : static_cast<std::size_t>(k);

    for (int b = 0; b < B; ++b)
        for (int o = 0; o < cout; ++o) {
            double* yo = yp + (static_cast<std::size_t>(b) * cout + o) * hw;
            for (int c = 0; c < cin; ++c) {
                const double* xc = xp + (static_cast<std::size_t>(b) * cin + c) * hw;
                const double* wk = wp + (static_cast<std::size_t>(o) * cin + c) * ksz;
                if (!two_d) {
                    if (mode == PaddingMode::Circular)
                        detail::circ_conv_dilated_accum(xc, n, wk, k, d, 1.0, yo);
                    else
                        detail::same_conv_dilated_accum(xc, n, wk, k, d, 1.0, yo);
                } else {
                    if (mode == PaddingMode::Circular)
                        detail::circ_conv2d_dilated_accum(xc, h, w, wk, k, d, 1.0, yo);
                    else
                        detail::same_conv2d_dilated_accum(xc, h, w, wk, k, d, 1.0, yo);
                }
            }
        }

    g.set_backprop(out, [out, x, wv, B, cin, cout, k, d, n, h, w, two_d, mode, hw, ksz](Graph& gg) {
        const double* gy = gg.grad(out).data();
        const double* xv = gg.value(x).data();
        const double* wval = gg.value(wv).data();
        double* dx = gg.needs_grad(x) ? gg.grad_mut(x).data() : nullptr;
        double* dw = gg.needs_grad(wv) ? gg.grad_mut(wv).data() : nullptr;
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < cout; ++o) {
                const double* go = gy + (static_cast<std::size_t>(b) * cout + o) * hw;
                for (int c = 0; c < cin; ++c) {
                    const double* xc = xv + (static_cast<std::size_t>(b) * cin + c) * hw;
                    const double* wk = wval + (static_cast<std::size_t>(o) * cin + c) * ksz;
                    if (!two_d) {
                        if (dx) {
                            double* dxc = dx + (static_cast<std::size_t>(b) * cin + c) * hw;
                            if (mode == PaddingMode::Circular)
                                detail::circ_corr_dilated_accum(go, n, wk, k, d, 1.0, dxc);
                            else
                                detail::same_corr_dilated_accum(go, n, wk, k, d, 1.0, dxc);
                        }
                        if (dw) {
                            double* dwk = dw + (static_cast<std::size_t>(o) * cin + c) * ksz;
                            if (mode == PaddingMode::Circular)
                                detail::circ_kernel_grad_dilated(go, xc, n, k, d, 1.0, dwk);
                            else
                                detail::same_kernel_grad_dilated(go, xc, n, k, d, 1.0, dwk);
                        }
                    } else {
                        if (dx) {
                            double* dxc = dx + (static_cast<std::size_t>(b) * cin + c) * hw;
                            if (mode == PaddingMode::Circular)
                                detail::circ_corr2d_dilated_accum(go, h, w, wk, k, d, 1.0, dxc);
                            else
                                detail::same_corr2d_dilated_accum(go, h, w, wk, k, d, 1.0, dxc);
                        }
                        if (dw) {
                            double* dwk = dw + (static_cast<std::size_t>(o) * cin + c) * ksz;
                            if (mode == PaddingMode::Circular)
                                detail::circ_kernel_grad2d_dilated(go, xc, h, w, k, d, 1.0, dwk);
                            else
                                detail::same_kernel_grad2d_dilated(go, xc, h, w, k, d, 1.0, dwk);
                        }
                    }
                }
            }
    });
    return out;
}

}  // namespace dash
