#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dash/fft.hpp"

// Naive reference implementations used by the verification suites and the
// test oracles. Everything here is written as plain summation loops on
// purpose: none of it may share code with the fast paths it checks.

namespace dash::ref {

// O(n^2) direct-summation DFT, unnormalized, same sign convention as FftPlan.
inline ComplexBuffer direct_dft(const ComplexBuffer& x, bool inverse = false) {
    const std::size_t n = x.size();
    ComplexBuffer out(n);
    const double two_pi = 6.283185307179586476925287;
    const double sign = inverse ? 1.0 : -1.0;
    for (std::size_t j = 0; j < n; ++j) {
        double sr = 0.0, si = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            double a = sign * two_pi * static_cast<double>(j * t % n) / static_cast<double>(n);
            double c = std::cos(a), s = std::sin(a);
            sr += x.re[t] * c - x.im[t] * s;
            si += x.re[t] * s + x.im[t] * c;
        }
        if (inverse) {
            sr /= static_cast<double>(n);
            si /= static_cast<double>(n);
        }
        out.re[j] = sr;
        out.im[j] = si;
    }
    return out;
}

// Direct circular convolution, kernel of any length (taps beyond n wrap).
// y[i] = sum_j w[j] * x[(i - j) mod n]
inline std::vector<double> circ_conv(const std::vector<double>& x, const std::vector<double>& w) {
    const std::int64_t n = static_cast<std::int64_t>(x.size());
    const std::int64_t m = static_cast<std::int64_t>(w.size());
    std::vector<double> y(x.size(), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < m; ++j) {
            std::int64_t t = (i - j) % n;
            if (t < 0) t += n;
            acc += w[j] * x[t];
        }
        y[i] = acc;
    }
    return y;
}

// Zero-padded causal "same" convolution: y[i] = sum_j w[j] * x[i - j], x
// treated as zero outside [0, n).
inline std::vector<double> same_conv(const std::vector<double>& x, const std::vector<double>& w) {
    const std::int64_t n = static_cast<std::int64_t>(x.size());
    const std::int64_t m = static_cast<std::int64_t>(w.size());
    std::vector<double> y(x.size(), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < m; ++j) {
            std::int64_t t = i - j;
            if (t >= 0 && t < n) acc += w[j] * x[t];
        }
        y[i] = acc;
    }
    return y;
}

// 2D circular convolution on an h*w grid (row-major), kernel kh*kw row-major.
inline std::vector<double> circ_conv2d(const std::vector<double>& x, int h, int w,
                                       const std::vector<double>& ker, int kh, int kw) {
    std::vector<double> y(static_cast<std::size_t>(h) * w, 0.0);
    for (int p = 0; p < h; ++p)
        for (int q = 0; q < w; ++q) {
            double acc = 0.0;
            for (int u = 0; u < kh; ++u)
                for (int v = 0; v < kw; ++v) {
                    int a = (p - u) % h;
                    if (a < 0) a += h;
                    int b = (q - v) % w;
                    if (b < 0) b += w;
                    acc += ker[static_cast<std::size_t>(u) * kw + v] *
                           x[static_cast<std::size_t>(a) * w + b];
                }
            y[static_cast<std::size_t>(p) * w + q] = acc;
        }
    return y;
}

// Literal Kronecker dilation: materialize w (x) P with P = e_0 of length d,
// then trim the trailing d-1 zeros. The production path must match this
// bit for bit.
inline std::vector<double> kron_dilate_literal(const std::vector<double>& w, int d) {
    const std::size_t k = w.size();
    std::vector<double> full(k * static_cast<std::size_t>(d), 0.0);
    for (std::size_t i = 0; i < k; ++i)
        for (int j = 0; j < d; ++j) full[i * d + j] = w[i] * (j == 0 ? 1.0 : 0.0);
    full.resize(k * d - static_cast<std::size_t>(d - 1));
    return full;
}

// 2D variant: P is the d*d matrix with a single 1 in the top-left corner,
// trimming d-1 trailing zeros per axis.
inline std::vector<double> kron_dilate_literal_2d(const std::vector<double>& w, int k, int d) {
    const int full_e = k * d;
    std::vector<double> full(static_cast<std::size_t>(full_e) * full_e, 0.0);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
            for (int u = 0; u < d; ++u)
                for (int v = 0; v < d; ++v)
                    full[static_cast<std::size_t>(i * d + u) * full_e + (j * d + v)] =
                        w[static_cast<std::size_t>(i) * k + j] *
                        ((u == 0 && v == 0) ? 1.0 : 0.0);
    const int e = (k - 1) * d + 1;
    std::vector<double> out(static_cast<std::size_t>(e) * e);
    for (int i = 0; i < e; ++i)
        for (int j = 0; j < e; ++j)
            out[static_cast<std::size_t>(i) * e + j] = full[static_cast<std::size_t>(i) * full_e + j];
    return out;
}

// Scalar Nesterov-momentum SGD with L2 decay folded into the gradient,
// mirrored as an independent simulation for the optimizer tests.
struct ScalarSgd {
    double lr, momentum, weight_decay;
    bool nesterov;
    double velocity = 0.0;

    double step(double p, double g) {
        g += weight_decay * p;
        velocity = momentum * velocity + g;
        double update = nesterov ? g + momentum * velocity : velocity;
        return p - lr * update;
    }
};

}  // namespace dash::ref
