#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "dash/tensor.hpp"

namespace dash {

// Split-layout complex vector. Kept as two flat arrays rather than
// std::complex so the butterfly loops stay simple to audit.
struct ComplexBuffer {
    std::vector<double> re;
    std::vector<double> im;

    ComplexBuffer() = default;
    explicit ComplexBuffer(std::size_t n) : re(n, 0.0), im(n, 0.0) {}

    static ComplexBuffer from_real(const std::vector<double>& x) {
        ComplexBuffer b(x.size());
        b.re = x;
        return b;
    }

    std::size_t size() const { return re.size(); }
};

inline bool is_pow2(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

inline int log2_exact(std::size_t n) {
    int l = 0;
    while ((std::size_t{1} << l) < n) ++l;
    return l;
}

// Radix-2 plan: bit-reversal table plus forward twiddles e^{-2*pi*i*j/n}.
// Immutable after construction; transform calls only touch caller buffers.
class FftPlan {
public:
    explicit FftPlan(std::size_t n) : n_(n) {
        if (!is_pow2(n)) throw std::invalid_argument("FftPlan: length must be a power of two");
        levels_ = log2_exact(n);
        rev_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t r = 0;
            for (int b = 0; b < levels_; ++b)
                if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (levels_ - 1 - b);
            rev_[i] = r;
        }
        tw_re_.resize(n / 2 + 1);
        tw_im_.resize(n / 2 + 1);
        const double two_pi = 6.283185307179586476925287;
        for (std::size_t j = 0; j <= n / 2; ++j) {
            double a = -two_pi * static_cast<double>(j) / static_cast<double>(n);
            tw_re_[j] = std::cos(a);
            tw_im_[j] = std::sin(a);
        }
    }

    std::size_t length() const { return n_; }
    int levels() const { return levels_; }

    // In-place unnormalized forward DFT: X[j] = sum_t x[t] exp(-2*pi*i*j*t/n).
    void forward(ComplexBuffer& x) const {
        check(x);
        permute(x);
        butterflies(x);
    }

    // In-place inverse with the 1/n factor, via conj(F(conj(X)))/n.
    void inverse(ComplexBuffer& x) const {
        check(x);
        for (auto& v : x.im) v = -v;
        permute(x);
        butterflies(x);
        const double inv_n = 1.0 / static_cast<double>(n_);
        for (std::size_t i = 0; i < n_; ++i) {
            x.re[i] *= inv_n;
            x.im[i] = -x.im[i] * inv_n;
        }
    }

private:
    void check(const ComplexBuffer& x) const {
        if (x.re.size() != n_ || x.im.size() != n_)
            throw std::invalid_argument("FftPlan: buffer length mismatch");
    }

    void permute(ComplexBuffer& x) const {
        for (std::size_t i = 0; i < n_; ++i) {
            std::size_t j = rev_[i];
            if (j > i) {
                std::swap(x.re[i], x.re[j]);
                std::swap(x.im[i], x.im[j]);
            }
        }
    }

    void butterflies(ComplexBuffer& x) const {
        for (std::size_t len = 2; len <= n_; len <<= 1) {
            const std::size_t half = len >> 1;
            const std::size_t step = n_ / len;
            for (std::size_t base = 0; base < n_; base += len) {
                for (std::size_t k = 0; k < half; ++k) {
                    const double wr = tw_re_[k * step];
                    const double wi = tw_im_[k * step];
                    const std::size_t a = base + k;
                    const std::size_t b = a + half;
                    const double tr = x.re[b] * wr - x.im[b] * wi;
                    const double ti = x.re[b] * wi + x.im[b] * wr;
                    x.re[b] = x.re[a] - tr;
                    x.im[b] = x.im[a] - ti;
                    x.re[a] += tr;
                    x.im[a] += ti;
                }
            }
        }
    }

    std::size_t n_;
    int levels_;
    std::vector<std::size_t> rev_;
    std::vector<double> tw_re_, tw_im_;
};

inline ComplexBuffer fft(const FftPlan& plan, ComplexBuffer x) {
    plan.forward(x);
    return x;
}

inline ComplexBuffer ifft(const FftPlan& plan, ComplexBuffer x) {
    plan.inverse(x);
    return x;
}

// Circular convolution of two length-n real signals by spectral multiply.
// w_padded is the kernel already laid out (and wrapped if needed) at length n.
inline std::vector<double> circular_conv_fft(const FftPlan& plan, const std::vector<double>& x,
                                             const std::vector<double>& w_padded) {
    const std::size_t n = plan.length();
    if (x.size() != n || w_padded.size() != n)
        throw std::invalid_argument("circular_conv_fft: length mismatch");
    ComplexBuffer X = ComplexBuffer::from_real(x);
    ComplexBuffer W = ComplexBuffer::from_real(w_padded);
    plan.forward(X);
    plan.forward(W);
    for (std::size_t i = 0; i < n; ++i) {
        double r = X.re[i] * W.re[i] - X.im[i] * W.im[i];
        double s = X.re[i] * W.im[i] + X.im[i] * W.re[i];
        X.re[i] = r;
        X.im[i] = s;
    }
    plan.inverse(X);
    return X.re;
}

}  // namespace dash
