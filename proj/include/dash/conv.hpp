#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dash/conv_kernels.hpp"
#include "dash/graph.hpp"
#include "dash/random.hpp"
#include "dash/search_space.hpp"
#include "dash/tensor.hpp"

namespace dash {

// The three interchangeable ways of computing the aggregated convolution:
//   MixedResults  - one convolution per candidate op, weighted output sum
//   MixedWeights  - merge the padded kernels first, convolve once
//   DashFourier   - merged kernel applied by spectral multiplication, with
//                   the input transformed once per (batch, channel)
enum class Strategy { MixedResults, MixedWeights, DashFourier };

enum class DilationImpl { ZeroInsertion, Kronecker };

// Circular is the reference semantics: all three strategies are exactly
// equivalent under it. ZeroSame is a causal zero-padded mode for end tasks.
enum class PaddingMode { Circular, ZeroSame };

inline const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::MixedResults: return "mixed-results";
        case Strategy::MixedWeights: return "mixed-weights";
        default: return "dash";
    }
}

inline const char* to_string(DilationImpl d) {
    return d == DilationImpl::ZeroInsertion ? "zero-insertion" : "kronecker";
}

inline Strategy parse_strategy(const std::string& s) {
    if (s == "mixed-results") return Strategy::MixedResults;
    if (s == "mixed-weights") return Strategy::MixedWeights;
    if (s == "dash") return Strategy::DashFourier;
    throw std::invalid_argument("unknown strategy: " + s);
}

inline DilationImpl parse_dilation_impl(const std::string& s) {
    if (s == "zero-insertion") return DilationImpl::ZeroInsertion;
    if (s == "kronecker") return DilationImpl::Kronecker;
    throw std::invalid_argument("unknown dilation impl: " + s);
}

// Per-thread instrumentation. The spectral path bumps one count per forward
// transform so tests can assert the structural counts (inputs transformed
// once per (batch, c_in), kernels once per (c_out, c_in), one inverse per
// (batch, c_out)).
struct ConvCounters {
    std::uint64_t input_ffts = 0;
    std::uint64_t kernel_ffts = 0;
    std::uint64_t inverse_ffts = 0;
    std::uint64_t backward_ffts = 0;
    std::uint64_t strategy_forwards = 0;  // aggconv node forwards
    std::uint64_t model_forwards = 0;     // whole-model forwards

    void reset() { *this = ConvCounters{}; }
};

inline ConvCounters& conv_counters() {
    thread_local ConvCounters c;
    return c;
}

// ---------------------------------------------------------------------------
// Kernel bank and architecture parameters
// ---------------------------------------------------------------------------

struct BankEntry {
    int k = 0;
    int d = 0;
    Tensor weight;  // [c_out, c_in, k] or [c_out, c_in, k, k]
};

// One undilated weight tensor per (k, d) in the space, ordered to match the
// flat op index of SearchSpace.
struct KernelBank {
    int c_in = 0, c_out = 0, dims = 1;
    std::vector<BankEntry> entries;

    static KernelBank init(const SearchSpace& space, int c_in, int c_out, int dims, Rng& rng) {
        if (dims != 1 && dims != 2) throw std::invalid_argument("KernelBank: dims must be 1 or 2");
        KernelBank bank;
        bank.c_in = c_in;
        bank.c_out = c_out;
        bank.dims = dims;
        for (int i = 0; i < space.num_ops(); ++i) {
            auto [k, d] = space.op_at(i);
            Shape shape = dims == 1 ? Shape{c_out, c_in, k} : Shape{c_out, c_in, k, k};
            Tensor w(shape, true);
            // fan-in uniform init
            double fan_in = static_cast<double>(c_in) * k * (dims == 2 ? k : 1);
            double bound = 1.0 / std::sqrt(fan_in);
            for (auto& v : w.data) v = rng.uniform(-bound, bound);
            bank.entries.push_back(BankEntry{k, d, std::move(w)});
        }
        return bank;
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& e : entries) n += e.weight.size();
        return n;
    }
};

struct ArchParams {
    enum class Mode { Softmax, GumbelSoftmax };

    Tensor logits;  // length |K||D|
    double temperature = 1.0;
    Mode mode = Mode::Softmax;
    Rng rng{0};

    static ArchParams init(const SearchSpace& space, double temperature, Mode mode,
                           std::uint64_t seed) {
        ArchParams a;
        a.logits = Tensor(Shape{space.num_ops()}, true);  // zeros: uniform mixture
        a.temperature = temperature;
        a.mode = mode;
        a.rng = Rng(seed);
        return a;
    }
};

// Differentiable simplex weights. In Gumbel mode fresh Gumbel(0,1) noise is
// drawn from the params' own stream on every call.
inline Var normalize_alpha(Graph& g, ArchParams& a) {
    Var logits = g.param(a.logits);
    if (a.mode == ArchParams::Mode::GumbelSoftmax) {
        std::vector<double> noise(a.logits.data.size());
        for (auto& v : noise) v = a.rng.gumbel();
        return g.softmax_simplex(logits, a.temperature, &noise);
    }
    return g.softmax_simplex(logits, a.temperature, nullptr);
}

// Noise-free softmax view of the logits (used for discretization and
// reporting).
inline std::vector<double> alpha_values(const ArchParams& a) {
    const auto& z = a.logits.data;
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    std::vector<double> out(z.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp((z[i] - mx) / a.temperature);
        denom += out[i];
    }
    for (auto& v : out) v /= denom;
    return out;
}

// Argmax with ties broken toward the lexicographically lowest (k, d), which
// is the lowest flat index given the bank ordering.
inline int argmax_op(const std::vector<double>& alpha) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(alpha.size()); ++i)
        if (alpha[static_cast<std::size_t>(i)] > alpha[static_cast<std::size_t>(best)]) best = i;
    return best;
}

// ---------------------------------------------------------------------------
// Dilation
// ---------------------------------------------------------------------------

// Zero-insertion: allocate the (k-1)d+1 buffer and scatter the taps.
// Kronecker: materialize w (x) P with P = [1, 0, ..., 0] (length d), then
// drop the trailing d-1 zeros. Both return identical arrays bit for bit.
inline std::vector<double> dilate_kernel(const std::vector<double>& w, int d, DilationImpl impl) {
    if (d < 1) throw std::invalid_argument("dilate_kernel: d must be >= 1");
    const int k = static_cast<int>(w.size());
    if (impl == DilationImpl::ZeroInsertion) {
        std::vector<double> out(static_cast<std::size_t>(effective_size(k, d)), 0.0);
        for (int p = 0; p < k; ++p) out[static_cast<std::size_t>(p) * d] = w[static_cast<std::size_t>(p)];
        return out;
    }
    std::vector<double> full(static_cast<std::size_t>(k) * d, 0.0);
    for (int p = 0; p < k; ++p)
        for (int j = 0; j < d; ++j)
            full[static_cast<std::size_t>(p) * d + j] = w[static_cast<std::size_t>(p)] * (j == 0 ? 1.0 : 0.0);
    full.resize(static_cast<std::size_t>(effective_size(k, d)));
    return full;
}

// 2D variant; w is k*k row-major, P is the d*d matrix with a single 1 at the
// top-left, and the trailing d-1 zero rows/columns are trimmed.
inline std::vector<double> dilate_kernel_2d(const std::vector<double>& w, int k, int d,
                                            DilationImpl impl) {
    if (d < 1) throw std::invalid_argument("dilate_kernel_2d: d must be >= 1");
    const int e = effective_size(k, d);
    if (impl == DilationImpl::ZeroInsertion) {
        std::vector<double> out(static_cast<std::size_t>(e) * e, 0.0);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
                out[static_cast<std::size_t>(i * d) * e + static_cast<std::size_t>(j) * d] =
                    w[static_cast<std::size_t>(i) * k + j];
        return out;
    }
    const int fe = k * d;
    std::vector<double> full(static_cast<std::size_t>(fe) * fe, 0.0);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
            for (int u = 0; u < d; ++u)
                for (int v = 0; v < d; ++v)
                    full[static_cast<std::size_t>(i * d + u) * fe + (j * d + v)] =
                        w[static_cast<std::size_t>(i) * k + j] * ((u == 0 && v == 0) ? 1.0 : 0.0);
    std::vector<double> out(static_cast<std::size_t>(e) * e);
    for (int i = 0; i < e; ++i)
        for (int j = 0; j < e; ++j)
            out[static_cast<std::size_t>(i) * e + j] = full[static_cast<std::size_t>(i) * fe + j];
    return out;
}

// ---------------------------------------------------------------------------
// Merged kernel (technique 1): sum of alpha-weighted dilated kernels
// ---------------------------------------------------------------------------

namespace detail {

// Tap index inside the merged buffer of length lm for axis extent n. Returns
// -1 when the tap falls off the end in zero-padded mode.
inline int merged_pos(std::int64_t tap, int n, PaddingMode mode) {
    if (tap < n) return static_cast<int>(tap);
    if (mode == PaddingMode::Circular) return static_cast<int>(tap % n);
    return -1;
}

// merged: [c_out][c_in][lm] with lm = min(dbar, n). The zero-insertion path
// materializes every dilated kernel densely, zero-pads it to the merged
// length, and adds the whole buffer through (the |K||D| * dbar adds of the
// cost model). The Kronecker path accumulates the k taps directly: the
// trimmed w (x) P rows are exactly those positions. Both produce the same
// array.
inline void build_merged_1d(const KernelBank& bank, const double* alpha, const SearchSpace& space,
                            int n, PaddingMode mode, DilationImpl impl,
                            std::vector<double>& merged, int& lm) {
    lm = static_cast<int>(std::min<std::int64_t>(space.dbar, n));
    const int cc = bank.c_out * bank.c_in;
    merged.assign(static_cast<std::size_t>(cc) * lm, 0.0);
    std::vector<double> scratch;
    for (std::size_t e = 0; e < bank.entries.size(); ++e) {
        const BankEntry& be = bank.entries[e];
        const double a = alpha[e];
        const int k = be.k, d = be.d;
        const int elen = effective_size(k, d);
        for (int oc = 0; oc < cc; ++oc) {
            const double* w = be.weight.data.data() + static_cast<std::size_t>(oc) * k;
            double* m = merged.data() + static_cast<std::size_t>(oc) * lm;
            if (impl == DilationImpl::ZeroInsertion) {
                scratch.assign(static_cast<std::size_t>(lm), 0.0);
                for (int p = 0; p < k; ++p) {
                    int pos = merged_pos(static_cast<std::int64_t>(p) * d, n, mode);
                    if (pos >= 0) scratch[static_cast<std::size_t>(pos)] += w[p];
                }
                (void)elen;
                for (int t = 0; t < lm; ++t) m[t] += a * scratch[static_cast<std::size_t>(t)];
            } else {
                for (int p = 0; p < k; ++p) {
                    int pos = merged_pos(static_cast<std::int64_t>(p) * d, n, mode);
                    if (pos >= 0) m[pos] += a * w[p];
                }
            }
        }
    }
}

// Adjoint of build_merged_1d: splits dmerged into dalpha and per-entry
// dweight contributions.
inline void merged_backward_1d(const KernelBank& bank, const double* alpha,
                               const SearchSpace& space, int n, PaddingMode mode,
                               const std::vector<double>& dmerged, int lm, double* dalpha,
                               const std::vector<double*>& dbank) {
    (void)space;
    const int cc = bank.c_out * bank.c_in;
    for (std::size_t e = 0; e < bank.entries.size(); ++e) {
        const BankEntry& be = bank.entries[e];
        const double a = alpha[e];
        const int k = be.k, d = be.d;
        double da = 0.0;
        for (int oc = 0; oc < cc; ++oc) {
            const double* w = be.weight.data.data() + static_cast<std::size_t>(oc) * k;
            const double* dm = dmerged.data() + static_cast<std::size_t>(oc) * lm;
            double* dw = dbank[e] ? dbank[e] + static_cast<std::size_t>(oc) * k : nullptr;
            for (int p = 0; p < k; ++p) {
                int pos = merged_pos(static_cast<std::int64_t>(p) * d, n, mode);
                if (pos < 0) continue;
                da += w[p] * dm[pos];
                if (dw) dw[p] += a * dm[pos];
            }
        }
        if (dalpha) dalpha[e] += da;
    }
}

// 2D: merged is [c_out][c_in][lh][lw].
inline void build_merged_2d(const KernelBank& bank, const double* alpha, const SearchSpace& space,
                            int h, int w, PaddingMode mode, DilationImpl impl,
                            std::vector<double>& merged, int& lh, int& lw) {
    lh = static_cast<int>(std::min<std::int64_t>(space.dbar, h));
    lw = static_cast<int>(std::min<std::int64_t>(space.dbar, w));
    const int cc = bank.c_out * bank.c_in;
    merged.assign(static_cast<std::size_t>(cc) * lh * lw, 0.0);
    std::vector<double> scratch;
    for (std::size_t e = 0; e < bank.entries.size(); ++e) {
        const BankEntry& be = bank.entries[e];
        const double a = alpha[e];
        const int k = be.k, d = be.d;
        const int elen = effective_size(k, d);
        for (int oc = 0; oc < cc; ++oc) {
            const double* ww = be.weight.data.data() + static_cast<std::size_t>(oc) * k * k;
            double* m = merged.data() + static_cast<std::size_t>(oc) * lh * lw;
            if (impl == DilationImpl::ZeroInsertion) {
                (void)elen;
                scratch.assign(static_cast<std::size_t>(lh) * lw, 0.0);
                for (int u = 0; u < k; ++u) {
                    int pu = merged_pos(static_cast<std::int64_t>(u) * d, h, mode);
                    if (pu < 0) continue;
                    for (int v = 0; v < k; ++v) {
                        int pv = merged_pos(static_cast<std::int64_t>(v) * d, w, mode);
                        if (pv < 0) continue;
                        scratch[static_cast<std::size_t>(pu) * lw + pv] += ww[static_cast<std::size_t>(u) * k + v];
                    }
                }
                for (int t = 0; t < lh * lw; ++t) m[t] += a * scratch[static_cast<std::size_t>(t)];
            } else {
                for (int u = 0; u < k; ++u) {
                    int pu = merged_pos(static_cast<std::int64_t>(u) * d, h, mode);
                    if (pu < 0) continue;
                    for (int v = 0; v < k; ++v) {
                        int pv = merged_pos(static_cast<std::int64_t>(v) * d, w, mode);
                        if (pv < 0) continue;
                        m[static_cast<std::size_t>(pu) * lw + pv] += a * ww[static_cast<std::size_t>(u) * k + v];
                    }
                }
            }
        }
    }
}

inline void merged_backward_2d(const KernelBank& bank, const double* alpha,
                               const SearchSpace& space, int h, int w, PaddingMode mode,
                               const std::vector<double>& dmerged, int lh, int lw, double* dalpha,
                               const std::vector<double*>& dbank) {
    (void)space;
    const int cc = bank.c_out * bank.c_in;
    for (std::size_t e = 0; e < bank.entries.size(); ++e) {
        const BankEntry& be = bank.entries[e];
        const double a = alpha[e];
        const int k = be.k, d = be.d;
        double da = 0.0;
        for (int oc = 0; oc < cc; ++oc) {
            const double* ww = be.weight.data.data() + static_cast<std::size_t>(oc) * k * k;
            const double* dm = dmerged.data() + static_cast<std::size_t>(oc) * lh * lw;
            double* dw = dbank[e] ? dbank[e] + static_cast<std::size_t>(oc) * k * k : nullptr;
            for (int u = 0; u < k; ++u) {
                int pu = merged_pos(static_cast<std::int64_t>(u) * d, h, mode);
                if (pu < 0) continue;
                for (int v = 0; v < k; ++v) {
                    int pv = merged_pos(static_cast<std::int64_t>(v) * d, w, mode);
                    if (pv < 0) continue;
                    double dmv = dm[static_cast<std::size_t>(pu) * lw + pv];
                    da += ww[static_cast<std::size_t>(u) * k + v] * dmv;
                    if (dw) dw[static_cast<std::size_t>(u) * k + v] += a * dmv;
                }
            }
        }
        if (dalpha) dalpha[e] += da;
    }
}

}  // namespace detail

}  // namespace dash
