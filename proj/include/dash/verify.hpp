#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dash/aggconv.hpp"
#include "dash/net.hpp"
#include "dash/reference.hpp"

namespace dash {

struct SuiteResult {
    std::string name;
    bool passed = true;
    double max_deviation = 0.0;
    double tolerance = 0.0;
    std::string failure;  // first failing property, if any

    void observe(double dev, const std::string& what) {
        if (dev > max_deviation) max_deviation = dev;
        if (dev > tolerance && passed) {
            passed = false;
            failure = what;
        }
    }
};

struct VerifyOptions {
    std::uint64_t seed = 0;
    int instances = 24;
    bool large = false;  // stretch the random spaces to the full advertised ranges
    bool corrupt_orientation = false;  // negative-control hook: index-reverses the
                                       // kernels fed to one strategy route
    int threads = 1;
};

struct VerifyReport {
    std::vector<SuiteResult> suites;

    bool all_passed() const {
        for (const auto& s : suites)
            if (!s.passed) return false;
        return true;
    }

    double max_deviation(const std::string& name) const {
        for (const auto& s : suites)
            if (s.name == name) return s.max_deviation;
        return 0.0;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["passed"] = all_passed();
        j["suites"] = nlohmann::ordered_json::array();
        for (const auto& s : suites)
            j["suites"].push_back({{"name", s.name},
                                   {"passed", s.passed},
                                   {"max_deviation", s.max_deviation},
                                   {"tolerance", s.tolerance},
                                   {"failure", s.failure}});
        return j;
    }
};

namespace verify_detail {

inline double rel_err(double a, double b, double floor = 1e-4) {
    double denom = std::max({std::abs(a), std::abs(b), floor});
    return std::abs(a - b) / denom;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b,
                          double floor = 1e-4) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i], floor));
    return m;
}

inline SearchSpace random_space(Rng& rng, bool large) {
    const int kmax_idx = large ? 7 : 4;  // odd sizes up to 15 (large) or 9
    std::vector<int> ks, ds;
    int nk = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < nk; ++i) ks.push_back(3 + 2 * static_cast<int>(rng.below(static_cast<std::uint64_t>(kmax_idx))));
    int nd = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < nd; ++i) {
        int q = 1 + static_cast<int>(rng.below(large ? 5 : 3));  // up to 31 (large) or 7
        ds.push_back((1 << q) - 1);
    }
    return SearchSpace(ks, ds);
}

struct Instance {
    SearchSpace space;
    KernelBank bank;
    Tensor logits;
    Tensor x;
    std::vector<double> proj;  // random projection making the loss a scalar
    int B, cin, cout, n;
};

inline Instance random_instance(Rng& rng, bool large) {
    Instance inst{random_space(rng, large), {}, {}, {}, {}, 0, 0, 0, 0};
    inst.B = 1 + static_cast<int>(rng.below(2));
    inst.cin = 1 + static_cast<int>(rng.below(large ? 4 : 2));
    inst.cout = 1 + static_cast<int>(rng.below(large ? 4 : 2));
    const int sizes[] = {8, 16, 24, 32, 64, 128, 256};
    inst.n = sizes[rng.below(large ? 7 : 4)];
    inst.bank = KernelBank::init(inst.space, inst.cin, inst.cout, 1, rng);
    inst.logits = Tensor(Shape{inst.space.num_ops()}, true);
    for (auto& v : inst.logits.data) v = rng.uniform(-1.0, 1.0);
    inst.x = Tensor(Shape{inst.B, inst.cin, inst.n});
    for (auto& v : inst.x.data) v = rng.uniform(-1.0, 1.0);
    inst.proj.resize(static_cast<std::size_t>(inst.B) * inst.cout * inst.n);
    for (auto& v : inst.proj) v = rng.uniform(-1.0, 1.0);
    return inst;
}

struct StrategyEval {
    std::vector<double> output;
    std::vector<double> dlogits;
    std::vector<std::vector<double>> dbank;
};

// One forward/backward of the given strategy on an instance; the loss is the
// fixed random projection of the output so every strategy sees the same
// upstream gradient.
inline StrategyEval eval_strategy(Instance& inst, Strategy st, DilationImpl impl, PaddingMode mode,
                                  bool reverse_kernels) {
    KernelBank* bank = &inst.bank;
    KernelBank reversed;
    if (reverse_kernels) {
        reversed = inst.bank;
        for (auto& e : reversed.entries) {
            const int k = e.k;
            const int pairs = e.weight.shape[0] * e.weight.shape[1];
            for (int oc = 0; oc < pairs; ++oc) {
                double* w = e.weight.data.data() + static_cast<std::size_t>(oc) * k;
                for (int i = 0; i < k / 2; ++i) std::swap(w[i], w[k - 1 - i]);
            }
        }
        bank = &reversed;
    }
    Graph g;
    Var x = g.constant(inst.x);
    Var logits = g.param(inst.logits);
    Var alpha = g.softmax_simplex(logits, 1.0, nullptr);
    Var y = aggconv(g, x, *bank, alpha, inst.space, st, impl, mode);
    Var proj = g.constant(g.shape(y), inst.proj);
    Var loss = g.sum(g.mul(y, proj));
    inst.logits.zero_grad();
    for (auto& e : bank->entries) e.weight.zero_grad();
    g.backward(loss);
    StrategyEval out;
    out.output = g.value(y);
    out.dlogits = inst.logits.grad;
    for (auto& e : bank->entries) out.dbank.push_back(e.weight.grad);
    return out;
}

}  // namespace verify_detail

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

inline SuiteResult suite_fft_oracle(const VerifyOptions& opt) {
    using namespace verify_detail;
    SuiteResult s{"fft-oracle", true, 0.0, 1e-10, ""};
    Rng rng(derive_seed(opt.seed, "verify-fft"));
    for (std::size_t n : {1u, 2u, 4u, 8u, 16u, 64u, 256u}) {
        FftPlan plan(n);
        // delta -> all-ones spectrum
        ComplexBuffer delta(n);
        delta.re[0] = 1.0;
        ComplexBuffer D = fft(plan, delta);
        for (std::size_t i = 0; i < n; ++i) {
            s.observe(std::abs(D.re[i] - 1.0), "delta spectrum");
            s.observe(std::abs(D.im[i]), "delta spectrum");
        }
        for (int rep = 0; rep < std::max(2, opt.instances / 8); ++rep) {
            ComplexBuffer x(n);
            for (std::size_t i = 0; i < n; ++i) {
                x.re[i] = rng.uniform(-1.0, 1.0);
                x.im[i] = rng.uniform(-1.0, 1.0);
            }
            ComplexBuffer F = fft(plan, x);
            ComplexBuffer R = ref::direct_dft(x);
            for (std::size_t i = 0; i < n; ++i) {
                s.observe(std::abs(F.re[i] - R.re[i]), "fft vs direct dft");
                s.observe(std::abs(F.im[i] - R.im[i]), "fft vs direct dft");
            }
            ComplexBuffer back = ifft(plan, F);
            for (std::size_t i = 0; i < n; ++i) {
                s.observe(std::abs(back.re[i] - x.re[i]), "ifft(fft(x)) roundtrip");
                s.observe(std::abs(back.im[i] - x.im[i]), "ifft(fft(x)) roundtrip");
            }
            // Parseval
            double tx = 0.0, tf = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                tx += x.re[i] * x.re[i] + x.im[i] * x.im[i];
                tf += F.re[i] * F.re[i] + F.im[i] * F.im[i];
            }
            s.observe(std::abs(tx - tf / static_cast<double>(n)) / std::max(tx, 1e-12), "parseval");
        }
        // circular convolution against the nested-loop oracle
        if (n >= 4) {
            std::vector<double> xr(n), wr(n, 0.0);
            for (auto& v : xr) v = rng.uniform(-1.0, 1.0);
            for (std::size_t i = 0; i < 3; ++i) wr[i] = rng.uniform(-1.0, 1.0);
            auto got = circular_conv_fft(plan, xr, wr);
            auto want = ref::circ_conv(xr, wr);
            for (std::size_t i = 0; i < n; ++i) s.observe(std::abs(got[i] - want[i]), "circular conv fft vs direct");
        }
    }
    return s;
}

inline SuiteResult suite_dilation_equality(const VerifyOptions& opt) {
    SuiteResult s{"dilation-equality", true, 0.0, 0.0, ""};
    Rng rng(derive_seed(opt.seed, "verify-dilate"));
    auto spaces = {make_search_space_1d(), make_search_space_2d()};
    for (const auto& space : spaces) {
        for (int i = 0; i < space.num_ops(); ++i) {
            auto [k, d] = space.op_at(i);
            std::vector<double> w(static_cast<std::size_t>(k));
            for (auto& v : w) v = rng.uniform(-1.0, 1.0);
            auto zi = dilate_kernel(w, d, DilationImpl::ZeroInsertion);
            auto kr = dilate_kernel(w, d, DilationImpl::Kronecker);
            auto lit = ref::kron_dilate_literal(w, d);
            if (zi != kr) s.observe(1.0, "1d zero-insertion != kronecker");
            if (kr != lit) s.observe(1.0, "1d kronecker != literal w(x)P");
            std::vector<double> w2(static_cast<std::size_t>(k) * k);
            for (auto& v : w2) v = rng.uniform(-1.0, 1.0);
            auto zi2 = dilate_kernel_2d(w2, k, d, DilationImpl::ZeroInsertion);
            auto kr2 = dilate_kernel_2d(w2, k, d, DilationImpl::Kronecker);
            auto lit2 = ref::kron_dilate_literal_2d(w2, k, d);
            if (zi2 != kr2) s.observe(1.0, "2d zero-insertion != kronecker");
            if (kr2 != lit2) s.observe(1.0, "2d kronecker != literal w(x)P");
        }
    }
    return s;
}

// All three strategies on identical (x, bank, alpha): outputs within 1e-8
// relative, gradients w.r.t. every kernel and every logit within 1e-6.
inline SuiteResult suite_strategy_equivalence(const VerifyOptions& opt) {
    using namespace verify_detail;
    SuiteResult s{"strategy-equivalence", true, 0.0, 1e-8, ""};
    SuiteResult grads{"", true, 0.0, 1e-6, ""};
    Rng rng(derive_seed(opt.seed, "verify-equiv"));
    for (int inst_i = 0; inst_i < opt.instances; ++inst_i) {
        Instance inst = random_instance(rng, opt.large);
        auto mr = eval_strategy(inst, Strategy::MixedResults, DilationImpl::ZeroInsertion,
                                PaddingMode::Circular, false);
        auto mw = eval_strategy(inst, Strategy::MixedWeights, DilationImpl::ZeroInsertion,
                                PaddingMode::Circular, opt.corrupt_orientation);
        auto da = eval_strategy(inst, Strategy::DashFourier, DilationImpl::Kronecker,
                                PaddingMode::Circular, false);
        s.observe(max_rel_err(mr.output, mw.output), "mixed-results vs mixed-weights output");
        s.observe(max_rel_err(mr.output, da.output), "mixed-results vs dash output");
        double gdev = max_rel_err(mr.dlogits, mw.dlogits);
        gdev = std::max(gdev, max_rel_err(mr.dlogits, da.dlogits));
        for (std::size_t e = 0; e < mr.dbank.size(); ++e) {
            gdev = std::max(gdev, max_rel_err(mr.dbank[e], mw.dbank[e]));
            gdev = std::max(gdev, max_rel_err(mr.dbank[e], da.dbank[e]));
        }
        if (gdev > grads.max_deviation) grads.max_deviation = gdev;
        if (gdev > 1e-6 && s.passed) {
            s.passed = false;
            s.failure = "strategy gradient agreement";
        }
    }
    s.max_deviation = std::max(s.max_deviation, grads.max_deviation);
    return s;
}

// Central finite differences against the tape gradients for the
// differentiable operations.
inline SuiteResult suite_gradient_check(const VerifyOptions& opt) {
    SuiteResult s{"gradient-check", true, 0.0, 1e-4, ""};
    Rng rng(derive_seed(opt.seed, "verify-grad"));
    const double h = 1e-5;

    auto fd_check = [&](Tensor& param, const std::function<double()>& f, const char* what) {
        std::vector<double> analytic = param.grad;
        for (std::size_t i = 0; i < param.data.size(); ++i) {
            double keep = param.data[i];
            param.data[i] = keep + h;
            double up = f();
            param.data[i] = keep - h;
            double dn = f();
            param.data[i] = keep;
            double fd = (up - dn) / (2.0 * h);
            s.observe(verify_detail::rel_err(analytic[i], fd, 1e-2), what);
        }
    };

    const int reps = std::max(3, opt.instances / 4);
    for (int rep = 0; rep < reps; ++rep) {
        SearchSpace space({3, 5}, {1, 2});
        const int B = 1, cin = 2, cout = 2, n = 12;
        KernelBank bank = KernelBank::init(space, cin, cout, 1, rng);
        Tensor logits(Shape{space.num_ops()}, true);
        for (auto& v : logits.data) v = rng.uniform(-1.0, 1.0);
        Tensor x(Shape{B, cin, n});
        for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
        std::vector<double> proj(static_cast<std::size_t>(B) * cout * n);
        for (auto& v : proj) v = rng.uniform(-1.0, 1.0);

        for (Strategy st : {Strategy::MixedResults, Strategy::MixedWeights, Strategy::DashFourier}) {
            auto loss_of = [&]() {
                Graph g;
                Var xv = g.constant(x);
                Var lv = g.param(logits);
                Var alpha = g.softmax_simplex(lv, 1.0, nullptr);
                Var y = aggconv(g, xv, bank, alpha, space, st, DilationImpl::Kronecker,
                                PaddingMode::Circular);
                Var loss = g.sum(g.mul(y, g.constant(g.shape(y), proj)));
                return g.value(loss)[0];
            };
            logits.zero_grad();
            for (auto& e : bank.entries) e.weight.zero_grad();
            {
                Graph g;
                Var xv = g.constant(x);
                Var lv = g.param(logits);
                Var alpha = g.softmax_simplex(lv, 1.0, nullptr);
                Var y = aggconv(g, xv, bank, alpha, space, st, DilationImpl::Kronecker,
                                PaddingMode::Circular);
                Var loss = g.sum(g.mul(y, g.constant(g.shape(y), proj)));
                g.backward(loss);
            }
            fd_check(logits, loss_of, "aggconv dlogits vs finite differences");
            fd_check(bank.entries[0].weight, loss_of, "aggconv dkernel vs finite differences");
        }

        // batch norm (training mode) + losses through a tiny head
        {
            BatchNormState bn = BatchNormState::init(cin);
            Tensor xin(Shape{4, cin, 6});
            for (auto& v : xin.data) v = rng.uniform(-1.0, 1.0);
            std::vector<int> labels = {0, 1, 0, 1};
            Tensor head_w(Shape{2, cin}, true);
            for (auto& v : head_w.data) v = rng.uniform(-1.0, 1.0);
            Tensor head_b(Shape{2}, true);
            auto loss_of = [&]() {
                Graph g;
                Var xv = g.constant(xin);
                Var y = batch_norm(g, xv, bn, true);
                Var pooled = g.global_avg_pool(g.relu(y));
                Var out = g.linear(pooled, g.param(head_w), g.param(head_b));
                return g.value(g.cross_entropy(out, labels))[0];
            };
            bn.scale.zero_grad();
            bn.shift.zero_grad();
            head_w.zero_grad();
            head_b.zero_grad();
            {
                Graph g;
                Var xv = g.constant(xin);
                Var y = batch_norm(g, xv, bn, true);
                Var pooled = g.global_avg_pool(g.relu(y));
                Var out = g.linear(pooled, g.param(head_w), g.param(head_b));
                g.backward(g.cross_entropy(out, labels));
            }
            // freeze running stats so repeated forwards are identical
            auto keep_mean = bn.running_mean;
            auto keep_var = bn.running_var;
            auto loss_frozen = [&]() {
                bn.running_mean = keep_mean;
                bn.running_var = keep_var;
                return loss_of();
            };
            fd_check(bn.scale, loss_frozen, "batch norm dscale vs finite differences");
            fd_check(bn.shift, loss_frozen, "batch norm dshift vs finite differences");
            fd_check(head_w, loss_frozen, "cross entropy head dW vs finite differences");
        }
    }
    return s;
}

inline VerifyReport run_verify(const VerifyOptions& opt) {
    VerifyReport report;
    report.suites.resize(4);
    std::vector<std::function<void()>> jobs = {
        [&] { report.suites[0] = suite_fft_oracle(opt); },
        [&] { report.suites[1] = suite_dilation_equality(opt); },
        [&] { report.suites[2] = suite_strategy_equivalence(opt); },
        [&] { report.suites[3] = suite_gradient_check(opt); },
    };
    int threads = std::max(1, opt.threads);
    if (threads == 1) {
        for (auto& j : jobs) j();
    } else {
        std::vector<std::thread> pool;
        std::size_t next = 0;
        for (int t = 0; t < threads && next < jobs.size(); ++t, ++next)
            pool.emplace_back(jobs[next]);
        // simple bounded run: join then continue
        while (true) {
            for (auto& th : pool) th.join();
            pool.clear();
            if (next >= jobs.size()) break;
            for (int t = 0; t < threads && next < jobs.size(); ++t, ++next)
                pool.emplace_back(jobs[next]);
        }
    }
    return report;
}

}  // namespace dash
