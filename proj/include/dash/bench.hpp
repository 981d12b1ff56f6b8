#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <new>
#include <string>
#include <vector>

#include <json.hpp>

#include "dash/io.hpp"
#include "dash/net.hpp"
#include "dash/opcount.hpp"
#include "dash/pipeline.hpp"
#include "dash/sgd.hpp"

namespace dash {

// The five measured methods: mixed-results has no dilation variant (it walks
// the undilated taps directly), the merging strategies come in zero-insertion
// and Kronecker flavors.
struct BenchMethod {
    Strategy strategy;
    DilationImpl impl;
    std::string label;
};

inline std::vector<BenchMethod> bench_methods() {
    return {{Strategy::MixedResults, DilationImpl::ZeroInsertion, "mixed-results"},
            {Strategy::MixedWeights, DilationImpl::ZeroInsertion, "mixed-weights-zero"},
            {Strategy::MixedWeights, DilationImpl::Kronecker, "mixed-weights-kron"},
            {Strategy::DashFourier, DilationImpl::ZeroInsertion, "dash-zero"},
            {Strategy::DashFourier, DilationImpl::Kronecker, "dash-kron"}};
}

struct BenchCell {
    std::string method;
    int c = 0;  // space scale (bench-space) ...
    int n = 0;  // ... or input length (bench-length)
    std::vector<double> trials;  // raw seconds, all retained
    double median_seconds = 0.0;
    double variance = 0.0;
    bool failed = false;
    std::string error;

    double log10_time() const { return std::log10(median_seconds); }
};

struct BenchSettings {
    int n = 1000;
    int batch = 128;
    int dataset = 10000;  // one epoch = ceil(dataset / batch) batches
    int max_batches = 0;  // optional cap for constrained machines (0 = full epoch)
    int trials = 5;       // timed trials; one extra warm-up epoch is untimed
    int num_classes = 10;
    std::uint64_t seed = 0;
};

namespace detail {

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double variance_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    return var / static_cast<double>(v.size() - 1);
}

struct BenchData {
    Tensor xs;
    std::vector<int> labels;
};

inline BenchData make_bench_data(int dataset, int n, int num_classes, std::uint64_t seed) {
    BenchData d;
    Rng rng(derive_seed(seed, "bench-data"));
    d.xs = Tensor(Shape{dataset, 1, n});
    for (auto& v : d.xs.data) v = rng.normal();
    d.labels.resize(static_cast<std::size_t>(dataset));
    for (auto& l : d.labels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes)));
    return d;
}

// One search epoch: forward + backward + the two optimizer steps over the
// epoch's batches. Nothing is allocated here that the warm-up epoch has not
// already allocated once.
inline double timed_search_epoch(SupernetModel& model, const BenchData& data, int batch,
                                 int max_batches, SgdOptimizer& wopt, SgdOptimizer& aopt,
                                 std::vector<Tensor*>& weights, std::vector<Tensor*>& alphas,
                                 std::vector<Tensor*>& all) {
    const std::size_t total = static_cast<std::size_t>(data.xs.shape[0]);
    auto t0 = std::chrono::steady_clock::now();
    int batches = 0;
    for (std::size_t from = 0; from < total; from += static_cast<std::size_t>(batch)) {
        if (max_batches > 0 && batches >= max_batches) break;
        std::vector<std::size_t> idx;
        for (std::size_t i = from; i < std::min(total, from + static_cast<std::size_t>(batch)); ++i)
            idx.push_back(i);
        Graph g;
        Var x = g.constant(slice_rows(data.xs, idx));
        Var out = model.forward(g, x, true);
        TargetBatch tb;
        for (std::size_t i : idx) tb.labels.push_back(data.labels[i]);
        Var loss = g.cross_entropy(out, tb.labels);
        g.backward(loss);
        clip_global_norm(all, 1.0);
        aopt.step(alphas);
        wopt.step(weights);
        zero_grads(all);
        ++batches;
    }
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count();
}

inline BenchCell measure_method(const BenchMethod& method, const SearchSpace& space,
                                const BenchData& data, const BenchSettings& s, int cell_c,
                                int cell_n) {
    BenchCell cell;
    cell.method = method.label;
    cell.c = cell_c;
    cell.n = cell_n;
    try {
        BackboneSpec spec = backbone_1d(1, s.num_classes);
        SupernetModel model = build_supernet(spec, space, method.strategy, s.seed, method.impl,
                                             PaddingMode::Circular, ArchParams::Mode::GumbelSoftmax);
        SgdOptimizer wopt(0.1, 0.9, true, 5e-4);
        SgdOptimizer aopt(0.05, 0.9, true, 5e-4);
        auto weights = model.weight_params();
        auto alphas = model.alpha_params();
        std::vector<Tensor*> all = weights;
        all.insert(all.end(), alphas.begin(), alphas.end());
        // mandatory warm-up epoch, untimed
        timed_search_epoch(model, data, s.batch, s.max_batches, wopt, aopt, weights, alphas, all);
        for (int t = 0; t < std::max(3, s.trials); ++t)
            cell.trials.push_back(timed_search_epoch(model, data, s.batch, s.max_batches, wopt, aopt,
                                                     weights, alphas, all));
        cell.median_seconds = median_of(cell.trials);
        cell.variance = variance_of(cell.trials);
    } catch (const std::bad_alloc&) {
        cell.failed = true;
        cell.error = "out of memory";
    }
    return cell;
}

}  // namespace detail

struct BenchRun {
    std::vector<BenchCell> cells;  // row-major: per scale value, per method

    const BenchCell& at(int scale_value, const std::string& method) const {
        for (const auto& c : cells)
            if (c.method == method && (c.c == scale_value || c.n == scale_value)) return c;
        throw std::runtime_error("bench cell not found");
    }

    nlohmann::ordered_json raw_json() const {
        nlohmann::ordered_json j = nlohmann::ordered_json::array();
        for (const auto& c : cells)
            j.push_back({{"method", c.method},
                         {"c", c.c},
                         {"n", c.n},
                         {"trials", c.trials},
                         {"median_seconds", c.median_seconds},
                         {"variance", c.variance},
                         {"failed", c.failed},
                         {"error", c.error}});
        return j;
    }
};

// Space-scaling experiment: K = {2p+1 | p <= c}, D = {2^q - 1 | q <= c},
// c swept over [c_lo, c_hi], fixed input length.
inline BenchRun bench_space(const BenchSettings& s, int c_lo = 1, int c_hi = 7) {
    BenchRun run;
    detail::BenchData data = detail::make_bench_data(s.dataset, s.n, s.num_classes, s.seed);
    for (int c = c_lo; c <= c_hi; ++c) {
        SearchSpace space = make_bench_space(c);
        for (const auto& m : bench_methods())
            run.cells.push_back(detail::measure_method(m, space, data, s, c, s.n));
    }
    return run;
}

// Length-scaling experiment on the fixed space K = {3,5,7,9,11},
// D = {1,3,7,15,31}; n swept over the given powers of two.
inline BenchRun bench_length(const BenchSettings& s, const std::vector<int>& n_values) {
    BenchRun run;
    SearchSpace space({3, 5, 7, 9, 11}, {1, 3, 7, 15, 31});
    for (int n : n_values) {
        detail::BenchData data = detail::make_bench_data(s.dataset, n, s.num_classes, s.seed);
        for (const auto& m : bench_methods())
            run.cells.push_back(detail::measure_method(m, space, data, s, 0, n));
    }
    return run;
}

inline std::string bench_space_csv(const BenchRun& run, int c_lo, int c_hi) {
    std::vector<std::string> cols = {"c"};
    for (const auto& m : bench_methods()) cols.push_back(m.label);
    CsvWriter csv(cols);
    for (int c = c_lo; c <= c_hi; ++c) {
        std::vector<std::string> row = {std::to_string(c)};
        for (const auto& m : bench_methods()) {
            const BenchCell& cell = run.at(c, m.label);
            row.push_back(cell.failed ? "nan" : fmt_double(cell.median_seconds));
        }
        csv.add_row(row);
    }
    return csv.str();
}

inline std::string bench_length_csv(const BenchRun& run, const std::vector<int>& n_values,
                                    int c_in_model = 1, int c_out_model = 1) {
    SearchSpace space({3, 5, 7, 9, 11}, {1, 3, 7, 15, 31});
    std::vector<std::string> cols = {"n"};
    for (const auto& m : bench_methods()) cols.push_back(m.label);
    cols.insert(cols.end(), {"model_mixed_results_mults", "model_mixed_weights_mults", "model_dash_mults"});
    CsvWriter csv(cols);
    for (int n : n_values) {
        std::vector<std::string> row = {std::to_string(n)};
        for (const auto& m : bench_methods()) {
            const BenchCell& cell = run.at(n, m.label);
            row.push_back(cell.failed ? "nan" : fmt_double(cell.median_seconds));
        }
        row.push_back(std::to_string(count_ops(Strategy::MixedResults, c_in_model, c_out_model, n, space).mults));
        row.push_back(std::to_string(count_ops(Strategy::MixedWeights, c_in_model, c_out_model, n, space).mults));
        row.push_back(std::to_string(count_ops(Strategy::DashFourier, c_in_model, c_out_model, n, space).mults));
        csv.add_row(row);
    }
    return csv.str();
}

}  // namespace dash
