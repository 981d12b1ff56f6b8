#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dash/conv.hpp"
#include "dash/search_space.hpp"

namespace dash {

inline int ceil_log2(std::uint64_t n) {
    int l = 0;
    while ((std::uint64_t{1} << l) < n) ++l;
    return l;
}

// Exact closed-form MULT/ADD counts for one forward evaluation of the
// aggregated convolution (batch 1). The convolution terms are exact; the FFT
// terms are a model: 4 real multiplies and 6 real adds per butterfly, n/2
// butterflies per level, ceil(log2 n) levels, summed over the
// c_in + c_in*c_out + c_out transforms of the spectral path. The model
// constants are carried in the report.
struct OpCountReport {
    Strategy strategy = Strategy::MixedResults;
    std::uint64_t mults = 0;
    std::uint64_t adds = 0;
    std::uint64_t fft_mults = 0;  // included in mults (dash only)
    std::uint64_t fft_adds = 0;   // included in adds (dash only)

    int c_in = 1, c_out = 1, n = 1;
    std::vector<int> kernel_sizes, dilations;
    std::int64_t kbar = 0, dbar = 0;
    int num_ops = 0;

    // FFT cost-model constants
    int fft_mults_per_butterfly = 4;
    int fft_adds_per_butterfly = 6;
    int fft_levels = 0;
    std::uint64_t fft_transforms = 0;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["strategy"] = to_string(strategy);
        j["mults"] = mults;
        j["adds"] = adds;
        j["params"] = {{"c_in", c_in},
                       {"c_out", c_out},
                       {"n", n},
                       {"K", kernel_sizes},
                       {"D", dilations},
                       {"kbar", kbar},
                       {"dbar", dbar},
                       {"num_ops", num_ops}};
        j["fft_model"] = {{"mults", fft_mults},
                          {"adds", fft_adds},
                          {"mults_per_butterfly", fft_mults_per_butterfly},
                          {"adds_per_butterfly", fft_adds_per_butterfly},
                          {"butterflies_per_level", n / 2},
                          {"levels", fft_levels},
                          {"transforms", fft_transforms}};
        return j;
    }
};

inline OpCountReport count_ops(Strategy strategy, int c_in, int c_out, int n,
                               const SearchSpace& space) {
    if (n < 1) throw std::invalid_argument("count_ops: n must be >= 1");
    if (c_in < 1 || c_out < 1) throw std::invalid_argument("count_ops: channels must be >= 1");
    const std::uint64_t ci = static_cast<std::uint64_t>(c_in);
    const std::uint64_t co = static_cast<std::uint64_t>(c_out);
    const std::uint64_t nn = static_cast<std::uint64_t>(n);
    const std::uint64_t kb = static_cast<std::uint64_t>(space.kbar);
    const std::uint64_t db = static_cast<std::uint64_t>(space.dbar);
    const std::uint64_t ops = static_cast<std::uint64_t>(space.num_ops());

    OpCountReport r;
    r.strategy = strategy;
    r.c_in = c_in;
    r.c_out = c_out;
    r.n = n;
    r.kernel_sizes = space.kernel_sizes;
    r.dilations = space.dilations;
    r.kbar = space.kbar;
    r.dbar = space.dbar;
    r.num_ops = static_cast<int>(ops);

    switch (strategy) {
        case Strategy::MixedResults:
            r.mults = (ci * co * kb + co * ops) * nn;
            r.adds = r.mults;
            break;
        case Strategy::MixedWeights:
            r.mults = ci * co * (kb + db * nn);
            r.adds = ci * co * db * (ops + nn);
            break;
        case Strategy::DashFourier: {
            r.fft_levels = ceil_log2(nn);
            r.fft_transforms = ci + ci * co + co;
            const std::uint64_t butterflies = (nn / 2) * static_cast<std::uint64_t>(r.fft_levels);
            r.fft_mults = static_cast<std::uint64_t>(r.fft_mults_per_butterfly) * butterflies * r.fft_transforms;
            r.fft_adds = static_cast<std::uint64_t>(r.fft_adds_per_butterfly) * butterflies * r.fft_transforms;
            r.mults = ci * co * (kb + nn) + r.fft_mults;
            r.adds = ci * co * (ops * db + nn) + r.fft_adds;
            break;
        }
    }
    return r;
}

// Leading n-coefficients of the MULT counts; the asymptotically cheaper of
// the two direct strategies is decided by these.
inline std::uint64_t leading_coeff_mults(Strategy strategy, int c_in, int c_out,
                                         const SearchSpace& space) {
    const std::uint64_t ci = static_cast<std::uint64_t>(c_in);
    const std::uint64_t co = static_cast<std::uint64_t>(c_out);
    const std::uint64_t kb = static_cast<std::uint64_t>(space.kbar);
    const std::uint64_t db = static_cast<std::uint64_t>(space.dbar);
    const std::uint64_t ops = static_cast<std::uint64_t>(space.num_ops());
    switch (strategy) {
        case Strategy::MixedResults: return ci * co * kb + co * ops;
        case Strategy::MixedWeights: return ci * co * db;
        default: return ci * co;  // times log n; n-linear part only
    }
}

struct CrossoverRow {
    int n = 0;
    std::uint64_t mr_mults = 0, mw_mults = 0, dash_mults = 0;
    Strategy cheapest = Strategy::MixedResults;
    double mr_over_mw = 0.0;
    double mr_over_dash = 0.0;
};

struct CrossoverTable {
    int c_in = 1, c_out = 1;
    std::int64_t kbar = 0, dbar = 0;
    std::uint64_t mr_leading = 0, mw_leading = 0;
    bool mixed_weights_leading_cheaper = false;
    std::vector<CrossoverRow> rows;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["c_in"] = c_in;
        j["c_out"] = c_out;
        j["kbar"] = kbar;
        j["dbar"] = dbar;
        j["mr_leading_coeff"] = mr_leading;
        j["mw_leading_coeff"] = mw_leading;
        j["mixed_weights_leading_cheaper"] = mixed_weights_leading_cheaper;
        j["rows"] = nlohmann::ordered_json::array();
        for (const auto& r : rows) {
            j["rows"].push_back({{"n", r.n},
                                 {"mixed_results_mults", r.mr_mults},
                                 {"mixed_weights_mults", r.mw_mults},
                                 {"dash_mults", r.dash_mults},
                                 {"cheapest", to_string(r.cheapest)},
                                 {"mr_over_mw", r.mr_over_mw},
                                 {"mr_over_dash", r.mr_over_dash}});
        }
        return j;
    }
};

inline CrossoverTable crossover_analysis(const SearchSpace& space, int c_in, int c_out,
                                         const std::vector<int>& n_range) {
    if (n_range.empty()) throw std::invalid_argument("crossover_analysis: empty range");
    CrossoverTable t;
    t.c_in = c_in;
    t.c_out = c_out;
    t.kbar = space.kbar;
    t.dbar = space.dbar;
    t.mr_leading = leading_coeff_mults(Strategy::MixedResults, c_in, c_out, space);
    t.mw_leading = leading_coeff_mults(Strategy::MixedWeights, c_in, c_out, space);
    t.mixed_weights_leading_cheaper = t.mw_leading < t.mr_leading;
    for (int n : n_range) {
        CrossoverRow row;
        row.n = n;
        row.mr_mults = count_ops(Strategy::MixedResults, c_in, c_out, n, space).mults;
        row.mw_mults = count_ops(Strategy::MixedWeights, c_in, c_out, n, space).mults;
        row.dash_mults = count_ops(Strategy::DashFourier, c_in, c_out, n, space).mults;
        row.cheapest = Strategy::MixedResults;
        std::uint64_t best = row.mr_mults;
        if (row.mw_mults < best) {
            best = row.mw_mults;
            row.cheapest = Strategy::MixedWeights;
        }
        if (row.dash_mults < best) row.cheapest = Strategy::DashFourier;
        row.mr_over_mw = static_cast<double>(row.mr_mults) / static_cast<double>(row.mw_mults);
        row.mr_over_dash = static_cast<double>(row.mr_mults) / static_cast<double>(row.dash_mults);
        t.rows.push_back(row);
    }
    return t;
}

}  // namespace dash
