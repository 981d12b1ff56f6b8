#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dash {

// Effective filter size of a k-tap kernel at dilation d.
inline int effective_size(int k, int d) { return (k - 1) * d + 1; }

// The (K, D) grid of candidate convolutions, plus the two compound
// quantities the cost model is written in:
//   kbar = |D| * sum_{k in K} k
//   dbar = max_{k,d} (k-1)d + 1
struct SearchSpace {
    std::vector<int> kernel_sizes;  // K, sorted ascending
    std::vector<int> dilations;     // D, sorted ascending
    std::int64_t kbar = 0;
    std::int64_t dbar = 0;

    SearchSpace() = default;

    SearchSpace(std::vector<int> ks, std::vector<int> ds, bool allow_even_k = false)
        : kernel_sizes(std::move(ks)), dilations(std::move(ds)) {
        std::sort(kernel_sizes.begin(), kernel_sizes.end());
        std::sort(dilations.begin(), dilations.end());
        kernel_sizes.erase(std::unique(kernel_sizes.begin(), kernel_sizes.end()), kernel_sizes.end());
        dilations.erase(std::unique(dilations.begin(), dilations.end()), dilations.end());
        if (kernel_sizes.empty() || dilations.empty())
            throw std::invalid_argument("SearchSpace: K and D must be nonempty");
        for (int k : kernel_sizes) {
            if (k < 1) throw std::invalid_argument("SearchSpace: kernel sizes must be >= 1");
            if (!allow_even_k && k % 2 == 0)
                throw std::invalid_argument("SearchSpace: kernel sizes must be odd");
        }
        for (int d : dilations)
            if (d < 1) throw std::invalid_argument("SearchSpace: dilations must be >= 1");
        kbar = compute_kbar();
        dbar = compute_dbar();
    }

    std::int64_t compute_kbar() const {
        std::int64_t sum_k = 0;
        for (int k : kernel_sizes) sum_k += k;
        return static_cast<std::int64_t>(dilations.size()) * sum_k;
    }

    std::int64_t compute_dbar() const {
        std::int64_t m = 0;
        for (int k : kernel_sizes)
            for (int d : dilations) m = std::max<std::int64_t>(m, effective_size(k, d));
        return m;
    }

    int num_ops() const {
        return static_cast<int>(kernel_sizes.size() * dilations.size());
    }

    // Flat op index; (k,d) pairs are ordered lexicographically, k-major.
    int op_index(int ki, int di) const { return ki * static_cast<int>(dilations.size()) + di; }

    std::pair<int, int> op_at(int idx) const {
        int nd = static_cast<int>(dilations.size());
        return {kernel_sizes[static_cast<std::size_t>(idx / nd)],
                dilations[static_cast<std::size_t>(idx % nd)]};
    }

    int find_op(int k, int d) const {
        for (int i = 0; i < num_ops(); ++i) {
            auto [kk, dd] = op_at(i);
            if (kk == k && dd == d) return i;
        }
        return -1;
    }

    std::string to_config() const {
        std::string s = "{K: [";
        for (std::size_t i = 0; i < kernel_sizes.size(); ++i) {
            s += std::to_string(kernel_sizes[i]);
            if (i + 1 < kernel_sizes.size()) s += ", ";
        }
        s += "], D: [";
        for (std::size_t i = 0; i < dilations.size(); ++i) {
            s += std::to_string(dilations[i]);
            if (i + 1 < dilations.size()) s += ", ";
        }
        return s + "]}";
    }
};

struct SpaceRules {
    int kernel_step = 4;  // d in K = {3 + d(p-1)}
    int p_max = 5;
    int q_max = 4;  // D = {2^q - 1}
};

inline SpaceRules default_rules_1d() { return SpaceRules{4, 5, 4}; }
inline SpaceRules default_rules_2d() { return SpaceRules{2, 4, 4}; }

// K = {3 + step*(p-1) | 1 <= p <= p_max}, D = {2^q - 1 | 1 <= q <= q_max}.
inline SearchSpace make_search_space(const SpaceRules& rules) {
    if (rules.p_max < 1 || rules.q_max < 1)
        throw std::invalid_argument("make_search_space: p_max and q_max must be >= 1");
    std::vector<int> ks, ds;
    for (int p = 1; p <= rules.p_max; ++p) ks.push_back(3 + rules.kernel_step * (p - 1));
    for (int q = 1; q <= rules.q_max; ++q) ds.push_back((1 << q) - 1);
    return SearchSpace(std::move(ks), std::move(ds));
}

inline SearchSpace make_search_space_1d() { return make_search_space(default_rules_1d()); }
inline SearchSpace make_search_space_2d() { return make_search_space(default_rules_2d()); }

// The space family used by the scaling benchmark: K = {2p+1 | p <= c},
// D = {2^q - 1 | q <= c}.
inline SearchSpace make_bench_space(int c) {
    if (c < 1) throw std::invalid_argument("make_bench_space: c must be >= 1");
    std::vector<int> ks, ds;
    for (int p = 1; p <= c; ++p) ks.push_back(2 * p + 1);
    for (int q = 1; q <= c; ++q) ds.push_back((1 << q) - 1);
    return SearchSpace(std::move(ks), std::move(ds));
}

}  // namespace dash
