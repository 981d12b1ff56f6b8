#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dash {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw std::invalid_argument("tensor extent must be positive");
        n *= e;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ",";
    }
    return out + "]";
}

// Dense f64 array with an optional gradient buffer. Parameters of a model are
// Tensors; activations live inside Graph nodes. Everything is 64-bit so the
// strategy-equivalence checks have headroom well below 1e-8.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a backward pass touches it
    bool requires_grad = false;

    Tensor() = default;

    Tensor(Shape s, bool req_grad = false)
        : shape(std::move(s)), data(static_cast<std::size_t>(numel(shape)), 0.0),
          requires_grad(req_grad) {}

    Tensor(Shape s, std::vector<double> values, bool req_grad = false)
        : shape(std::move(s)), data(std::move(values)), requires_grad(req_grad) {
        if (static_cast<std::int64_t>(data.size()) != numel(shape))
            throw std::invalid_argument("tensor data length does not match shape " + shape_str(shape));
    }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    }

    bool finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

inline void check_same_shape(const Shape& a, const Shape& b, const char* where) {
    if (a != b)
        throw std::invalid_argument(std::string(where) + ": shape mismatch " + shape_str(a) +
                                    " vs " + shape_str(b));
}

}  // namespace dash
