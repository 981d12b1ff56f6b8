#pragma once

#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "dash/tensor.hpp"

namespace dash {

// SGD(momentum, nesterov, weight_decay): decay is added to the gradient
// before the momentum update (the conventional formulation).
//
//   g <- grad + wd * p
//   v <- mu * v + g
//   p <- p - lr * (nesterov ? g + mu * v : v)
class SgdOptimizer {
public:
    SgdOptimizer(double lr, double momentum = 0.0, bool nesterov = false, double weight_decay = 0.0)
        : lr_(lr), momentum_(momentum), nesterov_(nesterov), weight_decay_(weight_decay) {
        if (lr < 0.0) throw std::invalid_argument("sgd: lr must be nonnegative");
        if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("sgd: momentum must be in [0,1)");
        if (weight_decay < 0.0) throw std::invalid_argument("sgd: weight decay must be nonnegative");
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void step(const std::vector<Tensor*>& params) {
        for (Tensor* p : params) {
            if (!p->requires_grad) continue;
            if (p->grad.size() != p->data.size())
                throw std::invalid_argument("sgd: parameter has no gradient");
            auto& v = velocity_[p];
            if (v.size() != p->data.size()) v.assign(p->data.size(), 0.0);
            const bool use_momentum = momentum_ != 0.0;
            for (std::size_t i = 0; i < p->data.size(); ++i) {
                double g = p->grad[i] + weight_decay_ * p->data[i];
                double update = g;
                if (use_momentum) {
                    v[i] = momentum_ * v[i] + g;
                    update = nesterov_ ? g + momentum_ * v[i] : v[i];
                }
                p->data[i] -= lr_ * update;
            }
        }
    }

private:
    double lr_, momentum_;
    bool nesterov_;
    double weight_decay_;
    std::unordered_map<Tensor*, std::vector<double>> velocity_;
};

inline double global_grad_norm(const std::vector<Tensor*>& params) {
    double sq = 0.0;
    for (const Tensor* p : params)
        for (double g : p->grad) sq += g * g;
    return std::sqrt(sq);
}

// Scales all gradients so the joint global norm does not exceed threshold.
// Returns the pre-clip norm.
inline double clip_global_norm(const std::vector<Tensor*>& params, double threshold) {
    double norm = global_grad_norm(params);
    if (norm > threshold && norm > 0.0) {
        double s = threshold / norm;
        for (Tensor* p : params)
            for (double& g : p->grad) g *= s;
    }
    return norm;
}

inline void zero_grads(const std::vector<Tensor*>& params) {
    for (Tensor* p : params) p->zero_grad();
}

}  // namespace dash
