#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "dash/random.hpp"
#include "dash/tensor.hpp"

namespace dash {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Dynamic reverse-mode tape. A graph is built per forward pass (define-by-run)
// and torn down afterwards; Algorithm-style training loops rebuild it every
// iteration. Nodes are stored in insertion order, which is a topological
// order, so the backward sweep is a single reverse pass and gradient
// accumulation order is deterministic.
class Graph {
public:
    struct Node {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;
        bool needs_grad = false;
        Tensor* leaf = nullptr;
        std::function<void(Graph&)> backprop;
    };

    // --- node construction -------------------------------------------------

    Var make_node(Shape shape, bool needs_grad, std::function<void(Graph&)> backprop) {
        Node n;
        n.shape = std::move(shape);
        n.value.assign(static_cast<std::size_t>(numel(n.shape)), 0.0);
        n.needs_grad = needs_grad;
        n.backprop = std::move(backprop);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    // Leaf bound to a parameter tensor; backward() routes the node gradient
    // into t.grad.
    Var param(Tensor& t) {
        Var v = make_node(t.shape, t.requires_grad, nullptr);
        node(v).value = t.data;
        node(v).leaf = &t;
        return v;
    }

    Var constant(const Tensor& t) {
        Var v = make_node(t.shape, false, nullptr);
        node(v).value = t.data;
        return v;
    }

    Var constant(Shape shape, std::vector<double> data) {
        Var v = make_node(std::move(shape), false, nullptr);
        if (node(v).value.size() != data.size())
            throw std::invalid_argument("Graph::constant: data does not match shape");
        node(v).value = std::move(data);
        return v;
    }

    // --- accessors ----------------------------------------------------------

    Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
    const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }
    const Shape& shape(Var v) const { return node(v).shape; }
    const std::vector<double>& value(Var v) const { return node(v).value; }
    std::vector<double>& value_mut(Var v) { return node(v).value; }
    const std::vector<double>& grad(Var v) const { return node(v).grad; }
    std::vector<double>& grad_mut(Var v) { return node(v).grad; }
    bool needs_grad(Var v) const { return node(v).needs_grad; }
    std::size_t size() const { return nodes_.size(); }

    bool finite(Var v) const {
        for (double x : value(v))
            if (!std::isfinite(x)) return false;
        return true;
    }

    // --- backward ------------------------------------------------------------

    void backward(Var root) { backward(root, std::vector<double>(value(root).size(), 1.0)); }

    void backward(Var root, const std::vector<double>& seed) {
        Node& r = node(root);
        if (seed.size() != r.value.size())
            throw std::invalid_argument("Graph::backward: seed shape mismatch");
        for (int i = 0; i <= root.id; ++i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.needs_grad) n.grad.assign(n.value.size(), 0.0);
        }
        if (!r.needs_grad)
            return;  // nothing reachable requires grad
        r.grad = seed;
        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.needs_grad) continue;
            if (n.backprop) n.backprop(*this);
            if (n.leaf && n.leaf->requires_grad) {
                n.leaf->ensure_grad();
                for (std::size_t j = 0; j < n.grad.size(); ++j) n.leaf->grad[j] += n.grad[j];
            }
        }
    }

    // --- elementwise ops ------------------------------------------------------

    Var add(Var a, Var b) {
        check_same_shape(shape(a), shape(b), "add");
        Var out = make_binary(a, b, [](double x, double y) { return x + y; });
        set_backprop(out, [out, a, b](Graph& g) {
            g.accumulate(a, g.grad(out));
            g.accumulate(b, g.grad(out));
        });
        return out;
    }

    Var sub(Var a, Var b) {
        check_same_shape(shape(a), shape(b), "sub");
        Var out = make_binary(a, b, [](double x, double y) { return x - y; });
        set_backprop(out, [out, a, b](Graph& g) {
            g.accumulate(a, g.grad(out));
            g.accumulate_scaled(b, g.grad(out), -1.0);
        });
        return out;
    }

    Var mul(Var a, Var b) {
        check_same_shape(shape(a), shape(b), "mul");
        Var out = make_binary(a, b, [](double x, double y) { return x * y; });
        set_backprop(out, [out, a, b](Graph& g) {
            const auto& go = g.grad(out);
            if (g.needs_grad(a)) {
                auto& ga = g.grad_mut(a);
                const auto& vb = g.value(b);
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * vb[i];
            }
            if (g.needs_grad(b)) {
                auto& gb = g.grad_mut(b);
                const auto& va = g.value(a);
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * va[i];
            }
        });
        return out;
    }

    Var scale(Var a, double s) {
        Var out = make_node(shape(a), needs_grad(a), nullptr);
        const auto& va = value(a);
        auto& vo = value_mut(out);
        for (std::size_t i = 0; i < va.size(); ++i) vo[i] = va[i] * s;
        set_backprop(out, [out, a, s](Graph& g) { g.accumulate_scaled(a, g.grad(out), s); });
        return out;
    }

    Var relu(Var a) {
        Var out = make_node(shape(a), needs_grad(a), nullptr);
        const auto& va = value(a);
        auto& vo = value_mut(out);
        for (std::size_t i = 0; i < va.size(); ++i) vo[i] = va[i] > 0.0 ? va[i] : 0.0;
        set_backprop(out, [out, a](Graph& g) {
            if (!g.needs_grad(a)) return;
            const auto& go = g.grad(out);
            const auto& va2 = g.value(a);
            auto& ga = g.grad_mut(a);
            for (std::size_t i = 0; i < go.size(); ++i)
                if (va2[i] > 0.0) ga[i] += go[i];
        });
        return out;
    }

    // --- reductions ------------------------------------------------------------

    Var sum(Var a) {
        Var out = make_node(Shape{1}, needs_grad(a), nullptr);
        double s = 0.0;
        for (double x : value(a)) s += x;
        value_mut(out)[0] = s;
        set_backprop(out, [out, a](Graph& g) {
            if (!g.needs_grad(a)) return;
            double go = g.grad(out)[0];
            auto& ga = g.grad_mut(a);
            for (double& x : ga) x += go;
        });
        return out;
    }

    Var mean(Var a) {
        double inv = 1.0 / static_cast<double>(value(a).size());
        return scale(sum(a), inv);
    }

    // --- shape ops ---------------------------------------------------------------

    // Take every stride-th index along each spatial axis of [B,C,spatial...].
    // This is how strided convolution is realized: convolve, then subsample.
    Var subsample(Var a, int stride) {
        if (stride <= 0) throw std::invalid_argument("subsample: stride must be >= 1");
        if (stride == 1) return a;
        const Shape& in = shape(a);
        if (in.size() < 3) throw std::invalid_argument("subsample: expected [B,C,spatial...]");
        Shape out_shape(in.begin(), in.begin() + 2);
        std::vector<int> sp(in.begin() + 2, in.end());
        for (int e : sp) out_shape.push_back((e + stride - 1) / stride);
        Var out = make_node(out_shape, needs_grad(a), nullptr);
        strided_gather(value(a), in, value_mut(out), out_shape, stride);
        set_backprop(out, [out, a, stride](Graph& g) {
            if (!g.needs_grad(a)) return;
            strided_scatter_add(g.grad(out), g.shape(out), g.grad_mut(a), g.shape(a), stride);
        });
        return out;
    }

    Var global_avg_pool(Var a) {
        const Shape& in = shape(a);
        if (in.size() < 3) throw std::invalid_argument("global_avg_pool: expected [B,C,spatial...]");
        const int batch = in[0], ch = in[1];
        std::int64_t sp = 1;
        for (std::size_t i = 2; i < in.size(); ++i) sp *= in[i];
        Var out = make_node(Shape{batch, ch}, needs_grad(a), nullptr);
        const auto& va = value(a);
        auto& vo = value_mut(out);
        for (int b = 0; b < batch; ++b)
            for (int c = 0; c < ch; ++c) {
                const double* p = va.data() + (static_cast<std::int64_t>(b) * ch + c) * sp;
                double s = 0.0;
                for (std::int64_t i = 0; i < sp; ++i) s += p[i];
                vo[static_cast<std::size_t>(b) * ch + c] = s / static_cast<double>(sp);
            }
        set_backprop(out, [out, a, batch, ch, sp](Graph& g) {
            if (!g.needs_grad(a)) return;
            const auto& go = g.grad(out);
            auto& ga = g.grad_mut(a);
            const double inv = 1.0 / static_cast<double>(sp);
            for (int b = 0; b < batch; ++b)
                for (int c = 0; c < ch; ++c) {
                    double v = go[static_cast<std::size_t>(b) * ch + c] * inv;
                    double* p = ga.data() + (static_cast<std::int64_t>(b) * ch + c) * sp;
                    for (std::int64_t i = 0; i < sp; ++i) p[i] += v;
                }
        });
        return out;
    }

    // --- dense layer ---------------------------------------------------------------

    // y[b,o] = sum_f W[o,f] x[b,f] + bias[o]
    Var linear(Var x, Var w, Var bias) {
        const Shape& xs = shape(x);
        const Shape& ws = shape(w);
        if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
            throw std::invalid_argument("linear: bad shapes");
        const int batch = xs[0], feat = xs[1], out_dim = ws[0];
        if (shape(bias) != Shape{out_dim}) throw std::invalid_argument("linear: bias shape");
        bool ng = needs_grad(x) || needs_grad(w) || needs_grad(bias);
        Var out = make_node(Shape{batch, out_dim}, ng, nullptr);
        const auto& vx = value(x);
        const auto& vw = value(w);
        const auto& vb = value(bias);
        auto& vo = value_mut(out);
        for (int b = 0; b < batch; ++b)
            for (int o = 0; o < out_dim; ++o) {
                double s = vb[o];
                for (int f = 0; f < feat; ++f)
                    s += vw[static_cast<std::size_t>(o) * feat + f] * vx[static_cast<std::size_t>(b) * feat + f];
                vo[static_cast<std::size_t>(b) * out_dim + o] = s;
            }
        set_backprop(out, [out, x, w, bias, batch, feat, out_dim](Graph& g) {
            const auto& go = g.grad(out);
            if (g.needs_grad(x)) {
                auto& gx = g.grad_mut(x);
                const auto& vw2 = g.value(w);
                for (int b = 0; b < batch; ++b)
                    for (int o = 0; o < out_dim; ++o) {
                        double gv = go[static_cast<std::size_t>(b) * out_dim + o];
                        for (int f = 0; f < feat; ++f)
                            gx[static_cast<std::size_t>(b) * feat + f] += gv * vw2[static_cast<std::size_t>(o) * feat + f];
                    }
            }
            if (g.needs_grad(w)) {
                auto& gw = g.grad_mut(w);
                const auto& vx2 = g.value(x);
                for (int b = 0; b < batch; ++b)
                    for (int o = 0; o < out_dim; ++o) {
                        double gv = go[static_cast<std::size_t>(b) * out_dim + o];
                        for (int f = 0; f < feat; ++f)
                            gw[static_cast<std::size_t>(o) * feat + f] += gv * vx2[static_cast<std::size_t>(b) * feat + f];
                    }
            }
            if (g.needs_grad(bias)) {
                auto& gb = g.grad_mut(bias);
                for (int b = 0; b < batch; ++b)
                    for (int o = 0; o < out_dim; ++o) gb[o] += go[static_cast<std::size_t>(b) * out_dim + o];
            }
        });
        return out;
    }

    // --- dropout ----------------------------------------------------------------------

    // Inverted dropout; the mask is sampled at build time so a rebuilt graph
    // with the same rng state reproduces bit-identical results.
    Var dropout(Var x, double p, Rng& rng, bool training) {
        if (!training || p <= 0.0) return x;
        if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
        const double keep = 1.0 - p;
        std::vector<double> mask(value(x).size());
        for (auto& m : mask) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
        Var out = make_node(shape(x), needs_grad(x), nullptr);
        const auto& vx = value(x);
        auto& vo = value_mut(out);
        for (std::size_t i = 0; i < vx.size(); ++i) vo[i] = vx[i] * mask[i];
        auto shared = std::make_shared<std::vector<double>>(std::move(mask));
        set_backprop(out, [out, x, shared](Graph& g) {
            if (!g.needs_grad(x)) return;
            const auto& go = g.grad(out);
            auto& gx = g.grad_mut(x);
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (*shared)[i];
        });
        return out;
    }

    // --- simplex normalization -----------------------------------------------------------

    // softmax((z + noise) / temperature); noise is treated as data (the
    // Gumbel reparametrization), so gradients flow only through z.
    Var softmax_simplex(Var z, double temperature, const std::vector<double>* noise = nullptr) {
        if (temperature <= 0.0) throw std::invalid_argument("softmax_simplex: temperature must be > 0");
        const auto& vz = value(z);
        for (double v : vz)
            if (!std::isfinite(v)) throw std::invalid_argument("softmax_simplex: non-finite logits");
        if (noise && noise->size() != vz.size())
            throw std::invalid_argument("softmax_simplex: noise length mismatch");
        std::vector<double> t(vz.size());
        for (std::size_t i = 0; i < vz.size(); ++i)
            t[i] = (vz[i] + (noise ? (*noise)[i] : 0.0)) / temperature;
        double mx = *std::max_element(t.begin(), t.end());
        double denom = 0.0;
        for (double& v : t) {
            v = std::exp(v - mx);
            denom += v;
        }
        Var out = make_node(shape(z), needs_grad(z), nullptr);
        auto& vo = value_mut(out);
        for (std::size_t i = 0; i < t.size(); ++i) vo[i] = t[i] / denom;
        set_backprop(out, [out, z, temperature](Graph& g) {
            if (!g.needs_grad(z)) return;
            const auto& a = g.value(out);
            const auto& go = g.grad(out);
            double dot = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) dot += go[i] * a[i];
            auto& gz = g.grad_mut(z);
            for (std::size_t i = 0; i < a.size(); ++i)
                gz[i] += a[i] * (go[i] - dot) / temperature;
        });
        return out;
    }

    // --- losses ------------------------------------------------------------------------------

    // Mean cross entropy with an internal log-softmax; labels are class ids.
    Var cross_entropy(Var logits, const std::vector<int>& labels) {
        const Shape& s = shape(logits);
        if (s.size() != 2) throw std::invalid_argument("cross_entropy: logits must be [B,C]");
        const int batch = s[0], classes = s[1];
        if (static_cast<int>(labels.size()) != batch)
            throw std::invalid_argument("cross_entropy: label count mismatch");
        for (int y : labels)
            if (y < 0 || y >= classes) throw std::invalid_argument("cross_entropy: label out of range");
        const auto& vz = value(logits);
        double loss = 0.0;
        for (int b = 0; b < batch; ++b) {
            const double* z = vz.data() + static_cast<std::size_t>(b) * classes;
            double mx = z[0];
            for (int c = 1; c < classes; ++c) mx = std::max(mx, z[c]);
            double lse = 0.0;
            for (int c = 0; c < classes; ++c) lse += std::exp(z[c] - mx);
            loss += mx + std::log(lse) - z[labels[static_cast<std::size_t>(b)]];
        }
        Var out = make_node(Shape{1}, needs_grad(logits), nullptr);
        value_mut(out)[0] = loss / batch;
        auto lab = std::make_shared<std::vector<int>>(labels);
        set_backprop(out, [out, logits, lab, batch, classes](Graph& g) {
            if (!g.needs_grad(logits)) return;
            double go = g.grad(out)[0] / batch;
            const auto& vz2 = g.value(logits);
            auto& gz = g.grad_mut(logits);
            for (int b = 0; b < batch; ++b) {
                const double* z = vz2.data() + static_cast<std::size_t>(b) * classes;
                double mx = z[0];
                for (int c = 1; c < classes; ++c) mx = std::max(mx, z[c]);
                double lse = 0.0;
                for (int c = 0; c < classes; ++c) lse += std::exp(z[c] - mx);
                for (int c = 0; c < classes; ++c) {
                    double p = std::exp(z[c] - mx) / lse;
                    gz[static_cast<std::size_t>(b) * classes + c] +=
                        go * (p - (c == (*lab)[static_cast<std::size_t>(b)] ? 1.0 : 0.0));
                }
            }
        });
        return out;
    }

    Var mse(Var pred, const std::vector<double>& target) {
        const auto& vp = value(pred);
        if (vp.size() != target.size()) throw std::invalid_argument("mse: target size mismatch");
        double loss = 0.0;
        for (std::size_t i = 0; i < vp.size(); ++i) {
            double d = vp[i] - target[i];
            loss += d * d;
        }
        Var out = make_node(Shape{1}, needs_grad(pred), nullptr);
        value_mut(out)[0] = loss / static_cast<double>(vp.size());
        auto tgt = std::make_shared<std::vector<double>>(target);
        set_backprop(out, [out, pred, tgt](Graph& g) {
            if (!g.needs_grad(pred)) return;
            const auto& vp2 = g.value(pred);
            double go = g.grad(out)[0] * 2.0 / static_cast<double>(vp2.size());
            auto& gp = g.grad_mut(pred);
            for (std::size_t i = 0; i < vp2.size(); ++i) gp[i] += go * (vp2[i] - (*tgt)[i]);
        });
        return out;
    }

    // Binary cross entropy on logits, numerically stable form.
    Var bce_with_logits(Var logits, const std::vector<double>& target) {
        const auto& vz = value(logits);
        if (vz.size() != target.size())
            throw std::invalid_argument("bce_with_logits: target size mismatch");
        double loss = 0.0;
        for (std::size_t i = 0; i < vz.size(); ++i) {
            double z = vz[i];
            loss += std::max(z, 0.0) - z * target[i] + std::log1p(std::exp(-std::abs(z)));
        }
        Var out = make_node(Shape{1}, needs_grad(logits), nullptr);
        value_mut(out)[0] = loss / static_cast<double>(vz.size());
        auto tgt = std::make_shared<std::vector<double>>(target);
        set_backprop(out, [out, logits, tgt](Graph& g) {
            if (!g.needs_grad(logits)) return;
            const auto& vz2 = g.value(logits);
            double go = g.grad(out)[0] / static_cast<double>(vz2.size());
            auto& gz = g.grad_mut(logits);
            for (std::size_t i = 0; i < vz2.size(); ++i) {
                double sig = 1.0 / (1.0 + std::exp(-vz2[i]));
                gz[i] += go * (sig - (*tgt)[i]);
            }
        });
        return out;
    }

    // --- helpers for op implementations --------------------------------------------------------

    void set_backprop(Var v, std::function<void(Graph&)> fn) {
        if (node(v).needs_grad) node(v).backprop = std::move(fn);
    }

    void accumulate(Var v, const std::vector<double>& g) {
        if (!needs_grad(v)) return;
        auto& dst = grad_mut(v);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }

    void accumulate_scaled(Var v, const std::vector<double>& g, double s) {
        if (!needs_grad(v)) return;
        auto& dst = grad_mut(v);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * s;
    }

private:
    template <typename F>
    Var make_binary(Var a, Var b, F f) {
        Var out = make_node(shape(a), needs_grad(a) || needs_grad(b), nullptr);
        const auto& va = value(a);
        const auto& vb = value(b);
        auto& vo = value_mut(out);
        for (std::size_t i = 0; i < va.size(); ++i) vo[i] = f(va[i], vb[i]);
        return out;
    }

    static void strided_gather(const std::vector<double>& full, const Shape& full_shape,
                               std::vector<double>& sub, const Shape& sub_shape, int stride);
    static void strided_scatter_add(const std::vector<double>& sub, const Shape& sub_shape,
                                    std::vector<double>& full, const Shape& full_shape, int stride);

    // deque: references into nodes stay valid while the tape grows
    std::deque<Node> nodes_;
};

inline void Graph::strided_gather(const std::vector<double>& full, const Shape& full_shape,
                                  std::vector<double>& sub, const Shape& sub_shape, int stride) {
    const int bc = full_shape[0] * full_shape[1];
    if (full_shape.size() == 3) {
        const int n = full_shape[2], q = sub_shape[2];
        for (int m = 0; m < bc; ++m)
            for (int i = 0; i < q; ++i)
                sub[static_cast<std::size_t>(m) * q + i] =
                    full[static_cast<std::size_t>(m) * n + static_cast<std::size_t>(i) * stride];
    } else if (full_shape.size() == 4) {
        const int h = full_shape[2], w = full_shape[3];
        const int qh = sub_shape[2], qw = sub_shape[3];
        for (int m = 0; m < bc; ++m)
            for (int p = 0; p < qh; ++p)
                for (int q2 = 0; q2 < qw; ++q2)
                    sub[(static_cast<std::size_t>(m) * qh + p) * qw + q2] =
                        full[(static_cast<std::size_t>(m) * h + static_cast<std::size_t>(p) * stride) * w +
                             static_cast<std::size_t>(q2) * stride];
    } else {
        throw std::invalid_argument("subsample: unsupported rank");
    }
}

inline void Graph::strided_scatter_add(const std::vector<double>& sub, const Shape& sub_shape,
                                       std::vector<double>& full, const Shape& full_shape, int stride) {
    const int bc = full_shape[0] * full_shape[1];
    if (full_shape.size() == 3) {
        const int n = full_shape[2], q = sub_shape[2];
        for (int m = 0; m < bc; ++m)
            for (int i = 0; i < q; ++i)
                full[static_cast<std::size_t>(m) * n + static_cast<std::size_t>(i) * stride] +=
                    sub[static_cast<std::size_t>(m) * q + i];
    } else if (full_shape.size() == 4) {
        const int h = full_shape[2], w = full_shape[3];
        const int qh = sub_shape[2], qw = sub_shape[3];
        for (int m = 0; m < bc; ++m)
            for (int p = 0; p < qh; ++p)
                for (int q2 = 0; q2 < qw; ++q2)
                    full[(static_cast<std::size_t>(m) * h + static_cast<std::size_t>(p) * stride) * w +
                         static_cast<std::size_t>(q2) * stride] +=
                        sub[(static_cast<std::size_t>(m) * qh + p) * qw + q2];
    } else {
        throw std::invalid_argument("subsample: unsupported rank");
    }
}

}  // namespace dash
