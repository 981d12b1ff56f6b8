#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dash/aggconv.hpp"
#include "dash/conv.hpp"
#include "dash/graph.hpp"
#include "dash/random.hpp"
#include "dash/search_space.hpp"

namespace dash {

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

struct BatchNormState {
    Tensor scale, shift;  // [C]
    std::vector<double> running_mean, running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    static BatchNormState init(int channels) {
        BatchNormState bn;
        bn.scale = Tensor(Shape{channels}, std::vector<double>(static_cast<std::size_t>(channels), 1.0), true);
        bn.shift = Tensor(Shape{channels}, true);
        bn.running_mean.assign(static_cast<std::size_t>(channels), 0.0);
        bn.running_var.assign(static_cast<std::size_t>(channels), 1.0);
        return bn;
    }
};

// Per-channel normalization over (batch, spatial). Training mode uses batch
// statistics and updates the running averages; eval mode uses the running
// averages and has a plain affine backward.
inline Var batch_norm(Graph& g, Var x, BatchNormState& bn, bool training) {
    const Shape& xs = g.shape(x);
    if (xs.size() < 3) throw std::invalid_argument("batch_norm: expected [B,C,spatial...]");
    const int B = xs[0], C = xs[1];
    std::int64_t sp = 1;
    for (std::size_t i = 2; i < xs.size(); ++i) sp *= xs[i];
    const std::int64_t cnt = static_cast<std::int64_t>(B) * sp;

    Var sv = g.param(bn.scale);
    Var hv = g.param(bn.shift);
    bool ng = g.needs_grad(x) || bn.scale.requires_grad || bn.shift.requires_grad;
    Var out = g.make_node(xs, ng, nullptr);

    const auto& vx = g.value(x);
    auto& vo = g.value_mut(out);
    auto mean = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C), 0.0);
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C), 0.0);

    auto at = [&](int b, int c, std::int64_t i) {
        return (static_cast<std::size_t>(b) * C + c) * sp + static_cast<std::size_t>(i);
    };

    for (int c = 0; c < C; ++c) {
        double mu, var;
        if (training) {
            double s = 0.0;
            for (int b = 0; b < B; ++b)
                for (std::int64_t i = 0; i < sp; ++i) s += vx[at(b, c, i)];
            mu = s / static_cast<double>(cnt);
            double v = 0.0;
            for (int b = 0; b < B; ++b)
                for (std::int64_t i = 0; i < sp; ++i) {
                    double d = vx[at(b, c, i)] - mu;
                    v += d * d;
                }
            var = v / static_cast<double>(cnt);
            bn.running_mean[static_cast<std::size_t>(c)] =
                (1.0 - bn.momentum) * bn.running_mean[static_cast<std::size_t>(c)] + bn.momentum * mu;
            bn.running_var[static_cast<std::size_t>(c)] =
                (1.0 - bn.momentum) * bn.running_var[static_cast<std::size_t>(c)] + bn.momentum * var;
        } else {
            mu = bn.running_mean[static_cast<std::size_t>(c)];
            var = bn.running_var[static_cast<std::size_t>(c)];
        }
        (*mean)[static_cast<std::size_t>(c)] = mu;
        (*inv_std)[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var + bn.eps);
        const double gam = bn.scale.data[static_cast<std::size_t>(c)];
        const double bet = bn.shift.data[static_cast<std::size_t>(c)];
        for (int b = 0; b < B; ++b)
            for (std::int64_t i = 0; i < sp; ++i)
                vo[at(b, c, i)] = gam * (vx[at(b, c, i)] - mu) * (*inv_std)[static_cast<std::size_t>(c)] + bet;
    }

    g.set_backprop(out, [out, x, sv, hv, mean, inv_std, B, C, sp, cnt, training](Graph& gg) {
        const auto& go = gg.grad(out);
        const auto& vx2 = gg.value(x);
        const auto& gamv = gg.value(sv);
        auto idx = [&](int b, int c, std::int64_t i) {
            return (static_cast<std::size_t>(b) * C + c) * sp + static_cast<std::size_t>(i);
        };
        for (int c = 0; c < C; ++c) {
            const double mu = (*mean)[static_cast<std::size_t>(c)];
            const double istd = (*inv_std)[static_cast<std::size_t>(c)];
            const double gam = gamv[static_cast<std::size_t>(c)];
            double sum_g = 0.0, sum_gx = 0.0;
            for (int b = 0; b < B; ++b)
                for (std::int64_t i = 0; i < sp; ++i) {
                    double gv = go[idx(b, c, i)];
                    sum_g += gv;
                    sum_gx += gv * (vx2[idx(b, c, i)] - mu) * istd;
                }
            if (gg.needs_grad(hv)) gg.grad_mut(hv)[static_cast<std::size_t>(c)] += sum_g;
            if (gg.needs_grad(sv)) gg.grad_mut(sv)[static_cast<std::size_t>(c)] += sum_gx;
            if (gg.needs_grad(x)) {
                auto& gx = gg.grad_mut(x);
                if (training) {
                    const double invn = 1.0 / static_cast<double>(cnt);
                    for (int b = 0; b < B; ++b)
                        for (std::int64_t i = 0; i < sp; ++i) {
                            double xhat = (vx2[idx(b, c, i)] - mu) * istd;
                            gx[idx(b, c, i)] +=
                                gam * istd * (go[idx(b, c, i)] - invn * sum_g - invn * xhat * sum_gx);
                        }
                } else {
                    for (int b = 0; b < B; ++b)
                        for (std::int64_t i = 0; i < sp; ++i)
                            gx[idx(b, c, i)] += go[idx(b, c, i)] * gam * istd;
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Backbone description
// ---------------------------------------------------------------------------

enum class HeadKind { Classification, DenseRegression, Multilabel };

inline const char* to_string(HeadKind h) {
    switch (h) {
        case HeadKind::Classification: return "classification";
        case HeadKind::DenseRegression: return "dense";
        default: return "multilabel";
    }
}

enum class BlockKind { Residual, Plain };

struct BlockSpec {
    BlockKind kind = BlockKind::Residual;
    int c_out = 0;
    int stride = 1;
    std::vector<int> baseline_kernels = {8, 5, 3};  // one conv slot per entry
};

struct BackboneSpec {
    int dims = 1;  // 1 or 2
    int in_channels = 1;
    std::vector<BlockSpec> blocks;
    HeadKind head = HeadKind::Classification;
    int head_out = 2;  // classes / labels / dense output channels
    double dropout = 0.0;

    int conv_slots() const {
        int n = 0;
        for (const auto& b : blocks)
            n += b.kind == BlockKind::Residual ? static_cast<int>(b.baseline_kernels.size()) : 1;
        return n;
    }
};

// Width rule for the 1D classification backbone: min(4^(classes/10 + 1), 64).
inline int channels_for_classes(int num_classes) {
    int e = num_classes / 10 + 1;
    std::int64_t w = 1;
    for (int i = 0; i < e && w < 64; ++i) w *= 4;
    return static_cast<int>(std::min<std::int64_t>(w, 64));
}

// 3 residual blocks of 3 convs each; widths follow the class-count rule.
inline BackboneSpec backbone_1d(int in_channels, int num_classes) {
    BackboneSpec spec;
    spec.dims = 1;
    spec.in_channels = in_channels;
    spec.head = HeadKind::Classification;
    spec.head_out = num_classes;
    int c = channels_for_classes(num_classes);
    for (int i = 0; i < 3; ++i) spec.blocks.push_back(BlockSpec{BlockKind::Residual, c, 1, {8, 5, 3}});
    return spec;
}

// Minimal dense backbone: a single mixed-conv slot feeding a pointwise head.
// Used by the synthetic kernel-recovery experiments.
inline BackboneSpec backbone_dense_1d(int in_channels, int out_channels) {
    BackboneSpec spec;
    spec.dims = 1;
    spec.in_channels = in_channels;
    spec.head = HeadKind::DenseRegression;
    spec.head_out = out_channels;
    spec.blocks.push_back(BlockSpec{BlockKind::Plain, in_channels, 1, {3}});
    return spec;
}

// Toy 2D stack with fixed widths.
inline BackboneSpec backbone_2d_toy(int in_channels, int num_classes, int width = 4) {
    BackboneSpec spec;
    spec.dims = 2;
    spec.in_channels = in_channels;
    spec.head = HeadKind::Classification;
    spec.head_out = num_classes;
    spec.blocks.push_back(BlockSpec{BlockKind::Residual, width, 1, {3, 3}});
    spec.blocks.push_back(BlockSpec{BlockKind::Residual, width, 1, {3, 3}});
    return spec;
}

// ---------------------------------------------------------------------------
// Targets and losses
// ---------------------------------------------------------------------------

struct TargetBatch {
    std::vector<int> labels;  // classification
    std::vector<double> values;  // dense / multilabel, flattened
};

inline Var task_loss(Graph& g, HeadKind kind, Var output, const TargetBatch& t) {
    switch (kind) {
        case HeadKind::Classification: return g.cross_entropy(output, t.labels);
        case HeadKind::DenseRegression: return g.mse(output, t.values);
        default: return g.bce_with_logits(output, t.values);
    }
}

// ---------------------------------------------------------------------------
// Shared backbone assembly
// ---------------------------------------------------------------------------

namespace detail {

// Builds the block/head structure; conv_fn supplies the convolution at each
// slot (mixed op for the supernet, picked op for a discretized model).
struct BackboneParts {
    std::vector<BatchNormState>* bns;
    std::vector<Tensor>* shortcuts;  // pointwise conv weights, one slot per block (maybe unused)
    Tensor* head_w;
    Tensor* head_b;
    Tensor* head_conv;
};

inline Var forward_backbone(Graph& g, Var x, const BackboneSpec& spec, PaddingMode mode,
                            const std::function<Var(Graph&, int, Var)>& conv_fn,
                            BackboneParts parts, bool training, double dropout_p, Rng& drop_rng) {
    Var h = x;
    int slot = 0;
    int bn_idx = 0;
    int crt = spec.in_channels;
    for (std::size_t bi = 0; bi < spec.blocks.size(); ++bi) {
        const BlockSpec& blk = spec.blocks[bi];
        if (blk.kind == BlockKind::Plain) {
            h = conv_fn(g, slot++, h);
            if (blk.stride > 1) h = g.subsample(h, blk.stride);
            crt = blk.c_out;
            continue;
        }
        Var input = h;
        const int convs = static_cast<int>(blk.baseline_kernels.size());
        for (int j = 0; j < convs; ++j) {
            h = conv_fn(g, slot++, h);
            if (j == std::min(1, convs - 1) && blk.stride > 1) h = g.subsample(h, blk.stride);
            if (training && dropout_p > 0.0) h = g.dropout(h, dropout_p, drop_rng, true);
            h = batch_norm(g, h, (*parts.bns)[static_cast<std::size_t>(bn_idx++)], training);
            h = g.relu(h);
        }
        Var sc = input;
        if (blk.stride > 1) sc = g.subsample(sc, blk.stride);
        if (crt != blk.c_out) {
            Tensor& pw = (*parts.shortcuts)[bi];
            sc = single_conv(g, sc, pw, 1, mode);
        }
        h = g.add(h, sc);
        crt = blk.c_out;
    }

    switch (spec.head) {
        case HeadKind::Classification:
        case HeadKind::Multilabel: {
            Var pooled = g.global_avg_pool(h);
            Var wv = g.param(*parts.head_w);
            Var bv = g.param(*parts.head_b);
            return g.linear(pooled, wv, bv);
        }
        case HeadKind::DenseRegression:
        default:
            return single_conv(g, h, *parts.head_conv, 1, mode);
    }
}

inline Tensor init_fanin(Shape shape, double fan_in, Rng& rng) {
    Tensor t(std::move(shape), true);
    double bound = 1.0 / std::sqrt(fan_in);
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

// Allocates BN states, shortcut convs and the head for a backbone.
inline void init_backbone_parts(const BackboneSpec& spec, Rng& rng,
                                std::vector<BatchNormState>& bns, std::vector<Tensor>& shortcuts,
                                Tensor& head_w, Tensor& head_b, Tensor& head_conv) {
    bns.clear();
    shortcuts.assign(spec.blocks.size(), Tensor{});
    int crt = spec.in_channels;
    for (std::size_t bi = 0; bi < spec.blocks.size(); ++bi) {
        const BlockSpec& blk = spec.blocks[bi];
        if (blk.kind == BlockKind::Residual) {
            for (std::size_t j = 0; j < blk.baseline_kernels.size(); ++j)
                bns.push_back(BatchNormState::init(blk.c_out));
            if (crt != blk.c_out) {
                Shape s = spec.dims == 1 ? Shape{blk.c_out, crt, 1} : Shape{blk.c_out, crt, 1, 1};
                shortcuts[bi] = init_fanin(std::move(s), crt, rng);
            }
        }
        crt = blk.c_out;
    }
    if (spec.head == HeadKind::DenseRegression) {
        Shape s = spec.dims == 1 ? Shape{spec.head_out, crt, 1} : Shape{spec.head_out, crt, 1, 1};
        head_conv = init_fanin(std::move(s), crt, rng);
    } else {
        head_w = init_fanin(Shape{spec.head_out, crt}, crt, rng);
        head_b = Tensor(Shape{spec.head_out}, true);
    }
}

inline void collect_backbone_params(const BackboneSpec& spec, std::vector<BatchNormState>& bns,
                                    std::vector<Tensor>& shortcuts, Tensor& head_w, Tensor& head_b,
                                    Tensor& head_conv, std::vector<Tensor*>& out) {
    for (auto& bn : bns) {
        out.push_back(&bn.scale);
        out.push_back(&bn.shift);
    }
    for (auto& sc : shortcuts)
        if (!sc.data.empty()) out.push_back(&sc);
    if (spec.head == HeadKind::DenseRegression) {
        out.push_back(&head_conv);
    } else {
        out.push_back(&head_w);
        out.push_back(&head_b);
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Supernet
// ---------------------------------------------------------------------------

struct ConvSlot {
    KernelBank bank;
    ArchParams arch;
};

class SupernetModel {
public:
    BackboneSpec spec;
    SearchSpace space;
    Strategy strategy = Strategy::DashFourier;
    DilationImpl impl = DilationImpl::Kronecker;
    PaddingMode mode = PaddingMode::Circular;
    std::vector<ConvSlot> slots;
    std::vector<BatchNormState> bns;
    std::vector<Tensor> shortcuts;
    Tensor head_w, head_b, head_conv;
    Rng dropout_rng{1};

    Var forward(Graph& g, Var x, bool training) {
        ++conv_counters().model_forwards;
        auto conv_fn = [this](Graph& gg, int slot, Var h) {
            Var alpha = normalize_alpha(gg, slots[static_cast<std::size_t>(slot)].arch);
            return aggconv(gg, h, slots[static_cast<std::size_t>(slot)].bank, alpha, space, strategy,
                           impl, mode);
        };
        detail::BackboneParts parts{&bns, &shortcuts, &head_w, &head_b, &head_conv};
        // the supernet trains with dropout disabled (p = 0 during search)
        return detail::forward_backbone(g, x, spec, mode, conv_fn, parts, training, 0.0, dropout_rng);
    }

    std::vector<Tensor*> weight_params() {
        std::vector<Tensor*> out;
        for (auto& s : slots)
            for (auto& e : s.bank.entries) out.push_back(&e.weight);
        detail::collect_backbone_params(spec, bns, shortcuts, head_w, head_b, head_conv, out);
        return out;
    }

    std::vector<Tensor*> alpha_params() {
        std::vector<Tensor*> out;
        for (auto& s : slots) out.push_back(&s.arch.logits);
        return out;
    }
};

inline SupernetModel build_supernet(const BackboneSpec& spec, const SearchSpace& space,
                                    Strategy strategy, std::uint64_t seed,
                                    DilationImpl impl = DilationImpl::Kronecker,
                                    PaddingMode mode = PaddingMode::Circular,
                                    ArchParams::Mode alpha_mode = ArchParams::Mode::GumbelSoftmax) {
    if (spec.blocks.empty()) throw std::invalid_argument("build_supernet: empty block list");
    SupernetModel m;
    m.spec = spec;
    m.space = space;
    m.strategy = strategy;
    m.impl = impl;
    m.mode = mode;
    Rng init_rng(derive_seed(seed, "supernet-init"));
    int crt = spec.in_channels;
    int slot = 0;
    for (const auto& blk : spec.blocks) {
        const int convs = blk.kind == BlockKind::Residual ? static_cast<int>(blk.baseline_kernels.size()) : 1;
        for (int j = 0; j < convs; ++j) {
            ConvSlot s;
            s.bank = KernelBank::init(space, crt, blk.c_out, spec.dims, init_rng);
            s.arch = ArchParams::init(space, 1.0, alpha_mode, derive_seed(seed, "gumbel", static_cast<std::uint64_t>(slot)));
            m.slots.push_back(std::move(s));
            crt = blk.c_out;
            ++slot;
        }
    }
    detail::init_backbone_parts(spec, init_rng, m.bns, m.shortcuts, m.head_w, m.head_b, m.head_conv);
    m.dropout_rng = Rng(derive_seed(seed, "dropout"));
    return m;
}

// ---------------------------------------------------------------------------
// Discretized model
// ---------------------------------------------------------------------------

class DiscretizedModel {
public:
    BackboneSpec spec;
    PaddingMode mode = PaddingMode::Circular;
    std::vector<std::pair<int, int>> picks;  // (k, d) per slot
    std::vector<Tensor> conv_weights;
    std::vector<BatchNormState> bns;
    std::vector<Tensor> shortcuts;
    Tensor head_w, head_b, head_conv;
    Rng dropout_rng{1};
    double dropout_p = 0.0;

    Var forward(Graph& g, Var x, bool training) {
        ++conv_counters().model_forwards;
        auto conv_fn = [this](Graph& gg, int slot, Var h) {
            return single_conv(gg, h, conv_weights[static_cast<std::size_t>(slot)],
                               picks[static_cast<std::size_t>(slot)].second, mode);
        };
        detail::BackboneParts parts{&bns, &shortcuts, &head_w, &head_b, &head_conv};
        return detail::forward_backbone(g, x, spec, mode, conv_fn, parts, training, dropout_p,
                                        dropout_rng);
    }

    std::vector<Tensor*> params() {
        std::vector<Tensor*> out;
        for (auto& w : conv_weights) out.push_back(&w);
        detail::collect_backbone_params(spec, bns, shortcuts, head_w, head_b, head_conv, out);
        return out;
    }
};

enum class DiscretizeWeights { Fresh, CopyFromBank };

// Argmax selection per slot (ties resolved toward the lowest (k, d)). Fresh
// weights are the default for retraining; CopyFromBank exists so the
// one-hot-consistency property can be checked exactly.
inline DiscretizedModel discretize(SupernetModel& model, DiscretizeWeights how,
                                   std::uint64_t seed) {
    DiscretizedModel d;
    d.spec = model.spec;
    d.mode = model.mode;
    Rng rng(derive_seed(seed, "discretized-init"));
    int crt = model.spec.in_channels;
    std::size_t slot = 0;
    for (const auto& blk : model.spec.blocks) {
        const int convs = blk.kind == BlockKind::Residual ? static_cast<int>(blk.baseline_kernels.size()) : 1;
        for (int j = 0; j < convs; ++j, ++slot) {
            ConvSlot& s = model.slots[slot];
            int pick = argmax_op(alpha_values(s.arch));
            auto [k, dd] = model.space.op_at(pick);
            d.picks.emplace_back(k, dd);
            if (how == DiscretizeWeights::CopyFromBank) {
                Tensor w = s.bank.entries[static_cast<std::size_t>(pick)].weight;
                w.grad.clear();
                d.conv_weights.push_back(std::move(w));
            } else {
                Shape shape = model.spec.dims == 1 ? Shape{blk.c_out, crt, k} : Shape{blk.c_out, crt, k, k};
                double fan_in = static_cast<double>(crt) * k * (model.spec.dims == 2 ? k : 1);
                d.conv_weights.push_back(detail::init_fanin(std::move(shape), fan_in, rng));
            }
            crt = blk.c_out;
        }
    }
    if (how == DiscretizeWeights::CopyFromBank) {
        d.bns = model.bns;
        for (auto& bn : d.bns) {
            bn.scale.grad.clear();
            bn.shift.grad.clear();
        }
        d.shortcuts = model.shortcuts;
        for (auto& sc : d.shortcuts) sc.grad.clear();
        d.head_w = model.head_w;
        d.head_b = model.head_b;
        d.head_conv = model.head_conv;
        d.head_w.grad.clear();
        d.head_b.grad.clear();
        d.head_conv.grad.clear();
    } else {
        detail::init_backbone_parts(d.spec, rng, d.bns, d.shortcuts, d.head_w, d.head_b, d.head_conv);
    }
    d.dropout_rng = Rng(derive_seed(seed, "discretized-dropout"));
    return d;
}

// Builds a discretized model directly from an explicit per-slot (k, d) list
// (the serialized-architecture path).
inline DiscretizedModel build_discretized(const BackboneSpec& spec,
                                          const std::vector<std::pair<int, int>>& picks,
                                          PaddingMode mode, std::uint64_t seed) {
    if (static_cast<int>(picks.size()) != spec.conv_slots())
        throw std::invalid_argument("build_discretized: pick count != conv slots");
    DiscretizedModel d;
    d.spec = spec;
    d.mode = mode;
    d.picks = picks;
    Rng rng(derive_seed(seed, "discretized-init"));
    int crt = spec.in_channels;
    std::size_t slot = 0;
    for (const auto& blk : spec.blocks) {
        const int convs = blk.kind == BlockKind::Residual ? static_cast<int>(blk.baseline_kernels.size()) : 1;
        for (int j = 0; j < convs; ++j, ++slot) {
            auto [k, dd] = picks[slot];
            (void)dd;
            Shape shape = spec.dims == 1 ? Shape{blk.c_out, crt, k} : Shape{blk.c_out, crt, k, k};
            double fan_in = static_cast<double>(crt) * k * (spec.dims == 2 ? k : 1);
            d.conv_weights.push_back(detail::init_fanin(std::move(shape), fan_in, rng));
            crt = blk.c_out;
        }
    }
    detail::init_backbone_parts(spec, rng, d.bns, d.shortcuts, d.head_w, d.head_b, d.head_conv);
    d.dropout_rng = Rng(derive_seed(seed, "discretized-dropout"));
    return d;
}

}  // namespace dash
