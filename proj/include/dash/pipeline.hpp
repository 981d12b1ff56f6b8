#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dash/net.hpp"
#include "dash/sgd.hpp"
#include "dash/task.hpp"

namespace dash {

struct DivergenceError : std::runtime_error {
    int epoch, batch;
    DivergenceError(int e, int b)
        : std::runtime_error("non-finite loss at epoch " + std::to_string(e) + ", batch " +
                             std::to_string(b)),
          epoch(e), batch(b) {}
};

// Search-phase settings. Defaults are the desk-scale shape of the reference
// schedule: both optimizers are SGD(momentum 0.9, nesterov) with weight decay
// 5e-4, the architecture lr is half the weight lr, the lr decays by 0.2 at
// 60% of the epochs, gradients are clipped to global norm 1, and each epoch
// subsamples 20% of the training points.
struct SearchConfig {
    int epochs = 30;
    int batch_size = 32;
    double weight_lr = 0.1;
    double alpha_lr = 0.05;
    double lr_decay_factor = 0.2;
    std::vector<int> lr_milestones;  // empty -> {floor(0.6 * epochs)}
    double clip_threshold = 1.0;
    double temperature = 1.0;
    double subsample_ratio = 0.2;
    double momentum = 0.9;
    bool nesterov = true;
    double weight_decay = 5e-4;
    bool weight_decay_on_alpha = true;  // the reference settings use one optimizer config for both
    std::uint64_t seed = 0;
    Strategy strategy = Strategy::DashFourier;
    DilationImpl impl = DilationImpl::Kronecker;
    PaddingMode mode = PaddingMode::Circular;
    ArchParams::Mode alpha_mode = ArchParams::Mode::GumbelSoftmax;

    std::vector<int> milestones() const {
        if (!lr_milestones.empty()) return lr_milestones;
        return {static_cast<int>(0.6 * epochs)};
    }
};

struct SearchStats {
    std::vector<double> epoch_losses;
    int iterations = 0;
};

namespace detail {

inline std::vector<std::size_t> batch_indices(const std::vector<std::size_t>& pool, std::size_t from,
                                              std::size_t count) {
    std::vector<std::size_t> out;
    for (std::size_t i = from; i < std::min(pool.size(), from + count); ++i) out.push_back(pool[i]);
    return out;
}

}  // namespace detail

// Algorithm: per epoch, subsample ceil(p*|Z|) points without replacement;
// per minibatch run ONE forward/backward and take the alpha step then the
// weight step from that same evaluation's gradients, under joint global-norm
// clipping.
inline SearchStats search(SupernetModel& model, const SyntheticTask& task, const SearchConfig& cfg) {
    if (cfg.subsample_ratio <= 0.0 || cfg.subsample_ratio > 1.0)
        throw std::invalid_argument("search: subsample ratio must be in (0, 1]");
    if (cfg.weight_lr <= 0.0) throw std::invalid_argument("search: lr must be positive");
    SearchStats stats;
    SgdOptimizer wopt(cfg.weight_lr, cfg.momentum, cfg.nesterov, cfg.weight_decay);
    SgdOptimizer aopt(cfg.alpha_lr, cfg.momentum, cfg.nesterov,
                      cfg.weight_decay_on_alpha ? cfg.weight_decay : 0.0);
    auto weights = model.weight_params();
    auto alphas = model.alpha_params();
    std::vector<Tensor*> all = weights;
    all.insert(all.end(), alphas.begin(), alphas.end());

    Rng subsample_rng(derive_seed(cfg.seed, "subsample"));
    const std::size_t total = static_cast<std::size_t>(task.train_count());
    const std::size_t take =
        static_cast<std::size_t>(std::ceil(cfg.subsample_ratio * static_cast<double>(total)));
    const auto milestones = cfg.milestones();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int m : milestones)
            if (epoch == m && m > 0) {
                wopt.set_lr(wopt.lr() * cfg.lr_decay_factor);
                aopt.set_lr(aopt.lr() * cfg.lr_decay_factor);
            }
        auto pool = subsample_rng.sample_without_replacement(total, take);
        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t from = 0; from < pool.size(); from += static_cast<std::size_t>(cfg.batch_size)) {
            auto idx = detail::batch_indices(pool, from, static_cast<std::size_t>(cfg.batch_size));
            Graph g;
            Var x = g.constant(slice_rows(task.train_x, idx));
            Var out = model.forward(g, x, true);
            Var loss = task_loss(g, task.head, out, slice_targets(task, true, idx));
            double lv = g.value(loss)[0];
            if (!std::isfinite(lv)) throw DivergenceError(epoch, batches);
            g.backward(loss);
            clip_global_norm(all, cfg.clip_threshold);
            aopt.step(alphas);   // architecture step first, from the same gradients
            wopt.step(weights);
            zero_grads(all);
            epoch_loss += lv;
            ++batches;
            ++stats.iterations;
        }
        stats.epoch_losses.push_back(batches ? epoch_loss / batches : 0.0);
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
    double loss = 0.0;
    double metric = 0.0;  // classification: accuracy; dense: mse; multilabel: bce
};

template <typename Model>
inline EvalResult evaluate_split(Model& model, const SyntheticTask& task, bool train_split,
                                 int batch_size = 64) {
    const Tensor& xs = train_split ? task.train_x : task.test_x;
    const std::size_t total = static_cast<std::size_t>(xs.shape[0]);
    double loss_sum = 0.0;
    double metric_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t from = 0; from < total; from += static_cast<std::size_t>(batch_size)) {
        std::vector<std::size_t> idx;
        for (std::size_t i = from; i < std::min(total, from + static_cast<std::size_t>(batch_size)); ++i)
            idx.push_back(i);
        Graph g;
        Var x = g.constant(slice_rows(xs, idx));
        Var out = model.forward(g, x, false);
        TargetBatch tb = slice_targets(task, train_split, idx);
        Var loss = task_loss(g, task.head, out, tb);
        loss_sum += g.value(loss)[0] * static_cast<double>(idx.size());
        if (task.head == HeadKind::Classification) {
            const auto& logits = g.value(out);
            const int classes = g.shape(out)[1];
            for (std::size_t b = 0; b < idx.size(); ++b) {
                int best = 0;
                for (int c = 1; c < classes; ++c)
                    if (logits[b * static_cast<std::size_t>(classes) + static_cast<std::size_t>(c)] >
                        logits[b * static_cast<std::size_t>(classes) + static_cast<std::size_t>(best)])
                        best = c;
                if (best == tb.labels[b]) metric_sum += 1.0;
            }
        } else {
            metric_sum += g.value(loss)[0] * static_cast<double>(idx.size());
        }
        count += idx.size();
    }
    EvalResult r;
    r.loss = loss_sum / static_cast<double>(count);
    r.metric = metric_sum / static_cast<double>(count);
    return r;
}

// Higher is better for the tuner's selection rule.
inline double validation_score(HeadKind head, const EvalResult& r) {
    return head == HeadKind::Classification ? r.metric : -r.loss;
}

// ---------------------------------------------------------------------------
// Discretized-model training (shared by tune and retrain)
// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 10;
    int batch_size = 32;
    double lr = 0.01;
    double momentum = 0.9;
    bool nesterov = true;
    double weight_decay = 5e-4;
    double dropout = 0.0;
    double clip_threshold = 1.0;
    double lr_decay_factor = 0.2;
    std::vector<int> lr_milestones;
    std::uint64_t seed = 0;
};

inline std::vector<double> train_discretized(DiscretizedModel& model, const SyntheticTask& task,
                                             const std::vector<std::size_t>& train_idx,
                                             const TrainConfig& cfg) {
    SgdOptimizer opt(cfg.lr, cfg.momentum, cfg.nesterov, cfg.weight_decay);
    auto params = model.params();
    model.dropout_p = cfg.dropout;
    Rng shuffle_rng(derive_seed(cfg.seed, "train-shuffle"));
    std::vector<double> losses;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int m : cfg.lr_milestones)
            if (epoch == m && m > 0) opt.set_lr(opt.lr() * cfg.lr_decay_factor);
        auto order = shuffle_rng.sample_without_replacement(train_idx.size(), train_idx.size());
        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t from = 0; from < order.size(); from += static_cast<std::size_t>(cfg.batch_size)) {
            std::vector<std::size_t> idx;
            for (std::size_t i = from; i < std::min(order.size(), from + static_cast<std::size_t>(cfg.batch_size)); ++i)
                idx.push_back(train_idx[order[i]]);
            Graph g;
            Var x = g.constant(slice_rows(task.train_x, idx));
            Var out = model.forward(g, x, true);
            Var loss = task_loss(g, task.head, out, slice_targets(task, true, idx));
            double lv = g.value(loss)[0];
            if (!std::isfinite(lv)) throw DivergenceError(epoch, batches);
            g.backward(loss);
            clip_global_norm(params, cfg.clip_threshold);
            opt.step(params);
            zero_grads(params);
            epoch_loss += lv;
            ++batches;
        }
        losses.push_back(batches ? epoch_loss / batches : 0.0);
    }
    return losses;
}

// ---------------------------------------------------------------------------
// Hyperparameter tuning (grid search on a holdout validation split)
// ---------------------------------------------------------------------------

struct TuneConfig {
    double lr = 0.1;
    double weight_decay = 5e-4;
    double momentum = 0.9;
    double dropout = 0.0;

    nlohmann::ordered_json to_json() const {
        return {{"lr", lr}, {"weight_decay", weight_decay}, {"momentum", momentum}, {"dropout", dropout}};
    }
};

struct TuneGrid {
    std::vector<double> lrs = {1e-1, 1e-2, 1e-3};
    std::vector<double> weight_decays = {5e-4, 5e-6};
    std::vector<double> momentums = {0.9, 0.99};
    std::vector<double> dropouts = {0.0, 0.05};

    // Full Cartesian product, fixed enumeration order.
    std::vector<TuneConfig> enumerate() const {
        std::vector<TuneConfig> out;
        for (double lr : lrs)
            for (double wd : weight_decays)
                for (double mom : momentums)
                    for (double dr : dropouts) out.push_back(TuneConfig{lr, wd, mom, dr});
        return out;
    }
};

struct TuneOutcome {
    TuneConfig best;
    int best_index = -1;
    std::vector<double> scores;  // validation score per grid config
};

// Trains each grid configuration from fresh weights on a subset of the
// training data for a reduced epoch budget, then scores it on a fixed
// holdout validation split (20% of training data, seed-derived).
inline TuneOutcome tune(const BackboneSpec& spec, const std::vector<std::pair<int, int>>& picks,
                        PaddingMode mode, const SyntheticTask& task, const TuneGrid& grid,
                        int budget_epochs, int batch_size, std::uint64_t seed,
                        double train_subset_fraction = 0.5, int threads = 1) {
    auto configs = grid.enumerate();
    if (configs.empty()) throw std::invalid_argument("tune: empty grid");

    const std::size_t total = static_cast<std::size_t>(task.train_count());
    Rng split_rng(derive_seed(seed, "val-split"));
    const std::size_t val_count = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(total)));
    auto val_idx = split_rng.sample_without_replacement(total, val_count);
    std::vector<bool> in_val(total, false);
    for (std::size_t i : val_idx) in_val[i] = true;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < total; ++i)
        if (!in_val[i]) pool.push_back(i);
    Rng subset_rng(derive_seed(seed, "tune-subset"));
    const std::size_t subset_count = static_cast<std::size_t>(
        std::ceil(train_subset_fraction * static_cast<double>(pool.size())));
    auto subset_sel = subset_rng.sample_without_replacement(pool.size(), subset_count);
    std::vector<std::size_t> subset;
    for (std::size_t i : subset_sel) subset.push_back(pool[i]);

    // validation split view of the task for evaluate_split
    SyntheticTask val_task = task;  // shares tensors by copy; desk scale keeps this cheap
    val_task.train_x = slice_rows(task.train_x, val_idx);
    if (task.head == HeadKind::Classification) {
        val_task.train_labels.clear();
        for (std::size_t i : val_idx) val_task.train_labels.push_back(task.train_labels[i]);
    } else {
        val_task.train_y = slice_rows(task.train_y, val_idx);
    }

    TuneOutcome outcome;
    outcome.scores.assign(configs.size(), 0.0);

    auto run_config = [&](std::size_t ci) {
        const TuneConfig& tc = configs[ci];
        DiscretizedModel model =
            build_discretized(spec, picks, mode, derive_seed(seed, "tune-model", ci));
        TrainConfig train_cfg;
        train_cfg.epochs = budget_epochs;
        train_cfg.batch_size = batch_size;
        train_cfg.lr = tc.lr;
        train_cfg.momentum = tc.momentum;
        train_cfg.nesterov = true;
        train_cfg.weight_decay = tc.weight_decay;
        train_cfg.dropout = tc.dropout;
        train_cfg.seed = derive_seed(seed, "tune-train", ci);
        double score;
        try {
            train_discretized(model, task, subset, train_cfg);
            score = validation_score(task.head, evaluate_split(model, val_task, true, batch_size));
            if (!std::isfinite(score)) score = -1e300;
        } catch (const DivergenceError&) {
            score = -1e300;  // diverged configs lose
        }
        outcome.scores[ci] = score;
    };

    if (threads <= 1) {
        for (std::size_t ci = 0; ci < configs.size(); ++ci) run_config(ci);
    } else {
        std::vector<std::thread> workers;
        std::size_t per = (configs.size() + static_cast<std::size_t>(threads) - 1) / static_cast<std::size_t>(threads);
        for (int t = 0; t < threads; ++t) {
            std::size_t lo = static_cast<std::size_t>(t) * per;
            std::size_t hi = std::min(configs.size(), lo + per);
            if (lo >= hi) break;
            workers.emplace_back([&, lo, hi]() {
                for (std::size_t ci = lo; ci < hi; ++ci) run_config(ci);
            });
        }
        for (auto& w : workers) w.join();
    }

    outcome.best_index = 0;
    for (std::size_t ci = 1; ci < configs.size(); ++ci)
        if (outcome.scores[ci] > outcome.scores[static_cast<std::size_t>(outcome.best_index)])
            outcome.best_index = static_cast<int>(ci);
    outcome.best = configs[static_cast<std::size_t>(outcome.best_index)];
    return outcome;
}

// ---------------------------------------------------------------------------
// Retraining
// ---------------------------------------------------------------------------

struct RetrainResult {
    DiscretizedModel model;
    std::vector<double> epoch_losses;
    EvalResult test;
};

// Step-decay milestones shaped like the reference schedule (30/60/90/120/160
// out of 200), rescaled to the requested epoch budget.
inline std::vector<int> retrain_milestones(int epochs) {
    std::vector<int> out;
    for (double frac : {0.15, 0.30, 0.45, 0.60, 0.80}) {
        int m = static_cast<int>(frac * epochs + 0.5);
        if (m > 0 && m < epochs) out.push_back(m);
    }
    return out;
}

inline RetrainResult retrain(const BackboneSpec& spec, const std::vector<std::pair<int, int>>& picks,
                             PaddingMode mode, const SyntheticTask& task, const TuneConfig& best,
                             int epochs, int batch_size, std::uint64_t seed) {
    RetrainResult result{build_discretized(spec, picks, mode, derive_seed(seed, "retrain-model")),
                         {}, {}};
    std::vector<std::size_t> all_idx(static_cast<std::size_t>(task.train_count()));
    for (std::size_t i = 0; i < all_idx.size(); ++i) all_idx[i] = i;
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.lr = best.lr;
    cfg.momentum = best.momentum;
    cfg.nesterov = true;
    cfg.weight_decay = best.weight_decay;
    cfg.dropout = best.dropout;
    cfg.lr_milestones = retrain_milestones(epochs);
    cfg.seed = derive_seed(seed, "retrain");
    result.epoch_losses = train_discretized(result.model, task, all_idx, cfg);
    result.test = evaluate_split(result.model, task, false, batch_size);
    return result;
}

// ---------------------------------------------------------------------------
// Full pipeline: search -> discretize -> tune -> retrain
// ---------------------------------------------------------------------------

struct PipelineConfig {
    SearchConfig search;
    TuneGrid grid;
    int tune_epochs = 10;
    int retrain_epochs = 50;
    int tune_threads = 1;
    double tune_subset_fraction = 0.5;
};

struct PipelineReport {
    std::vector<std::pair<int, int>> picks;
    TuneConfig best_config;
    int best_config_index = -1;
    EvalResult test;
    double search_loss_first = 0.0, search_loss_last = 0.0;
    double seconds_search = 0.0, seconds_tuning = 0.0, seconds_retraining = 0.0;

    // Deterministic portion: identical seeds must reproduce this byte for byte.
    nlohmann::ordered_json result_json(const SyntheticTask& task, const SearchSpace& space) const {
        nlohmann::ordered_json j;
        j["task"] = {{"kind", to_string(task.kind)}, {"kstar", task.kstar}, {"dstar", task.dstar},
                     {"n", task.n},                  {"sigma", task.sigma}, {"seed", task.seed}};
        j["space"] = {{"K", space.kernel_sizes}, {"D", space.dilations}};
        j["selected"] = nlohmann::ordered_json::array();
        for (const auto& [k, d] : picks) j["selected"].push_back({{"k", k}, {"d", d}});
        j["tuned"] = best_config.to_json();
        j["tuned_index"] = best_config_index;
        j["test_loss"] = test.loss;
        j["test_metric"] = test.metric;
        return j;
    }

    // Wall-clock portion, reported separately so the result document stays
    // reproducible.
    nlohmann::ordered_json timing_json() const {
        nlohmann::ordered_json j;
        j["search"] = seconds_search;
        j["tuning"] = seconds_tuning;
        j["retraining"] = seconds_retraining;
        j["total"] = seconds_search + seconds_tuning + seconds_retraining;
        return j;
    }
};

inline PipelineReport run_full_pipeline(const SyntheticTask& task, const BackboneSpec& spec,
                                        const SearchSpace& space, const PipelineConfig& cfg) {
    using clock = std::chrono::steady_clock;
    PipelineReport report;

    auto t0 = clock::now();
    SupernetModel supernet = build_supernet(spec, space, cfg.search.strategy, cfg.search.seed,
                                            cfg.search.impl, cfg.search.mode, cfg.search.alpha_mode);
    SearchStats stats = search(supernet, task, cfg.search);
    if (!stats.epoch_losses.empty()) {
        report.search_loss_first = stats.epoch_losses.front();
        report.search_loss_last = stats.epoch_losses.back();
    }
    DiscretizedModel picked = discretize(supernet, DiscretizeWeights::Fresh, cfg.search.seed);
    report.picks = picked.picks;
    auto t1 = clock::now();

    TuneOutcome tuned = tune(spec, report.picks, cfg.search.mode, task, cfg.grid, cfg.tune_epochs,
                             cfg.search.batch_size, cfg.search.seed, cfg.tune_subset_fraction,
                             cfg.tune_threads);
    report.best_config = tuned.best;
    report.best_config_index = tuned.best_index;
    auto t2 = clock::now();

    RetrainResult retrained = retrain(spec, report.picks, cfg.search.mode, task, tuned.best,
                                      cfg.retrain_epochs, cfg.search.batch_size, cfg.search.seed);
    report.test = retrained.test;
    auto t3 = clock::now();

    report.seconds_search = std::chrono::duration<double>(t1 - t0).count();
    report.seconds_tuning = std::chrono::duration<double>(t2 - t1).count();
    report.seconds_retraining = std::chrono::duration<double>(t3 - t2).count();
    return report;
}

}  // namespace dash
