#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dash/io.hpp"
#include "dash/net.hpp"
#include "dash/random.hpp"
#include "dash/tensor.hpp"

namespace dash {

enum class TaskKind { GroundTruthConv, SumOfDilatedMotifs };

inline const char* to_string(TaskKind k) {
    return k == TaskKind::GroundTruthConv ? "ground_truth_conv" : "sum_of_dilated_motifs";
}

// A self-contained dataset with disjoint train/test splits. Regeneration from
// the same seed is bit-identical (all sampling comes from the derived
// streams, nothing else).
struct SyntheticTask {
    TaskKind kind = TaskKind::GroundTruthConv;
    HeadKind head = HeadKind::DenseRegression;
    int kstar = 0, dstar = 0;
    int n = 0;
    int channels = 1;
    int num_classes = 0;  // classification only
    double sigma = 0.0;
    std::uint64_t seed = 0;

    Tensor train_x, test_x;    // [N, channels, n]
    Tensor train_y, test_y;    // dense: [N, out_channels, n]
    std::vector<int> train_labels, test_labels;
    std::vector<double> true_kernel;  // ground-truth taps (diagnostics)

    int train_count() const { return train_x.shape.empty() ? 0 : train_x.shape[0]; }
    int test_count() const { return test_x.shape.empty() ? 0 : test_x.shape[0]; }
};

namespace detail {

// y[i] = sum_p w[p] * x[(i - p*d) mod n], written as a plain loop so the task
// generator stays independent of the conv strategies it is used to test.
inline void gen_conv_circular(const double* x, int n, const double* w, int k, int d, double* y) {
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int p = 0; p < k; ++p) {
            std::int64_t t = (i - static_cast<std::int64_t>(p) * d) % n;
            if (t < 0) t += n;
            acc += w[p] * x[t];
        }
        y[i] = acc;
    }
}

}  // namespace detail

// Targets are the circular convolution of white-noise inputs with a planted
// (k*, d*) kernel plus observation noise; the Bayes-optimal test MSE is
// sigma^2.
inline SyntheticTask make_ground_truth_conv_task(int kstar, int dstar, int n, int n_train,
                                                 int n_test, double sigma, std::uint64_t seed) {
    if (kstar < 1 || dstar < 1 || n < 1) throw std::invalid_argument("ground_truth_conv: bad dims");
    SyntheticTask task;
    task.kind = TaskKind::GroundTruthConv;
    task.head = HeadKind::DenseRegression;
    task.kstar = kstar;
    task.dstar = dstar;
    task.n = n;
    task.channels = 1;
    task.sigma = sigma;
    task.seed = seed;

    Rng krng(derive_seed(seed, "task-kernel"));
    task.true_kernel.resize(static_cast<std::size_t>(kstar));
    for (auto& w : task.true_kernel) {
        double mag = krng.uniform(0.5, 1.5);
        w = krng.uniform() < 0.5 ? -mag : mag;
    }

    auto gen_split = [&](int count, const char* purpose, Tensor& xs, Tensor& ys) {
        Rng rng(derive_seed(seed, purpose));
        xs = Tensor(Shape{count, 1, n});
        ys = Tensor(Shape{count, 1, n});
        std::vector<double> clean(static_cast<std::size_t>(n));
        for (int s = 0; s < count; ++s) {
            double* xp = xs.data.data() + static_cast<std::size_t>(s) * n;
            double* yp = ys.data.data() + static_cast<std::size_t>(s) * n;
            for (int i = 0; i < n; ++i) xp[i] = rng.normal();
            detail::gen_conv_circular(xp, n, task.true_kernel.data(), kstar, dstar, clean.data());
            for (int i = 0; i < n; ++i) yp[i] = clean[static_cast<std::size_t>(i)] + sigma * rng.normal();
        }
    };
    gen_split(n_train, "task-train", task.train_x, task.train_y);
    gen_split(n_test, "task-test", task.test_x, task.test_y);
    return task;
}

// Classification task: each class is a fixed random +-1 motif of k* taps
// planted at dilation d* at a random shift on top of background noise.
inline SyntheticTask make_motif_task(int kstar, int dstar, int n, int num_classes, int n_train,
                                     int n_test, double sigma, std::uint64_t seed) {
    SyntheticTask task;
    task.kind = TaskKind::SumOfDilatedMotifs;
    task.head = HeadKind::Classification;
    task.kstar = kstar;
    task.dstar = dstar;
    task.n = n;
    task.channels = 1;
    task.num_classes = num_classes;
    task.sigma = sigma;
    task.seed = seed;

    Rng mrng(derive_seed(seed, "task-motifs"));
    std::vector<std::vector<double>> motifs(static_cast<std::size_t>(num_classes));
    for (auto& m : motifs) {
        m.resize(static_cast<std::size_t>(kstar));
        for (auto& v : m) v = mrng.uniform() < 0.5 ? -1.0 : 1.0;
    }

    auto gen_split = [&](int count, const char* purpose, Tensor& xs, std::vector<int>& labels) {
        Rng rng(derive_seed(seed, purpose));
        xs = Tensor(Shape{count, 1, n});
        labels.resize(static_cast<std::size_t>(count));
        for (int s = 0; s < count; ++s) {
            double* xp = xs.data.data() + static_cast<std::size_t>(s) * n;
            for (int i = 0; i < n; ++i) xp[i] = sigma * rng.normal();
            int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes)));
            int t0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
            for (int p = 0; p < kstar; ++p)
                xp[(t0 + static_cast<std::int64_t>(p) * dstar) % n] += motifs[static_cast<std::size_t>(label)][static_cast<std::size_t>(p)];
            labels[static_cast<std::size_t>(s)] = label;
        }
    };
    gen_split(n_train, "task-train", task.train_x, task.train_labels);
    gen_split(n_test, "task-test", task.test_x, task.test_labels);
    return task;
}

// ---------------------------------------------------------------------------
// Batch slicing
// ---------------------------------------------------------------------------

inline Tensor slice_rows(const Tensor& t, const std::vector<std::size_t>& idx) {
    Shape s = t.shape;
    std::int64_t row = 1;
    for (std::size_t i = 1; i < s.size(); ++i) row *= s[i];
    s[0] = static_cast<int>(idx.size());
    Tensor out(s);
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy(t.data.begin() + static_cast<std::int64_t>(idx[r]) * row,
                  t.data.begin() + static_cast<std::int64_t>(idx[r] + 1) * row,
                  out.data.begin() + static_cast<std::int64_t>(r) * row);
    return out;
}

inline TargetBatch slice_targets(const SyntheticTask& task, bool train,
                                 const std::vector<std::size_t>& idx) {
    TargetBatch tb;
    if (task.head == HeadKind::Classification) {
        const auto& labels = train ? task.train_labels : task.test_labels;
        for (std::size_t i : idx) tb.labels.push_back(labels[i]);
    } else {
        const Tensor& y = train ? task.train_y : task.test_y;
        Tensor s = slice_rows(y, idx);
        tb.values = std::move(s.data);
    }
    return tb;
}

// ---------------------------------------------------------------------------
// On-disk task container: meta.json plus one tensor file per array
// ---------------------------------------------------------------------------

inline void save_task(const std::string& dir, const SyntheticTask& task) {
    nlohmann::ordered_json meta;
    meta["kind"] = to_string(task.kind);
    meta["head"] = to_string(task.head);
    meta["kstar"] = task.kstar;
    meta["dstar"] = task.dstar;
    meta["n"] = task.n;
    meta["channels"] = task.channels;
    meta["num_classes"] = task.num_classes;
    meta["sigma"] = task.sigma;
    meta["seed"] = task.seed;
    meta["train_count"] = task.train_count();
    meta["test_count"] = task.test_count();
    atomic_write_file(dir + "/meta.json", meta.dump(2) + "\n");
    save_tensor(dir + "/train_x.dsht", task.train_x);
    save_tensor(dir + "/test_x.dsht", task.test_x);
    if (task.head == HeadKind::Classification) {
        auto to_tensor = [](const std::vector<int>& v) {
            Tensor t(Shape{static_cast<int>(v.size())});
            for (std::size_t i = 0; i < v.size(); ++i) t.data[i] = v[i];
            return t;
        };
        save_tensor(dir + "/train_y.dsht", to_tensor(task.train_labels));
        save_tensor(dir + "/test_y.dsht", to_tensor(task.test_labels));
    } else {
        save_tensor(dir + "/train_y.dsht", task.train_y);
        save_tensor(dir + "/test_y.dsht", task.test_y);
    }
}

inline SyntheticTask load_task(const std::string& dir) {
    auto meta = nlohmann::json::parse(read_file(dir + "/meta.json"));
    SyntheticTask task;
    task.kind = meta["kind"] == "ground_truth_conv" ? TaskKind::GroundTruthConv
                                                    : TaskKind::SumOfDilatedMotifs;
    std::string head = meta["head"];
    task.head = head == "classification" ? HeadKind::Classification
               : head == "dense"         ? HeadKind::DenseRegression
                                         : HeadKind::Multilabel;
    task.kstar = meta["kstar"];
    task.dstar = meta["dstar"];
    task.n = meta["n"];
    task.channels = meta["channels"];
    task.num_classes = meta["num_classes"];
    task.sigma = meta["sigma"];
    task.seed = meta["seed"];
    task.train_x = load_tensor(dir + "/train_x.dsht");
    task.test_x = load_tensor(dir + "/test_x.dsht");
    if (task.head == HeadKind::Classification) {
        Tensor ty = load_tensor(dir + "/train_y.dsht");
        for (double v : ty.data) task.train_labels.push_back(static_cast<int>(v));
        Tensor sy = load_tensor(dir + "/test_y.dsht");
        for (double v : sy.data) task.test_labels.push_back(static_cast<int>(v));
    } else {
        task.train_y = load_tensor(dir + "/train_y.dsht");
        task.test_y = load_tensor(dir + "/test_y.dsht");
    }
    return task;
}

}  // namespace dash
