#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "abdnet/checkpoint.hpp"
#include "abdnet/datagen.hpp"
#include "abdnet/model.hpp"

namespace abd {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t batch_size = 16;
    double lr = 0.001;
    double lr_decay = 0.5;
    std::size_t decay_period = 20;
    std::size_t epochs = 30;
    std::uint64_t seed = 42;
    bool use_normals = false;
    std::size_t k = 0;  // 0: pick by density
    double val_fraction = 0.1;
    AugmentSpec augment{true, false, 0.8, 1.25, 0.0, 0.0};

    void validate() const {
        if (batch_size < 2) throw std::invalid_argument("train config: batch_size must be >= 2 (batch norm)");
        if (epochs == 0) throw std::invalid_argument("train config: zero epochs");
        if (val_fraction < 0 || val_fraction >= 1) throw std::invalid_argument("train config: bad val_fraction");
        augment.validate();
    }
};

struct EpochStats {
    std::size_t epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double val_accuracy = 0;
};

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
    double overall = 0;
    std::array<double, 4> per_class{-1, -1, -1, -1};  // -1: class absent
    std::array<std::array<std::size_t, 4>, 4> confusion{};  // [true][pred]
    std::vector<double> instance_accuracy;
    std::size_t parameter_count = 0;
};

/// Incremental per-point counting; kept separate from the model so reports
/// can be cross-checked against plain recounts.
struct EvalCounts {
    std::array<std::array<std::size_t, 4>, 4> confusion{};
    std::vector<double> instance_accuracy;

    void add_object(std::span<const ShapeLabel> predicted, std::span<const ShapeLabel> truth) {
        if (predicted.size() != truth.size() || predicted.empty()) {
            throw std::invalid_argument("eval: prediction/label size mismatch");
        }
        std::size_t correct = 0;
        for (std::size_t i = 0; i < predicted.size(); ++i) {
            confusion[static_cast<int>(truth[i]) - 1][static_cast<int>(predicted[i]) - 1] += 1;
            correct += predicted[i] == truth[i] ? 1 : 0;
        }
        instance_accuracy.push_back(double(correct) / double(predicted.size()));
    }

    EvalReport finish() const {
        EvalReport r;
        std::size_t total = 0, diag = 0;
        for (int t = 0; t < 4; ++t) {
            std::size_t support = 0;
            for (int p = 0; p < 4; ++p) {
                support += confusion[t][p];
                total += confusion[t][p];
            }
            diag += confusion[t][t];
            r.per_class[t] = support ? double(confusion[t][t]) / double(support) : -1.0;
        }
        if (total == 0) throw std::invalid_argument("eval: no points counted");
        r.overall = double(diag) / double(total);
        r.confusion = confusion;
        r.instance_accuracy = instance_accuracy;
        return r;
    }
};

/// Eval-mode decomposition of one cloud (no tape, no augmentation).
struct DecomposeResult {
    std::vector<ShapeLabel> labels;
    std::vector<std::array<float, 4>> probs;
    std::vector<AttentionRecord> records;
};

inline DecomposeResult run_decomposer(DecomposerModel& model, const PointCloud& cloud, bool record = false) {
    NoGradGuard ng;
    const PointCloud* one = &cloud;
    auto batch = make_batch<float>(std::span<const PointCloud>(one, 1), model.cfg.k(), model.cfg.use_normals());
    auto out = model.forward(batch, Mode::Eval, record);
    DecomposeResult r;
    r.labels = predict_labels(out.probs);
    r.probs.resize(cloud.size());
    const float* p = out.probs.values().data();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (int j = 0; j < 4; ++j) r.probs[i][j] = p[i * 4 + j];
    }
    r.records = std::move(out.records);
    return r;
}

inline EvalReport evaluate_decomposition(DecomposerModel& model, std::span<const PointCloud> clouds) {
    EvalCounts counts;
    for (const auto& c : clouds) {
        auto res = run_decomposer(model, c);
        counts.add_object(res.labels, c.labels);
    }
    EvalReport r = counts.finish();
    r.parameter_count = count_parameters(model.named_params());
    return r;
}

// ---------------------------------------------------------------------------
// decomposer training
// ---------------------------------------------------------------------------

inline std::uint64_t decomposer_hash(DecomposerModel& m) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (auto& [name, p] : m.named_params()) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(p.values().data(), p.numel() * sizeof(float), h);
    }
    for (auto& [name, b] : m.named_buffers()) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(b->data(), b->size() * sizeof(float), h);
    }
    return h;
}

struct TrainResult {
    Checkpoint best;   // highest validation accuracy, weights only
    Checkpoint last;   // final state with optimizer and epoch cursor, resumable
    std::vector<EpochStats> curves;
    double best_val_accuracy = 0;
    std::size_t best_epoch = 0;
};

namespace detail {

inline void log_event(std::ostream* log, const nlohmann::json& j) {
    if (log) *log << j.dump() << '\n';
}

// deterministic 90/10 by-object split of the training objects
inline void split_train_val(std::vector<std::size_t>& train_ids, std::vector<std::size_t>& val_ids,
                            double val_fraction, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x5a17));
    rng.shuffle(train_ids);
    std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * double(train_ids.size())));
    if (val_fraction > 0 && n_val == 0) n_val = 1;
    val_ids.assign(train_ids.end() - n_val, train_ids.end());
    train_ids.resize(train_ids.size() - n_val);
}

}  // namespace detail

/// Trains the per-point decomposer. Deterministic under a fixed seed: every
/// random stream (init, split, epoch shuffles, per-object augmentation)
/// derives from (cfg.seed, epoch, object id), so a run resumed from the
/// `last` checkpoint continues bit-identically to an uninterrupted run.
inline TrainResult train_decomposer(const Dataset& ds, DecomposerConfig arch, const TrainConfig& cfg,
                                    const Checkpoint* resume = nullptr, std::ostream* log = nullptr) {
    cfg.validate();
    if (ds.clouds.empty()) throw std::invalid_argument("train_decomposer: empty dataset");
    const std::size_t n_points = ds.clouds[0].size();
    const std::size_t k = cfg.k ? cfg.k : k_for_density(n_points);
    arch.lpe.k = k;
    arch.lpe.use_normals = cfg.use_normals;
    arch.validate();

    std::vector<PointCloud> norm;
    norm.reserve(ds.clouds.size());
    for (const auto& c : ds.clouds) norm.push_back(normalize_unit_sphere(c));

    std::vector<std::size_t> train_ids = ds.split_indices(0), val_ids;
    detail::split_train_val(train_ids, val_ids, cfg.val_fraction, cfg.seed);
    if (train_ids.size() < cfg.batch_size) {
        throw std::invalid_argument("train_decomposer: " + std::to_string(train_ids.size()) +
                                    " training objects cannot fill a batch of " + std::to_string(cfg.batch_size));
    }

    DecomposerModel model = DecomposerModel::init(arch, cfg.seed);
    auto params = model.named_params();
    AdamStateT<float> adam;
    adam.lr_base = static_cast<float>(cfg.lr);
    adam.lr_decay = static_cast<float>(cfg.lr_decay);
    adam.decay_period = cfg.decay_period;
    std::size_t start_epoch = 0;
    if (resume) {
        const DecomposerConfig resumed = DecomposerConfig::from_map(resume->config);
        if (resumed.to_map() != arch.to_map()) {
            throw std::invalid_argument("train_decomposer: resume checkpoint architecture mismatch");
        }
        restore_weights(model, *resume);
        restore_adam(params, adam, *resume);
        start_epoch = resume->next_epoch;
    }

    auto config_map = [&](bool with_train_keys) {
        std::map<std::string, std::string> m = arch.to_map();
        m["kind"] = "decomposer";
        if (with_train_keys) {
            m["train.batch_size"] = std::to_string(cfg.batch_size);
            m["train.lr"] = std::to_string(cfg.lr);
            m["train.epochs"] = std::to_string(cfg.epochs);
            m["train.seed"] = std::to_string(cfg.seed);
        }
        return m;
    };

    TrainResult result;
    result.best_val_accuracy = -1;
    detail::log_event(log, {{"event", "train_start"},
                            {"kind", "decomposer"},
                            {"train_objects", train_ids.size()},
                            {"val_objects", val_ids.size()},
                            {"points", n_points},
                            {"k", k},
                            {"start_epoch", start_epoch}});

    for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const float lr = adam.lr_for_epoch(epoch);
        std::vector<std::size_t> order = train_ids;
        Rng shuffle_rng(mix_seed(cfg.seed, 0xb47c, epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0;
        std::size_t n_batches = 0;
        // drop-last: a trailing partial batch is skipped entirely
        for (std::size_t b = 0; b + cfg.batch_size <= order.size(); b += cfg.batch_size) {
            std::vector<PointCloud> batch_clouds;
            batch_clouds.reserve(cfg.batch_size);
            for (std::size_t i = 0; i < cfg.batch_size; ++i) {
                const std::size_t id = order[b + i];
                Rng aug_rng(mix_seed(cfg.seed, epoch, id));
                batch_clouds.push_back(augment(norm[id], cfg.augment, aug_rng));
            }
            auto batch = make_batch<float>(batch_clouds, k, cfg.use_normals);
            auto out = model.forward(batch, Mode::Train);
            auto loss = cross_entropy(out.logits, batch.labels);
            zero_grads(params);
            loss.backward();
            adam_step(params, adam, lr);
            loss_sum += loss.item();
            n_batches += 1;
        }

        EvalCounts counts;
        for (std::size_t id : val_ids) {
            auto res = run_decomposer(model, norm[id]);
            counts.add_object(res.labels, norm[id].labels);
        }
        const double val_acc = val_ids.empty() ? 0.0 : counts.finish().overall;

        EpochStats st{epoch, lr, n_batches ? loss_sum / double(n_batches) : 0.0, val_acc};
        result.curves.push_back(st);
        detail::log_event(log, {{"event", "epoch"},
                                {"epoch", epoch},
                                {"lr", st.lr},
                                {"train_loss", st.train_loss},
                                {"val_accuracy", st.val_accuracy}});

        if (val_acc > result.best_val_accuracy) {
            result.best_val_accuracy = val_acc;
            result.best_epoch = epoch;
            result.best = Checkpoint{};
            result.best.config = config_map(true);
            snapshot_weights(model, result.best);
            result.best.rng_seed = cfg.seed;
            result.best.next_epoch = static_cast<std::uint32_t>(epoch + 1);
        }
    }

    result.last.config = config_map(true);
    snapshot_weights(model, result.last);
    snapshot_adam(params, adam, result.last);
    result.last.rng_seed = cfg.seed;
    result.last.next_epoch = static_cast<std::uint32_t>(cfg.epochs);
    if (result.best.tensors.empty()) result.best = result.last;
    detail::log_event(log, {{"event", "train_end"},
                            {"best_epoch", result.best_epoch},
                            {"best_val_accuracy", result.best_val_accuracy}});
    return result;
}

// ---------------------------------------------------------------------------
// classifier training (frozen backbone)
// ---------------------------------------------------------------------------

struct ClassifierTrainResult {
    Checkpoint best;  // combined backbone + classifier head
    std::vector<EpochStats> curves;
    double best_val_accuracy = 0;
    std::size_t best_epoch = 0;
};

/// Object-category prediction for one cloud through a frozen backbone.
inline int run_classifier(DecomposerModel& backbone, ClassifierModel& clf, const PointCloud& cloud) {
    NoGradGuard ng;
    const PointCloud* one = &cloud;
    auto batch = make_batch<float>(std::span<const PointCloud>(one, 1), backbone.cfg.k(),
                                   backbone.cfg.use_normals() || clf.cfg.use_normals);
    auto out = backbone.forward(batch, Mode::Eval);
    auto logits = clf.forward(out.features, batch.coords3d(clf.cfg.use_normals), Mode::Eval);
    const float* v = logits.values().data();
    int best = 0;
    for (std::size_t j = 1; j < clf.cfg.n_classes; ++j) {
        if (v[j] > v[best]) best = static_cast<int>(j);
    }
    return best;
}

/// Trains the 3D object classifier on attention features from a frozen
/// decomposer. Backbone tensors are never touched; the combined checkpoint
/// carries both so a single file serves inference.
inline ClassifierTrainResult train_classifier(const Dataset& ds, DecomposerModel& backbone,
                                              const TrainConfig& cfg, std::ostream* log = nullptr) {
    cfg.validate();
    if (ds.manifest.categories.empty()) throw std::invalid_argument("train_classifier: dataset has no categories");
    ClassifierConfig head_cfg;
    head_cfg.feat_in = backbone.cfg.afe.d_model;
    head_cfg.n_classes = ds.manifest.categories.size();
    head_cfg.use_normals = cfg.use_normals;
    head_cfg.widths = {head_cfg.feat_in >= 512 ? std::size_t(256) : head_cfg.feat_in,
                       head_cfg.feat_in >= 512 ? std::size_t(256) : head_cfg.feat_in,
                       head_cfg.feat_in >= 512 ? std::size_t(128) : head_cfg.feat_in / 2,
                       head_cfg.feat_in >= 512 ? std::size_t(128) : head_cfg.feat_in / 2};

    std::vector<PointCloud> norm;
    norm.reserve(ds.clouds.size());
    for (const auto& c : ds.clouds) norm.push_back(normalize_unit_sphere(c));

    std::vector<std::size_t> train_ids = ds.split_indices(0), val_ids;
    detail::split_train_val(train_ids, val_ids, cfg.val_fraction, cfg.seed);
    if (train_ids.size() < cfg.batch_size) {
        throw std::invalid_argument("train_classifier: " + std::to_string(train_ids.size()) +
                                    " training objects cannot fill a batch of " + std::to_string(cfg.batch_size));
    }

    backbone.set_trainable(false);
    ClassifierModel clf = ClassifierModel::init(head_cfg, cfg.seed);
    auto params = clf.named_params();
    AdamStateT<float> adam;
    adam.lr_base = static_cast<float>(cfg.lr);
    adam.lr_decay = static_cast<float>(cfg.lr_decay);
    adam.decay_period = cfg.decay_period;

    const bool batch_normals = backbone.cfg.use_normals() || head_cfg.use_normals;
    ClassifierTrainResult result;
    result.best_val_accuracy = -1;
    detail::log_event(log, {{"event", "train_start"},
                            {"kind", "classifier"},
                            {"classes", head_cfg.n_classes},
                            {"use_normals", head_cfg.use_normals},
                            {"train_objects", train_ids.size()},
                            {"val_objects", val_ids.size()}});

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const float lr = adam.lr_for_epoch(epoch);
        std::vector<std::size_t> order = train_ids;
        Rng shuffle_rng(mix_seed(cfg.seed, 0xc1f5, epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0;
        std::size_t n_batches = 0;
        for (std::size_t b = 0; b + cfg.batch_size <= order.size(); b += cfg.batch_size) {
            std::vector<PointCloud> batch_clouds;
            std::vector<int> targets;
            for (std::size_t i = 0; i < cfg.batch_size; ++i) {
                const std::size_t id = order[b + i];
                Rng aug_rng(mix_seed(cfg.seed, epoch ^ 0x9e3779b9ull, id));
                batch_clouds.push_back(augment(norm[id], cfg.augment, aug_rng));
                targets.push_back(ds.manifest.objects[id].category_id);
            }
            auto batch = make_batch<float>(batch_clouds, backbone.cfg.k(), batch_normals);
            TensorT<float> feats;
            {
                NoGradGuard ng;
                feats = backbone.forward(batch, Mode::Eval).features;
            }
            auto logits = clf.forward(feats, batch.coords3d(head_cfg.use_normals), Mode::Train);
            auto loss = cross_entropy(logits, targets);
            zero_grads(params);
            loss.backward();
            adam_step(params, adam, lr);
            loss_sum += loss.item();
            n_batches += 1;
        }

        std::size_t correct = 0;
        for (std::size_t id : val_ids) {
            correct += run_classifier(backbone, clf, norm[id]) == ds.manifest.objects[id].category_id ? 1 : 0;
        }
        const double val_acc = val_ids.empty() ? 0.0 : double(correct) / double(val_ids.size());

        result.curves.push_back({epoch, lr, n_batches ? loss_sum / double(n_batches) : 0.0, val_acc});
        detail::log_event(log, {{"event", "epoch"},
                                {"epoch", epoch},
                                {"lr", lr},
                                {"train_loss", result.curves.back().train_loss},
                                {"val_accuracy", val_acc}});

        if (val_acc > result.best_val_accuracy) {
            result.best_val_accuracy = val_acc;
            result.best_epoch = epoch;
            result.best = Checkpoint{};
            result.best.config = backbone.cfg.to_map();
            result.best.config["kind"] = "classifier";
            for (const auto& [k2, v2] : clf.config_map()) result.best.config[k2] = v2;
            snapshot_weights(backbone, result.best);
            snapshot_weights(clf, result.best);
            result.best.rng_seed = cfg.seed;
            result.best.next_epoch = static_cast<std::uint32_t>(epoch + 1);
        }
    }
    detail::log_event(log, {{"event", "train_end"},
                            {"best_epoch", result.best_epoch},
                            {"best_val_accuracy", result.best_val_accuracy}});
    return result;
}

// ---------------------------------------------------------------------------
// ablations
// ---------------------------------------------------------------------------

struct DensityCell {
    std::size_t density = 0;
    std::size_t k = 0;
    double accuracy = 0;
};

/// Regenerates each object at the requested density from its manifest spec
/// (deterministic in the object seed), rebuilds neighborhoods with each k,
/// and scores eval-mode decomposition. At the dataset's native density the
/// stored cloud is reused, so that cell matches plain evaluation exactly.
inline std::vector<DensityCell> ablate_density_k(DecomposerModel& model, const Dataset& ds,
                                                 std::span<const std::size_t> object_indices,
                                                 std::span<const std::size_t> densities,
                                                 std::span<const std::size_t> ks) {
    if (object_indices.empty()) throw std::invalid_argument("ablate_density_k: no objects");
    std::vector<DensityCell> grid;
    for (std::size_t d : densities) {
        // materialize per-object clouds at this density
        std::vector<PointCloud> clouds;
        for (std::size_t oi : object_indices) {
            const DatasetObject& obj = ds.manifest.objects.at(oi);
            if (d == ds.manifest.n_points) {
                clouds.push_back(normalize_unit_sphere(ds.clouds[oi]));
            } else {
                DatasetObject scaled = obj;
                scaled.spec.budgets = detail::allocate_budgets(scaled.spec.prims, d);
                clouds.push_back(normalize_unit_sphere(sample_object(scaled)));
            }
        }
        for (std::size_t k : ks) {
            if (k >= d) throw std::invalid_argument("ablate_density_k: k=" + std::to_string(k) +
                                                    " too large for density " + std::to_string(d));
            DecomposerModel probe = model;  // shares weights; only the k config differs
            probe.cfg.lpe.k = k;
            std::size_t correct = 0, total = 0;
            for (const auto& c : clouds) {
                auto res = run_decomposer(probe, c);
                for (std::size_t i = 0; i < c.size(); ++i) correct += res.labels[i] == c.labels[i] ? 1 : 0;
                total += c.size();
            }
            grid.push_back({d, k, double(correct) / double(total)});
        }
    }
    return grid;
}

struct NoiseCell {
    double sigma = 0;
    double accuracy = 0;  // mean over draws
    std::size_t draws = 0;
    std::vector<std::uint64_t> seeds;
};

/// Per-sigma decomposition accuracy under independent Gaussian perturbation,
/// averaged over `draws` noise draws; sigma 0 is the exact clean pass.
inline std::vector<NoiseCell> ablate_noise(DecomposerModel& model, const Dataset& ds,
                                           std::span<const std::size_t> object_indices,
                                           std::span<const double> sigmas, std::size_t draws,
                                           std::uint64_t seed) {
    if (object_indices.empty()) throw std::invalid_argument("ablate_noise: no objects");
    if (draws == 0) throw std::invalid_argument("ablate_noise: zero draws");
    std::vector<PointCloud> clean;
    for (std::size_t oi : object_indices) clean.push_back(normalize_unit_sphere(ds.clouds.at(oi)));

    std::vector<NoiseCell> out;
    for (std::size_t si = 0; si < sigmas.size(); ++si) {
        NoiseCell cell;
        cell.sigma = sigmas[si];
        cell.draws = cell.sigma == 0 ? 1 : draws;
        double acc_sum = 0;
        for (std::size_t r = 0; r < cell.draws; ++r) {
            const std::uint64_t draw_seed = mix_seed(seed, si, r);
            cell.seeds.push_back(draw_seed);
            std::size_t correct = 0, total = 0;
            for (std::size_t ci = 0; ci < clean.size(); ++ci) {
                PointCloud c = clean[ci];
                if (cell.sigma > 0) {
                    AugmentSpec noise;
                    noise.noise_sigma = cell.sigma;
                    Rng rng(mix_seed(draw_seed, object_indices[ci]));
                    c = augment(c, noise, rng);
                }
                auto res = run_decomposer(model, c);
                for (std::size_t i = 0; i < c.size(); ++i) correct += res.labels[i] == c.labels[i] ? 1 : 0;
                total += c.size();
            }
            acc_sum += double(correct) / double(total);
        }
        cell.accuracy = acc_sum / double(cell.draws);
        out.push_back(std::move(cell));
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV artifacts (fixed headers)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

}  // namespace detail

inline void write_curves_csv(const std::vector<EpochStats>& curves, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + path + "'");
    f << "epoch,lr,train_loss,val_accuracy\n";
    for (const auto& s : curves) {
        f << s.epoch << ',' << detail::fmt_double(s.lr) << ',' << detail::fmt_double(s.train_loss) << ','
          << detail::fmt_double(s.val_accuracy) << '\n';
    }
}

inline void write_eval_csv(const EvalReport& r, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + path + "'");
    f << "metric,label_true,label_pred,value\n";
    f << "overall_accuracy,,," << detail::fmt_double(r.overall) << '\n';
    f << "parameter_count,,," << r.parameter_count << '\n';
    for (int t = 0; t < 4; ++t) {
        if (r.per_class[t] >= 0) f << "per_class_accuracy," << (t + 1) << ",," << detail::fmt_double(r.per_class[t]) << '\n';
    }
    for (int t = 0; t < 4; ++t) {
        for (int p = 0; p < 4; ++p) f << "confusion," << (t + 1) << ',' << (p + 1) << ',' << r.confusion[t][p] << '\n';
    }
    for (std::size_t i = 0; i < r.instance_accuracy.size(); ++i) {
        f << "instance_accuracy," << i << ",," << detail::fmt_double(r.instance_accuracy[i]) << '\n';
    }
}

inline void write_density_csv(const std::vector<DensityCell>& grid, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + path + "'");
    f << "density,k,accuracy\n";
    for (const auto& c : grid) f << c.density << ',' << c.k << ',' << detail::fmt_double(c.accuracy) << '\n';
}

inline void write_noise_csv(const std::vector<NoiseCell>& cells, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + path + "'");
    f << "sigma,accuracy,draws,seeds\n";
    for (const auto& c : cells) {
        f << detail::fmt_double(c.sigma) << ',' << detail::fmt_double(c.accuracy) << ',' << c.draws << ',';
        for (std::size_t i = 0; i < c.seeds.size(); ++i) f << (i ? ";" : "") << c.seeds[i];
        f << '\n';
    }
}

/// Attention export: "encoder,head,rank,point_index,weight" plus one colored
/// PLY per head with the query point flagged.
inline void export_attention(const PointCloud& cloud, const std::vector<ShapeLabel>& predicted,
                             const std::vector<AttentionRecord>& records, std::size_t query_idx,
                             std::size_t encoder, std::size_t top, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    auto tops = top_attention(records, query_idx, encoder, top);
    std::ofstream csv(fs::path(out_dir) / "attention.csv", std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write attention.csv in '" + out_dir + "'");
    csv << "encoder,head,rank,point_index,weight\n";
    for (std::size_t h = 0; h < tops.size(); ++h) {
        for (std::size_t rank = 0; rank < tops[h].size(); ++rank) {
            csv << encoder << ',' << (h + 1) << ',' << (rank + 1) << ',' << tops[h][rank].first << ','
                << detail::fmt_double(tops[h][rank].second) << '\n';
        }
        PointCloud colored = cloud;
        colored.labels = predicted;
        std::vector<std::array<std::uint8_t, 3>> colors(cloud.size(), {200, 200, 200});
        for (const auto& [idx, w] : tops[h]) colors[idx] = shape_color(predicted[idx]);
        colors[query_idx] = {255, 0, 0};  // the query point
        save_ply(colored, (fs::path(out_dir) / ("head_" + std::to_string(h + 1) + ".ply")).string(), true, &colors);
    }
}

}  // namespace abd
