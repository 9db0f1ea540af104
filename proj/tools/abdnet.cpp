// abdnet: generate synthetic primitive datasets, train and evaluate the
// point-cloud decomposer and the frozen-backbone object classifier.

#include <CLI11.hpp>
#include <Eigen/Core>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "abdnet/pipeline.hpp"

namespace fs = std::filesystem;
using namespace abd;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(s)) out.push_back(std::stoull(item));
    return out;
}

std::vector<double> split_doubles(const std::string& s) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) out.push_back(std::stod(item));
    return out;
}

void require_file(const std::string& path, const char* what) {
    if (!fs::exists(path)) throw UsageError(std::string(what) + " '" + path + "' does not exist");
}

struct GlobalOpts {
    std::uint64_t seed = 42;
    std::size_t threads = 0;
    bool verbose = false;
    std::string config_file;
};

void apply_threads(std::size_t threads) {
    if (threads > 0) Eigen::setNbThreads(static_cast<int>(threads));
}

void print_config(const std::string& cmd, const std::vector<std::pair<std::string, std::string>>& kv) {
    std::cout << "[" << cmd << "] resolved configuration:\n";
    for (const auto& [k, v] : kv) std::cout << "  " << k << " = " << v << "\n";
    std::cout << std::flush;
}

std::string onoff(bool b) { return b ? "on" : "off"; }

bool parse_onoff(const std::string& s, const char* flag) {
    if (s == "on") return true;
    if (s == "off") return false;
    throw UsageError(std::string(flag) + " expects on|off, got '" + s + "'");
}

Checkpoint load_model_checkpoint(const std::string& path) {
    require_file(path, "model checkpoint");
    return load_checkpoint(path);
}

std::vector<std::size_t> pick_objects(const Dataset& ds, const std::string& split, std::size_t limit) {
    std::vector<std::size_t> ids;
    if (split == "all") {
        for (std::size_t i = 0; i < ds.manifest.objects.size(); ++i) ids.push_back(i);
    } else if (split == "train" || split == "test") {
        ids = ds.split_indices(split == "train" ? 0 : 1);
    } else {
        throw UsageError("--split expects train|test|all, got '" + split + "'");
    }
    if (ids.empty()) throw UsageError("no objects in split '" + split + "'");
    if (limit > 0 && ids.size() > limit) ids.resize(limit);
    return ids;
}

// ---------------------------------------------------------------------------
// subcommand bodies
// ---------------------------------------------------------------------------

int cmd_gen_data(const GlobalOpts& g, std::size_t objects, std::size_t points, const std::string& categories,
                 const std::string& out, double train_frac) {
    std::vector<std::string> cats = categories == "all" ? reference_categories() : split_list(categories);
    print_config("gen-data", {{"objects", std::to_string(objects)},
                              {"points", std::to_string(points)},
                              {"categories", categories},
                              {"out", out},
                              {"train-frac", std::to_string(train_frac)},
                              {"seed", std::to_string(g.seed)}});
    Dataset ds = generate_dataset(objects, points, cats, g.seed, train_frac);
    write_dataset(ds, out);
    std::size_t n_train = ds.split_indices(0).size();
    std::cout << "wrote " << ds.clouds.size() << " objects (" << n_train << " train / "
              << ds.clouds.size() - n_train << " test) to " << out << "\n";
    return 0;
}

int cmd_train_decomposer(const GlobalOpts& g, const std::string& data, const std::string& out,
                         const std::string& arch_name, TrainConfig cfg, const std::string& resume,
                         const std::string& curves, const std::string& log_path) {
    require_file((fs::path(data) / "manifest.json").string(), "dataset manifest");
    DecomposerConfig arch;
    if (arch_name == "desk") {
        arch = DecomposerConfig::desk(cfg.use_normals);
    } else if (arch_name == "reference") {
        arch = DecomposerConfig::reference(cfg.use_normals);
    } else {
        throw UsageError("--arch expects desk|reference, got '" + arch_name + "'");
    }
    print_config("train-decomposer",
                 {{"data", data},
                  {"out", out},
                  {"arch", arch_name},
                  {"epochs", std::to_string(cfg.epochs)},
                  {"batch-size", std::to_string(cfg.batch_size)},
                  {"lr", std::to_string(cfg.lr)},
                  {"lr-decay", std::to_string(cfg.lr_decay)},
                  {"decay-period", std::to_string(cfg.decay_period)},
                  {"normals", onoff(cfg.use_normals)},
                  {"k", std::to_string(cfg.k)},
                  {"val-frac", std::to_string(cfg.val_fraction)},
                  {"aug-rotate", onoff(cfg.augment.rotate_z)},
                  {"aug-scale", std::to_string(cfg.augment.scale_lo) + ".." + std::to_string(cfg.augment.scale_hi)},
                  {"aug-dropout", std::to_string(cfg.augment.dropout_p)},
                  {"aug-noise", std::to_string(cfg.augment.noise_sigma)},
                  {"resume", resume.empty() ? "(none)" : resume},
                  {"seed", std::to_string(cfg.seed)}});

    Dataset ds = load_dataset(data);
    Checkpoint resume_ckpt;
    const Checkpoint* resume_ptr = nullptr;
    if (!resume.empty()) {
        resume_ckpt = load_model_checkpoint(resume);
        resume_ptr = &resume_ckpt;
    }
    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path, std::ios::binary);
        if (!log) throw std::runtime_error("cannot open log '" + log_path + "'");
    }
    TrainResult res = train_decomposer(ds, arch, cfg, resume_ptr, log.is_open() ? &log : nullptr);
    save_checkpoint(res.best, out);
    save_checkpoint(res.last, out + ".last");
    write_curves_csv(res.curves, curves.empty() ? out + ".curves.csv" : curves);
    std::cout << "best validation accuracy " << res.best_val_accuracy << " at epoch " << res.best_epoch << "\n"
              << "wrote " << out << " (best), " << out << ".last (resumable)\n";
    return 0;
}

int cmd_train_classifier(const GlobalOpts& g, const std::string& data, const std::string& backbone,
                         const std::string& out, TrainConfig cfg, const std::string& curves,
                         const std::string& log_path) {
    require_file((fs::path(data) / "manifest.json").string(), "dataset manifest");
    Checkpoint bk = load_model_checkpoint(backbone);
    print_config("train-classifier", {{"data", data},
                                      {"backbone", backbone},
                                      {"out", out},
                                      {"epochs", std::to_string(cfg.epochs)},
                                      {"batch-size", std::to_string(cfg.batch_size)},
                                      {"lr", std::to_string(cfg.lr)},
                                      {"normals", onoff(cfg.use_normals)},
                                      {"aug-dropout", std::to_string(cfg.augment.dropout_p)},
                                      {"seed", std::to_string(cfg.seed)}});
    Dataset ds = load_dataset(data);
    DecomposerModel model = decomposer_from_checkpoint(bk);
    const std::uint64_t before = decomposer_hash(model);
    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path, std::ios::binary);
        if (!log) throw std::runtime_error("cannot open log '" + log_path + "'");
    }
    ClassifierTrainResult res = train_classifier(ds, model, cfg, log.is_open() ? &log : nullptr);
    if (decomposer_hash(model) != before) throw std::runtime_error("freeze contract violated: backbone changed");
    save_checkpoint(res.best, out);
    write_curves_csv(res.curves, curves.empty() ? out + ".curves.csv" : curves);
    std::cout << "best validation accuracy " << res.best_val_accuracy << " at epoch " << res.best_epoch
              << "\nbackbone hash unchanged: " << std::hex << before << std::dec << "\nwrote " << out << "\n";
    return 0;
}

int cmd_decompose(const GlobalOpts& g, const std::string& model_path, const std::string& in,
                  const std::string& out, int attention_query, const std::string& attention_out,
                  std::size_t attention_top, std::size_t attention_encoder) {
    print_config("decompose", {{"model", model_path},
                               {"in", in},
                               {"out", out},
                               {"attention-query", std::to_string(attention_query)},
                               {"attention-out", attention_out.empty() ? "(none)" : attention_out},
                               {"seed", std::to_string(g.seed)}});
    Checkpoint ck = load_model_checkpoint(model_path);
    require_file(in, "input cloud");
    DecomposerModel model = decomposer_from_checkpoint(ck);
    PointCloud cloud = normalize_unit_sphere(load(in));
    if (cloud.size() <= model.cfg.k()) {
        throw UsageError("cloud has " + std::to_string(cloud.size()) + " points but the model needs more than k=" +
                         std::to_string(model.cfg.k()));
    }
    if (model.cfg.use_normals() && !cloud.has_normals()) {
        throw UsageError("model was trained with normals but '" + in + "' has none");
    }
    const bool want_attention = attention_query >= 0;
    if (want_attention && static_cast<std::size_t>(attention_query) >= cloud.size()) {
        throw UsageError("attention query index " + std::to_string(attention_query) + " out of range");
    }
    DecomposeResult res = run_decomposer(model, cloud, want_attention);
    PointCloud colored = cloud;
    colored.labels = res.labels;
    save_ply(colored, out, true);
    if (cloud.has_labels()) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < cloud.size(); ++i) correct += res.labels[i] == cloud.labels[i] ? 1 : 0;
        std::cout << "instance accuracy " << double(correct) / double(cloud.size()) << "\n";
    }
    if (want_attention) {
        if (attention_out.empty()) throw UsageError("--attention-out required with --attention-query");
        const std::size_t enc = attention_encoder == 0 ? model.cfg.afe.encoders : attention_encoder;
        export_attention(cloud, res.labels, res.records, static_cast<std::size_t>(attention_query), enc,
                         std::min(attention_top, cloud.size()), attention_out);
        std::cout << "attention export (encoder " << enc << ", top " << std::min(attention_top, cloud.size())
                  << ") in " << attention_out << "\n";
    }
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& model_path, const std::string& data, const std::string& split,
             const std::string& out) {
    print_config("eval", {{"model", model_path}, {"data", data}, {"split", split}, {"out", out}});
    Checkpoint ck = load_model_checkpoint(model_path);
    require_file((fs::path(data) / "manifest.json").string(), "dataset manifest");
    Dataset ds = load_dataset(data);
    DecomposerModel model = decomposer_from_checkpoint(ck);
    auto ids = pick_objects(ds, split, 0);
    std::vector<PointCloud> clouds;
    for (auto i : ids) clouds.push_back(normalize_unit_sphere(ds.clouds[i]));
    EvalReport rep = evaluate_decomposition(model, clouds);
    write_eval_csv(rep, out);
    std::cout << "decomposer parameters: " << rep.parameter_count << "\n";
    if (ck.config.count("classifier.n_classes")) {
        ClassifierModel clf = classifier_from_checkpoint(ck);
        std::size_t correct = 0;
        for (auto i : ids) {
            correct += run_classifier(model, clf, normalize_unit_sphere(ds.clouds[i])) ==
                               ds.manifest.objects[i].category_id
                           ? 1
                           : 0;
        }
        std::cout << "classifier parameters: " << count_parameters(clf.named_params())
                  << "\nclassification accuracy (" << split << "): " << double(correct) / double(ids.size())
                  << "\n";
    }
    std::cout << "overall point accuracy (" << split << "): " << rep.overall << "\nper-class:";
    for (int t = 0; t < 4; ++t) {
        std::cout << ' ' << shape_label_name(static_cast<ShapeLabel>(t + 1)) << '='
                  << (rep.per_class[t] < 0 ? std::string("n/a") : std::to_string(rep.per_class[t]));
    }
    std::cout << "\nwrote " << out << "\n";
    return 0;
}

int cmd_ablate_density(const GlobalOpts& g, const std::string& model_path, const std::string& data,
                       const std::string& densities_s, const std::string& ks_s, const std::string& split,
                       std::size_t objects, const std::string& out) {
    print_config("ablate density-k", {{"model", model_path},
                                      {"data", data},
                                      {"densities", densities_s},
                                      {"ks", ks_s},
                                      {"split", split},
                                      {"objects", std::to_string(objects)},
                                      {"out", out}});
    Checkpoint ck = load_model_checkpoint(model_path);
    require_file((fs::path(data) / "manifest.json").string(), "dataset manifest");
    Dataset ds = load_dataset(data);
    DecomposerModel model = decomposer_from_checkpoint(ck);
    auto densities = split_sizes(densities_s);
    auto ks = split_sizes(ks_s);
    if (densities.empty() || ks.empty()) throw UsageError("--densities and --ks must be non-empty lists");
    auto ids = pick_objects(ds, split, objects);
    auto grid = ablate_density_k(model, ds, ids, densities, ks);
    write_density_csv(grid, out);
    std::cout << "wrote " << grid.size() << " cells (" << densities.size() << " densities x " << ks.size()
              << " ks) to " << out << "\n";
    return 0;
}

int cmd_ablate_noise(const GlobalOpts& g, const std::string& model_path, const std::string& data,
                     const std::string& sigmas_s, std::size_t draws, const std::string& split, std::size_t objects,
                     const std::string& out) {
    print_config("ablate noise", {{"model", model_path},
                                  {"data", data},
                                  {"sigmas", sigmas_s},
                                  {"draws", std::to_string(draws)},
                                  {"split", split},
                                  {"objects", std::to_string(objects)},
                                  {"out", out},
                                  {"seed", std::to_string(g.seed)}});
    Checkpoint ck = load_model_checkpoint(model_path);
    require_file((fs::path(data) / "manifest.json").string(), "dataset manifest");
    Dataset ds = load_dataset(data);
    DecomposerModel model = decomposer_from_checkpoint(ck);
    auto sigmas = split_doubles(sigmas_s);
    if (sigmas.empty()) throw UsageError("--sigmas must be a non-empty list");
    auto ids = pick_objects(ds, split, objects);
    auto cells = ablate_noise(model, ds, ids, sigmas, draws, g.seed);
    write_noise_csv(cells, out);
    std::cout << "wrote " << cells.size() << " sigma rows to " << out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// config file preprocessing: flat key=value lines, '#' comments; command-line
// flags win because file tokens are injected before them
// ---------------------------------------------------------------------------

std::vector<std::string> read_config_tokens(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open config file '" + path + "'");
    std::vector<std::string> tokens;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config " + path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
        };
        trim(key);
        trim(val);
        if (key.empty()) throw UsageError("config " + path + ":" + std::to_string(lineno) + ": empty key");
        tokens.push_back("--" + key);
        if (!val.empty()) tokens.push_back(val);
    }
    return tokens;
}

std::vector<std::string> preprocess_args(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
        }
    }
    if (config_path.empty()) return args;
    const std::vector<std::string> known = {"gen-data", "train-decomposer", "train-classifier",
                                            "decompose", "eval",             "ablate",
                                            "density-k", "noise"};
    std::size_t insert_at = 0;
    while (insert_at < args.size() &&
           std::find(known.begin(), known.end(), args[insert_at]) != known.end()) {
        ++insert_at;
    }
    auto tokens = read_config_tokens(config_path);
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(insert_at), tokens.begin(), tokens.end());
    return args;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ABD-Net point cloud decomposition and classification"};
    app.require_subcommand(1);
    app.fallthrough();
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "global random seed");
    app.add_option("--threads", g.threads, "worker threads for data-parallel stages (0 = library default)")
        ->envname("ABDNET_THREADS");
    app.add_flag("--verbose", g.verbose, "chatty progress output");
    app.add_option("--config", g.config_file, "key=value config file; flags win over file entries");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic labeled dataset");
    std::size_t gd_objects = 500, gd_points = 512;
    std::string gd_categories = "all", gd_out;
    double gd_train_frac = 0.8;
    gen->add_option("--objects", gd_objects, "number of objects");
    gen->add_option("--points", gd_points, "points per object");
    gen->add_option("--categories", gd_categories, "comma-separated category list or 'all'");
    gen->add_option("--out", gd_out, "output dataset directory");
    gen->add_option("--train-frac", gd_train_frac, "fraction of objects in the train split");

    auto add_train_flags = [](CLI::App* sub, TrainConfig& cfg, std::string& normals) {
        sub->add_option("--epochs", cfg.epochs, "training epochs");
        sub->add_option("--batch-size", cfg.batch_size, "objects per batch");
        sub->add_option("--lr", cfg.lr, "Adam learning rate");
        sub->add_option("--lr-decay", cfg.lr_decay, "learning-rate decay factor");
        sub->add_option("--decay-period", cfg.decay_period, "epochs between decays");
        sub->add_option("--normals", normals, "use point normals: on|off");
        sub->add_option("--k", cfg.k, "neighborhood size (0 = pick by density)");
        sub->add_option("--val-frac", cfg.val_fraction, "validation fraction of train objects");
        sub->add_option("--aug-scale-lo", cfg.augment.scale_lo, "augmentation scale lower bound");
        sub->add_option("--aug-scale-hi", cfg.augment.scale_hi, "augmentation scale upper bound");
        sub->add_option("--aug-dropout", cfg.augment.dropout_p, "point dropout probability");
        sub->add_option("--aug-noise", cfg.augment.noise_sigma, "Gaussian jitter sigma");
        sub->add_option("--aug-rotate", cfg.augment.rotate_z, "random rotation about the vertical axis");
    };

    // train-decomposer
    auto* td = app.add_subcommand("train-decomposer", "train the per-point shape decomposer");
    TrainConfig td_cfg;
    std::string td_data, td_out, td_arch = "desk", td_resume, td_curves, td_log, td_normals = "off";
    td->add_option("--data", td_data, "dataset directory");
    td->add_option("--out", td_out, "output checkpoint path");
    td->add_option("--arch", td_arch, "architecture preset: desk|reference");
    td->add_option("--resume", td_resume, "resume from a .last checkpoint");
    td->add_option("--curves", td_curves, "curves CSV path (default <out>.curves.csv)");
    td->add_option("--log", td_log, "line-oriented JSON event log");
    add_train_flags(td, td_cfg, td_normals);

    // train-classifier
    auto* tc = app.add_subcommand("train-classifier", "train the object classifier on frozen features");
    TrainConfig tc_cfg;
    tc_cfg.epochs = 60;
    tc_cfg.augment.dropout_p = 0.1;  // random points dropout for the classifier
    std::string tc_data, tc_backbone, tc_out, tc_curves, tc_log, tc_normals = "off";
    tc->add_option("--data", tc_data, "dataset directory");
    tc->add_option("--backbone", tc_backbone, "frozen decomposer checkpoint");
    tc->add_option("--out", tc_out, "output checkpoint path (backbone + classifier)");
    tc->add_option("--curves", tc_curves, "curves CSV path (default <out>.curves.csv)");
    tc->add_option("--log", tc_log, "line-oriented JSON event log");
    add_train_flags(tc, tc_cfg, tc_normals);

    // decompose
    auto* dc = app.add_subcommand("decompose", "label a cloud and write a colorized PLY");
    std::string dc_model, dc_in, dc_out, dc_attn_out;
    int dc_query = -1;
    std::size_t dc_top = 100, dc_encoder = 0;
    dc->add_option("--model", dc_model, "decomposer checkpoint");
    dc->add_option("--in", dc_in, "input cloud (xyz/ply/off)");
    dc->add_option("--out", dc_out, "output colored PLY");
    dc->add_option("--attention-query", dc_query, "query point index for attention export");
    dc->add_option("--attention-out", dc_attn_out, "directory for attention CSV + per-head PLYs");
    dc->add_option("--attention-top", dc_top, "points per head in the export");
    dc->add_option("--attention-encoder", dc_encoder, "1-based encoder to export (0 = last)");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate decomposition on a dataset split");
    std::string ev_model, ev_data, ev_split = "test", ev_out = "eval.csv";
    ev->add_option("--model", ev_model, "checkpoint");
    ev->add_option("--data", ev_data, "dataset directory");
    ev->add_option("--split", ev_split, "train|test|all");
    ev->add_option("--out", ev_out, "metrics CSV");

    // ablate
    auto* ab = app.add_subcommand("ablate", "robustness studies");
    ab->require_subcommand(1);
    auto* abd_sub = ab->add_subcommand("density-k", "accuracy across density and neighborhood size");
    std::string abd_model, abd_data, abd_densities = "128,256,512,1024,2048", abd_ks = "8,16,32,64";
    std::string abd_split = "test", abd_out = "density_k.csv";
    std::size_t abd_objects = 10;
    abd_sub->add_option("--model", abd_model, "checkpoint");
    abd_sub->add_option("--data", abd_data, "dataset directory");
    abd_sub->add_option("--densities", abd_densities, "comma-separated densities");
    abd_sub->add_option("--ks", abd_ks, "comma-separated neighborhood sizes");
    abd_sub->add_option("--split", abd_split, "train|test|all");
    abd_sub->add_option("--objects", abd_objects, "objects to average over (0 = all)");
    abd_sub->add_option("--out", abd_out, "grid CSV");

    auto* abn = ab->add_subcommand("noise", "accuracy under Gaussian point perturbation");
    std::string abn_model, abn_data, abn_sigmas = "0,0.02,0.03,0.04,0.05", abn_split = "test",
                abn_out = "noise.csv";
    std::size_t abn_draws = 10, abn_objects = 10;
    abn->add_option("--model", abn_model, "checkpoint");
    abn->add_option("--data", abn_data, "dataset directory");
    abn->add_option("--sigmas", abn_sigmas, "comma-separated noise sigmas (include 0 for the baseline)");
    abn->add_option("--draws", abn_draws, "noise draws per sigma");
    abn->add_option("--split", abn_split, "train|test|all");
    abn->add_option("--objects", abn_objects, "objects to average over (0 = all)");
    abn->add_option("--out", abn_out, "curve CSV");

    std::vector<std::string> args;
    try {
        args = preprocess_args(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    try {
        std::vector<const char*> cargs;
        cargs.push_back(argv[0]);
        for (const auto& a : args) cargs.push_back(a.c_str());
        app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        apply_threads(g.threads);
        if (gen->parsed()) {
            if (gd_out.empty()) throw UsageError("gen-data: --out is required");
            return cmd_gen_data(g, gd_objects, gd_points, gd_categories, gd_out, gd_train_frac);
        }
        if (td->parsed()) {
            if (td_data.empty() || td_out.empty()) throw UsageError("train-decomposer: --data and --out are required");
            td_cfg.seed = g.seed;
            td_cfg.use_normals = parse_onoff(td_normals, "--normals");
            return cmd_train_decomposer(g, td_data, td_out, td_arch, td_cfg, td_resume, td_curves, td_log);
        }
        if (tc->parsed()) {
            if (tc_backbone.empty()) throw UsageError("train-classifier: --backbone is required");
            if (tc_data.empty() || tc_out.empty()) throw UsageError("train-classifier: --data and --out are required");
            tc_cfg.seed = g.seed;
            tc_cfg.use_normals = parse_onoff(tc_normals, "--normals");
            return cmd_train_classifier(g, tc_data, tc_backbone, tc_out, tc_cfg, tc_curves, tc_log);
        }
        if (dc->parsed()) {
            if (dc_model.empty() || dc_in.empty() || dc_out.empty()) {
                throw UsageError("decompose: --model, --in and --out are required");
            }
            return cmd_decompose(g, dc_model, dc_in, dc_out, dc_query, dc_attn_out, dc_top, dc_encoder);
        }
        if (ev->parsed()) {
            if (ev_model.empty() || ev_data.empty()) throw UsageError("eval: --model and --data are required");
            return cmd_eval(g, ev_model, ev_data, ev_split, ev_out);
        }
        if (ab->parsed()) {
            if (abd_sub->parsed()) {
                if (abd_model.empty() || abd_data.empty()) {
                    throw UsageError("ablate density-k: --model and --data are required");
                }
                return cmd_ablate_density(g, abd_model, abd_data, abd_densities, abd_ks, abd_split, abd_objects,
                                          abd_out);
            }
            if (abn->parsed()) {
                if (abn_model.empty() || abn_data.empty()) {
                    throw UsageError("ablate noise: --model and --data are required");
                }
                return cmd_ablate_noise(g, abn_model, abn_data, abn_sigmas, abn_draws, abn_split, abn_objects,
                                        abn_out);
            }
        }
        std::cerr << "error: no subcommand\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 1;
    }
}
