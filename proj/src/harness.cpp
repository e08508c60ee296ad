#include "featrank/harness.hpp"

#include "featrank/errors.hpp"
#include "featrank/rng.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace featrank {

using nlohmann::json;

NetworkSpec build_network_spec(std::size_t d_in, std::size_t classes) {
    if (classes < 2) throw ConfigError("need at least 2 classes");
    if (d_in < classes) {
        throw ConfigError("input width " + std::to_string(d_in) + " is below the class count " +
                          std::to_string(classes));
    }
    if (d_in / 4 < 1) throw ConfigError("input width " + std::to_string(d_in) + " is too small to halve twice");
    return NetworkSpec{{d_in, d_in / 2, d_in / 4, classes}, Activation::relu};
}

double feature_similarity(std::span<const std::size_t> a, std::span<const std::size_t> b) {
    if (a.size() != b.size()) {
        throw ConfigError("similarity needs equal-sized sets (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
    }
    if (a.empty()) throw ConfigError("similarity of empty sets is undefined");
    const std::set<std::size_t> left(a.begin(), a.end());
    std::size_t common = 0;
    for (std::size_t v : std::set<std::size_t>(b.begin(), b.end())) common += left.count(v);
    return static_cast<double>(common) / static_cast<double>(a.size());
}

void export_mask(std::span<const std::size_t> selected, std::size_t d, GridShape grid,
                 const std::filesystem::path& path) {
    if (grid.height == 0 || grid.width == 0 || grid.height * grid.width != d) {
        throw ConfigError(std::to_string(d) + " features do not form a " + std::to_string(grid.height) + "x" +
                          std::to_string(grid.width) + " grid");
    }
    std::vector<unsigned char> pixels(d, 0);
    for (std::size_t j : selected) {
        if (j >= d) throw ShapeError("mask feature index out of range");
        pixels[j] = 255;
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << "P5\n" << grid.width << ' ' << grid.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
    if (dataset.format != "idx" && dataset.format != "delimited") {
        throw ConfigError("dataset.format must be 'idx' or 'delimited'");
    }
    if (dataset.format == "idx" && (dataset.images.empty() || dataset.labels.empty())) {
        throw ConfigError("idx datasets need dataset.images and dataset.labels");
    }
    if (dataset.format == "delimited" && dataset.features.empty()) {
        throw ConfigError("delimited datasets need dataset.features");
    }
    if (methods.empty()) throw ConfigError("experiment.methods is empty");
    if (!(fraction > 0.0 && fraction <= 0.5)) throw ConfigError("experiment.fraction must be in (0, 0.5]");
    if (random_runs == 0) throw ConfigError("experiment.random_runs must be >= 1");
    if (pfi_permutations == 0) throw ConfigError("pfi.permutations must be >= 1");
    SwpaConfig sc = swpa;
    sc.train = train;
    sc.validate();
}

namespace {

enum class Kind { text, count, real, flag, list };

struct KeyDef {
    const char* name;
    const char* help;
    Kind kind;
    bool echo;
    std::function<void(ExperimentConfig&, const json&)> set;
    std::function<json(const ExperimentConfig&)> get;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& expected) {
    throw ConfigError("config key '" + key + "' expects " + expected);
}

std::string as_text(const json& v, const std::string& key) {
    if (!v.is_string()) bad_value(key, "a string");
    return v.get<std::string>();
}
std::size_t as_count(const json& v, const std::string& key) {
    if (v.is_number_unsigned()) return v.get<std::size_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::size_t>(v.get<long long>());
    bad_value(key, "a non-negative integer");
}
double as_real(const json& v, const std::string& key) {
    if (!v.is_number()) bad_value(key, "a number");
    return v.get<double>();
}
bool as_flag(const json& v, const std::string& key) {
    if (!v.is_boolean()) bad_value(key, "true or false");
    return v.get<bool>();
}

template <typename E>
E pick(const std::string& text, const std::string& key, std::initializer_list<std::pair<const char*, E>> options) {
    std::string expected;
    for (const auto& [name, value] : options) {
        if (text == name) return value;
        expected += expected.empty() ? std::string("one of ") + name : std::string(", ") + name;
    }
    bad_value(key, expected);
}

template <typename E>
std::string name_of(E value, std::initializer_list<std::pair<const char*, E>> options) {
    for (const auto& [name, v] : options) {
        if (v == value) return name;
    }
    return "?";
}

const std::initializer_list<std::pair<const char*, Delimiter>> kDelimiters{{"comma", Delimiter::comma},
                                                                             {"whitespace", Delimiter::whitespace}};
const std::initializer_list<std::pair<const char*, LabelBase>> kLabelBases{
    {"auto", LabelBase::automatic}, {"0", LabelBase::zero}, {"1", LabelBase::one}};
const std::initializer_list<std::pair<const char*, NormalizeMode>> kNormalize{
    {"none", NormalizeMode::none}, {"minmax", NormalizeMode::minmax}, {"zscore", NormalizeMode::zscore}};
const std::initializer_list<std::pair<const char*, WvlForm>> kWvlForms{{"printed", WvlForm::printed},
                                                                         {"centered", WvlForm::centered}};
const std::initializer_list<std::pair<const char*, SbsAggregation>> kAggregations{
    {"abs_of_mean", SbsAggregation::abs_of_mean}, {"mean_of_abs", SbsAggregation::mean_of_abs}};

std::vector<RankMethod> as_methods(const json& v, const std::string& key) {
    std::vector<std::string> names;
    if (v.is_array()) {
        for (const auto& item : v) names.push_back(as_text(item, key));
    } else {
        std::stringstream ss(as_text(v, key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) names.push_back(item);
        }
    }
    std::vector<RankMethod> methods;
    for (const auto& name : names) {
        const RankMethod m = parse_rank_method(name);
        if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
    }
    return methods;
}

const std::vector<KeyDef>& key_table() {
    static const std::vector<KeyDef> table = [] {
        std::vector<KeyDef> t;
        auto add = [&](const char* name, const char* help, Kind kind, auto set, auto get, bool echo = true) {
            t.push_back(KeyDef{name, help, kind, echo, set, get});
        };
        add("seed", "root seed for every random stream", Kind::count,
            [](ExperimentConfig& c, const json& v) { c.seed = as_count(v, "seed"); },
            [](const ExperimentConfig& c) { return json(c.seed); });
        add("out", "output directory", Kind::text,
            [](ExperimentConfig& c, const json& v) { c.output_dir = as_text(v, "out"); },
            [](const ExperimentConfig& c) { return json(c.output_dir.string()); }, false);
        add("threads", "worker threads (0: FEATRANK_THREADS or all cores)", Kind::count,
            [](ExperimentConfig& c, const json& v) { c.threads = as_count(v, "threads"); },
            [](const ExperimentConfig& c) { return json(c.threads); }, false);

        add("dataset.format", "idx or delimited", Kind::text,
            [](ExperimentConfig& c, const json& v) {
                c.dataset.format = as_text(v, "dataset.format");
                if (c.dataset.format != "idx" && c.dataset.format != "delimited") {
                    bad_value("dataset.format", "one of idx, delimited");
                }
            },
            [](const ExperimentConfig& c) { return json(c.dataset.format); });
        add("dataset.images", "IDX image file (optionally gzipped)", Kind::text,
            [](ExperimentConfig& c, const json& v) { c.dataset.images = as_text(v, "dataset.images"); },
            [](const ExperimentConfig& c) { return json(c.dataset.images.string()); });
        add("dataset.labels", "IDX label file, or separate label column file for delimited data", Kind::text,
            [](ExperimentConfig& c, const json& v) { c.dataset.labels = as_text(v, "dataset.labels"); },
            [](const ExperimentConfig& c) { return json(c.dataset.labels.string()); });
        add("dataset.features", "delimited feature table (labels in the last column unless dataset.labels is set)",
            Kind::text,
            [](ExperimentConfig& c, const json& v) { c.dataset.features = as_text(v, "dataset.features"); },
            [](const ExperimentConfig& c) { return json(c.dataset.features.string()); });
        add("dataset.delimiter", "comma or whitespace", Kind::text,
            [](ExperimentConfig& c, const json& v) {
                c.dataset.delimiter = pick(as_text(v, "dataset.delimiter"), "dataset.delimiter", kDelimiters);
            },
            [](const ExperimentConfig& c) { return json(name_of(c.dataset.delimiter, kDelimiters)); });
        add("dataset.label_base", "auto, 0 or 1 (1: class codes start at 1)", Kind::text,
            [](ExperimentConfig& c, const json& v) {
                c.dataset.label_base = pick(as_text(v, "dataset.label_base"), "dataset.label_base", kLabelBases);
            },
            [](const ExperimentConfig& c) { return json(name_of(c.dataset.label_base, kLabelBases)); });
        add("dataset.subsample", "rows to keep (0: all)", Kind::count,
            [](ExperimentConfig& c, const json& v) { c.dataset.subsample = as_count(v, "dataset.subsample"); },
            [](const ExperimentConfig& c) { return json(c.dataset.subsample); });
        add("dataset.normalize", "none, minmax or zscore (training-split statistics)", Kind::text,
            [](ExperimentConfig& c, const json& v) {
                c.dataset.normalize = pick(as_text(v, "dataset.normalize"), "dataset.normalize", kNormalize);
            },
            [](const ExperimentConfig& c) { return json(name_of(c.dataset.normalize, kNormalize)); });
        add("dataset.grid_height", "mask grid height (0: from IDX header)", Kind::count,
            [](ExperimentConfig& c, const json& v) { c.dataset.grid.height = as_count(v, "dataset.grid_height"); },
            [](const ExperimentConfig& c) { return json(c.dataset.grid.height); });
        add("dataset.grid_width", "mask grid width (0: from IDX header)", Kind::count,
            [](ExperimentConfig& c, const json& v) { c.dataset.grid.width = as_count(v, "dataset.grid_width"); },
            [](const ExperimentConfig& c) { return json(c.dataset.grid.width); });

        add("experiment.methods", "comma-separated subset of swpa,sbs,pfi,random", Kind::list,
            [](ExperimentConfig& c, const json& v) { c.methods = as_methods(v, "experiment.methods"); },
            [](const ExperimentConfig& c) {
                json names = json::array();
                for (RankMethod m : c.methods) names.push_back(to_string(m));
                return names;
            });
        add("experiment.fraction", "top/bottom fraction f", Kind::real,
            [](ExperimentConfig& c, const json& v) { c.fraction = as_real(v, "experiment.fraction"); },
            [](const ExperimentConfig& c) { return json(c.fraction); });
        add("experiment.random_runs", "random-subset repetitions", Kind::count,
            [](ExperimentConfig& c, const json& v) { c.random_runs = as_count(v, "experiment.random_runs"); },
            [](const ExperimentConfig& c) { return json(c.random_runs); });
        add("experiment.export_masks", "write PGM masks of selected features when the data is a grid", Kind::flag,
            [](ExperimentConfig& c, const json& v) { c.export_masks = as_flag(v, "experiment.export_masks"); },
            [](const ExperimentConfig& c) { return json(c.export_masks); });

        add("swpa.step_counter", "pruning steps n", Kind::count,
            [](ExperimentConfig& c, const json& v) { c.swpa.step_counter = as_count(v, "swpa.step_counter"); },
            [](const ExperimentConfig& c) { return json(c.swpa.step_counter); });
        add("swpa.selection_factor", "fraction of features SWPA keeps", Kind::real,
            [](ExperimentConfig& c, const json& v) {
                c.swpa.selection_factor = as_real(v, "swpa.selection_factor");
            },
            [](const ExperimentConfig& c) { return json(c.swpa.selection_factor); });
        add("penalty.l1", "l1 penalty on drop-in weights", Kind::flag,
            [](ExperimentConfig& c, const json& v) { c.swpa.penalty.enable_l1 = as_flag(v, "penalty.l1"); },
            [](const ExperimentConfig& c) { return json(c.swpa.penalty.enable_l1); });
        add("penalty.wvl", "weight-variance penalty on drop-in weights", Kind::flag,
            [](ExperimentConfig& c, const json& v) { c.swpa.penalty.enable_wvl = as_flag(v, "penalty.wvl"); },
            [](const ExperimentConfig& c) { return json(c.swpa.penalty.enable_wvl); });
        add("penalty.lambda", "l1 coefficient", Kind::real,
            [](ExperimentConfig& c, const json& v) { c.swpa.penalty.lambda = as_real(v, "penalty.lambda"); },
            [](const ExperimentConfig& c) { return json(c.swpa.penalty.lambda); });
        add("penalty.gamma", "weight-variance coefficient", Kind::real,
            [](ExperimentConfig& c, const json& v) { c.swpa.penalty.gamma = as_real(v, "penalty.gamma"); },
            [](const ExperimentConfig& c) { return json(c.swpa.penalty.gamma); });
        add("penalty.wvl_form", "printed: sigmoid(20w-0.5), centered: sigmoid(20(w-0.5))", Kind::text,
            [](ExperimentConfig& c, const json& v) {
                c.swpa.penalty.wvl_form = pick(as_text(v, "penalty.wvl_form"), "penalty.wvl_form", kWvlForms);
            },
            [](const ExperimentConfig& c) { return json(name_of(c.swpa.penalty.wvl_form, kWvlForms)); });
        add("pfi.permutations", "permutations c per feature", Kind::count,
            [](ExperimentConfig& c, const json& v) { c.pfi_permutations = as_count(v, "pfi.permutations"); },
            [](const ExperimentConfig& c) { return json(c.pfi_permutations); });
        add("sbs.aggregation", "abs_of_mean or mean_of_abs", Kind::text,
            [](ExperimentConfig& c, const json& v) {
                c.sbs_aggregation = pick(as_text(v, "sbs.aggregation"), "sbs.aggregation", kAggregations);
            },
            [](const ExperimentConfig& c) { return json(name_of(c.sbs_aggregation, kAggregations)); });

        add("train.max_epochs", "epoch budget", Kind::count,
            [](ExperimentConfig& c, const json& v) { c.train.max_epochs = as_count(v, "train.max_epochs"); },
            [](const ExperimentConfig& c) { return json(c.train.max_epochs); });
        add("train.patience", "epochs without validation improvement before stopping", Kind::count,
            [](ExperimentConfig& c, const json& v) { c.train.patience = as_count(v, "train.patience"); },
            [](const ExperimentConfig& c) { return json(c.train.patience); });
        add("train.learning_rate", "SGD learning rate", Kind::real,
            [](ExperimentConfig& c, const json& v) { c.train.learning_rate = as_real(v, "train.learning_rate"); },
            [](const ExperimentConfig& c) { return json(c.train.learning_rate); });
        add("train.momentum", "SGD momentum", Kind::real,
            [](ExperimentConfig& c, const json& v) { c.train.momentum = as_real(v, "train.momentum"); },
            [](const ExperimentConfig& c) { return json(c.train.momentum); });
        add("train.batch_size", "mini-batch size", Kind::count,
            [](ExperimentConfig& c, const json& v) { c.train.batch_size = as_count(v, "train.batch_size"); },
            [](const ExperimentConfig& c) { return json(c.train.batch_size); });
        return t;
    }();
    return table;
}

const KeyDef& find_key(const std::string& name) {
    for (const auto& k : key_table()) {
        if (name == k.name) return k;
    }
    throw ConfigError("unknown config key '" + name + "'");
}

void apply_preset(ExperimentConfig& cfg, const std::string& preset) {
    if (preset == "paper") {
        cfg.train.max_epochs = 20000;
        cfg.train.patience = 2000;
    } else if (preset == "desk") {
        cfg.train.max_epochs = 500;
        cfg.train.patience = 50;
    } else {
        bad_value("preset", "one of paper, desk");
    }
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> out;
        for (const auto& k : key_table()) out.push_back({k.name, k.help});
        return out;
    }();
    return keys;
}

nlohmann::json to_flat_json(const ExperimentConfig& cfg) {
    json out = json::object();
    for (const auto& k : key_table()) {
        if (k.echo) out[k.name] = k.get(cfg);
    }
    return out;
}

ExperimentConfig config_from_flat_json(const nlohmann::json& flat, ExperimentConfig base) {
    if (!flat.is_object()) throw ConfigError("configuration must be a JSON object of dotted keys");
    if (flat.contains("preset")) apply_preset(base, as_text(flat.at("preset"), "preset"));
    for (const auto& [key, value] : flat.items()) {
        if (key == "preset") continue;
        find_key(key).set(base, value);
    }
    return base;
}

nlohmann::json parse_config_value(const std::string& key, const std::string& text) {
    if (key == "preset") return text;
    const KeyDef& def = find_key(key);
    switch (def.kind) {
        case Kind::text:
        case Kind::list:
            return text;
        case Kind::count: {
            std::size_t v = 0;
            const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc{} || ptr != text.data() + text.size()) bad_value(key, "a non-negative integer");
            return v;
        }
        case Kind::real: {
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc{} || ptr != text.data() + text.size()) bad_value(key, "a number");
            return v;
        }
        case Kind::flag:
            if (text == "true" || text == "1") return true;
            if (text == "false" || text == "0") return false;
            bad_value(key, "true or false");
    }
    return text;
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

namespace {
// Stream tags for derive_seed.
enum : std::uint64_t {
    kTagSubsample = 1,
    kTagSplit,
    kTagSwpa,
    kTagBaseInit,
    kTagBaseTrain,
    kTagPfi,
    kTagRandom,
    kTagRetrain,
};
}  // namespace

PreparedData prepare_data(const ExperimentConfig& cfg) {
    PreparedData out;
    const DatasetConfig& dc = cfg.dataset;
    Dataset ds;
    if (dc.format == "idx") {
        ds = load_idx(dc.images, dc.labels);
        const auto [count, height, width] = idx_image_shape(dc.images);
        (void)count;
        out.grid = GridShape{height, width};
    } else {
        ds = load_delimited(DelimitedSource{dc.features, dc.labels, dc.delimiter, dc.label_base});
    }
    if (dc.grid.height > 0 && dc.grid.width > 0) out.grid = dc.grid;
    out.rows_loaded = ds.size();
    ds = subsample(ds, dc.subsample, derive_seed(cfg.seed, {kTagSubsample}));
    out.splits = normalize(split(ds, SplitRatios{}, derive_seed(cfg.seed, {kTagSplit})), dc.normalize);
    return out;
}

SimilarityMatrix similarity_matrix(const std::vector<std::string>& labels,
                                   const std::vector<std::vector<std::size_t>>& sets) {
    if (labels.size() != sets.size()) throw ShapeError("similarity matrix: label/set count mismatch");
    SimilarityMatrix m{labels, std::vector<std::vector<double>>(sets.size(), std::vector<double>(sets.size(), 1.0))};
    for (std::size_t a = 0; a < sets.size(); ++a) {
        for (std::size_t b = a + 1; b < sets.size(); ++b) {
            m.values[a][b] = m.values[b][a] = feature_similarity(sets[a], sets[b]);
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Experiment
// ---------------------------------------------------------------------------

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Runs independent jobs on up to `threads` workers; rethrows the first failure.
void run_parallel(std::vector<std::function<void()>>& jobs, std::size_t threads) {
    const std::size_t workers = std::min(jobs.size(), threads == 0 ? default_thread_count() : threads);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                jobs[i]();
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    }
    if (failure) std::rethrow_exception(failure);
}

SubsetResult retrain_subset(const SplitDataset& data, std::vector<std::size_t> features, const TrainConfig& base,
                            std::uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    std::sort(features.begin(), features.end());
    SubsetResult r;
    r.features = features;
    const SplitDataset sub = data.select_features(features);
    const NetworkSpec spec = build_network_spec(features.size(), data.class_count());
    TrainConfig tc = base;
    tc.seed = derive_seed(seed, {1});
    tc.penalty.reset();
    try {
        TrainResult tr = train(Network::initialize(spec, derive_seed(seed, {0})), sub, tc);
        r.val_accuracy = tr.best_val_accuracy;
        r.epochs_run = tr.epochs_run;
        r.test_accuracy = accuracy(tr.best_network, sub.test.X, sub.test.y);
        r.history = std::move(tr.history);
    } catch (const DivergenceError& e) {
        r.status = "diverged";
        r.epochs_run = e.epoch();
    }
    r.seconds = seconds_since(start);
    return r;
}

std::uint64_t retrain_seed(std::uint64_t root, std::uint64_t method, std::uint64_t subset, std::uint64_t run = 0) {
    return derive_seed(root, {kTagRetrain, method, subset, run});
}

DataSummary summarize(const PreparedData& prep) {
    const SplitDataset& s = prep.splits;
    return DataSummary{prep.rows_loaded, s.feature_count(), s.class_count(),
                       {s.train.size(), s.val.size(), s.test.size()}, s.warnings};
}

std::size_t checked_selection(const SplitDataset& data, double fraction) {
    const std::size_t selected = selected_count(data.feature_count(), fraction);
    if (selected == 0) {
        throw ConfigError("fraction " + std::to_string(fraction) + " selects no feature out of " +
                          std::to_string(data.feature_count()));
    }
    build_network_spec(selected, data.class_count());
    return selected;
}

SwpaConfig swpa_config_for(const ExperimentConfig& cfg) {
    SwpaConfig sc = cfg.swpa;
    sc.train = cfg.train;
    sc.train.seed = derive_seed(cfg.seed, {kTagSwpa});
    return sc;
}

// The full-width network shared by SBS and PFI. `trained` stays empty on divergence.
BaseNetworkSummary train_base(const ExperimentConfig& cfg, const SplitDataset& data, const NetworkSpec& spec,
                              std::optional<TrainResult>& trained) {
    const auto start = std::chrono::steady_clock::now();
    BaseNetworkSummary summary;
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, {kTagBaseTrain});
    tc.penalty.reset();
    try {
        trained = train(Network::initialize(spec, derive_seed(cfg.seed, {kTagBaseInit})), data, tc);
        summary.val_accuracy = trained->best_val_accuracy;
        summary.epochs_run = trained->epochs_run;
        summary.test_accuracy = accuracy(trained->best_network, data.test.X, data.test.y);
        summary.history = trained->history;
    } catch (const DivergenceError& e) {
        summary.status = "diverged";
        summary.epochs_run = e.epoch();
    }
    summary.seconds = seconds_since(start);
    return summary;
}

FeatureRanking rank_with_base(const ExperimentConfig& cfg, const SplitDataset& data, const Network& net,
                              RankMethod method) {
    if (method == RankMethod::sbs) return sbs_rank(data, net, cfg.sbs_aggregation);
    return pfi_rank(data, net, cfg.pfi_permutations, derive_seed(cfg.seed, {kTagPfi}), cfg.threads);
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const PreparedData prep = prepare_data(cfg);
    const SplitDataset& data = prep.splits;

    ExperimentReport report;
    report.config = to_flat_json(cfg);
    report.data = summarize(prep);
    report.selected = checked_selection(data, cfg.fraction);
    report.full_network = build_network_spec(data.feature_count(), data.class_count());
    report.reduced_network = build_network_spec(report.selected, data.class_count());

    auto wants = [&](RankMethod m) { return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end(); };

    // Rankings. SWPA and the shared base network are independent.
    std::optional<TrainResult> base;
    std::optional<SwpaResult> swpa;
    bool swpa_diverged = false;
    double swpa_seconds = 0.0;
    std::vector<std::function<void()>> ranking_jobs;
    if (wants(RankMethod::swpa)) {
        ranking_jobs.emplace_back([&] {
            const auto start = std::chrono::steady_clock::now();
            try {
                swpa = swpa_run(data, report.full_network, swpa_config_for(cfg));
            } catch (const DivergenceError&) {
                swpa_diverged = true;
            }
            swpa_seconds = seconds_since(start);
        });
    }
    if (wants(RankMethod::sbs) || wants(RankMethod::pfi)) {
        ranking_jobs.emplace_back([&] { report.base_network = train_base(cfg, data, report.full_network, base); });
    }
    run_parallel(ranking_jobs, cfg.threads);

    for (RankMethod m : cfg.methods) {
        if (m == RankMethod::random) continue;
        MethodReport mr;
        mr.method = m;
        const auto start = std::chrono::steady_clock::now();
        if (m == RankMethod::swpa) {
            if (swpa_diverged) {
                mr.status = "diverged";
            } else {
                mr.ranking = swpa->ranking;
                mr.rounds = swpa->rounds;
            }
            mr.ranking_seconds = swpa_seconds;
        } else if (!base) {
            mr.status = "diverged";
        } else {
            mr.ranking = rank_with_base(cfg, data, base->best_network, m);
        }
        if (m != RankMethod::swpa) mr.ranking_seconds = seconds_since(start);
        report.methods.push_back(std::move(mr));
    }

    // Remove-and-retrain on every subset.
    std::vector<std::function<void()>> retrain_jobs;
    for (MethodReport& mr : report.methods) {
        if (!mr.ranking) continue;
        const TopBottom tb = top_bottom(*mr.ranking, cfg.fraction);
        const auto tag = static_cast<std::uint64_t>(mr.method);
        retrain_jobs.emplace_back([&, tb, tag] {
            mr.top = retrain_subset(data, tb.top, cfg.train, retrain_seed(cfg.seed, tag, 0));
        });
        retrain_jobs.emplace_back([&, tb, tag] {
            mr.bottom = retrain_subset(data, tb.bottom, cfg.train, retrain_seed(cfg.seed, tag, 1));
        });
    }
    if (wants(RankMethod::random)) {
        report.random.emplace();
        report.random->runs.resize(cfg.random_runs);
        for (std::size_t run = 0; run < cfg.random_runs; ++run) {
            retrain_jobs.emplace_back([&, run] {
                const auto tag = static_cast<std::uint64_t>(RankMethod::random);
                const FeatureRanking r = random_rank(data.feature_count(), derive_seed(cfg.seed, {kTagRandom, run}));
                report.random->runs[run] =
                    retrain_subset(data, top_bottom(r, cfg.fraction).top, cfg.train, retrain_seed(cfg.seed, tag, 0, run));
            });
        }
    }
    run_parallel(retrain_jobs, cfg.threads);

    if (report.random) {
        double sum = 0.0;
        std::size_t ok = 0;
        for (const SubsetResult& r : report.random->runs) {
            if (!r.test_accuracy) continue;
            sum += *r.test_accuracy;
            ++ok;
            report.random->worst = std::min(report.random->worst.value_or(1.0), *r.test_accuracy);
        }
        if (ok > 0) report.random->average = sum / static_cast<double>(ok);
    }

    std::vector<std::string> labels;
    std::vector<std::vector<std::size_t>> sets;
    for (const MethodReport& mr : report.methods) {
        if (!mr.ranking) continue;
        labels.push_back(to_string(mr.method));
        sets.push_back(top_bottom(*mr.ranking, cfg.fraction).top);
    }
    report.similarity = similarity_matrix(labels, sets);

    auto cell_diverged = [](const std::optional<SubsetResult>& r) { return r && r->status != "ok"; };
    for (const MethodReport& mr : report.methods) {
        report.diverged = report.diverged || mr.status != "ok" || cell_diverged(mr.top) || cell_diverged(mr.bottom);
    }
    if (report.random) {
        for (const SubsetResult& r : report.random->runs) report.diverged = report.diverged || r.status != "ok";
    }
    if (report.base_network) report.diverged = report.diverged || report.base_network->status != "ok";
    return report;
}

TrainReport run_training(const ExperimentConfig& cfg) {
    cfg.validate();
    const PreparedData prep = prepare_data(cfg);
    TrainReport report;
    report.config = to_flat_json(cfg);
    report.data = summarize(prep);
    report.network = build_network_spec(prep.splits.feature_count(), prep.splits.class_count());
    std::optional<TrainResult> trained;
    report.result = train_base(cfg, prep.splits, report.network, trained);
    return report;
}

RankReport run_ranking(const ExperimentConfig& cfg, RankMethod method) {
    cfg.validate();
    const PreparedData prep = prepare_data(cfg);
    const SplitDataset& data = prep.splits;
    RankReport report;
    report.config = to_flat_json(cfg);
    report.data = summarize(prep);
    report.method = method;
    const NetworkSpec full = build_network_spec(data.feature_count(), data.class_count());
    if (method == RankMethod::random) {
        report.ranking = random_rank(data.feature_count(), derive_seed(cfg.seed, {kTagRandom, 0}));
    } else if (method == RankMethod::swpa) {
        try {
            SwpaResult res = swpa_run(data, full, swpa_config_for(cfg));
            report.ranking = std::move(res.ranking);
            report.rounds = std::move(res.rounds);
        } catch (const DivergenceError&) {
            report.status = "diverged";
        }
    } else {
        std::optional<TrainResult> base;
        report.base_network = train_base(cfg, data, full, base);
        if (base) {
            report.ranking = rank_with_base(cfg, data, base->best_network, method);
        } else {
            report.status = "diverged";
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

namespace {

AblationReport run_swpa_variants(const ExperimentConfig& cfg, std::string kind, std::vector<SwpaVariant> variants) {
    cfg.validate();
    const PreparedData prep = prepare_data(cfg);
    const SplitDataset& data = prep.splits;

    AblationReport report;
    report.kind = std::move(kind);
    report.config = to_flat_json(cfg);
    report.data = summarize(prep);
    report.selected = checked_selection(data, cfg.fraction);
    const NetworkSpec full = build_network_spec(data.feature_count(), data.class_count());
    report.variants = std::move(variants);

    std::vector<std::function<void()>> jobs;
    for (SwpaVariant& v : report.variants) {
        jobs.emplace_back([&] {
            SwpaConfig sc = swpa_config_for(cfg);
            sc.step_counter = v.step_counter;
            sc.penalty = v.penalty;
            try {
                SwpaResult res = swpa_run(data, full, sc);
                v.ranking = std::move(res.ranking);
                v.rounds = std::move(res.rounds);
            } catch (const DivergenceError&) {
                v.status = "diverged";
                return;
            }
            const auto tag = static_cast<std::uint64_t>(RankMethod::swpa);
            v.top = retrain_subset(data, top_bottom(*v.ranking, cfg.fraction).top, cfg.train,
                                   retrain_seed(cfg.seed, tag, 0));
        });
    }
    run_parallel(jobs, cfg.threads);

    std::vector<std::string> labels;
    std::vector<std::vector<std::size_t>> sets;
    for (const SwpaVariant& v : report.variants) {
        report.diverged = report.diverged || v.status != "ok" || (v.top && v.top->status != "ok");
        if (!v.ranking) continue;
        labels.push_back(v.label);
        sets.push_back(top_bottom(*v.ranking, cfg.fraction).top);
    }
    report.similarity = similarity_matrix(labels, sets);
    return report;
}

}  // namespace

AblationReport ablation_step_counter(const ExperimentConfig& cfg) {
    const std::size_t n = cfg.swpa.step_counter;
    std::vector<SwpaVariant> variants;
    variants.push_back(SwpaVariant{"n=1", 1, cfg.swpa.penalty, "ok", {}, {}, {}});
    variants.push_back(SwpaVariant{"n=" + std::to_string(n), n, cfg.swpa.penalty, "ok", {}, {}, {}});
    return run_swpa_variants(cfg, "step_counter", std::move(variants));
}

AblationReport ablation_constraints(const ExperimentConfig& cfg) {
    std::vector<SwpaVariant> variants;
    const std::pair<const char*, std::pair<bool, bool>> settings[] = {
        {"base", {false, false}}, {"l1", {true, false}}, {"wvl", {false, true}}, {"l1+wvl", {true, true}}};
    for (const auto& [label, flags] : settings) {
        PenaltyConfig p = cfg.swpa.penalty;
        p.enable_l1 = flags.first;
        p.enable_wvl = flags.second;
        variants.push_back(SwpaVariant{label, 1, p, "ok", {}, {}, {}});
    }
    return run_swpa_variants(cfg, "constraints", std::move(variants));
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

json history_json(const std::vector<EpochRecord>& history) {
    json out = json::array();
    for (const EpochRecord& e : history) out.push_back({e.train_loss, e.val_accuracy});
    return out;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json to_json(const DataSummary& d) {
    return {{"rows_loaded", d.rows_loaded},
            {"features", d.features},
            {"classes", d.classes},
            {"split", d.split},
            {"warnings", d.warnings}};
}

json to_json(const SimilarityMatrix& m) { return {{"labels", m.labels}, {"matrix", m.values}}; }

json to_json(const SwpaRound& r) {
    return {{"round", r.round},
            {"active", r.active},
            {"pruned", r.pruned},
            {"pruned_magnitudes", r.pruned_magnitudes},
            {"best_val_accuracy", r.best_val_accuracy},
            {"epochs_run", r.epochs_run},
            {"history", history_json(r.history)}};
}

json rounds_json(const std::vector<SwpaRound>& rounds) {
    json out = json::array();
    for (const SwpaRound& r : rounds) out.push_back(to_json(r));
    return out;
}

json optional_subset(const std::optional<SubsetResult>& r) { return r ? to_json(*r) : json(nullptr); }

json to_json(const BaseNetworkSummary& b) {
    return {{"status", b.status},
            {"val_accuracy", b.val_accuracy},
            {"test_accuracy", optional_number(b.test_accuracy)},
            {"epochs_run", b.epochs_run},
            {"history", history_json(b.history)}};
}

std::string fmt_acc(const std::optional<double>& v) {
    if (!v) return "diverged";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return buf;
}

std::string fmt_acc(const std::optional<SubsetResult>& r) {
    if (!r) return "-";
    return fmt_acc(r->test_accuracy);
}

std::string spec_string(const NetworkSpec& spec) {
    std::string s;
    for (std::size_t i = 0; i < spec.layer_sizes.size(); ++i) {
        s += (i ? "-" : "") + std::to_string(spec.layer_sizes[i]);
    }
    return s;
}

void similarity_markdown(std::ostringstream& md, const SimilarityMatrix& m) {
    if (m.labels.empty()) return;
    md << "|  |";
    for (const auto& l : m.labels) md << ' ' << l << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < m.labels.size(); ++i) md << "---|";
    md << '\n';
    for (std::size_t a = 0; a < m.labels.size(); ++a) {
        md << "| " << m.labels[a] << " |";
        for (std::size_t b = 0; b < m.labels.size(); ++b) md << ' ' << fmt_acc(m.values[a][b]) << " |";
        md << '\n';
    }
}

void data_markdown(std::ostringstream& md, const DataSummary& d, std::size_t selected) {
    md << "Data: " << d.rows_loaded << " rows loaded, split " << d.split[0] << "/" << d.split[1] << "/" << d.split[2]
       << " (train/val/test), " << d.features << " features, " << d.classes << " classes. Subset size: " << selected
       << " features.\n\n";
    for (const auto& w : d.warnings) md << "Warning: " << w << "\n\n";
}

}  // namespace

nlohmann::json to_json(const SubsetResult& r) {
    return {{"features", r.features},
            {"status", r.status},
            {"test_accuracy", optional_number(r.test_accuracy)},
            {"val_accuracy", r.val_accuracy},
            {"epochs_run", r.epochs_run},
            {"history", history_json(r.history)}};
}

nlohmann::json to_json(const ExperimentReport& report) {
    json methods = json::object();
    for (const MethodReport& mr : report.methods) {
        json m = {{"status", mr.status},
                  {"ranking", mr.ranking ? to_json(*mr.ranking) : json(nullptr)},
                  {"top", optional_subset(mr.top)},
                  {"bottom", optional_subset(mr.bottom)}};
        if (mr.method == RankMethod::swpa) m["rounds"] = rounds_json(mr.rounds);
        methods[to_string(mr.method)] = std::move(m);
    }
    if (report.random) {
        json runs = json::array();
        for (const SubsetResult& r : report.random->runs) runs.push_back(to_json(r));
        methods["random"] = {{"runs", std::move(runs)},
                             {"worst", optional_number(report.random->worst)},
                             {"average", optional_number(report.random->average)}};
    }
    json out = {{"config", report.config},
                {"data", to_json(report.data)},
                {"full_network", report.full_network.layer_sizes},
                {"reduced_network", report.reduced_network.layer_sizes},
                {"selected", report.selected},
                {"methods", std::move(methods)},
                {"similarity", to_json(report.similarity)},
                {"diverged", report.diverged}};
    if (report.base_network) out["base_network"] = to_json(*report.base_network);
    return out;
}

nlohmann::json to_json(const TrainReport& report) {
    return {{"config", report.config},
            {"data", to_json(report.data)},
            {"network", report.network.layer_sizes},
            {"result", to_json(report.result)}};
}

nlohmann::json to_json(const RankReport& report) {
    json out = {{"config", report.config},
                {"data", to_json(report.data)},
                {"method", to_string(report.method)},
                {"status", report.status},
                {"ranking", report.ranking ? to_json(*report.ranking) : json(nullptr)}};
    if (report.method == RankMethod::swpa) out["rounds"] = rounds_json(report.rounds);
    if (report.base_network) out["base_network"] = to_json(*report.base_network);
    return out;
}

nlohmann::json to_json(const AblationReport& report) {
    json variants = json::array();
    for (const SwpaVariant& v : report.variants) {
        variants.push_back({{"label", v.label},
                            {"step_counter", v.step_counter},
                            {"l1", v.penalty.enable_l1},
                            {"wvl", v.penalty.enable_wvl},
                            {"status", v.status},
                            {"ranking", v.ranking ? to_json(*v.ranking) : json(nullptr)},
                            {"rounds", rounds_json(v.rounds)},
                            {"top", optional_subset(v.top)}});
    }
    return {{"kind", report.kind},
            {"config", report.config},
            {"data", to_json(report.data)},
            {"selected", report.selected},
            {"variants", std::move(variants)},
            {"similarity", to_json(report.similarity)},
            {"diverged", report.diverged}};
}

nlohmann::json timings_json(const ExperimentReport& report) {
    json out = json::object();
    if (report.base_network) out["base_network"] = report.base_network->seconds;
    for (const MethodReport& mr : report.methods) {
        out[to_string(mr.method)] = {{"ranking", mr.ranking_seconds},
                                     {"top", mr.top ? json(mr.top->seconds) : json(nullptr)},
                                     {"bottom", mr.bottom ? json(mr.bottom->seconds) : json(nullptr)}};
    }
    if (report.random) {
        json runs = json::array();
        for (const SubsetResult& r : report.random->runs) runs.push_back(r.seconds);
        out["random"] = std::move(runs);
    }
    return out;
}

nlohmann::json timings_json(const AblationReport& report) {
    json out = json::object();
    for (const SwpaVariant& v : report.variants) out[v.label] = v.top ? json(v.top->seconds) : json(nullptr);
    return out;
}

std::string to_markdown(const ExperimentReport& report) {
    std::ostringstream md;
    md << "# Feature ranking experiment\n\n";
    data_markdown(md, report.data, report.selected);
    md << "Networks: full " << spec_string(report.full_network) << ", reduced " << spec_string(report.reduced_network)
       << ".\n\n";
    if (report.base_network) {
        md << "Base network for SBS/PFI: test accuracy " << fmt_acc(report.base_network->test_accuracy) << " after "
           << report.base_network->epochs_run << " epochs.\n\n";
    }
    md << "## Test accuracy on selected features\n\n| Method | #feat | Top | Bottom |\n|---|---|---|---|\n";
    for (const MethodReport& mr : report.methods) {
        md << "| " << to_string(mr.method) << " | " << report.selected << " | " << fmt_acc(mr.top) << " | "
           << fmt_acc(mr.bottom) << " |\n";
    }
    if (report.random) {
        md << "\n## Random subsets\n\n| Runs | Worst | Average |\n|---|---|---|\n| " << report.random->runs.size()
           << " | " << fmt_acc(report.random->worst) << " | " << fmt_acc(report.random->average) << " |\n";
    }
    if (!report.similarity.labels.empty()) {
        md << "\n## Similarity of top sets\n\n";
        similarity_markdown(md, report.similarity);
    }
    if (report.diverged) md << "\nAt least one training run diverged; see the JSON report.\n";
    return md.str();
}

std::string to_markdown(const AblationReport& report) {
    std::ostringstream md;
    md << "# SWPA ablation: " << report.kind << "\n\n";
    data_markdown(md, report.data, report.selected);
    md << "| Variant | Top accuracy |\n|---|---|\n";
    for (const SwpaVariant& v : report.variants) {
        md << "| " << v.label << " | " << (v.status == "ok" ? fmt_acc(v.top) : "diverged") << " |\n";
    }
    md << "\n## Similarity of top sets\n\n";
    similarity_markdown(md, report.similarity);
    return md.str();
}

void write_json_file(const nlohmann::json& j, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

namespace {

void write_text_file(const std::string& text, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
}

std::optional<GridShape> grid_from_config(const nlohmann::json& config, std::size_t d) {
    const auto h = config.value("dataset.grid_height", std::size_t{0});
    const auto w = config.value("dataset.grid_width", std::size_t{0});
    if (h > 0 && w > 0 && h * w == d) return GridShape{h, w};
    return std::nullopt;
}

}  // namespace

void write_report(const ExperimentReport& report, const std::filesystem::path& dir, const std::string& stem) {
    std::filesystem::create_directories(dir);
    write_json_file(to_json(report), dir / (stem + ".json"));
    write_text_file(to_markdown(report), dir / (stem + ".md"));
    write_json_file(timings_json(report), dir / (stem + ".timings.json"));
    if (!report.config.value("experiment.export_masks", false)) return;
    if (const auto grid = grid_from_config(report.config, report.data.features)) {
        for (const MethodReport& mr : report.methods) {
            if (mr.top) export_mask(mr.top->features, report.data.features, *grid, dir / "masks" / (to_string(mr.method) + "_top.pgm"));
        }
    }
}

void write_report(const AblationReport& report, const std::filesystem::path& dir, const std::string& stem) {
    std::filesystem::create_directories(dir);
    write_json_file(to_json(report), dir / (stem + ".json"));
    write_text_file(to_markdown(report), dir / (stem + ".md"));
    write_json_file(timings_json(report), dir / (stem + ".timings.json"));
    if (!report.config.value("experiment.export_masks", false)) return;
    if (const auto grid = grid_from_config(report.config, report.data.features)) {
        for (const SwpaVariant& v : report.variants) {
            if (v.top) export_mask(v.top->features, report.data.features, *grid, dir / "masks" / (stem + "_" + v.label + "_top.pgm"));
        }
    }
}

}  // namespace featrank
