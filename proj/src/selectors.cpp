#include "featrank/selectors.hpp"

#include "featrank/errors.hpp"
#include "featrank/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <thread>

namespace featrank {

std::string to_string(RankMethod method) {
    switch (method) {
        case RankMethod::swpa: return "swpa";
        case RankMethod::sbs: return "sbs";
        case RankMethod::pfi: return "pfi";
        case RankMethod::random: return "random";
    }
    return "unknown";
}

RankMethod parse_rank_method(std::string_view name) {
    if (name == "swpa") return RankMethod::swpa;
    if (name == "sbs") return RankMethod::sbs;
    if (name == "pfi") return RankMethod::pfi;
    if (name == "random") return RankMethod::random;
    throw ConfigError("unknown ranking method '" + std::string(name) + "' (expected swpa, sbs, pfi or random)");
}

std::vector<std::size_t> FeatureRanking::ordering() const {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

nlohmann::json to_json(const FeatureRanking& ranking) {
    return {{"method", to_string(ranking.method)},
            {"params", ranking.params},
            {"scores", ranking.scores},
            {"ordering", ranking.ordering()}};
}

FeatureRanking ranking_from_json(const nlohmann::json& j) {
    try {
        FeatureRanking r;
        r.method = parse_rank_method(j.at("method").get<std::string>());
        r.scores = j.at("scores").get<std::vector<double>>();
        r.params = j.value("params", nlohmann::json::object());
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed ranking JSON: ") + e.what());
    }
}

std::size_t selected_count(std::size_t d, double fraction) {
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(d) + 1e-9));
}

void SwpaConfig::validate() const {
    if (step_counter == 0) throw ConfigError("SWPA step counter must be >= 1");
    if (!(selection_factor >= 0.0 && selection_factor <= 1.0)) {
        throw ConfigError("SWPA selection factor must be in [0, 1]");
    }
    train.validate();
    penalty.validate();
}

std::vector<std::size_t> swpa_schedule(std::size_t d, double selection_factor, std::size_t step_counter) {
    if (step_counter == 0) throw ConfigError("SWPA step counter must be >= 1");
    const std::size_t keep = selected_count(d, selection_factor);
    if (keep == 0) {
        throw ConfigError("selection factor " + std::to_string(selection_factor) + " keeps no feature out of " +
                          std::to_string(d));
    }
    if (keep > d) throw ConfigError("selection factor must be <= 1");
    const std::size_t total = d - keep;
    const std::size_t per_step = total / step_counter;
    std::vector<std::size_t> counts(step_counter, per_step);
    counts.back() = total - per_step * (step_counter - 1);
    return counts;
}

SwpaResult swpa_run(const SplitDataset& data, const NetworkSpec& spec, const SwpaConfig& cfg) {
    cfg.validate();
    const std::size_t d = data.feature_count();
    if (spec.input_dim() != d) {
        throw ShapeError("network input " + std::to_string(spec.input_dim()) + " disagrees with " +
                         std::to_string(d) + " features");
    }
    const std::vector<std::size_t> schedule = swpa_schedule(d, cfg.selection_factor, cfg.step_counter);
    const std::size_t n = cfg.step_counter;
    if (cfg.penalty.enable_wvl && selected_count(d, cfg.selection_factor) < 2) {
        throw ConfigError("the weight-variance penalty needs at least 2 surviving features");
    }

    TrainConfig round_cfg = cfg.train;
    if (cfg.penalty.any()) round_cfg.penalty = cfg.penalty;

    SwpaResult result;
    std::vector<double> scores(d, 0.0);
    Network net = Network::initialize(spec, derive_seed(cfg.train.seed, {0x5aa, 0}), true);

    for (std::size_t round = 1; round <= n + 1; ++round) {
        SwpaRound info;
        info.round = round;
        if (round > 1) {
            const std::size_t k = schedule[round - 2];
            DropInLayer& layer = *net.dropin;
            info.pruned = smallest_active(layer, k);
            for (std::size_t pos = 0; pos < info.pruned.size(); ++pos) {
                const std::size_t j = info.pruned[pos];
                info.pruned_magnitudes.push_back(std::abs(layer.weight(j)));
                // step s = round - 1 occupies (s, s + 1), least important lowest
                scores[j] = static_cast<double>(round - 1) +
                            static_cast<double>(pos + 1) / static_cast<double>(k + 1);
                layer.deactivate(j);
            }
            net.momentum = Network::initialize(spec, 0, true).momentum;
        }
        info.active = net.dropin->active_count();
        round_cfg.seed = derive_seed(cfg.train.seed, {0x5aa, round});
        TrainResult tr = train(std::move(net), data, round_cfg);
        info.best_val_accuracy = tr.best_val_accuracy;
        info.epochs_run = tr.epochs_run;
        info.history = std::move(tr.history);
        net = std::move(tr.best_network);
        result.rounds.push_back(std::move(info));
    }

    const DropInLayer& final_layer = *net.dropin;
    for (std::size_t j = 0; j < d; ++j) {
        if (!final_layer.active(j)) continue;
        const double m = std::abs(final_layer.weight(j));
        scores[j] = static_cast<double>(n + 1) + m / (1.0 + m);
    }

    result.final_layer = final_layer;
    result.ranking.method = RankMethod::swpa;
    result.ranking.scores = std::move(scores);
    result.ranking.params = {{"step_counter", n},
                             {"selection_factor", cfg.selection_factor},
                             {"schedule", schedule},
                             {"l1", cfg.penalty.enable_l1},
                             {"wvl", cfg.penalty.enable_wvl},
                             {"seed", cfg.train.seed}};
    return result;
}

FeatureRanking swpa_rank(const SplitDataset& data, const NetworkSpec& spec, const SwpaConfig& cfg) {
    return swpa_run(data, spec, cfg).ranking;
}

namespace {

void require_usable(const SplitDataset& data, const Network& net) {
    net.validate();
    if (net.spec.input_dim() != data.feature_count()) {
        throw ShapeError("network input " + std::to_string(net.spec.input_dim()) + " disagrees with " +
                         std::to_string(data.feature_count()) + " features");
    }
    if (!net.all_finite()) throw ConfigError("network has non-finite parameters (diverged or untrained)");
}

}  // namespace

FeatureRanking sbs_rank(const SplitDataset& data, const Network& net, SbsAggregation aggregation) {
    require_usable(data, net);
    const Dataset& tr = data.train;
    if (tr.size() == 0) throw ShapeError("SBS needs a non-empty training split");
    const Dense2D grads = input_gradients(net, tr.X, tr.y);

    std::vector<double> sums(tr.feature_count(), 0.0);
    for (std::size_t i = 0; i < grads.rows(); ++i) {
        const auto g = grads.row(i);
        for (std::size_t j = 0; j < g.size(); ++j) {
            sums[j] += aggregation == SbsAggregation::abs_of_mean ? g[j] : std::abs(g[j]);
        }
    }
    FeatureRanking r;
    r.method = RankMethod::sbs;
    r.scores.resize(sums.size());
    const double rows = static_cast<double>(grads.rows());
    for (std::size_t j = 0; j < sums.size(); ++j) r.scores[j] = std::abs(sums[j] / rows);
    r.params = {{"aggregation", aggregation == SbsAggregation::abs_of_mean ? "abs_of_mean" : "mean_of_abs"},
                {"split", "train"}};
    return r;
}

std::vector<std::size_t> pfi_permutation(std::uint64_t seed, std::size_t dim, std::size_t trial, std::size_t rows) {
    Rng rng(derive_seed(seed, {0x9f1, dim, trial}));
    return rng.permutation(rows);
}

std::size_t default_thread_count() {
    if (const char* env = std::getenv("FEATRANK_THREADS"); env != nullptr && *env != '\0') {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

// Accuracy drop for one column. Only rows whose value changes under the
// permutation are re-evaluated; the forward pass is row-independent, so
// the count equals a full re-evaluation of the permuted matrix.
double column_importance(const Network& net, const Dataset& val, const std::vector<Label>& base_pred,
                         std::size_t base_correct, std::size_t dim, std::size_t permutations, std::uint64_t seed) {
    const std::size_t n = val.size();
    const double base_acc = static_cast<double>(base_correct) / static_cast<double>(n);
    const double first = val.X(0, dim);
    bool constant = true;
    for (std::size_t i = 1; i < n && constant; ++i) constant = val.X(i, dim) == first;

    double total = 0.0;
    std::vector<std::size_t> changed;
    std::vector<double> new_values;
    std::vector<Label> changed_y;
    for (std::size_t trial = 0; trial < permutations; ++trial) {
        std::size_t correct = base_correct;
        if (!constant) {
            const std::vector<std::size_t> perm = pfi_permutation(seed, dim, trial, n);
            changed.clear();
            new_values.clear();
            for (std::size_t i = 0; i < n; ++i) {
                const double v = val.X(perm[i], dim);
                if (v != val.X(i, dim)) {
                    changed.push_back(i);
                    new_values.push_back(v);
                }
            }
            if (!changed.empty()) {
                Dense2D rows = val.X.select_rows(changed);
                for (std::size_t r = 0; r < changed.size(); ++r) rows(r, dim) = new_values[r];
                const std::vector<Label> pred = predict(net, rows);
                for (std::size_t r = 0; r < changed.size(); ++r) {
                    const std::size_t i = changed[r];
                    correct -= base_pred[i] == val.y[i];
                    correct += pred[r] == val.y[i];
                }
            }
        }
        const double perm_acc = static_cast<double>(correct) / static_cast<double>(n);
        total = total + base_acc - perm_acc;
    }
    return total / static_cast<double>(permutations);
}

}  // namespace

FeatureRanking pfi_rank(const SplitDataset& data, const Network& net, std::size_t permutations, std::uint64_t seed,
                        std::size_t threads) {
    if (permutations == 0) throw ConfigError("PFI needs at least one permutation");
    require_usable(data, net);
    const Dataset& val = data.val;
    if (val.size() == 0) throw ShapeError("PFI needs a non-empty validation split");
    if (val.y.size() != val.size()) throw ShapeError("validation labels disagree with rows");

    const std::vector<Label> base_pred = predict(net, val.X);
    std::size_t base_correct = 0;
    for (std::size_t i = 0; i < base_pred.size(); ++i) base_correct += base_pred[i] == val.y[i];

    const std::size_t d = val.feature_count();
    std::vector<double> scores(d, 0.0);
    const std::size_t workers = std::min(d, threads == 0 ? default_thread_count() : threads);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t dim = next++; dim < d; dim = next++) {
            scores[dim] = column_importance(net, val, base_pred, base_correct, dim, permutations, seed);
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    }

    FeatureRanking r;
    r.method = RankMethod::pfi;
    r.scores = std::move(scores);
    r.params = {{"permutations", permutations}, {"seed", seed}, {"split", "val"}};
    return r;
}

FeatureRanking random_rank(std::size_t d, std::uint64_t seed) {
    if (d == 0) throw ConfigError("random ranking needs d >= 1");
    Rng rng(derive_seed(seed, {0x7a4d}));
    const std::vector<std::size_t> perm = rng.permutation(d);
    FeatureRanking r;
    r.method = RankMethod::random;
    r.scores.resize(d);
    for (std::size_t j = 0; j < d; ++j) r.scores[j] = static_cast<double>(perm[j] + 1);
    r.params = {{"seed", seed}};
    return r;
}

TopBottom top_bottom(const FeatureRanking& ranking, double fraction) {
    if (!(fraction > 0.0 && fraction <= 0.5)) throw ConfigError("top/bottom fraction must be in (0, 0.5]");
    const std::size_t d = ranking.size();
    const std::size_t count = selected_count(d, fraction);
    if (count == 0) {
        throw ConfigError("fraction " + std::to_string(fraction) + " selects no feature out of " + std::to_string(d));
    }
    const std::vector<std::size_t> order = ranking.ordering();
    TopBottom tb;
    tb.top.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
    tb.bottom.assign(order.rbegin(), order.rbegin() + static_cast<std::ptrdiff_t>(count));
    return tb;
}

}  // namespace featrank
