#pragma once

#include "featrank/data_io.hpp"
#include "featrank/dropin.hpp"
#include "featrank/nn.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace featrank {

enum class RankMethod { swpa, sbs, pfi, random };

std::string to_string(RankMethod method);
/// Throws ConfigError for unknown names.
RankMethod parse_rank_method(std::string_view name);

/// Per-feature importance scores; higher means more important.
struct FeatureRanking {
    RankMethod method = RankMethod::random;
    std::vector<double> scores;
    nlohmann::json params = nlohmann::json::object();

    std::size_t size() const noexcept { return scores.size(); }
    /// Feature indices from most to least important; equal scores keep the
    /// lower index first.
    std::vector<std::size_t> ordering() const;
};

/// {method, params, scores[], ordering[]}
nlohmann::json to_json(const FeatureRanking& ranking);
FeatureRanking ranking_from_json(const nlohmann::json& j);

/// floor(f * d), robust to decimal fractions such as 0.29 * 100.
std::size_t selected_count(std::size_t d, double fraction);

struct SwpaConfig {
    std::size_t step_counter = 4;
    double selection_factor = 0.1;
    TrainConfig train;
    PenaltyConfig penalty;

    void validate() const;
};

/// Features removed at each of the n pruning steps: floor((d - s) / n) for
/// the first n - 1 steps and the remainder at the last, s = floor(f * d).
/// Throws ConfigError when s == 0.
std::vector<std::size_t> swpa_schedule(std::size_t d, double selection_factor, std::size_t step_counter);

struct SwpaRound {
    std::size_t round = 0;  ///< 1-based training round
    std::vector<std::size_t> pruned;  ///< pruned right before this round, least important first
    std::vector<double> pruned_magnitudes;
    std::size_t active = 0;  ///< active features during this round
    double best_val_accuracy = 0.0;
    std::size_t epochs_run = 0;
    std::vector<EpochRecord> history;
};

struct SwpaResult {
    FeatureRanking ranking;
    std::vector<SwpaRound> rounds;
    DropInLayer final_layer;
};

/// Stepwise weight pruning: n + 1 training rounds of the network with a
/// drop-in layer in front, pruning the smallest-magnitude drop-in weights
/// before rounds 2..n+1. Each round continues from the previous round's
/// best checkpoint with fresh momentum.
///
/// Scores: survivors rank above every pruned feature, ordered by final
/// |weight|; pruned features rank by pruning step (later is better) and
/// then by |weight| at pruning time.
SwpaResult swpa_run(const SplitDataset& data, const NetworkSpec& spec, const SwpaConfig& cfg);
FeatureRanking swpa_rank(const SplitDataset& data, const NetworkSpec& spec, const SwpaConfig& cfg);

enum class SbsAggregation {
    abs_of_mean,  ///< |mean_i g_ij|
    mean_of_abs,  ///< mean_i |g_ij|
};

/// Sensitivity: gradient of each training row's true-class probability with
/// respect to its input, aggregated per feature over the training split.
FeatureRanking sbs_rank(const SplitDataset& data, const Network& net,
                        SbsAggregation aggregation = SbsAggregation::abs_of_mean);

/// Permutation of the validation rows used for (dim, trial).
std::vector<std::size_t> pfi_permutation(std::uint64_t seed, std::size_t dim, std::size_t trial, std::size_t rows);

/// Permutation importance on the validation split: mean accuracy drop over
/// `permutations` shuffles of each column. `threads == 0` picks
/// FEATRANK_THREADS or the hardware concurrency. Results do not depend on
/// the thread count.
FeatureRanking pfi_rank(const SplitDataset& data, const Network& net, std::size_t permutations,
                        std::uint64_t seed, std::size_t threads = 0);

/// Scores are a seeded shuffle of 1..d.
FeatureRanking random_rank(std::size_t d, std::uint64_t seed);

struct TopBottom {
    std::vector<std::size_t> top;     ///< most important first
    std::vector<std::size_t> bottom;  ///< least important first
};

/// The floor(f * d) most and least important features. 0 < f <= 0.5.
TopBottom top_bottom(const FeatureRanking& ranking, double fraction);

/// Worker count from FEATRANK_THREADS, else hardware concurrency (>= 1).
std::size_t default_thread_count();

}  // namespace featrank
