#pragma once

#include "featrank/data_io.hpp"
#include "featrank/nn.hpp"
#include "featrank/selectors.hpp"

#include <json.hpp>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace featrank {

/// Hidden layers halve the width twice: [d, d/2, d/4, classes].
/// Requires d_in >= classes >= 2 and d_in / 4 >= 1.
NetworkSpec build_network_spec(std::size_t d_in, std::size_t classes);

/// |a ∩ b| / |a| for equal-sized, non-empty feature sets.
double feature_similarity(std::span<const std::size_t> a, std::span<const std::size_t> b);

struct GridShape {
    std::size_t height = 0;
    std::size_t width = 0;
};

/// Binary PGM (P5): selected features white (255), the rest black.
/// Requires height * width == d.
void export_mask(std::span<const std::size_t> selected, std::size_t d, GridShape grid,
                 const std::filesystem::path& path);

struct DatasetConfig {
    std::string format = "idx";  ///< "idx" or "delimited"
    std::filesystem::path images;
    std::filesystem::path labels;
    std::filesystem::path features;
    Delimiter delimiter = Delimiter::comma;
    LabelBase label_base = LabelBase::automatic;
    std::size_t subsample = 0;  ///< 0 keeps every row
    NormalizeMode normalize = NormalizeMode::none;
    /// Feature grid for mask export; 0 x 0 means "from the IDX header" (or none).
    GridShape grid;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    std::vector<RankMethod> methods{RankMethod::swpa, RankMethod::sbs, RankMethod::pfi, RankMethod::random};
    double fraction = 0.1;
    std::size_t random_runs = 10;
    bool export_masks = true;
    SwpaConfig swpa;  ///< swpa.train is replaced by `train` when the experiment runs
    std::size_t pfi_permutations = 10;
    SbsAggregation sbs_aggregation = SbsAggregation::abs_of_mean;
    TrainConfig train;
    std::filesystem::path output_dir = "out";
    std::uint64_t seed = 0;
    std::size_t threads = 0;  ///< 0: FEATRANK_THREADS or hardware concurrency

    void validate() const;
};

/// Flat dotted-key view of the configuration, e.g. "train.max_epochs".
nlohmann::json to_flat_json(const ExperimentConfig& cfg);

/// Applies `preset` first ("paper": 20000 epochs / patience 2000, "desk":
/// 500 / 50), then every other key. Unknown keys throw ConfigError.
ExperimentConfig config_from_flat_json(const nlohmann::json& flat, ExperimentConfig base = {});

struct ConfigKey {
    std::string name;
    std::string help;
};
/// Every key accepted by config_from_flat_json (besides "preset").
const std::vector<ConfigKey>& config_keys();

/// Converts a command-line string to the JSON type the key expects.
nlohmann::json parse_config_value(const std::string& key, const std::string& text);

struct PreparedData {
    SplitDataset splits;
    std::size_t rows_loaded = 0;
    std::optional<GridShape> grid;
};

/// Load, subsample, split 60/20/20 and normalize, all seeded from cfg.seed.
PreparedData prepare_data(const ExperimentConfig& cfg);

struct SubsetResult {
    std::vector<std::size_t> features;  ///< ascending feature indices
    std::string status = "ok";          ///< "ok" or "diverged"
    std::optional<double> test_accuracy;
    double val_accuracy = 0.0;
    std::size_t epochs_run = 0;
    std::vector<EpochRecord> history;
    double seconds = 0.0;
};

struct BaseNetworkSummary {
    std::string status = "ok";
    double val_accuracy = 0.0;
    std::optional<double> test_accuracy;
    std::size_t epochs_run = 0;
    std::vector<EpochRecord> history;
    double seconds = 0.0;
};

struct MethodReport {
    RankMethod method = RankMethod::swpa;
    std::string status = "ok";
    std::optional<FeatureRanking> ranking;
    std::optional<SubsetResult> top;
    std::optional<SubsetResult> bottom;
    std::vector<SwpaRound> rounds;  ///< SWPA only
    double ranking_seconds = 0.0;
};

struct RandomReport {
    std::vector<SubsetResult> runs;
    std::optional<double> worst;
    std::optional<double> average;
};

struct SimilarityMatrix {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> values;
};

SimilarityMatrix similarity_matrix(const std::vector<std::string>& labels,
                                   const std::vector<std::vector<std::size_t>>& sets);

struct DataSummary {
    std::size_t rows_loaded = 0;
    std::size_t features = 0;
    std::size_t classes = 0;
    std::array<std::size_t, 3> split{};
    std::vector<std::string> warnings;
};

struct ExperimentReport {
    nlohmann::json config;  ///< flat echo of the resolved configuration
    DataSummary data;
    NetworkSpec full_network;
    NetworkSpec reduced_network;
    std::size_t selected = 0;
    std::optional<BaseNetworkSummary> base_network;  ///< shared by SBS and PFI
    std::vector<MethodReport> methods;
    std::optional<RandomReport> random;
    SimilarityMatrix similarity;  ///< over the top sets of the non-random methods
    bool diverged = false;
};

/// Rank with every configured method, then retrain fresh reduced networks on
/// each top / bottom subset and record test accuracy. Divergences are
/// recorded per cell and do not stop the run. No files are written here;
/// see write_report().
ExperimentReport run_experiment(const ExperimentConfig& cfg);

struct TrainReport {
    nlohmann::json config;
    DataSummary data;
    NetworkSpec network;
    BaseNetworkSummary result;
};

/// Trains the full-width network that SBS and PFI rank with.
TrainReport run_training(const ExperimentConfig& cfg);

struct RankReport {
    nlohmann::json config;
    DataSummary data;
    RankMethod method = RankMethod::swpa;
    std::string status = "ok";
    std::optional<FeatureRanking> ranking;
    std::vector<SwpaRound> rounds;                   ///< SWPA only
    std::optional<BaseNetworkSummary> base_network;  ///< SBS and PFI only
};

/// One ranking, seeded exactly as run_experiment seeds the same method.
RankReport run_ranking(const ExperimentConfig& cfg, RankMethod method);

struct SwpaVariant {
    std::string label;
    std::size_t step_counter = 1;
    PenaltyConfig penalty;
    std::string status = "ok";
    std::optional<FeatureRanking> ranking;
    std::vector<SwpaRound> rounds;
    std::optional<SubsetResult> top;
};

struct AblationReport {
    std::string kind;  ///< "step_counter" or "constraints"
    nlohmann::json config;
    DataSummary data;
    std::size_t selected = 0;
    std::vector<SwpaVariant> variants;
    SimilarityMatrix similarity;  ///< over the variants' top sets
    bool diverged = false;
};

/// SWPA with n = 1 against n = cfg.swpa.step_counter.
AblationReport ablation_step_counter(const ExperimentConfig& cfg);
/// SWPA with n = 1 under {base, l1, wvl, l1+wvl}.
AblationReport ablation_constraints(const ExperimentConfig& cfg);

nlohmann::json to_json(const SubsetResult& r);
/// Machine-readable report. Wall-clock times are left out so that reruns
/// with the same seed are byte-identical; see timings_json().
nlohmann::json to_json(const ExperimentReport& report);
nlohmann::json to_json(const AblationReport& report);
nlohmann::json to_json(const TrainReport& report);
nlohmann::json to_json(const RankReport& report);
nlohmann::json timings_json(const ExperimentReport& report);
nlohmann::json timings_json(const AblationReport& report);
std::string to_markdown(const ExperimentReport& report);
std::string to_markdown(const AblationReport& report);

/// Writes <stem>.json, <stem>.md and <stem>.timings.json into dir, plus
/// masks/*.pgm when mask export is on and the features form a grid.
void write_report(const ExperimentReport& report, const std::filesystem::path& dir, const std::string& stem = "report");
void write_report(const AblationReport& report, const std::filesystem::path& dir, const std::string& stem);

/// Serializes with a fixed layout (2-space indent, trailing newline).
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace featrank
