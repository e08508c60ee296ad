#include "featrank/cli.hpp"

#include "featrank/errors.hpp"
#include "featrank/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <map>

namespace featrank {

namespace {

using nlohmann::json;

// Options shared by the subcommands that run a configuration.
struct ConfigOptions {
    std::string config_path;
    std::string preset;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
    CLI::Option* preset_option = nullptr;
};

void add_config_options(CLI::App& sub, ConfigOptions& opts) {
    sub.add_option("--config", opts.config_path, "JSON file of flat dotted keys");
    opts.preset_option = sub.add_option("--preset", opts.preset, "paper or desk training budget");
    for (const ConfigKey& key : config_keys()) {
        opts.options[key.name] = sub.add_option("--" + key.name, opts.values[key.name], key.help);
    }
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("file not found: " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

// defaults <- preset <- config file <- flags
ExperimentConfig resolve(const ConfigOptions& opts) {
    json flat = opts.config_path.empty() ? json::object() : read_json_file(opts.config_path);
    if (!flat.is_object()) throw ConfigError(opts.config_path + ": expected a JSON object");
    if (opts.preset_option->count() > 0) flat["preset"] = opts.preset;
    for (const auto& [name, option] : opts.options) {
        if (option->count() > 0) flat[name] = parse_config_value(name, opts.values.at(name));
    }
    return config_from_flat_json(flat);
}

FeatureRanking load_ranking(const std::filesystem::path& path) {
    json j = read_json_file(path);
    if (j.is_object() && j.contains("ranking")) j = j.at("ranking");
    if (j.is_null()) throw ConfigError(path.string() + " holds no ranking (the run diverged)");
    try {
        return ranking_from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": not a ranking (" + e.what() + ")");
    }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Feature ranking with drop-in layers, SBS, PFI and random baselines", "featrank"};
    app.require_subcommand(1);

    ConfigOptions train_opts, rank_opts, experiment_opts, ablate_opts;
    CLI::App* train_cmd = app.add_subcommand("train", "train the full-width network and report its accuracy");
    add_config_options(*train_cmd, train_opts);

    std::string method_name;
    CLI::App* rank_cmd = app.add_subcommand("rank", "rank features with one method");
    rank_cmd->add_option("--method", method_name, "swpa, sbs, pfi or random")->required();
    add_config_options(*rank_cmd, rank_opts);

    CLI::App* experiment_cmd =
        app.add_subcommand("experiment", "rank with every method and retrain on top and bottom subsets");
    add_config_options(*experiment_cmd, experiment_opts);

    std::string ablation_kind;
    CLI::App* ablate_cmd = app.add_subcommand("ablate", "SWPA ablations");
    ablate_cmd->add_option("--kind", ablation_kind, "step-counter or constraints")
        ->required()
        ->check(CLI::IsMember({"step-counter", "constraints"}));
    add_config_options(*ablate_cmd, ablate_opts);

    std::string sim_a, sim_b, sim_out = "out";
    double sim_fraction = 0.1;
    CLI::App* similarity_cmd = app.add_subcommand("similarity", "overlap of the top sets of two rankings");
    similarity_cmd->add_option("--a", sim_a, "ranking JSON")->required();
    similarity_cmd->add_option("--b", sim_b, "ranking JSON")->required();
    similarity_cmd->add_option("--fraction", sim_fraction, "top fraction f")->capture_default_str();
    similarity_cmd->add_option("--out", sim_out, "output directory")->capture_default_str();

    std::string mask_ranking, mask_which = "top", mask_out = "out";
    std::size_t mask_height = 0, mask_width = 0;
    double mask_fraction = 0.1;
    CLI::App* mask_cmd = app.add_subcommand("export-mask", "write a PGM mask of a ranking's top or bottom set");
    mask_cmd->add_option("--ranking", mask_ranking, "ranking JSON")->required();
    mask_cmd->add_option("--height", mask_height, "grid height")->required();
    mask_cmd->add_option("--width", mask_width, "grid width")->required();
    mask_cmd->add_option("--fraction", mask_fraction, "top fraction f")->capture_default_str();
    mask_cmd->add_option("--which", mask_which, "top or bottom")->capture_default_str()->check(CLI::IsMember({"top", "bottom"}));
    mask_cmd->add_option("--out", mask_out, "output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return 1;
    }

    try {
        if (train_cmd->parsed()) {
            const ExperimentConfig cfg = resolve(train_opts);
            const TrainReport report = run_training(cfg);
            const auto path = cfg.output_dir / "train.json";
            write_json_file(to_json(report), path);
            out << "wrote " << path.string() << '\n';
            return report.result.status == "ok" ? 0 : 2;
        }
        if (rank_cmd->parsed()) {
            const RankMethod method = parse_rank_method(method_name);
            const ExperimentConfig cfg = resolve(rank_opts);
            const RankReport report = run_ranking(cfg, method);
            const auto path = cfg.output_dir / ("ranking_" + to_string(method) + ".json");
            write_json_file(to_json(report), path);
            out << "wrote " << path.string() << '\n';
            return report.status == "ok" ? 0 : 2;
        }
        if (experiment_cmd->parsed()) {
            const ExperimentConfig cfg = resolve(experiment_opts);
            const ExperimentReport report = run_experiment(cfg);
            write_report(report, cfg.output_dir, "experiment");
            out << to_markdown(report) << "wrote " << (cfg.output_dir / "experiment.json").string() << '\n';
            return report.diverged ? 2 : 0;
        }
        if (ablate_cmd->parsed()) {
            const ExperimentConfig cfg = resolve(ablate_opts);
            const bool steps = ablation_kind == "step-counter";
            const AblationReport report = steps ? ablation_step_counter(cfg) : ablation_constraints(cfg);
            const std::string stem = steps ? "ablation_step_counter" : "ablation_constraints";
            write_report(report, cfg.output_dir, stem);
            out << to_markdown(report) << "wrote " << (cfg.output_dir / (stem + ".json")).string() << '\n';
            return report.diverged ? 2 : 0;
        }
        if (similarity_cmd->parsed()) {
            const FeatureRanking a = load_ranking(sim_a);
            const FeatureRanking b = load_ranking(sim_b);
            if (a.size() != b.size()) throw ConfigError("rankings cover different feature counts");
            const TopBottom ta = top_bottom(a, sim_fraction);
            const TopBottom tb = top_bottom(b, sim_fraction);
            const double value = feature_similarity(ta.top, tb.top);
            const json report = {{"config", {{"a", sim_a}, {"b", sim_b}, {"fraction", sim_fraction}}},
                                 {"a_top", ta.top},
                                 {"b_top", tb.top},
                                 {"similarity", value}};
            const auto path = std::filesystem::path(sim_out) / "similarity.json";
            write_json_file(report, path);
            out << "similarity " << value << "\nwrote " << path.string() << '\n';
            return 0;
        }
        if (mask_cmd->parsed()) {
            const FeatureRanking r = load_ranking(mask_ranking);
            const TopBottom tb = top_bottom(r, mask_fraction);
            const auto path =
                std::filesystem::path(mask_out) / ("mask_" + to_string(r.method) + "_" + mask_which + ".pgm");
            export_mask(mask_which == "top" ? tb.top : tb.bottom, r.size(), GridShape{mask_height, mask_width}, path);
            out << "wrote " << path.string() << '\n';
            return 0;
        }
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << '\n';
        return 1;
    } catch (const ParseError& e) {
        err << "input error: " << e.what() << '\n';
        return 1;
    } catch (const DivergenceError& e) {
        err << "training diverged: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

}  // namespace featrank
