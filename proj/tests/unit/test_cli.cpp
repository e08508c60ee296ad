#include "featrank/cli.hpp"
#include "featrank/harness.hpp"

#include "../support.hpp"

#include <doctest.h>

#include <sstream>

using namespace featrank;
using namespace featrank::testing;

namespace {

struct CliRun {
    int code = -1;
    std::string out, err;
};

CliRun run(std::vector<std::string> args) {
    args.insert(args.begin(), "featrank");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    CliRun r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

// Config file for a tiny delimited data set; returns the directory.
std::filesystem::path setup(const std::string& name) {
    const auto dir = scratch_dir(name);
    write_delimited(vote_dataset(200, 20, {1, 4, 9, 13}, 3), dir / "data.csv");
    const nlohmann::json cfg = {{"dataset.format", "delimited"},
                                {"dataset.features", (dir / "data.csv").string()},
                                {"experiment.fraction", 0.2},
                                {"swpa.selection_factor", 0.2},
                                {"experiment.random_runs", 2},
                                {"pfi.permutations", 2},
                                {"train.max_epochs", 20},
                                {"train.patience", 5},
                                {"train.learning_rate", 0.01},
                                {"threads", 1}};
    write_json_file(cfg, dir / "c.json");
    return dir;
}

}  // namespace

TEST_CASE("cli: usage errors exit 1") {
    CHECK(run({}).code == 1);
    const CliRun bad = run({"experiment", "--bogus", "1"});
    CHECK(bad.code == 1);
    CHECK(bad.err.find("--bogus") != std::string::npos);
    CHECK(bad.err.find("Usage") != std::string::npos);
    CHECK(run({"rank"}).code == 1);
    CHECK(run({"rank", "--method", "lasso", "--config", "x.json"}).code == 1);
    CHECK(run({"ablate", "--kind", "steps"}).code == 1);
    CHECK(run({"--help"}).code == 0);
}

TEST_CASE("cli: configuration errors exit 1 and name the problem") {
    const auto dir = setup("cli_cfg");
    const CliRun missing = run({"train", "--config", (dir / "nope.json").string()});
    CHECK(missing.code == 1);
    CHECK(missing.err.find("nope.json") != std::string::npos);

    const CliRun data = run({"train", "--config", (dir / "c.json").string(), "--dataset.features",
                             (dir / "gone.csv").string()});
    CHECK(data.code == 1);
    CHECK(data.err.find("gone.csv") != std::string::npos);

    CHECK(run({"train", "--config", (dir / "c.json").string(), "--train.max_epochs", "ten"}).code == 1);
}

TEST_CASE("cli: rank writes a ranking with the resolved config") {
    const auto dir = setup("cli_rank");
    const CliRun r = run({"rank", "--method", "sbs", "--config", (dir / "c.json").string(), "--out",
                          (dir / "out").string(), "--seed", "9", "--train.patience", "3"});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(read_text(dir / "out" / "ranking_sbs.json"));
    CHECK(j.at("method") == "sbs");
    CHECK(j.at("ranking").at("scores").size() == 20);
    CHECK(j.at("config").at("seed") == 9);
    CHECK(j.at("config").at("train.patience") == 3);    // flag beats file
    CHECK(j.at("config").at("train.max_epochs") == 20);  // file beats default
    CHECK(j.at("config").at("pfi.permutations") == 2);

    // the library call gives the same ranking
    ExperimentConfig cfg = config_from_flat_json(j.at("config"));
    CHECK(to_json(*run_ranking(cfg, RankMethod::sbs).ranking) == j.at("ranking"));
}

TEST_CASE("cli: experiment is deterministic and writes every artifact") {
    const auto dir = setup("cli_experiment");
    const std::string cfg = (dir / "c.json").string();
    const CliRun a = run({"experiment", "--config", cfg, "--seed", "7", "--out", (dir / "a").string()});
    const CliRun b = run({"experiment", "--config", cfg, "--seed", "7", "--out", (dir / "b").string()});
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    CHECK(read_text(dir / "a" / "experiment.json") == read_text(dir / "b" / "experiment.json"));
    CHECK(read_text(dir / "a" / "experiment.md") == read_text(dir / "b" / "experiment.md"));
    CHECK(std::filesystem::exists(dir / "a" / "experiment.timings.json"));
    CHECK(a.out.find("| swpa |") != std::string::npos);
}

TEST_CASE("cli: divergence exits 2") {
    const auto dir = setup("cli_diverge");
    const CliRun r = run({"experiment", "--config", (dir / "c.json").string(), "--out", (dir / "out").string(),
                          "--train.learning_rate", "1e300", "--experiment.methods", "swpa"});
    CHECK(r.code == 2);
    CHECK(std::filesystem::exists(dir / "out" / "experiment.json"));
}

TEST_CASE("cli: ablate, similarity and export-mask") {
    const auto dir = setup("cli_tools");
    const std::string cfg = (dir / "c.json").string();
    const std::string out = (dir / "out").string();
    CHECK(run({"ablate", "--kind", "step-counter", "--config", cfg, "--out", out, "--swpa.step_counter", "2"}).code ==
          0);
    CHECK(std::filesystem::exists(dir / "out" / "ablation_step_counter.json"));
    CHECK(run({"train", "--config", cfg, "--out", out}).code == 0);
    CHECK(std::filesystem::exists(dir / "out" / "train.json"));

    REQUIRE(run({"rank", "--method", "random", "--config", cfg, "--out", out}).code == 0);
    REQUIRE(run({"rank", "--method", "swpa", "--config", cfg, "--out", out}).code == 0);
    const std::string r1 = (dir / "out" / "ranking_random.json").string();
    const std::string r2 = (dir / "out" / "ranking_swpa.json").string();

    const CliRun self = run({"similarity", "--a", r1, "--b", r1, "--fraction", "0.2", "--out", out});
    REQUIRE(self.code == 0);
    CHECK(nlohmann::json::parse(read_text(dir / "out" / "similarity.json")).at("similarity") == 1.0);
    CHECK(run({"similarity", "--a", r1, "--b", r2, "--fraction", "0.2", "--out", out}).code == 0);
    CHECK(run({"similarity", "--a", r1, "--b", (dir / "none.json").string(), "--out", out}).code == 1);

    CHECK(run({"export-mask", "--ranking", r2, "--height", "4", "--width", "5", "--fraction", "0.2", "--out", out})
              .code == 0);
    CHECK(std::filesystem::exists(dir / "out" / "mask_swpa_top.pgm"));
    CHECK(run({"export-mask", "--ranking", r2, "--height", "4", "--width", "4", "--out", out}).code == 1);
}
