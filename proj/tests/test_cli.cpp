#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <doctest.h>
#include <json.hpp>

#include "gfl/common.hpp"
#include "gfl/config.hpp"
#include "gfl/experiments.hpp"

using namespace gfl;
namespace fs = std::filesystem;

namespace {

const std::string kExe = GFL_LAB_EXE;
const fs::path kConfigs = GFL_CONFIG_DIR;

const fs::path kScratch = fs::temp_directory_path() / ("gfl_cli_test_" + std::to_string(::getpid()));

struct ScratchCleanup {
    ~ScratchCleanup()
    {
        std::error_code ec;
        fs::remove_all(kScratch, ec);
    }
} cleanup;

fs::path scratch(const std::string& name)
{
    const fs::path p = kScratch / name;
    fs::remove_all(p);
    return p;
}

int run(const std::string& args, const std::string& env = "")
{
    const std::string cmd = (env.empty() ? "" : env + " ") + "\"" + kExe + "\" " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string smoke() { return "--config \"" + (kConfigs / "smoke.json").string() + "\""; }

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p)
{
    std::vector<std::vector<std::string>> rows;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        rows.push_back(cells);
    }
    return rows;
}

nlohmann::json manifest(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "manifest.json")); }

void check_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& overrides = {})
{
    const nlohmann::json m = manifest(dir);
    for (const char* key : {"run_name", "command", "version", "config", "started_utc", "wall_clock_seconds",
                            "exit_code", "summary", "files", "metrics"}) {
        CHECK_MESSAGE(m.contains(key), key);
    }
    CHECK(m["command"] == command);
    CHECK(m["version"] == GFL_VERSION);
    CHECK(m["exit_code"] == 0);
    CHECK(m["wall_clock_seconds"].get<double>() >= 0.0);
    CHECK(parse_config(m["config"].dump()) == load_config((kConfigs / "smoke.json").string(), overrides));
    for (const auto& f : m["files"]) {
        CHECK_MESSAGE(fs::exists(dir / f.get<std::string>()), f.get<std::string>());
    }
    CHECK(fs::exists(dir / "metrics.csv"));
}

}   // namespace

TEST_CASE("config round trip")
{
    const ExperimentConfig defaults;
    CHECK(parse_config(dump_config(defaults)) == defaults);
    CHECK(load_config((kConfigs / "default.json").string()) == defaults);
    CHECK(load_config("") == defaults);

    const ExperimentConfig smoke_config = load_config((kConfigs / "smoke.json").string());
    CHECK(parse_config(dump_config(smoke_config)) == smoke_config);
    CHECK(dump_config(parse_config(dump_config(smoke_config))) == dump_config(smoke_config));

    const ExperimentConfig baseline = load_config((kConfigs / "baseline.json").string());
    CHECK(baseline.variant == HeadVariant::NoQuality);
    CHECK(baseline.regressor == RegressorKind::Dirac);
}

TEST_CASE("default sweep axes")
{
    const ExperimentConfig c;
    CHECK(c.sweep.betas == std::vector<double>{0.0, 1.0, 2.0, 2.5, 4.0});
    CHECK(c.sweep.ns == std::vector<int>{12, 14, 16, 18});
    CHECK(c.sweep.deltas == std::vector<double>{0.5, 1.0, 2.0, 4.0});
    CHECK(c.sweep.mode == "axes");
}

TEST_CASE("config rejects unknown and derived keys")
{
    CHECK_THROWS_AS(parse_config(R"({"bogus": 1})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"train": {"learning_rate": 1}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"scene": {"seed": 3}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"variant": "fancy"})"), ConfigError);
    CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"train": {"lr": -1}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"sweep": {"mode": "random"}})"), ConfigError);
}

TEST_CASE("overrides")
{
    const ExperimentConfig c = parse_config("{}", {"train.iterations=7", "variant=iou_branch", "nms.iou_threshold=0.5",
                                                   "sweep.betas=[1,3]", "train.lr=0.2"});
    CHECK(c.train.iterations == 7);
    CHECK(c.variant == HeadVariant::SeparateIou);
    CHECK(c.nms.iou_threshold == 0.5);
    CHECK(c.sweep.betas == std::vector<double>{1.0, 3.0});
    REQUIRE(c.train.lr.has_value());
    CHECK(*c.train.lr == 0.2);
    CHECK_FALSE(parse_config("{}", {"train.lr=null"}).train.lr.has_value());

    CHECK_THROWS_AS(parse_config("{}", {"train.iterations"}), ConfigError);
    CHECK_THROWS_AS(parse_config("{}", {"train..iterations=3"}), ConfigError);
    CHECK_THROWS_AS(parse_config("{}", {"run_name.x=3"}), ConfigError);
    CHECK_THROWS_AS(parse_config("{}", {"train.iterations=lots"}), ConfigError);
    CHECK_THROWS_AS(parse_config("{}", {"scene.seed=4"}), ConfigError);
}

TEST_CASE("usage errors")
{
    CHECK(run("") == 2);
    CHECK(run("train") == 2);
    CHECK(run("frobnicate " + smoke()) == 2);
    CHECK(run("train --config /nonexistent/config.json") == 2);
    CHECK(run("train " + smoke() + " --set bogus=1 --out " + scratch("usage").string()) == 2);
}

TEST_CASE("gradcheck, minima and disturb")
{
    const fs::path g = scratch("gradcheck");
    REQUIRE(run("gradcheck " + smoke() + " --out " + g.string()) == 0);
    check_manifest(g, "gradcheck");

    const fs::path bad = scratch("gradcheck_fault");
    CHECK(run("gradcheck " + smoke() + " --set gradcheck.inject_fault=true --out " + bad.string()) == 1);
    CHECK(manifest(bad)["exit_code"] == 1);

    const fs::path m = scratch("minima");
    REQUIRE(run("minima " + smoke() + " --out " + m.string()) == 0);
    check_manifest(m, "minima");

    const fs::path d = scratch("disturb");
    REQUIRE(run("disturb " + smoke() + " --out " + d.string()) == 0);
    check_manifest(d, "disturb");
    CHECK(fs::exists(d / "disturbance.csv"));
}

TEST_CASE("train then eval")
{
    const fs::path t = scratch("train");
    REQUIRE(run("train " + smoke() + " --out " + t.string()) == 0);
    check_manifest(t, "train");
    for (const char* f : {"checkpoint.json", "losses.csv", "scatter.csv", "histograms.csv", "dist_dump.csv",
                          "eval.csv", "detections.jsonl", "train_dataset.jsonl", "eval_dataset.jsonl"}) {
        CHECK_MESSAGE(fs::exists(t / f), f);
    }

    const auto losses = read_csv(t / "losses.csv");
    REQUIRE(losses.size() == 51);
    CHECK(losses[0] == std::vector<std::string>{"iteration", "total"});

    // The joint head scores with its quality estimate, so every point lies on the diagonal.
    const auto scatter = read_csv(t / "scatter.csv");
    REQUIRE(scatter.size() > 1);
    CHECK(scatter[0] == std::vector<std::string>{"scene_id", "point", "class", "class_score", "quality_score"});
    for (std::size_t i = 1; i < scatter.size(); ++i) {
        CHECK(std::stod(scatter[i][3]) == std::stod(scatter[i][4]));
    }

    const fs::path e = scratch("eval");
    REQUIRE(run("eval " + smoke() + " --set eval.checkpoint=" + (t / "checkpoint.json").string() + " --out " +
                e.string()) == 0);
    check_manifest(e, "eval", {"eval.checkpoint=" + (t / "checkpoint.json").string()});
    CHECK(slurp(e / "eval.csv") == slurp(t / "eval.csv"));
    CHECK(slurp(e / "scatter.csv") == slurp(t / "scatter.csv"));

    // A checkpoint trained on a different benchmark shape is refused.
    const fs::path mismatch = scratch("eval_mismatch");
    CHECK(run("eval " + smoke() + " --set scene.num_classes=2 eval.checkpoint=" + (t / "checkpoint.json").string() +
              " --out " + mismatch.string()) == 2);
}

TEST_CASE("separate quality head is off the diagonal")
{
    const fs::path t = scratch("train_iou");
    REQUIRE(run("train " + smoke() + " --set variant=iou_branch --out " + t.string()) == 0);
    const auto scatter = read_csv(t / "scatter.csv");
    REQUIRE(scatter.size() > 1);
    int off = 0;
    for (std::size_t i = 1; i < scatter.size(); ++i) {
        off += std::stod(scatter[i][3]) != std::stod(scatter[i][4]) ? 1 : 0;
    }
    CHECK(off > 0);
}

TEST_CASE("output directory precedence")
{
    const fs::path flag = scratch("precedence_flag");
    const fs::path env = scratch("precedence_env");
    const fs::path conf = scratch("precedence_config");

    REQUIRE(run("minima " + smoke() + " --set output_dir=" + conf.string() + " --out " + flag.string(),
                std::string(kOutputDirEnv) + "=" + env.string()) == 0);
    CHECK(fs::exists(env / "manifest.json"));
    CHECK_FALSE(fs::exists(flag));
    CHECK_FALSE(fs::exists(conf));

    REQUIRE(run("minima " + smoke() + " --set output_dir=" + conf.string() + " --out " + flag.string()) == 0);
    CHECK(fs::exists(flag / "manifest.json"));
    CHECK_FALSE(fs::exists(conf));

    REQUIRE(run("minima " + smoke() + " --set output_dir=" + conf.string()) == 0);
    CHECK(fs::exists(conf / "manifest.json"));
}

TEST_CASE("sweep over the default axes")
{
    const fs::path s = scratch("sweep");
    const std::vector<std::string> overrides{"train.iterations=5", "sweep.betas=[0,1,2,2.5,4]",
                                             "sweep.ns=[12,14,16,18]", "sweep.deltas=[0.5,1,2,4]"};
    std::string args;
    for (const std::string& o : overrides) {
        args += " " + o;
    }
    REQUIRE(run("sweep " + smoke() + " --set" + args + " --out " + s.string()) == 0);
    check_manifest(s, "sweep", overrides);
    const auto rows = read_csv(s / "metrics.csv");
    REQUIRE(rows.size() == 1 + 5 + 4 + 4);
    CHECK(rows[0] == std::vector<std::string>{"axis", "beta", "n", "delta", "mean_ap", "ap50", "ap75",
                                              "final_loss_avg100"});
    std::multiset<double> betas;
    std::set<std::string> axes;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        axes.insert(rows[i][0]);
        if (rows[i][0] == "beta") {
            betas.insert(std::stod(rows[i][1]));
        }
    }
    CHECK(betas == std::multiset<double>{0.0, 1.0, 2.0, 2.5, 4.0});
    CHECK(axes == std::set<std::string>{"beta", "n", "delta"});
}

TEST_CASE("sweep grid mode")
{
    const fs::path s = scratch("sweep_grid");
    REQUIRE(run("sweep " + smoke() + " --set train.iterations=3 sweep.mode=grid sweep.betas=[0,2] sweep.ns=[12,16] "
                "sweep.deltas=[1] --out " + s.string()) == 0);
    CHECK(read_csv(s / "metrics.csv").size() == 1 + 2 * 2 * 1);
}
