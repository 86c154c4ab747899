#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfl/detector.hpp"
#include "gfl/distrib.hpp"
#include "gfl/inference.hpp"
#include "gfl/synth.hpp"

namespace gfl {

struct DataConfig {
    int train_scenes = 200;
    int eval_scenes = 50;
    bool write_dataset = true;

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct GradcheckConfig {
    int samples = 1000;
    double step = 1e-6;
    /// Corrupts one analytic gradient; the run must then fail.
    bool inject_fault = false;

    friend bool operator==(const GradcheckConfig&, const GradcheckConfig&) = default;
};

struct MinimaConfig {
    int qfl_targets = 100;
    int dfl_targets = 100;
    int gfl_cases = 20;
    int gfl_candidates = 100000;
    int specialization_samples = 10000;

    friend bool operator==(const MinimaConfig&, const MinimaConfig&) = default;
};

/// "axes" varies one of beta / n / delta at a time around the training config;
/// "grid" runs the full Cartesian product.
struct SweepConfig {
    std::vector<double> betas{0.0, 1.0, 2.0, 2.5, 4.0};
    std::vector<int> ns{12, 14, 16, 18};
    std::vector<double> deltas{0.5, 1.0, 2.0, 4.0};
    std::string mode = "axes";

    friend bool operator==(const SweepConfig&, const SweepConfig&) = default;
};

struct EvalConfig {
    /// Checkpoint read by the eval subcommand.
    std::string checkpoint;
    /// Positives of the evaluation set whose per-side distributions are dumped.
    int dump_points = 4;
    int histogram_bins = 20;

    friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

/// One JSON document fully determines a run. The scene seed is not configurable: the
/// dataset is drawn from the "dataset" stream of the root seed.
struct ExperimentConfig {
    std::string run_name = "gfl";
    std::uint64_t seed = 0;
    std::string output_dir = "runs/gfl";
    HeadVariant variant = HeadVariant::Joint;
    RegressorKind regressor = RegressorKind::General;
    SceneSpec scene{};
    DataConfig data{};
    TrainConfig train{};
    NmsConfig nms{};
    DisturbanceConfig disturb{};
    GradcheckConfig gradcheck{};
    MinimaConfig minima{};
    SweepConfig sweep{};
    EvalConfig eval{};

    /// Training config with variant and regressor filled in.
    TrainConfig train_config() const;
    /// Scene spec seeded from the root seed.
    SceneSpec scene_spec() const;

    void validate() const;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Applies `key=value` with a dotted key. The value is parsed as JSON when possible and
/// taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Reads a config file (empty path: defaults) and applies the overrides in order.
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {});

std::string dump_config(const ExperimentConfig& c);

}   // namespace gfl
