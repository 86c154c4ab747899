#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gfl/config.hpp"
#include "gfl/detector.hpp"
#include "gfl/inference.hpp"
#include "gfl/synth.hpp"

namespace gfl {

/// Training and evaluation scenes drawn from one spec: the first `train_scenes` scenes
/// are for training, the rest for evaluation.
struct Benchmark {
    SceneSpec spec;
    std::vector<Scene> train;
    std::vector<Scene> eval;
};

Benchmark make_benchmark(const ExperimentConfig& config);

struct ScatterRow {
    int scene_id = 0;
    int point = 0;
    int class_id = 0;
    double class_score = 0.0;
    double quality_score = 0.0;
};

/// Everything the train and eval subcommands report about a model.
struct ModelReport {
    EvalResult ap;
    NmsStageCounts nms_stages;   // summed over evaluation scenes
    /// Evaluation positives: class score at the gt class against the predicted quality.
    /// Empty for heads without a quality estimate.
    std::vector<ScatterRow> scatter;
    double scatter_correlation = 0.0;
    /// Largest predicted quality over evaluation background points.
    double max_background_quality = 0.0;
    int eval_positives = 0;
    // Training positives.
    std::vector<double> centerness_labels;
    std::vector<double> iou_labels;
    std::vector<double> regression_targets;
    double p10_centerness = 0.0;
    double p10_iou = 0.0;
};

ModelReport analyse(const HeadParams& params, const Benchmark& benchmark, const NmsConfig& nms);

/// Pearson correlation; NaN for fewer than two points or zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

/// Linear-interpolated percentile, q in [0, 1]. NaN for empty input.
double percentile(std::vector<double> values, double q);

using MetricRows = std::vector<std::pair<std::string, double>>;

/// CSV `metric,value` with round-trip precision.
std::string metrics_csv(const MetricRows& rows);
MetricRows report_metrics(const ModelReport& report);

std::string scatter_csv(std::span<const ScatterRow> rows);
std::string histograms_csv(const ModelReport& report, int bins);
/// Per-side predicted distributions of the first `count` evaluation positives.
std::string distribution_dump_csv(const HeadParams& params, std::span<const Scene> scenes, int count);
std::string losses_csv(std::span<const double> curve);

struct RunResult {
    int exit_code = 0;
    std::string summary;
    std::vector<std::string> files;
    nlohmann::json metrics = nlohmann::json::object();
};

const std::vector<std::string>& command_names();

/// Runs one subcommand, writing its outputs and manifest.json into `out`.
RunResult run_command(const std::string& name, const ExperimentConfig& config, const std::filesystem::path& out);

/// Environment variable that overrides the output directory.
inline constexpr const char* kOutputDirEnv = "GFL_LAB_OUT";

}   // namespace gfl
