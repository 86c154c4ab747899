#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "gfl/detector.hpp"
#include "gfl/geometry.hpp"
#include "gfl/synth.hpp"

namespace gfl {

struct Detection {
    Box box;
    int class_id = 1;
    double score = 0.0;
    /// Candidate index (point * C + class) used as the deterministic tie-break.
    int source_index = 0;
};

struct NmsConfig {
    double score_threshold = 0.05;
    int pre_topk = 1000;
    double iou_threshold = 0.6;
    int post_topk = 100;

    void validate() const;

    friend bool operator==(const NmsConfig&, const NmsConfig&) = default;
};

/// Candidate counts after each stage of nms(), in application order.
struct NmsStageCounts {
    std::size_t input = 0;
    std::size_t after_threshold = 0;
    std::size_t after_pre_topk = 0;
    std::size_t after_suppression = 0;
    std::size_t after_post_topk = 0;
};

/// Score filter (score > threshold), top pre_topk by (score desc, source_index asc),
/// greedy per-class suppression of IoU > iou_threshold, then the global post_topk cap.
/// The result is ordered by (score desc, source_index asc).
std::vector<Detection> nms(std::span<const Detection> candidates, const NmsConfig& config,
                           NmsStageCounts* stages = nullptr);

/// Per-point per-class ranking scores, row-major [point][class].
struct ScoreGrid {
    int num_points = 0;
    int num_classes = 0;
    std::vector<double> scores;

    double at(int point, int cls) const
    {
        return scores[static_cast<std::size_t>(point * num_classes + cls)];
    }
};

/// Joint and NoQuality heads rank by sigmoid(class logit); separate-quality heads by
/// sigmoid(class logit) * sigmoid(quality logit).
ScoreGrid score_candidates(const HeadOutputs& outputs, const HeadShape& shape);

/// Predicted quality per point: the class score for Joint heads, sigmoid of the quality
/// logit for separate heads. Empty for NoQuality.
std::vector<double> predicted_quality(const HeadOutputs& outputs, const HeadShape& shape, int point);

std::vector<Detection> make_candidates(const HeadOutputs& outputs, const HeadShape& shape, const Scene& scene);

std::vector<Detection> detect(const HeadParams& params, const Scene& scene, const NmsConfig& config);

/// Per-scene detection, parallel over scenes with results in scene order.
std::vector<std::vector<Detection>> detect_all(const HeadParams& params, std::span<const Scene> scenes,
                                               const NmsConfig& config);

// ---------------------------------------------------------------------------
// COCO-style AP
// ---------------------------------------------------------------------------

struct EvalResult {
    std::map<double, double> ap_per_iou;
    double mean_ap = 0.0;
    int classes_evaluated = 0;
};

/// 0.50, 0.55, ..., 0.95
std::vector<double> coco_iou_thresholds();

/// 101-point interpolated AP per class and IoU threshold, averaged over classes that
/// have at least one ground truth. Detections are matched greedily by descending score
/// (ties: scene, then list position); each goes to the unmatched same-class ground truth
/// of highest IoU (ties: lower index).
EvalResult evaluate_ap(std::span<const std::vector<Detection>> detections,
                       std::span<const std::vector<GtBox>> ground_truth, std::span<const double> thresholds);

/// CSV `iou_threshold,ap` followed by a `mean,<mean_ap>` row.
std::string eval_csv(const EvalResult& result);

/// One JSON object per line: scene_id, class, box, score.
std::string detections_jsonl(std::span<const std::vector<Detection>> detections);

}   // namespace gfl
