#include "gfl/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gfl/common.hpp"
#include "gfl/serialization.hpp"

namespace gfl {

void NmsConfig::validate() const
{
    if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) {
        throw ConfigError("nms: score_threshold must lie in [0, 1]");
    }
    if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) {
        throw ConfigError("nms: iou_threshold must lie in [0, 1]");
    }
    if (pre_topk < 1 || post_topk < 1) {
        throw ConfigError("nms: topk caps must be >= 1");
    }
}

namespace {

bool ranks_before(const Detection& a, const Detection& b)
{
    if (a.score != b.score) {
        return a.score > b.score;
    }
    return a.source_index < b.source_index;
}

}   // namespace

std::vector<Detection> nms(std::span<const Detection> candidates, const NmsConfig& config, NmsStageCounts* stages)
{
    config.validate();
    NmsStageCounts counts;
    counts.input = candidates.size();

    std::vector<Detection> pool;
    pool.reserve(candidates.size());
    for (const Detection& d : candidates) {
        if (d.score > config.score_threshold) {
            pool.push_back(d);
        }
    }
    counts.after_threshold = pool.size();

    std::sort(pool.begin(), pool.end(), ranks_before);
    if (pool.size() > static_cast<std::size_t>(config.pre_topk)) {
        pool.resize(static_cast<std::size_t>(config.pre_topk));
    }
    counts.after_pre_topk = pool.size();

    std::vector<Detection> kept;
    for (const Detection& d : pool) {
        const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
            return k.class_id == d.class_id && iou(k.box, d.box) > config.iou_threshold;
        });
        if (!suppressed) {
            kept.push_back(d);
        }
    }
    counts.after_suppression = kept.size();

    if (kept.size() > static_cast<std::size_t>(config.post_topk)) {
        kept.resize(static_cast<std::size_t>(config.post_topk));
    }
    counts.after_post_topk = kept.size();
    if (stages) {
        *stages = counts;
    }
    return kept;
}

ScoreGrid score_candidates(const HeadOutputs& outputs, const HeadShape& shape)
{
    ScoreGrid grid;
    grid.num_points = outputs.num_points;
    grid.num_classes = shape.num_classes;
    grid.scores.resize(static_cast<std::size_t>(grid.num_points * grid.num_classes));
    const bool separate = has_quality_branch(shape.variant);
    for (int z = 0; z < outputs.num_points; ++z) {
        const auto row = outputs.row(z);
        const double q = separate ? sigmoid(row[static_cast<std::size_t>(shape.quality_offset())]) : 1.0;
        for (int c = 0; c < shape.num_classes; ++c) {
            const double s = sigmoid(row[static_cast<std::size_t>(c)]);
            grid.scores[static_cast<std::size_t>(z * shape.num_classes + c)] = separate ? s * q : s;
        }
    }
    return grid;
}

std::vector<double> predicted_quality(const HeadOutputs& outputs, const HeadShape& shape, int point)
{
    const auto row = outputs.row(point);
    if (shape.variant == HeadVariant::Joint) {
        std::vector<double> q(static_cast<std::size_t>(shape.num_classes));
        for (int c = 0; c < shape.num_classes; ++c) {
            q[static_cast<std::size_t>(c)] = sigmoid(row[static_cast<std::size_t>(c)]);
        }
        return q;
    }
    if (has_quality_branch(shape.variant)) {
        return {sigmoid(row[static_cast<std::size_t>(shape.quality_offset())])};
    }
    return {};
}

std::vector<Detection> make_candidates(const HeadOutputs& outputs, const HeadShape& shape, const Scene& scene)
{
    const ScoreGrid grid = score_candidates(outputs, shape);
    std::vector<Detection> out;
    out.reserve(grid.scores.size());
    for (int z = 0; z < outputs.num_points; ++z) {
        const Box box = decode(scene.point(z), predicted_offsets(shape, outputs.row(z)));
        for (int c = 0; c < shape.num_classes; ++c) {
            out.push_back({box, c + 1, grid.at(z, c), z * shape.num_classes + c});
        }
    }
    return out;
}

std::vector<Detection> detect(const HeadParams& params, const Scene& scene, const NmsConfig& config)
{
    const HeadOutputs outputs = forward(params, scene);
    return nms(make_candidates(outputs, params.shape, scene), config);
}

std::vector<std::vector<Detection>> detect_all(const HeadParams& params, std::span<const Scene> scenes,
                                               const NmsConfig& config)
{
    config.validate();
    std::vector<std::vector<Detection>> out(scenes.size());
    const auto count = static_cast<std::ptrdiff_t>(scenes.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        out[static_cast<std::size_t>(i)] = detect(params, scenes[static_cast<std::size_t>(i)], config);
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<double> coco_iou_thresholds()
{
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) {
        t.push_back(0.5 + 0.05 * i);
    }
    return t;
}

namespace {

struct RankedDetection {
    double score;
    std::size_t scene;
    std::size_t position;
    const Box* box;
};

double class_ap(const std::vector<RankedDetection>& ranked, std::span<const std::vector<GtBox>> gts, int cls,
                std::size_t total_gt, double threshold)
{
    std::vector<std::vector<bool>> matched(gts.size());
    for (std::size_t s = 0; s < gts.size(); ++s) {
        matched[s].assign(gts[s].size(), false);
    }
    std::vector<double> precision(ranked.size());
    std::vector<double> recall(ranked.size());
    std::size_t tp = 0;
    for (std::size_t k = 0; k < ranked.size(); ++k) {
        const RankedDetection& d = ranked[k];
        const auto& scene_gt = gts[d.scene];
        int best = -1;
        double best_iou = threshold;
        for (std::size_t g = 0; g < scene_gt.size(); ++g) {
            if (scene_gt[g].class_id != cls || matched[d.scene][g]) {
                continue;
            }
            const double v = iou(*d.box, scene_gt[g].box);
            if (v >= best_iou && (best < 0 || v > best_iou)) {
                best = static_cast<int>(g);
                best_iou = v;
            }
        }
        if (best >= 0) {
            matched[d.scene][static_cast<std::size_t>(best)] = true;
            ++tp;
        }
        precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
        recall[k] = static_cast<double>(tp) / static_cast<double>(total_gt);
    }
    for (std::size_t k = precision.size(); k-- > 1;) {
        precision[k - 1] = std::max(precision[k - 1], precision[k]);
    }
    double sum = 0.0;
    for (int i = 0; i <= 100; ++i) {
        const double r = static_cast<double>(i) / 100.0;
        const auto it = std::lower_bound(recall.begin(), recall.end(), r);
        if (it != recall.end()) {
            sum += precision[static_cast<std::size_t>(it - recall.begin())];
        }
    }
    return sum / 101.0;
}

}   // namespace

EvalResult evaluate_ap(std::span<const std::vector<Detection>> detections,
                       std::span<const std::vector<GtBox>> ground_truth, std::span<const double> thresholds)
{
    if (detections.size() != ground_truth.size()) {
        throw ConfigError("evaluate_ap: detections and ground truth cover different scenes");
    }
    int max_class = 0;
    for (const auto& scene : ground_truth) {
        for (const auto& g : scene) {
            max_class = std::max(max_class, g.class_id);
        }
    }

    EvalResult result;
    std::vector<double> ap_sum(thresholds.size(), 0.0);
    for (int cls = 1; cls <= max_class; ++cls) {
        std::size_t total_gt = 0;
        for (const auto& scene : ground_truth) {
            total_gt += static_cast<std::size_t>(
                std::count_if(scene.begin(), scene.end(), [&](const GtBox& g) { return g.class_id == cls; }));
        }
        if (total_gt == 0) {
            continue;
        }
        ++result.classes_evaluated;

        std::vector<RankedDetection> ranked;
        for (std::size_t s = 0; s < detections.size(); ++s) {
            for (std::size_t p = 0; p < detections[s].size(); ++p) {
                const Detection& d = detections[s][p];
                if (d.class_id == cls) {
                    ranked.push_back({d.score, s, p, &d.box});
                }
            }
        }
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const RankedDetection& a, const RankedDetection& b) { return a.score > b.score; });

        for (std::size_t t = 0; t < thresholds.size(); ++t) {
            ap_sum[t] += class_ap(ranked, ground_truth, cls, total_gt, thresholds[t]);
        }
    }

    double mean = 0.0;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
        const double ap = result.classes_evaluated > 0 ? ap_sum[t] / result.classes_evaluated : 0.0;
        result.ap_per_iou[thresholds[t]] = ap;
        mean += ap;
    }
    result.mean_ap = thresholds.empty() ? 0.0 : mean / static_cast<double>(thresholds.size());
    return result;
}

std::string eval_csv(const EvalResult& result)
{
    std::ostringstream os;
    os.precision(17);
    os << "iou_threshold,ap\n";
    for (const auto& [thr, ap] : result.ap_per_iou) {
        os << thr << ',' << ap << '\n';
    }
    os << "mean," << result.mean_ap << '\n';
    return os.str();
}

std::string detections_jsonl(std::span<const std::vector<Detection>> detections)
{
    std::ostringstream os;
    for (std::size_t s = 0; s < detections.size(); ++s) {
        for (const Detection& d : detections[s]) {
            const nlohmann::json j{{"scene_id", s},
                                   {"class", d.class_id},
                                   {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}},
                                   {"score", d.score}};
            os << j.dump() << '\n';
        }
    }
    return os.str();
}

}   // namespace gfl
