#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gfl/distrib.hpp"
#include "gfl/geometry.hpp"
#include "gfl/synth.hpp"

namespace gfl {

/// How localization quality is represented in the head.
///   Joint              - class score doubles as IoU estimate, trained with QFL
///   SeparateIou        - extra quality logit supervised by IoU, scores multiplied at inference
///   SeparateCenterness - extra quality logit supervised by centerness
///   NoQuality          - plain focal-loss classification
enum class HeadVariant { Joint, SeparateIou, SeparateCenterness, NoQuality };

enum class HeadMode { Tabular, Mlp };

const char* to_string(HeadVariant v);
const char* to_string(HeadMode m);
HeadVariant variant_from_string(const std::string& s);
HeadMode mode_from_string(const std::string& s);

inline bool has_quality_branch(HeadVariant v)
{
    return v == HeadVariant::SeparateIou || v == HeadVariant::SeparateCenterness;
}

/// Shapes of the toy dense head. Per-point outputs are laid out as
/// [class logits (C) | regression | quality logit (0 or 1)]. Dirac and General regression are
/// side-major; Gaussian is [4 means | 4 log-variances].
struct HeadShape {
    HeadMode mode = HeadMode::Mlp;
    HeadVariant variant = HeadVariant::Joint;
    RegressorKind regressor = RegressorKind::General;
    Support support{};
    int num_classes = 3;
    int feature_dim = 12;
    int hidden = 64;
    int num_points = 256;

    int side_outputs() const { return side_arity(regressor, support); }
    int regression_outputs() const { return 4 * side_outputs(); }
    int quality_outputs() const { return has_quality_branch(variant) ? 1 : 0; }
    int outputs() const { return num_classes + regression_outputs() + quality_outputs(); }
    int regression_offset() const { return num_classes; }
    int quality_offset() const { return num_classes + regression_outputs(); }

    std::size_t param_count() const;
    void validate() const;

    friend bool operator==(const HeadShape&, const HeadShape&) = default;
};

/// Trainable parameters in one flat buffer.
///   Tabular: table[num_points][outputs]
///   Mlp:     w1[hidden][feature_dim], b1[hidden], w2[outputs][hidden], b2[outputs]
struct HeadParams {
    HeadShape shape;
    std::vector<double> values;

    std::size_t w1_offset() const { return 0; }
    std::size_t b1_offset() const;
    std::size_t w2_offset() const;
    std::size_t b2_offset() const;
};

/// Classification prior used for the initial class bias.
inline constexpr double kClassPrior = 0.01;
/// Initial offset (strides) for Dirac and Gaussian regression outputs.
inline constexpr double kInitialOffset = 2.0;

HeadParams init_params(const HeadShape& shape, std::uint64_t seed);

/// Row-major [point][outputs] raw head outputs.
struct HeadOutputs {
    int num_points = 0;
    int outputs = 0;
    std::vector<double> values;

    std::span<const double> row(int point) const
    {
        return std::span(values).subspan(static_cast<std::size_t>(point * outputs), static_cast<std::size_t>(outputs));
    }
};

HeadOutputs forward(const HeadParams& params, const Scene& scene);

/// Predicted side offsets from one output row (negative Dirac/Gaussian means clamp to 0).
SideOffsets predicted_offsets(const HeadShape& shape, std::span<const double> row);

// ---------------------------------------------------------------------------
// Label assignment
// ---------------------------------------------------------------------------

struct Assignment {
    std::vector<int> label;         // c*_z: 0 background, 1..C foreground
    std::vector<int> gt_index;      // -1 for background
    std::vector<SideOffsets> target;
    int num_positive = 0;

    bool positive(int z) const { return label[static_cast<std::size_t>(z)] > 0; }
};

/// A point is positive for the smallest-area ground-truth box containing it (ties: lowest index).
Assignment assign(std::span<const GridPoint> points, std::span<const GtBox> gt);
Assignment assign(const Scene& scene);

/// Dynamic IoU quality label; a constant with respect to the parameters.
double quality_target(const Box& pred_box, const Box& gt_box);

// ---------------------------------------------------------------------------
// Training objective
// ---------------------------------------------------------------------------

struct LossConfig {
    double lambda0 = 2.0;
    double lambda1 = 0.25;
    double beta = 2.0;
    double gamma = 2.0;
    /// Lower bound on the detached quality weight of a positive's box losses.
    double weight_floor = 0.01;

    friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

/// Quantities that are treated as constants by the gradient: quality labels of the
/// positives and the quality weights on their box losses. Indexed by point.
struct DetachedTerms {
    std::vector<double> quality_label;
    std::vector<double> weight;
};

DetachedTerms detached_terms(const HeadParams& params, const Scene& scene, const Assignment& assignment,
                             const LossConfig& config);

/// total = (L_Q + lambda0 * L_B + lambda1 * L_D) / max(N_pos, 1).
/// L_B and L_D already carry the per-positive quality weights; L_D sums the four sides.
struct LossBreakdown {
    double quality = 0.0;    // L_Q summed over all points and classes
    double box = 0.0;        // L_B
    double dist = 0.0;       // L_D
    int num_positive = 0;
    double total = 0.0;
    double lambda0 = 2.0;
    double lambda1 = 0.25;
};

struct LossResult {
    LossBreakdown breakdown;
    std::vector<double> grad;   // d total / d params.values
};

/// Unnormalised per-scene sums: the unit of work of the batch kernels.
struct SceneSums {
    double quality = 0.0;
    double box = 0.0;
    double dist = 0.0;
    int num_positive = 0;
    std::vector<double> grad;   // gradient of (quality + lambda0 box + lambda1 dist)
};

SceneSums scene_sums(const HeadParams& params, const Scene& scene, const Assignment& assignment,
                     const LossConfig& config, const DetachedTerms* frozen = nullptr);

/// Full objective for one scene. `frozen` pins the detached quantities, which finite
/// differences need to see the same graph as the analytic gradient.
LossResult total_loss(const HeadParams& params, const Scene& scene, const Assignment& assignment,
                      const LossConfig& config, const DetachedTerms* frozen = nullptr);

/// Batch objective, normalised by the batch's total positive count.
/// The OpenMP kernel evaluates scenes in parallel and reduces them in scene order, so it
/// is bit-identical to the serial reference.
LossResult batch_loss_serial(const HeadParams& params, std::span<const Scene* const> scenes,
                             std::span<const Assignment* const> assignments, const LossConfig& config);
LossResult batch_loss_parallel(const HeadParams& params, std::span<const Scene* const> scenes,
                               std::span<const Assignment* const> assignments, const LossConfig& config);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    LossConfig loss{};
    HeadMode mode = HeadMode::Mlp;
    HeadVariant variant = HeadVariant::Joint;
    RegressorKind regressor = RegressorKind::General;
    Support support{};
    int hidden = 64;
    /// Unset selects the mode default (0.05 tabular, 0.01 mlp).
    std::optional<double> lr;
    double momentum = 0.9;
    int iterations = 2000;
    int batch = 8;
    bool parallel = true;

    double effective_lr() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainResult {
    HeadParams params;
    std::vector<double> loss_curve;
};

HeadShape head_shape(const TrainConfig& config, const Scene& scene, int num_classes);

/// SGD with momentum over batches drawn from a per-epoch permutation. The seed drives the
/// parameter initialisation ("init" stream) and batch order ("batch" stream).
TrainResult train(std::span<const Scene> dataset, int num_classes, const TrainConfig& config, std::uint64_t seed);

/// Continues from existing parameters.
TrainResult train_from(HeadParams params, std::span<const Scene> dataset, const TrainConfig& config,
                       std::uint64_t seed);

// Checkpoints: JSON with a format header, the shape and the flat row-major weight arrays.
inline constexpr int kCheckpointVersion = 1;
std::string save_checkpoint(const HeadParams& params);
HeadParams load_checkpoint(const std::string& text);

}   // namespace gfl
