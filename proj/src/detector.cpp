#include "gfl/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Dense>

#include "gfl/common.hpp"
#include "gfl/losses.hpp"
#include "gfl/serialization.hpp"

namespace gfl {

const char* to_string(HeadVariant v)
{
    switch (v) {
    case HeadVariant::Joint: return "joint";
    case HeadVariant::SeparateIou: return "iou_branch";
    case HeadVariant::SeparateCenterness: return "centerness_branch";
    case HeadVariant::NoQuality: return "no_quality";
    }
    return "?";
}

const char* to_string(HeadMode m)
{
    return m == HeadMode::Tabular ? "tabular" : "mlp";
}

HeadVariant variant_from_string(const std::string& s)
{
    if (s == "joint") return HeadVariant::Joint;
    if (s == "iou_branch") return HeadVariant::SeparateIou;
    if (s == "centerness_branch") return HeadVariant::SeparateCenterness;
    if (s == "no_quality") return HeadVariant::NoQuality;
    throw ConfigError("unknown head variant: " + s);
}

HeadMode mode_from_string(const std::string& s)
{
    if (s == "tabular") return HeadMode::Tabular;
    if (s == "mlp") return HeadMode::Mlp;
    throw ConfigError("unknown head mode: " + s);
}

std::size_t HeadShape::param_count() const
{
    const auto o = static_cast<std::size_t>(outputs());
    if (mode == HeadMode::Tabular) {
        return static_cast<std::size_t>(num_points) * o;
    }
    const auto h = static_cast<std::size_t>(hidden);
    return h * static_cast<std::size_t>(feature_dim) + h + o * h + o;
}

void HeadShape::validate() const
{
    support.validate();
    if (num_classes < 1 || num_points < 1) {
        throw ConfigError("head: num_classes and num_points must be >= 1");
    }
    if (mode == HeadMode::Mlp && (hidden < 1 || feature_dim < 1)) {
        throw ConfigError("head: mlp needs hidden >= 1 and feature_dim >= 1");
    }
}

std::size_t HeadParams::b1_offset() const
{
    return static_cast<std::size_t>(shape.hidden * shape.feature_dim);
}

std::size_t HeadParams::w2_offset() const
{
    return b1_offset() + static_cast<std::size_t>(shape.hidden);
}

std::size_t HeadParams::b2_offset() const
{
    return w2_offset() + static_cast<std::size_t>(shape.outputs() * shape.hidden);
}

namespace {

std::vector<double> output_bias(const HeadShape& shape)
{
    std::vector<double> bias(static_cast<std::size_t>(shape.outputs()), 0.0);
    const double prior = -std::log((1.0 - kClassPrior) / kClassPrior);
    for (int c = 0; c < shape.num_classes; ++c) {
        bias[static_cast<std::size_t>(c)] = prior;
    }
    if (shape.regressor != RegressorKind::General) {
        for (int s = 0; s < 4; ++s) {
            bias[static_cast<std::size_t>(shape.regression_offset() + s)] = kInitialOffset;
        }
        return bias;
    }
    // Discretised unit Gaussian around kInitialOffset, so all regressors start from similar boxes.
    const int k = shape.support.size();
    for (int s = 0; s < 4; ++s) {
        for (int j = 0; j < k; ++j) {
            const double u = (shape.support.knot(j) - kInitialOffset) / shape.support.delta;
            bias[static_cast<std::size_t>(shape.regression_offset() + s * k + j)] = -0.5 * u * u;
        }
    }
    return bias;
}

}   // namespace

HeadParams init_params(const HeadShape& shape, std::uint64_t seed)
{
    shape.validate();
    HeadParams p;
    p.shape = shape;
    p.values.assign(shape.param_count(), 0.0);
    const std::vector<double> bias = output_bias(shape);
    const auto outs = static_cast<std::size_t>(shape.outputs());

    if (shape.mode == HeadMode::Tabular) {
        for (int z = 0; z < shape.num_points; ++z) {
            std::copy(bias.begin(), bias.end(), p.values.begin() + static_cast<std::ptrdiff_t>(z * outs));
        }
        return p;
    }

    Rng rng(child_seed(seed, "init"));
    std::normal_distribution<double> w1_dist(0.0, 1.0 / std::sqrt(static_cast<double>(shape.feature_dim)));
    std::normal_distribution<double> w2_dist(0.0, 0.01);
    for (std::size_t i = 0; i < p.b1_offset(); ++i) {
        p.values[i] = w1_dist(rng);
    }
    for (std::size_t i = p.w2_offset(); i < p.b2_offset(); ++i) {
        p.values[i] = w2_dist(rng);
    }
    std::copy(bias.begin(), bias.end(), p.values.begin() + static_cast<std::ptrdiff_t>(p.b2_offset()));
    return p;
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMat>;
using RowMap = Eigen::Map<RowMat>;

struct MlpView {
    ConstRowMap w1;   // H x F
    Eigen::Map<const Eigen::RowVectorXd> b1;
    ConstRowMap w2;   // O x H
    Eigen::Map<const Eigen::RowVectorXd> b2;
};

MlpView mlp_view(const HeadParams& p)
{
    const HeadShape& s = p.shape;
    const double* v = p.values.data();
    return {ConstRowMap(v, s.hidden, s.feature_dim), Eigen::Map<const Eigen::RowVectorXd>(v + p.b1_offset(), s.hidden),
            ConstRowMap(v + p.w2_offset(), s.outputs(), s.hidden),
            Eigen::Map<const Eigen::RowVectorXd>(v + p.b2_offset(), s.outputs())};
}

ConstRowMap feature_matrix(const Scene& scene)
{
    return ConstRowMap(scene.features.data(), scene.num_points(), scene.feature_dim);
}

// tanh(X W1^T + b1), one row per point.
RowMat mlp_hidden(const MlpView& m, const Scene& scene)
{
    RowMat a = feature_matrix(scene) * m.w1.transpose();
    a.rowwise() += m.b1;
    // tanh through the vectorised exp; saturates cleanly to +-1.
    return (1.0 - 2.0 / ((2.0 * a.array()).exp() + 1.0)).matrix();
}

struct DecodedSides {
    SideOffsets offsets;
    // d offset / d raw for Dirac and Gaussian means (0 where clamped).
    std::array<double, 4> pass{};
    // Softmax Jacobians of the expectation for General heads, side-major.
    std::vector<double> jacobian;
};

DecodedSides decode_sides(const HeadShape& shape, std::span<const double> row, bool with_jacobian)
{
    DecodedSides d;
    const int base = shape.regression_offset();
    if (shape.regressor == RegressorKind::General) {
        const int k = shape.support.size();
        if (with_jacobian) {
            d.jacobian.resize(static_cast<std::size_t>(4 * k));
        }
        for (int s = 0; s < 4; ++s) {
            const auto logits = row.subspan(static_cast<std::size_t>(base + s * k), static_cast<std::size_t>(k));
            const DiscreteDistribution dist = softmax(logits);
            const double mean = expectation(dist, shape.support);
            d.offsets[s] = mean;
            if (with_jacobian) {
                for (int j = 0; j < k; ++j) {
                    const auto ji = static_cast<std::size_t>(j);
                    d.jacobian[static_cast<std::size_t>(s * k + j)] = dist.probs[ji] * (shape.support.knot(j) - mean);
                }
            }
        }
        return d;
    }
    for (int s = 0; s < 4; ++s) {
        const double raw = row[static_cast<std::size_t>(base + s)];
        d.offsets[s] = raw > 0.0 ? raw : 0.0;
        d.pass[static_cast<std::size_t>(s)] = raw > 0.0 ? 1.0 : 0.0;
    }
    return d;
}

struct PointTerms {
    double quality = 0.0;
    double box = 0.0;
    double dist = 0.0;
};

struct DetachedPoint {
    double label = 0.0;
    double weight = 1.0;
};

DetachedPoint detached_point(const HeadShape& shape, std::span<const double> row, const SideOffsets& predicted,
                             const GridPoint& point, const Assignment& a, int z, const Box& gt_box,
                             const LossConfig& cfg)
{
    DetachedPoint d;
    const auto zi = static_cast<std::size_t>(z);
    if (shape.variant == HeadVariant::SeparateCenterness) {
        d.label = centerness(a.target[zi]);
    } else {
        d.label = quality_target(decode(point, predicted), gt_box);
    }
    switch (shape.variant) {
    case HeadVariant::Joint:
        d.weight = std::max(sigmoid(row[static_cast<std::size_t>(a.label[zi] - 1)]), cfg.weight_floor);
        break;
    case HeadVariant::SeparateIou:
    case HeadVariant::SeparateCenterness:
        d.weight = std::max(sigmoid(row[static_cast<std::size_t>(shape.quality_offset())]), cfg.weight_floor);
        break;
    case HeadVariant::NoQuality:
        d.weight = 1.0;
        break;
    }
    return d;
}

// Loss terms of one point; writes d(quality + lambda0 box + lambda1 dist)/d row into gout.
// `sides` must be decoded with Jacobians for positives and may be null for background points.
PointTerms point_terms(const HeadShape& shape, std::span<const double> row, const Assignment& a, int z,
                       const DecodedSides* sides_ptr, const DetachedPoint& det, const LossConfig& cfg,
                       std::span<double> gout)
{
    PointTerms t;
    const auto zi = static_cast<std::size_t>(z);
    const int cls = a.label[zi];
    const bool pos = cls > 0;

    for (int c = 0; c < shape.num_classes; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        const bool hit = pos && c == cls - 1;
        LossEval e;
        if (shape.variant == HeadVariant::Joint) {
            e = qfl(row[ci], hit ? det.label : 0.0, cfg.beta);
        } else {
            e = focal_loss(row[ci], hit ? 1 : 0, cfg.gamma);
        }
        t.quality += e.value;
        gout[ci] = e.grad;
    }
    if (!pos) {
        return t;
    }

    if (has_quality_branch(shape.variant)) {
        const auto q = static_cast<std::size_t>(shape.quality_offset());
        const LossEval e = qfl(row[q], det.label, 0.0);
        t.quality += e.value;
        gout[q] = e.grad;
    }

    const SideOffsets& target = a.target[zi];
    const DecodedSides& sides = *sides_ptr;
    const OffsetLossEval giou = giou_loss(sides.offsets, target);
    const double w = det.weight;
    t.box = w * giou.value;

    const int base = shape.regression_offset();
    if (shape.regressor == RegressorKind::General) {
        const int k = shape.support.size();
        for (int s = 0; s < 4; ++s) {
            const auto logits = row.subspan(static_cast<std::size_t>(base + s * k), static_cast<std::size_t>(k));
            const VectorLossEval d = dfl(logits, target[s], shape.support);
            t.dist += w * d.value;
            const double gb = w * cfg.lambda0 * giou.grad[static_cast<std::size_t>(s)];
            for (int j = 0; j < k; ++j) {
                gout[static_cast<std::size_t>(base + s * k + j)] =
                    gb * sides.jacobian[static_cast<std::size_t>(s * k + j)] + w * cfg.lambda1 * d.grad[static_cast<std::size_t>(j)];
            }
        }
        return t;
    }

    for (int s = 0; s < 4; ++s) {
        const auto mu = static_cast<std::size_t>(base + s);
        gout[mu] = w * cfg.lambda0 * giou.grad[static_cast<std::size_t>(s)] * sides.pass[static_cast<std::size_t>(s)];
    }
    if (shape.regressor == RegressorKind::Gaussian) {
        for (int s = 0; s < 4; ++s) {
            const auto mu = static_cast<std::size_t>(base + s);
            const auto lv = static_cast<std::size_t>(base + 4 + s);
            const GaussianNllEval g = gaussian_nll(row[mu], row[lv], target[s]);
            t.dist += w * g.value;
            gout[mu] += w * cfg.lambda1 * g.grad_mu;
            gout[lv] = w * cfg.lambda1 * g.grad_log_var;
        }
    }
    return t;
}

void check_scene(const HeadShape& shape, const Scene& scene, const Assignment& a)
{
    if (scene.num_points() != static_cast<int>(a.label.size())) {
        throw ConfigError("assignment does not match the scene grid");
    }
    if (shape.mode == HeadMode::Tabular && scene.num_points() != shape.num_points) {
        throw ConfigError("tabular head: scene grid does not match the table");
    }
    if (shape.mode == HeadMode::Mlp && scene.feature_dim != shape.feature_dim) {
        throw ConfigError("mlp head: feature dimension mismatch");
    }
}

}   // namespace

HeadOutputs forward(const HeadParams& params, const Scene& scene)
{
    const HeadShape& s = params.shape;
    if (s.mode == HeadMode::Tabular && scene.num_points() != s.num_points) {
        throw ConfigError("tabular head: scene grid does not match the table");
    }
    if (s.mode == HeadMode::Mlp && scene.feature_dim != s.feature_dim) {
        throw ConfigError("mlp head: feature dimension mismatch");
    }
    HeadOutputs out;
    out.num_points = scene.num_points();
    out.outputs = s.outputs();
    out.values.resize(static_cast<std::size_t>(out.num_points * out.outputs));
    if (s.mode == HeadMode::Tabular) {
        std::copy(params.values.begin(), params.values.end(), out.values.begin());
        return out;
    }
    const MlpView m = mlp_view(params);
    RowMap result(out.values.data(), out.num_points, out.outputs);
    result.noalias() = mlp_hidden(m, scene) * m.w2.transpose();
    result.rowwise() += m.b2;
    return out;
}

SideOffsets predicted_offsets(const HeadShape& shape, std::span<const double> row)
{
    return decode_sides(shape, row, false).offsets;
}

Assignment assign(std::span<const GridPoint> points, std::span<const GtBox> gt)
{
    Assignment a;
    a.label.assign(points.size(), 0);
    a.gt_index.assign(points.size(), -1);
    a.target.assign(points.size(), SideOffsets{});
    for (std::size_t z = 0; z < points.size(); ++z) {
        const GridPoint& p = points[z];
        int best = -1;
        double best_area = 0.0;
        for (std::size_t k = 0; k < gt.size(); ++k) {
            const Box& b = gt[k].box;
            if (!b.contains(p.x, p.y) || !(b.area() > 0.0)) {
                continue;
            }
            if (best < 0 || b.area() < best_area) {
                best = static_cast<int>(k);
                best_area = b.area();
            }
        }
        if (best >= 0) {
            const GtBox& g = gt[static_cast<std::size_t>(best)];
            a.label[z] = g.class_id;
            a.gt_index[z] = best;
            a.target[z] = encode(p, g.box);
            ++a.num_positive;
        }
    }
    return a;
}

Assignment assign(const Scene& scene)
{
    std::vector<GridPoint> points;
    points.reserve(static_cast<std::size_t>(scene.num_points()));
    for (int z = 0; z < scene.num_points(); ++z) {
        points.push_back(scene.point(z));
    }
    return assign(points, scene.gt);
}

double quality_target(const Box& pred_box, const Box& gt_box)
{
    return iou(pred_box, gt_box);
}

DetachedTerms detached_terms(const HeadParams& params, const Scene& scene, const Assignment& a,
                             const LossConfig& config)
{
    const HeadShape& shape = params.shape;
    check_scene(shape, scene, a);
    const HeadOutputs out = forward(params, scene);
    DetachedTerms d;
    d.quality_label.assign(static_cast<std::size_t>(scene.num_points()), 0.0);
    d.weight.assign(static_cast<std::size_t>(scene.num_points()), 0.0);
    for (int z = 0; z < scene.num_points(); ++z) {
        if (!a.positive(z)) {
            continue;
        }
        const Box& gt_box = scene.gt[static_cast<std::size_t>(a.gt_index[static_cast<std::size_t>(z)])].box;
        const SideOffsets predicted = decode_sides(shape, out.row(z), false).offsets;
        const DetachedPoint dp = detached_point(shape, out.row(z), predicted, scene.point(z), a, z, gt_box, config);
        d.quality_label[static_cast<std::size_t>(z)] = dp.label;
        d.weight[static_cast<std::size_t>(z)] = dp.weight;
    }
    return d;
}

namespace {

DetachedPoint resolve_detached(const HeadShape& shape, std::span<const double> row, const SideOffsets& predicted,
                               const Scene& scene, const Assignment& a, int z, const LossConfig& config,
                               const DetachedTerms* frozen)
{
    const auto zi = static_cast<std::size_t>(z);
    if (frozen) {
        return {frozen->quality_label[zi], frozen->weight[zi]};
    }
    const Box& gt_box = scene.gt[static_cast<std::size_t>(a.gt_index[zi])].box;
    return detached_point(shape, row, predicted, scene.point(z), a, z, gt_box, config);
}

void accumulate(SceneSums& sums, const PointTerms& t)
{
    sums.quality += t.quality;
    sums.box += t.box;
    sums.dist += t.dist;
}

SceneSums tabular_sums(const HeadParams& params, const Scene& scene, const Assignment& a, const LossConfig& config,
                       const DetachedTerms* frozen)
{
    const HeadShape& shape = params.shape;
    const int outs = shape.outputs();
    SceneSums sums;
    sums.grad.assign(params.values.size(), 0.0);
    for (int z = 0; z < scene.num_points(); ++z) {
        const bool pos = a.positive(z);
        const auto offset = static_cast<std::size_t>(z * outs);
        // Background points only supervise the class logits.
        const auto rows = static_cast<std::size_t>(pos ? outs : shape.num_classes);
        const std::span<const double> row(params.values.data() + offset, rows);
        DetachedPoint det;
        DecodedSides sides;
        if (pos) {
            sides = decode_sides(shape, row, true);
            det = resolve_detached(shape, row, sides.offsets, scene, a, z, config, frozen);
            ++sums.num_positive;
        }
        accumulate(sums, point_terms(shape, row, a, z, &sides, det, config,
                                     std::span<double>(sums.grad.data() + offset, rows)));
    }
    return sums;
}

// Hidden activations are shared by all points; background points only evaluate and
// backpropagate the class rows of the output layer.
SceneSums mlp_sums(const HeadParams& params, const Scene& scene, const Assignment& a, const LossConfig& config,
                   const DetachedTerms* frozen)
{
    const HeadShape& shape = params.shape;
    const int P = scene.num_points();
    const int C = shape.num_classes;
    const int H = shape.hidden;
    const int O = shape.outputs();
    const MlpView m = mlp_view(params);

    const RowMat hidden = mlp_hidden(m, scene);
    RowMat cls = hidden * m.w2.topRows(C).transpose();
    cls.rowwise() += m.b2.head(C);

    std::vector<int> positives;
    for (int z = 0; z < P; ++z) {
        if (a.positive(z)) {
            positives.push_back(z);
        }
    }
    const auto np = static_cast<Eigen::Index>(positives.size());
    RowMat hidden_pos(np, H);
    for (Eigen::Index i = 0; i < np; ++i) {
        hidden_pos.row(i) = hidden.row(positives[static_cast<std::size_t>(i)]);
    }
    RowMat out_pos = hidden_pos * m.w2.transpose();
    out_pos.rowwise() += m.b2;

    SceneSums sums;
    sums.num_positive = static_cast<int>(np);
    RowMat grad_cls = RowMat::Zero(P, C);
    RowMat grad_pos = RowMat::Zero(np, O);
    const DetachedPoint background;
    for (int z = 0; z < P; ++z) {
        if (!a.positive(z)) {
            accumulate(sums, point_terms(shape, std::span<const double>(&cls(z, 0), static_cast<std::size_t>(C)), a, z,
                                         nullptr, background, config, std::span<double>(&grad_cls(z, 0), static_cast<std::size_t>(C))));
        }
    }
    for (Eigen::Index i = 0; i < np; ++i) {
        const int z = positives[static_cast<std::size_t>(i)];
        const std::span<const double> row(&out_pos(i, 0), static_cast<std::size_t>(O));
        const DecodedSides sides = decode_sides(shape, row, true);
        const DetachedPoint det = resolve_detached(shape, row, sides.offsets, scene, a, z, config, frozen);
        accumulate(sums, point_terms(shape, row, a, z, &sides, det, config,
                                     std::span<double>(&grad_pos(i, 0), static_cast<std::size_t>(O))));
    }

    sums.grad.assign(params.values.size(), 0.0);
    double* g = sums.grad.data();
    RowMap gw1(g, H, shape.feature_dim);
    Eigen::Map<Eigen::RowVectorXd> gb1(g + params.b1_offset(), H);
    RowMap gw2(g + params.w2_offset(), O, H);
    Eigen::Map<Eigen::RowVectorXd> gb2(g + params.b2_offset(), O);

    gw2.noalias() = grad_pos.transpose() * hidden_pos;
    gw2.topRows(C).noalias() += grad_cls.transpose() * hidden;
    gb2 = grad_pos.colwise().sum();
    gb2.head(C) += grad_cls.colwise().sum();

    RowMat dhidden = grad_cls * m.w2.topRows(C);
    const RowMat dhidden_pos = grad_pos * m.w2;
    for (Eigen::Index i = 0; i < np; ++i) {
        dhidden.row(positives[static_cast<std::size_t>(i)]) += dhidden_pos.row(i);
    }
    const RowMat dpre = (dhidden.array() * (1.0 - hidden.array().square())).matrix();
    gw1.noalias() = dpre.transpose() * feature_matrix(scene);
    gb1 = dpre.colwise().sum();
    return sums;
}

}   // namespace

SceneSums scene_sums(const HeadParams& params, const Scene& scene, const Assignment& a, const LossConfig& config,
                     const DetachedTerms* frozen)
{
    check_scene(params.shape, scene, a);
    return params.shape.mode == HeadMode::Tabular ? tabular_sums(params, scene, a, config, frozen)
                                                  : mlp_sums(params, scene, a, config, frozen);
}

namespace {

LossResult normalise(double quality, double box, double dist, int num_positive, std::vector<double> grad,
                     const LossConfig& config)
{
    LossResult r;
    const double n = std::max(num_positive, 1);
    r.breakdown.quality = quality;
    r.breakdown.box = box;
    r.breakdown.dist = dist;
    r.breakdown.num_positive = num_positive;
    r.breakdown.lambda0 = config.lambda0;
    r.breakdown.lambda1 = config.lambda1;
    r.breakdown.total = quality / n + (config.lambda0 * box + config.lambda1 * dist) / n;
    for (double& g : grad) {
        g /= n;
    }
    r.grad = std::move(grad);
    return r;
}

void check_batch(std::span<const Scene* const> scenes, std::span<const Assignment* const> assignments)
{
    if (scenes.size() != assignments.size() || scenes.empty()) {
        throw ConfigError("batch: scenes and assignments must be non-empty and paired");
    }
}

LossResult reduce(std::span<SceneSums> parts, std::size_t param_count, const LossConfig& config)
{
    double quality = 0.0;
    double box = 0.0;
    double dist = 0.0;
    int num_positive = 0;
    std::vector<double> grad(param_count, 0.0);
    for (SceneSums& s : parts) {
        quality += s.quality;
        box += s.box;
        dist += s.dist;
        num_positive += s.num_positive;
        for (std::size_t i = 0; i < grad.size(); ++i) {
            grad[i] += s.grad[i];
        }
    }
    return normalise(quality, box, dist, num_positive, std::move(grad), config);
}

}   // namespace

LossResult total_loss(const HeadParams& params, const Scene& scene, const Assignment& assignment,
                      const LossConfig& config, const DetachedTerms* frozen)
{
    SceneSums s = scene_sums(params, scene, assignment, config, frozen);
    return normalise(s.quality, s.box, s.dist, s.num_positive, std::move(s.grad), config);
}

LossResult batch_loss_serial(const HeadParams& params, std::span<const Scene* const> scenes,
                             std::span<const Assignment* const> assignments, const LossConfig& config)
{
    check_batch(scenes, assignments);
    std::vector<SceneSums> parts;
    parts.reserve(scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        parts.push_back(scene_sums(params, *scenes[i], *assignments[i], config));
    }
    return reduce(parts, params.values.size(), config);
}

LossResult batch_loss_parallel(const HeadParams& params, std::span<const Scene* const> scenes,
                               std::span<const Assignment* const> assignments, const LossConfig& config)
{
    check_batch(scenes, assignments);
    std::vector<SceneSums> parts(scenes.size());
    const auto count = static_cast<std::ptrdiff_t>(scenes.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        const auto k = static_cast<std::size_t>(i);
        parts[k] = scene_sums(params, *scenes[k], *assignments[k], config);
    }
    return reduce(parts, params.values.size(), config);
}

// ---------------------------------------------------------------------------

double TrainConfig::effective_lr() const
{
    if (lr) {
        return *lr;
    }
    return mode == HeadMode::Tabular ? 0.05 : 0.01;
}

HeadShape head_shape(const TrainConfig& config, const Scene& scene, int num_classes)
{
    HeadShape s;
    s.mode = config.mode;
    s.variant = config.variant;
    s.regressor = config.regressor;
    s.support = config.support;
    s.num_classes = num_classes;
    s.feature_dim = scene.feature_dim;
    s.hidden = config.hidden;
    s.num_points = scene.num_points();
    return s;
}

TrainResult train(std::span<const Scene> dataset, int num_classes, const TrainConfig& config, std::uint64_t seed)
{
    if (dataset.empty()) {
        throw ConfigError("train: empty dataset");
    }
    HeadParams params = init_params(head_shape(config, dataset.front(), num_classes), seed);
    return train_from(std::move(params), dataset, config, seed);
}

TrainResult train_from(HeadParams params, std::span<const Scene> dataset, const TrainConfig& config,
                       std::uint64_t seed)
{
    if (dataset.empty()) {
        throw ConfigError("train: empty dataset");
    }
    if (config.iterations < 0 || config.batch < 1) {
        throw ConfigError("train: iterations must be >= 0 and batch >= 1");
    }
    const double lr = config.effective_lr();

    std::vector<Assignment> assignments;
    assignments.reserve(dataset.size());
    for (const Scene& s : dataset) {
        assignments.push_back(assign(s));
    }

    Rng batch_rng(child_seed(seed, "batch"));
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), batch_rng);
    std::size_t cursor = 0;

    const std::size_t batch = std::min(static_cast<std::size_t>(config.batch), dataset.size());
    std::vector<const Scene*> scene_ptrs(batch);
    std::vector<const Assignment*> assign_ptrs(batch);
    std::vector<double> velocity(params.values.size(), 0.0);

    TrainResult result;
    result.loss_curve.reserve(static_cast<std::size_t>(config.iterations));
    for (int it = 0; it < config.iterations; ++it) {
        for (std::size_t b = 0; b < batch; ++b) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), batch_rng);
                cursor = 0;
            }
            const std::size_t k = order[cursor++];
            scene_ptrs[b] = &dataset[k];
            assign_ptrs[b] = &assignments[k];
        }
        const LossResult loss = config.parallel
                                    ? batch_loss_parallel(params, scene_ptrs, assign_ptrs, config.loss)
                                    : batch_loss_serial(params, scene_ptrs, assign_ptrs, config.loss);
        const bool finite_grad = std::all_of(loss.grad.begin(), loss.grad.end(), [](double g) { return std::isfinite(g); });
        if (!std::isfinite(loss.breakdown.total) || !finite_grad) {
            std::ostringstream msg;
            msg << "training diverged at iteration " << it << ": loss " << loss.breakdown.total
                << " (L_Q " << loss.breakdown.quality << ", L_B " << loss.breakdown.box << ", L_D "
                << loss.breakdown.dist << "), lr " << lr;
            throw TrainingDiverged(msg.str());
        }
        result.loss_curve.push_back(loss.breakdown.total);
        for (std::size_t i = 0; i < params.values.size(); ++i) {
            velocity[i] = config.momentum * velocity[i] + loss.grad[i];
            params.values[i] -= lr * velocity[i];
        }
    }
    result.params = std::move(params);
    return result;
}

// ---------------------------------------------------------------------------

std::string save_checkpoint(const HeadParams& params)
{
    const HeadShape& s = params.shape;
    nlohmann::json weights = nlohmann::json::object();
    nlohmann::json layout = nlohmann::json::array();
    auto slice = [&](std::size_t from, std::size_t to) {
        return std::vector<double>(params.values.begin() + static_cast<std::ptrdiff_t>(from),
                                   params.values.begin() + static_cast<std::ptrdiff_t>(to));
    };
    if (s.mode == HeadMode::Tabular) {
        layout.push_back({{"name", "table"}, {"shape", {s.num_points, s.outputs()}}});
        weights["table"] = params.values;
    } else {
        layout.push_back({{"name", "w1"}, {"shape", {s.hidden, s.feature_dim}}});
        layout.push_back({{"name", "b1"}, {"shape", {s.hidden}}});
        layout.push_back({{"name", "w2"}, {"shape", {s.outputs(), s.hidden}}});
        layout.push_back({{"name", "b2"}, {"shape", {s.outputs()}}});
        weights["w1"] = slice(0, params.b1_offset());
        weights["b1"] = slice(params.b1_offset(), params.w2_offset());
        weights["w2"] = slice(params.w2_offset(), params.b2_offset());
        weights["b2"] = slice(params.b2_offset(), params.values.size());
    }
    const nlohmann::json doc{{"format", "gfl-lab-checkpoint"},
                             {"version", kCheckpointVersion},
                             {"shape", s},
                             {"layout", layout},
                             {"weights", weights}};
    return doc.dump(1);
}

HeadParams load_checkpoint(const std::string& text)
{
    const auto doc = nlohmann::json::parse(text);
    if (doc.value("format", "") != "gfl-lab-checkpoint" || doc.value("version", 0) != kCheckpointVersion) {
        throw ConfigError("checkpoint: unsupported format or version");
    }
    HeadParams p;
    p.shape = doc.at("shape").get<HeadShape>();
    p.shape.validate();
    const auto& w = doc.at("weights");
    if (p.shape.mode == HeadMode::Tabular) {
        p.values = w.at("table").get<std::vector<double>>();
    } else {
        for (const char* name : {"w1", "b1", "w2", "b2"}) {
            const auto part = w.at(name).get<std::vector<double>>();
            p.values.insert(p.values.end(), part.begin(), part.end());
        }
    }
    if (p.values.size() != p.shape.param_count()) {
        throw ConfigError("checkpoint: weight count does not match the shape");
    }
    return p;
}

}   // namespace gfl
