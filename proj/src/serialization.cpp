#include "gfl/serialization.hpp"

#include <algorithm>
#include <string>

#include "gfl/common.hpp"

namespace gfl {

void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, std::string_view where)
{
    if (!j.is_object()) {
        throw ConfigError(std::string(where) + ": expected an object");
    }
    for (const auto& item : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
            throw ConfigError("unknown key '" + item.key() + "' in " + std::string(where));
        }
    }
}

namespace {

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out)
{
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
        }
    }
}

}   // namespace

void to_json(nlohmann::json& j, const Support& s)
{
    j = {{"y0", s.y0}, {"n", s.n}, {"delta", s.delta}};
}

void from_json(const nlohmann::json& j, Support& s)
{
    check_keys(j, {"y0", "n", "delta"}, "support");
    read(j, "y0", s.y0);
    read(j, "n", s.n);
    read(j, "delta", s.delta);
}

void to_json(nlohmann::json& j, const SceneSpec& s)
{
    j = {{"width", s.width},
         {"height", s.height},
         {"stride", s.stride},
         {"num_classes", s.num_classes},
         {"min_boxes", s.min_boxes},
         {"max_boxes", s.max_boxes},
         {"min_size", s.min_size},
         {"max_size", s.max_size},
         {"margin", s.margin},
         {"ambiguity_sigma", s.ambiguity_sigma},
         {"feature_noise", s.feature_noise},
         {"distance_clip", s.distance_clip},
         {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SceneSpec& s)
{
    check_keys(j,
               {"width", "height", "stride", "num_classes", "min_boxes", "max_boxes", "min_size", "max_size",
                "margin", "ambiguity_sigma", "feature_noise", "distance_clip", "seed"},
               "scene");
    read(j, "width", s.width);
    read(j, "height", s.height);
    read(j, "stride", s.stride);
    read(j, "num_classes", s.num_classes);
    read(j, "min_boxes", s.min_boxes);
    read(j, "max_boxes", s.max_boxes);
    read(j, "min_size", s.min_size);
    read(j, "max_size", s.max_size);
    read(j, "margin", s.margin);
    read(j, "ambiguity_sigma", s.ambiguity_sigma);
    read(j, "feature_noise", s.feature_noise);
    read(j, "distance_clip", s.distance_clip);
    read(j, "seed", s.seed);
}

void to_json(nlohmann::json& j, const NmsConfig& c)
{
    j = {{"score_threshold", c.score_threshold},
         {"pre_topk", c.pre_topk},
         {"iou_threshold", c.iou_threshold},
         {"post_topk", c.post_topk}};
}

void from_json(const nlohmann::json& j, NmsConfig& c)
{
    check_keys(j, {"score_threshold", "pre_topk", "iou_threshold", "post_topk"}, "nms");
    read(j, "score_threshold", c.score_threshold);
    read(j, "pre_topk", c.pre_topk);
    read(j, "iou_threshold", c.iou_threshold);
    read(j, "post_topk", c.post_topk);
}

void to_json(nlohmann::json& j, const HeadShape& s)
{
    j = {{"mode", to_string(s.mode)},
         {"variant", to_string(s.variant)},
         {"regressor", to_string(s.regressor)},
         {"support", s.support},
         {"num_classes", s.num_classes},
         {"feature_dim", s.feature_dim},
         {"hidden", s.hidden},
         {"num_points", s.num_points}};
}

void from_json(const nlohmann::json& j, HeadShape& s)
{
    check_keys(j, {"mode", "variant", "regressor", "support", "num_classes", "feature_dim", "hidden", "num_points"},
               "shape");
    s.mode = mode_from_string(j.at("mode").get<std::string>());
    s.variant = variant_from_string(j.at("variant").get<std::string>());
    s.regressor = regressor_from_string(j.at("regressor").get<std::string>());
    read(j, "support", s.support);
    read(j, "num_classes", s.num_classes);
    read(j, "feature_dim", s.feature_dim);
    read(j, "hidden", s.hidden);
    read(j, "num_points", s.num_points);
}

void to_json(nlohmann::json& j, const TrainConfig& c)
{
    j = {{"lambda0", c.loss.lambda0},
         {"lambda1", c.loss.lambda1},
         {"beta", c.loss.beta},
         {"gamma", c.loss.gamma},
         {"weight_floor", c.loss.weight_floor},
         {"mode", to_string(c.mode)},
         {"n", c.support.n},
         {"delta", c.support.delta},
         {"hidden", c.hidden},
         {"lr", c.lr ? nlohmann::json(*c.lr) : nlohmann::json(nullptr)},
         {"momentum", c.momentum},
         {"iterations", c.iterations},
         {"batch", c.batch},
         {"parallel", c.parallel}};
}

void from_json(const nlohmann::json& j, TrainConfig& c)
{
    check_keys(j,
               {"lambda0", "lambda1", "beta", "gamma", "weight_floor", "mode", "n", "delta", "hidden", "lr",
                "momentum", "iterations", "batch", "parallel"},
               "train");
    read(j, "lambda0", c.loss.lambda0);
    read(j, "lambda1", c.loss.lambda1);
    read(j, "beta", c.loss.beta);
    read(j, "gamma", c.loss.gamma);
    read(j, "weight_floor", c.loss.weight_floor);
    if (j.contains("mode")) {
        c.mode = mode_from_string(j.at("mode").get<std::string>());
    }
    read(j, "n", c.support.n);
    read(j, "delta", c.support.delta);
    read(j, "hidden", c.hidden);
    if (j.contains("lr")) {
        if (j.at("lr").is_null()) {
            c.lr.reset();
        } else {
            double lr = 0.0;
            read(j, "lr", lr);
            c.lr = lr;
        }
    }
    read(j, "momentum", c.momentum);
    read(j, "iterations", c.iterations);
    read(j, "batch", c.batch);
    read(j, "parallel", c.parallel);
}

void to_json(nlohmann::json& j, const DisturbanceConfig& c)
{
    j = {{"targets", c.targets},
         {"perturb_norm", c.perturb_norm},
         {"trials", c.trials},
         {"feature_dim", c.feature_dim},
         {"support", c.support},
         {"dirac_lr", c.dirac_lr},
         {"general_lr", c.general_lr},
         {"max_iterations", c.max_iterations},
         {"tolerance", c.tolerance}};
}

void from_json(const nlohmann::json& j, DisturbanceConfig& c)
{
    check_keys(j,
               {"targets", "perturb_norm", "trials", "feature_dim", "support", "dirac_lr", "general_lr",
                "max_iterations", "tolerance"},
               "disturb");
    read(j, "targets", c.targets);
    read(j, "perturb_norm", c.perturb_norm);
    read(j, "trials", c.trials);
    read(j, "feature_dim", c.feature_dim);
    read(j, "support", c.support);
    read(j, "dirac_lr", c.dirac_lr);
    read(j, "general_lr", c.general_lr);
    read(j, "max_iterations", c.max_iterations);
    read(j, "tolerance", c.tolerance);
}

}   // namespace gfl
