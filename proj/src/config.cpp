#include "gfl/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "gfl/common.hpp"
#include "gfl/serialization.hpp"

namespace gfl {

TrainConfig ExperimentConfig::train_config() const
{
    TrainConfig t = train;
    t.variant = variant;
    t.regressor = regressor;
    return t;
}

SceneSpec ExperimentConfig::scene_spec() const
{
    SceneSpec s = scene;
    s.seed = child_seed(seed, "dataset");
    return s;
}

void ExperimentConfig::validate() const
{
    scene_spec().validate();
    train.support.validate();
    nms.validate();
    if (data.train_scenes < 1 || data.eval_scenes < 1) {
        throw ConfigError("data: train_scenes and eval_scenes must be >= 1");
    }
    if (train.iterations < 0 || train.batch < 1 || train.hidden < 1) {
        throw ConfigError("train: iterations >= 0, batch >= 1 and hidden >= 1 required");
    }
    if (train.lr && !(*train.lr >= 0.0 && std::isfinite(*train.lr))) {
        throw ConfigError("train: lr must be finite and >= 0");
    }
    if (!(train.momentum >= 0.0 && train.momentum < 1.0)) {
        throw ConfigError("train: momentum must lie in [0, 1)");
    }
    if (train.loss.beta < 0.0 || train.loss.gamma < 0.0) {
        throw ConfigError("train: beta and gamma must be >= 0");
    }
    if (gradcheck.samples < 1 || !(gradcheck.step > 0.0)) {
        throw ConfigError("gradcheck: samples >= 1 and step > 0 required");
    }
    if (minima.qfl_targets < 1 || minima.dfl_targets < 1 || minima.gfl_cases < 1 || minima.gfl_candidates < 1 ||
        minima.specialization_samples < 1) {
        throw ConfigError("minima: all counts must be >= 1");
    }
    if (disturb.trials < 1 || disturb.perturb_norm < 0.0 || disturb.targets.empty()) {
        throw ConfigError("disturb: trials >= 1, perturb_norm >= 0 and at least one target required");
    }
    if (sweep.mode != "axes" && sweep.mode != "grid") {
        throw ConfigError("sweep.mode must be 'axes' or 'grid'");
    }
    if (eval.dump_points < 0 || eval.histogram_bins < 1) {
        throw ConfigError("eval: dump_points >= 0 and histogram_bins >= 1 required");
    }
}

void to_json(nlohmann::json& j, const ExperimentConfig& c)
{
    nlohmann::json scene = c.scene;
    scene.erase("seed");
    j = {{"run_name", c.run_name},
         {"seed", c.seed},
         {"output_dir", c.output_dir},
         {"variant", to_string(c.variant)},
         {"regressor", to_string(c.regressor)},
         {"scene", scene},
         {"data",
          {{"train_scenes", c.data.train_scenes},
           {"eval_scenes", c.data.eval_scenes},
           {"write_dataset", c.data.write_dataset}}},
         {"train", c.train},
         {"nms", c.nms},
         {"disturb", c.disturb},
         {"gradcheck",
          {{"samples", c.gradcheck.samples}, {"step", c.gradcheck.step}, {"inject_fault", c.gradcheck.inject_fault}}},
         {"minima",
          {{"qfl_targets", c.minima.qfl_targets},
           {"dfl_targets", c.minima.dfl_targets},
           {"gfl_cases", c.minima.gfl_cases},
           {"gfl_candidates", c.minima.gfl_candidates},
           {"specialization_samples", c.minima.specialization_samples}}},
         {"sweep",
          {{"betas", c.sweep.betas}, {"ns", c.sweep.ns}, {"deltas", c.sweep.deltas}, {"mode", c.sweep.mode}}},
         {"eval",
          {{"checkpoint", c.eval.checkpoint},
           {"dump_points", c.eval.dump_points},
           {"histogram_bins", c.eval.histogram_bins}}}};
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

void from_json(const nlohmann::json& j, ExperimentConfig& c)
{
    check_keys(j,
               {"run_name", "seed", "output_dir", "variant", "regressor", "scene", "data", "train", "nms", "disturb",
                "gradcheck", "minima", "sweep", "eval"},
               "config");
    read(j, "run_name", c.run_name);
    read(j, "seed", c.seed);
    read(j, "output_dir", c.output_dir);
    if (j.contains("variant")) {
        c.variant = variant_from_string(j.at("variant").get<std::string>());
    }
    if (j.contains("regressor")) {
        c.regressor = regressor_from_string(j.at("regressor").get<std::string>());
    }
    if (j.contains("scene")) {
        if (j.at("scene").contains("seed")) {
            throw ConfigError("scene.seed is derived from the root seed and cannot be set");
        }
        const std::uint64_t keep = c.scene.seed;
        from_json(j.at("scene"), c.scene);
        c.scene.seed = keep;
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, {"train_scenes", "eval_scenes", "write_dataset"}, "data");
        read(d, "train_scenes", c.data.train_scenes);
        read(d, "eval_scenes", c.data.eval_scenes);
        read(d, "write_dataset", c.data.write_dataset);
    }
    if (j.contains("train")) {
        from_json(j.at("train"), c.train);
    }
    if (j.contains("nms")) {
        from_json(j.at("nms"), c.nms);
    }
    if (j.contains("disturb")) {
        from_json(j.at("disturb"), c.disturb);
    }
    if (j.contains("gradcheck")) {
        const auto& g = j.at("gradcheck");
        check_keys(g, {"samples", "step", "inject_fault"}, "gradcheck");
        read(g, "samples", c.gradcheck.samples);
        read(g, "step", c.gradcheck.step);
        read(g, "inject_fault", c.gradcheck.inject_fault);
    }
    if (j.contains("minima")) {
        const auto& m = j.at("minima");
        check_keys(m, {"qfl_targets", "dfl_targets", "gfl_cases", "gfl_candidates", "specialization_samples"},
                   "minima");
        read(m, "qfl_targets", c.minima.qfl_targets);
        read(m, "dfl_targets", c.minima.dfl_targets);
        read(m, "gfl_cases", c.minima.gfl_cases);
        read(m, "gfl_candidates", c.minima.gfl_candidates);
        read(m, "specialization_samples", c.minima.specialization_samples);
    }
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        check_keys(s, {"betas", "ns", "deltas", "mode"}, "sweep");
        read(s, "betas", c.sweep.betas);
        read(s, "ns", c.sweep.ns);
        read(s, "deltas", c.sweep.deltas);
        read(s, "mode", c.sweep.mode);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        check_keys(e, {"checkpoint", "dump_points", "histogram_bins"}, "eval");
        read(e, "checkpoint", c.eval.checkpoint);
        read(e, "dump_points", c.eval.dump_points);
        read(e, "histogram_bins", c.eval.histogram_bins);
    }
}

void apply_override(nlohmann::json& doc, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);

    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) {
        value = text;
    }

    nlohmann::json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) {
            throw ConfigError("override key '" + key + "' has an empty component");
        }
        if (!node->is_object()) {
            if (!node->is_null()) {
                throw ConfigError("override key '" + key + "' descends into a non-object");
            }
            *node = nlohmann::json::object();
        }
        if (dot == std::string::npos) {
            (*node)[part] = std::move(value);
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides)
{
    nlohmann::json doc = nlohmann::json::object();
    if (!text.empty()) {
        try {
            doc = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(std::string("config is not valid JSON: ") + e.what());
        }
    }
    for (const std::string& o : overrides) {
        apply_override(doc, o);
    }
    ExperimentConfig c;
    from_json(doc, c);
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides)
{
    std::string text;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) {
            throw ConfigError("cannot read config file '" + path + "'");
        }
        std::ostringstream ss;
        ss << in.rdbuf();
        text = ss.str();
    }
    return parse_config(text, overrides);
}

std::string dump_config(const ExperimentConfig& c)
{
    return nlohmann::json(c).dump(2);
}

}   // namespace gfl
