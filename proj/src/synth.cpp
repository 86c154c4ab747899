#include "gfl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <random>

#include "gfl/common.hpp"
#include "gfl/serialization.hpp"

namespace gfl {

int SceneSpec::grid_width() const
{
    return static_cast<int>(std::lround(width / stride));
}

int SceneSpec::grid_height() const
{
    return static_cast<int>(std::lround(height / stride));
}

void SceneSpec::validate() const
{
    if (!(stride > 0.0) || !(width > 0.0) || !(height > 0.0)) {
        throw ConfigError("scene: width, height and stride must be > 0");
    }
    const auto divisible = [&](double extent) {
        const double cells = extent / stride;
        return std::abs(cells - std::round(cells)) < 1e-9;
    };
    if (!divisible(width) || !divisible(height)) {
        throw ConfigError("scene: width and height must be divisible by stride");
    }
    if (num_classes < 1) {
        throw ConfigError("scene: num_classes must be >= 1");
    }
    if (min_boxes < 0 || max_boxes < min_boxes) {
        throw ConfigError("scene: invalid boxes-per-scene range");
    }
    if (!(min_size > 0.0) || max_size < min_size) {
        throw ConfigError("scene: invalid box size range");
    }
    if (margin < 0.0 || max_size + 2.0 * margin > std::min(width, height)) {
        throw ConfigError("scene: boxes of max_size do not fit inside the scene");
    }
    if (ambiguity_sigma < 0.0 || feature_noise < 0.0 || !(distance_clip > 0.0)) {
        throw ConfigError("scene: noise levels must be >= 0 and distance_clip > 0");
    }
}

GridPoint Scene::point(int index) const
{
    const int col = index % grid_width;
    const int row = index / grid_width;
    return {(col + 0.5) * stride, (row + 0.5) * stride, stride, index};
}

std::span<const double> Scene::feature(int index) const
{
    return std::span(features).subspan(static_cast<std::size_t>(index * feature_dim),
                                       static_cast<std::size_t>(feature_dim));
}

namespace {

double box_distance(const Box& b, double x, double y)
{
    const double dx = std::max({b.x1 - x, 0.0, x - b.x2});
    const double dy = std::max({b.y1 - y, 0.0, y - b.y2});
    return std::hypot(dx, dy);
}

// Smallest-area object containing the point, else the closest one; -1 if none.
int nearest_object(const std::vector<GtBox>& objects, double x, double y)
{
    int best = -1;
    double best_area = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < objects.size(); ++k) {
        const Box& b = objects[k].box;
        if (b.contains(x, y) && b.area() < best_area) {
            best = static_cast<int>(k);
            best_area = b.area();
        }
    }
    if (best >= 0) {
        return best;
    }
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < objects.size(); ++k) {
        const double d = box_distance(objects[k].box, x, y);
        if (d < best_dist) {
            best = static_cast<int>(k);
            best_dist = d;
        }
    }
    return best;
}

}   // namespace

Scene generate_scene(const SceneSpec& spec, int index)
{
    Rng rng(child_seed(spec.seed, static_cast<std::uint64_t>(index)));
    std::uniform_int_distribution<int> box_count(spec.min_boxes, spec.max_boxes);
    std::uniform_int_distribution<int> class_dist(1, spec.num_classes);
    std::uniform_real_distribution<double> size_dist(spec.min_size, spec.max_size);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    Scene scene;
    scene.id = index;
    scene.grid_width = spec.grid_width();
    scene.grid_height = spec.grid_height();
    scene.stride = spec.stride;
    scene.feature_dim = spec.feature_dim();

    const int count = box_count(rng);
    for (int k = 0; k < count; ++k) {
        const double w = size_dist(rng);
        const double h = size_dist(rng);
        const double x1 = spec.margin + unit(rng) * (spec.width - 2.0 * spec.margin - w);
        const double y1 = spec.margin + unit(rng) * (spec.height - 2.0 * spec.margin - h);
        const int cls = class_dist(rng);
        const GtBox object{{x1, y1, x1 + w, y1 + h}, cls};

        GtBox recorded = object;
        if (spec.ambiguity_sigma > 0.0) {
            recorded.box.x1 += spec.ambiguity_sigma * normal(rng);
            recorded.box.y1 += spec.ambiguity_sigma * normal(rng);
            recorded.box.x2 += spec.ambiguity_sigma * normal(rng);
            recorded.box.y2 += spec.ambiguity_sigma * normal(rng);
            recorded.box.x1 = std::clamp(recorded.box.x1, 0.0, spec.width);
            recorded.box.x2 = std::clamp(recorded.box.x2, 0.0, spec.width);
            recorded.box.y1 = std::clamp(recorded.box.y1, 0.0, spec.height);
            recorded.box.y2 = std::clamp(recorded.box.y2, 0.0, spec.height);
            if (recorded.box.x2 < recorded.box.x1) std::swap(recorded.box.x1, recorded.box.x2);
            if (recorded.box.y2 < recorded.box.y1) std::swap(recorded.box.y1, recorded.box.y2);
        }
        scene.objects.push_back(object);
        scene.gt.push_back(recorded);
    }

    const int dim = scene.feature_dim;
    const int classes = spec.num_classes;
    const double inv_stride = 1.0 / spec.stride;
    const double clip = spec.distance_clip;
    scene.features.assign(static_cast<std::size_t>(scene.num_points() * dim), 0.0);
    for (int p = 0; p < scene.num_points(); ++p) {
        const GridPoint gp = scene.point(p);
        double* f = scene.features.data() + static_cast<std::ptrdiff_t>(p) * dim;
        const int k = nearest_object(scene.objects, gp.x, gp.y);
        if (k >= 0) {
            const GtBox& o = scene.objects[static_cast<std::size_t>(k)];
            f[0] = std::clamp((gp.x - o.box.x1) * inv_stride, -clip, clip);
            f[1] = std::clamp((gp.y - o.box.y1) * inv_stride, -clip, clip);
            f[2] = std::clamp((o.box.x2 - gp.x) * inv_stride, -clip, clip);
            f[3] = std::clamp((o.box.y2 - gp.y) * inv_stride, -clip, clip);
            f[4 + o.class_id - 1] = 1.0;
            f[4 + classes] = o.box.contains(gp.x, gp.y) ? 1.0 : 0.0;
        }
        for (int j = 0; j < 4; ++j) {
            f[4 + classes + 1 + j] = normal(rng);
        }
        if (spec.feature_noise > 0.0) {
            for (int j = 0; j < dim; ++j) {
                f[j] += spec.feature_noise * normal(rng);
            }
        }
    }
    return scene;
}

std::vector<Scene> generate(const SceneSpec& spec, int count)
{
    spec.validate();
    if (count < 1) {
        throw ConfigError("generate: count must be >= 1");
    }
    std::vector<Scene> scenes(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < count; ++i) {
        scenes[static_cast<std::size_t>(i)] = generate_scene(spec, i);
    }
    return scenes;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json boxes_to_json(const std::vector<GtBox>& boxes)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& g : boxes) {
        arr.push_back({{"box", {g.box.x1, g.box.y1, g.box.x2, g.box.y2}}, {"class", g.class_id}});
    }
    return arr;
}

std::vector<GtBox> boxes_from_json(const nlohmann::json& arr)
{
    std::vector<GtBox> out;
    for (const auto& e : arr) {
        const auto& b = e.at("box");
        out.push_back({{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()},
                       e.at("class").get<int>()});
    }
    return out;
}

}   // namespace

void write_dataset(std::ostream& os, const SceneSpec& spec, std::span<const Scene> scenes)
{
    const nlohmann::json header{{"format", "gfl-lab-dataset"},
                                {"version", kDatasetFormatVersion},
                                {"spec", spec},
                                {"count", scenes.size()}};
    os << header.dump() << '\n';
    for (const Scene& s : scenes) {
        const nlohmann::json line{{"scene_id", s.id},
                                  {"grid", {s.grid_width, s.grid_height}},
                                  {"stride", s.stride},
                                  {"feature_dim", s.feature_dim},
                                  {"gt", boxes_to_json(s.gt)},
                                  {"objects", boxes_to_json(s.objects)},
                                  {"features", s.features}};
        os << line.dump() << '\n';
    }
}

std::vector<Scene> read_dataset(std::istream& is, SceneSpec* spec)
{
    std::string line;
    if (!std::getline(is, line)) {
        throw ConfigError("dataset: missing header line");
    }
    const auto header = nlohmann::json::parse(line);
    if (header.value("format", "") != "gfl-lab-dataset" || header.value("version", 0) != kDatasetFormatVersion) {
        throw ConfigError("dataset: unsupported format or version");
    }
    if (spec) {
        *spec = header.at("spec").get<SceneSpec>();
    }
    std::vector<Scene> scenes;
    while (std::getline(is, line)) {
        if (line.empty()) {
            continue;
        }
        const auto j = nlohmann::json::parse(line);
        Scene s;
        s.id = j.at("scene_id").get<int>();
        s.grid_width = j.at("grid").at(0).get<int>();
        s.grid_height = j.at("grid").at(1).get<int>();
        s.stride = j.at("stride").get<double>();
        s.feature_dim = j.at("feature_dim").get<int>();
        s.gt = boxes_from_json(j.at("gt"));
        s.objects = boxes_from_json(j.at("objects"));
        s.features = j.at("features").get<std::vector<double>>();
        if (s.features.size() != static_cast<std::size_t>(s.num_points() * s.feature_dim)) {
            throw ConfigError("dataset: feature grid size mismatch");
        }
        scenes.push_back(std::move(s));
    }
    if (scenes.size() != header.at("count").get<std::size_t>()) {
        throw ConfigError("dataset: scene count does not match header");
    }
    return scenes;
}

}   // namespace gfl
