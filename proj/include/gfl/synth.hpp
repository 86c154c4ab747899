#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gfl/geometry.hpp"

namespace gfl {

/// Parameters of the synthetic dense-detection benchmark. Sizes are in scene units.
struct SceneSpec {
    double width = 128.0;
    double height = 128.0;
    double stride = 8.0;
    int num_classes = 3;
    int min_boxes = 1;
    int max_boxes = 4;
    double min_size = 16.0;
    double max_size = 64.0;
    /// Rendered objects keep this distance from the scene border.
    double margin = 8.0;
    /// Std of the Gaussian jitter applied to each recorded ground-truth edge.
    double ambiguity_sigma = 1.0;
    double feature_noise = 0.05;
    /// Edge-distance features are clipped to +-this many strides.
    double distance_clip = 16.0;
    std::uint64_t seed = 0;

    int grid_width() const;
    int grid_height() const;
    int num_points() const { return grid_width() * grid_height(); }
    /// 4 edge distances + class one-hot + inside flag + 4 noise channels.
    int feature_dim() const { return 4 + num_classes + 1 + 4; }

    void validate() const;

    friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct GtBox {
    Box box;
    int class_id = 1;   // 1..num_classes; 0 is background
};

struct Scene {
    int id = 0;
    int grid_width = 0;
    int grid_height = 0;
    double stride = 1.0;
    int feature_dim = 0;
    /// Recorded (possibly jittered) annotations; the training labels.
    std::vector<GtBox> gt;
    /// The objects the features were rendered from.
    std::vector<GtBox> objects;
    /// Row-major [point][feature].
    std::vector<double> features;

    int num_points() const { return grid_width * grid_height; }
    GridPoint point(int index) const;
    std::span<const double> feature(int index) const;
};

/// Deterministic in (spec, count): scene i is generated from child_seed(spec.seed, i).
std::vector<Scene> generate(const SceneSpec& spec, int count);

/// Scene i of generate(spec, ...).
Scene generate_scene(const SceneSpec& spec, int index);

// JSON Lines persistence: a header line followed by one scene per line.
inline constexpr int kDatasetFormatVersion = 1;

void write_dataset(std::ostream& os, const SceneSpec& spec, std::span<const Scene> scenes);
std::vector<Scene> read_dataset(std::istream& is, SceneSpec* spec = nullptr);

}   // namespace gfl
