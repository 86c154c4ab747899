#pragma once

// JSON mappings for configuration and shape types. Readers accept partial objects (missing
// keys keep their defaults) and reject unknown keys.

#include <initializer_list>
#include <string_view>

#include <json.hpp>

#include "gfl/detector.hpp"
#include "gfl/distrib.hpp"
#include "gfl/inference.hpp"
#include "gfl/synth.hpp"

namespace gfl {

/// Throws ConfigError naming the first key of `j` not in `allowed`.
void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, std::string_view where);

void to_json(nlohmann::json& j, const Support& s);
void from_json(const nlohmann::json& j, Support& s);

void to_json(nlohmann::json& j, const SceneSpec& s);
void from_json(const nlohmann::json& j, SceneSpec& s);

void to_json(nlohmann::json& j, const NmsConfig& c);
void from_json(const nlohmann::json& j, NmsConfig& c);

void to_json(nlohmann::json& j, const HeadShape& s);
void from_json(const nlohmann::json& j, HeadShape& s);

/// Flat object: loss weights, optimiser settings, head mode and support.
/// Variant and regressor live at the experiment level.
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

void to_json(nlohmann::json& j, const DisturbanceConfig& c);
void from_json(const nlohmann::json& j, DisturbanceConfig& c);

}   // namespace gfl
