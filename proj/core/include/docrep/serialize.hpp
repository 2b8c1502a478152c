#pragma once

#include <nlohmann/json.hpp>

#include "docrep/config.hpp"

namespace docrep {

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);
void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TaskSchedule& c);
void from_json(const nlohmann::json& j, TaskSchedule& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const FinetuneConfig& c);
void from_json(const nlohmann::json& j, FinetuneConfig& c);

/// Name of the first field whose value differs between the two configs, or
/// an empty string when they agree. Dotted paths for nested fields.
std::string first_config_difference(const nlohmann::json& a, const nlohmann::json& b, const std::string& prefix = "");

}  // namespace docrep
