#pragma once

#include <string>

#include <json.hpp>

#include "staticquant/pipeline.hpp"

namespace sq {

inline constexpr const char* kToolVersion = "0.1.0";

/// Everything needed to rebuild the calibrated model deterministically:
/// model/bit configuration, root seed, per-site quantizer parameters,
/// rotation state and the precision plan, plus recorded metrics.
nlohmann::json manifest_to_json(const Model& model, const PrecisionPlan& plan,
                                const EvalReport& eval, std::size_t calib_sequences,
                                std::size_t eval_sequences, const std::string& data_path);

void save_manifest(const std::string& path, const nlohmann::json& manifest);
nlohmann::json load_manifest(const std::string& path);

/// Rebuilds the model recorded in the manifest (weights from the stored
/// seed, rotations from the stored parameters, quantizer params applied).
Model model_from_manifest(const nlohmann::json& manifest);

/// Checks that a manifest matches an independently built model's
/// configuration and site layout; throws ConfigError on mismatch.
void check_manifest_matches(const nlohmann::json& manifest, const Model& model);

/// Applies the manifest's rotation state and site parameters onto a model
/// built with the same configuration.
void apply_manifest(Model& model, const nlohmann::json& manifest);

// Model-config JSON (the CLI --model-config document).
ToyTransformerConfig config_from_json(const nlohmann::json& j);
QuantBits bits_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ToyTransformerConfig& config, const QuantBits& bits);

std::string fnv1a_hex(const float* data, std::size_t count);

}  // namespace sq
