// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hbgl/data.hpp"
#include "hbgl/encoder.hpp"
#include "hbgl/global_embed.hpp"
#include "hbgl/local_encoder.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <string_view>

namespace hbgl {

using Json = nlohmann::ordered_json;

/// Everything a pipeline run needs. Module seeds are derived from `seed`;
/// `data.seed` names the dataset and is kept separate.
struct RunConfig {
    EncoderConfig encoder;
    MlmConfig mlm;
    GlobalTrainConfig global;
    LabelInit label_init = LabelInit::kLabelName;
    double recovery_ratio = 0.15;
    LocalTrainConfig local;
    EmptyLevel empty_level = EmptyLevel::kSep;
    double threshold = 0.5;
    SyntheticSpec data;
    std::uint64_t seed = 0;

    /// Pushes `seed` into the per-module seeds.
    void resolve_seeds();
    void validate() const;
};

Json to_json(const RunConfig& cfg);
/// Strict parse: unknown keys and mistyped values raise ConfigError.
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::string& path);

/// Applies "section.key=value" to a config document. The value is parsed as
/// JSON when possible, else taken as a string.
void apply_override(Json& doc, std::string_view assignment);

/// Named starting points: "default", "desk", "tiny".
RunConfig preset(std::string_view name);

/// Reads HBGL_SEED if set. Malformed values raise ConfigError.
std::optional<std::uint64_t> seed_from_env();

Json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const Json& j);

/// Library version plus git describe output captured at build time.
std::string version_string();

}  // namespace hbgl
