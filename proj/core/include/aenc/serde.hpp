#pragma once

#include "aenc/dataset.hpp"
#include "aenc/encoder.hpp"
#include "aenc/trainer.hpp"

#include <json.hpp>

namespace aenc {

using json_t = nlohmann::json;

json_t split_to_json(const SplitSpec& split);
SplitSpec split_from_json(const json_t& j);

json_t encoder_config_to_json(const EncoderConfig& config);
// Full form, with backbone dims present.
EncoderConfig encoder_config_from_json(const json_t& j);
// User-config form: backbones may be a list of labels (dims resolved from
// the dataset) or omitted entirely (all dataset backbones).
EncoderConfig resolve_encoder_config(const json_t& j, const Dataset& ds);

json_t train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const json_t& j);

json_t norm_stats_meta_to_json(const NormStats& norm);

// Resolve a list of backbone labels against the dataset (empty = all).
std::vector<BackboneInfo> resolve_backbones(const std::vector<std::string>& labels,
                                            const Dataset& ds);

}  // namespace aenc
