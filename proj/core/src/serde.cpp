#include "aenc/serde.hpp"

namespace aenc {

namespace {

std::set<std::string> string_set(const json_t& j) {
  std::set<std::string> out;
  for (const auto& v : j) out.insert(v.get<std::string>());
  return out;
}

}  // namespace

json_t split_to_json(const SplitSpec& split) {
  return {{"train", split.train},
          {"validation", split.validation},
          {"test", split.test}};
}

SplitSpec split_from_json(const json_t& j) {
  SplitSpec split;
  try {
    split.train = string_set(j.at("train"));
    if (j.contains("validation")) split.validation = string_set(j.at("validation"));
    if (j.contains("test")) split.test = string_set(j.at("test"));
  } catch (const json_t::exception& e) {
    throw ValidationError(std::string("split config: ") + e.what());
  }
  split.validate();
  return split;
}

json_t encoder_config_to_json(const EncoderConfig& config) {
  json_t backbones = json_t::array();
  for (const auto& bb : config.backbones)
    backbones.push_back({{"label", bb.label}, {"dim", bb.dim}});
  return {{"backbones", std::move(backbones)},
          {"embed_dim", config.embed_dim},
          {"kernel_width", config.kernel_width},
          {"kernel_type", to_string(config.kernel_type)},
          {"head_mode", to_string(config.head_mode)},
          {"subjects", config.subjects},
          {"parcels", config.parcels}};
}

EncoderConfig encoder_config_from_json(const json_t& j) {
  EncoderConfig config;
  try {
    for (const auto& bb : j.at("backbones"))
      config.backbones.push_back(
          {bb.at("label").get<std::string>(), bb.at("dim").get<Index>()});
    config.embed_dim = j.at("embed_dim").get<Index>();
    config.kernel_width = j.at("kernel_width").get<Index>();
    config.kernel_type = kernel_type_from_string(j.at("kernel_type").get<std::string>());
    config.head_mode = head_mode_from_string(j.at("head_mode").get<std::string>());
    config.subjects = j.at("subjects").get<int>();
    config.parcels = j.at("parcels").get<Index>();
  } catch (const json_t::exception& e) {
    throw ValidationError(std::string("encoder config: ") + e.what());
  }
  config.validate();
  return config;
}

std::vector<BackboneInfo> resolve_backbones(const std::vector<std::string>& labels,
                                            const Dataset& ds) {
  if (labels.empty()) return ds.backbones;
  std::vector<BackboneInfo> out;
  for (const auto& label : labels)
    out.push_back(ds.backbones[static_cast<size_t>(ds.backbone_index(label))]);
  return out;
}

EncoderConfig resolve_encoder_config(const json_t& j, const Dataset& ds) {
  EncoderConfig config;
  try {
    std::vector<std::string> labels;
    if (j.contains("backbones")) {
      for (const auto& bb : j.at("backbones")) {
        if (bb.is_string())
          labels.push_back(bb.get<std::string>());
        else
          labels.push_back(bb.at("label").get<std::string>());
      }
    }
    config.backbones = resolve_backbones(labels, ds);
    config.embed_dim = j.value("embed_dim", Index{192});
    config.kernel_width = j.value("kernel_width", Index{45});
    config.kernel_type = kernel_type_from_string(j.value("kernel_type", "default"));
    config.head_mode = head_mode_from_string(j.value("head_mode", "group_plus_subject"));
    config.subjects = ds.subjects;
    config.parcels = ds.parcels();
  } catch (const json_t::exception& e) {
    throw ValidationError(std::string("encoder config: ") + e.what());
  }
  config.validate();
  return config;
}

json_t train_config_to_json(const TrainConfig& config) {
  return {{"max_steps", config.max_steps},
          {"batch_size", config.batch_size},
          {"window_length", config.window_length},
          {"lr", config.lr},
          {"weight_decay", config.weight_decay},
          {"eval_every", config.eval_every},
          {"seed", config.seed},
          {"subjects_mode", config.subjects_mode.str()},
          {"normalize", config.normalize},
          {"precision", to_string(config.precision)},
          {"adam_beta1", config.adam_beta1},
          {"adam_beta2", config.adam_beta2},
          {"adam_eps", config.adam_eps}};
}

TrainConfig train_config_from_json(const json_t& j) {
  TrainConfig config;
  try {
    config.max_steps = j.value("max_steps", config.max_steps);
    config.batch_size = j.value("batch_size", config.batch_size);
    config.window_length = j.value("window_length", config.window_length);
    config.lr = j.value("lr", config.lr);
    config.weight_decay = j.value("weight_decay", config.weight_decay);
    config.eval_every = j.value("eval_every", config.eval_every);
    config.seed = j.value("seed", config.seed);
    if (j.contains("subjects_mode"))
      config.subjects_mode = SubjectsMode::parse(j.at("subjects_mode").get<std::string>());
    config.normalize = j.value("normalize", config.normalize);
    if (j.contains("precision"))
      config.precision = precision_from_string(j.at("precision").get<std::string>());
    config.adam_beta1 = j.value("adam_beta1", config.adam_beta1);
    config.adam_beta2 = j.value("adam_beta2", config.adam_beta2);
    config.adam_eps = j.value("adam_eps", config.adam_eps);
  } catch (const json_t::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  config.validate();
  return config;
}

json_t norm_stats_meta_to_json(const NormStats& norm) {
  return {{"identity", norm.identity},
          {"feat_floored", norm.feat_floored},
          {"bold_floored", norm.bold_floored}};
}

}  // namespace aenc
