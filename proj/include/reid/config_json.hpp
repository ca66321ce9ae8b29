#pragma once

#include "json.hpp"
#include "reid/evaluation.hpp"
#include "reid/keyframe.hpp"
#include "reid/training.hpp"

namespace reid {

// Missing keys keep their defaults, so partial config files are valid.

inline void to_json(nlohmann::json& j, const KeyframeConfig& c) {
  j = {{"grid", c.grid}, {"bins", c.bins}, {"threshold", c.threshold}};
}
inline void from_json(const nlohmann::json& j, KeyframeConfig& c) {
  c.grid = j.value("grid", c.grid);
  c.bins = j.value("bins", c.bins);
  c.threshold = j.value("threshold", c.threshold);
}

inline void to_json(nlohmann::json& j, const CnnMidConfig& c) {
  j = {{"input_height", c.input_height},
       {"input_width", c.input_width},
       {"stage_channels", c.stage_channels},
       {"blocks_per_stage", c.blocks_per_stage},
       {"bottleneck_ratio", c.bottleneck_ratio},
       {"num_train_identities", c.num_train_identities}};
  if (c.pretrained_weights) j["pretrained_weights"] = *c.pretrained_weights;
}
inline void from_json(const nlohmann::json& j, CnnMidConfig& c) {
  c.input_height = j.value("input_height", c.input_height);
  c.input_width = j.value("input_width", c.input_width);
  c.stage_channels = j.value("stage_channels", c.stage_channels);
  c.blocks_per_stage = j.value("blocks_per_stage", c.blocks_per_stage);
  c.bottleneck_ratio = j.value("bottleneck_ratio", c.bottleneck_ratio);
  c.num_train_identities = j.value("num_train_identities", c.num_train_identities);
  if (j.contains("pretrained_weights")) c.pretrained_weights = j.at("pretrained_weights").get<std::string>();
}

inline void to_json(nlohmann::json& j, const WinTransformerConfig& c) {
  j = {{"input_height", c.input_height}, {"input_width", c.input_width},
       {"patch_size", c.patch_size},     {"embed_dim", c.embed_dim},
       {"depths", c.depths},             {"heads", c.heads},
       {"window", c.window},             {"merge", c.merge},
       {"merge_expansion", c.merge_expansion}, {"mlp_ratio", c.mlp_ratio},
       {"shifted_windows", c.shifted_windows}};
}
inline void from_json(const nlohmann::json& j, WinTransformerConfig& c) {
  c.input_height = j.value("input_height", c.input_height);
  c.input_width = j.value("input_width", c.input_width);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.depths = j.value("depths", c.depths);
  c.heads = j.value("heads", c.heads);
  c.window = j.value("window", c.window);
  c.merge = j.value("merge", c.merge);
  c.merge_expansion = j.value("merge_expansion", c.merge_expansion);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.shifted_windows = j.value("shifted_windows", c.shifted_windows);
}

inline void to_json(nlohmann::json& j, const SamplerConfig& c) {
  j = {{"P", c.identities_per_batch}, {"K", c.instances_per_identity}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, SamplerConfig& c) {
  c.identities_per_batch = j.value("P", c.identities_per_batch);
  c.instances_per_identity = j.value("K", c.instances_per_identity);
  c.seed = j.value("seed", c.seed);
}

inline void to_json(nlohmann::json& j, const TripletConfig& c) {
  j = {{"margin", c.margin}, {"soft_margin", c.soft_margin}};
}
inline void from_json(const nlohmann::json& j, TripletConfig& c) {
  c.margin = j.value("margin", c.margin);
  c.soft_margin = j.value("soft_margin", c.soft_margin);
}

NLOHMANN_JSON_SERIALIZE_ENUM(nn::OptimizerKind, {{nn::OptimizerKind::kRmsProp, "rmsprop"},
                                                 {nn::OptimizerKind::kSgdMomentum, "sgd_momentum"}})

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"seed", c.seed},
       {"backbone", std::string(to_string(c.backbone))},
       {"optimizer", c.optimizer},
       {"momentum", c.momentum},
       {"lr_step_epochs", c.lr_step_epochs},
       {"lr_step_gamma", c.lr_step_gamma},
       {"cross_entropy_weight", c.cross_entropy_weight},
       {"horizontal_flip", c.horizontal_flip},
       {"steps_per_epoch", c.steps_per_epoch}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  if (j.contains("backbone")) c.backbone = parse_branch(j.at("backbone").get<std::string>());
  c.optimizer = j.value("optimizer", c.optimizer);
  c.momentum = j.value("momentum", c.momentum);
  c.lr_step_epochs = j.value("lr_step_epochs", c.lr_step_epochs);
  c.lr_step_gamma = j.value("lr_step_gamma", c.lr_step_gamma);
  c.cross_entropy_weight = j.value("cross_entropy_weight", c.cross_entropy_weight);
  c.horizontal_flip = j.value("horizontal_flip", c.horizontal_flip);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
}

inline void to_json(nlohmann::json& j, const EvalProtocol& c) {
  j = {{"exclude_same_camera", c.exclude_same_camera}, {"ranks_reported", c.ranks_reported}};
}
inline void from_json(const nlohmann::json& j, EvalProtocol& c) {
  c.exclude_same_camera = j.value("exclude_same_camera", c.exclude_same_camera);
  c.ranks_reported = j.value("ranks_reported", c.ranks_reported);
}

}  // namespace reid
