/**
 * Copyright 2026 The FLIP Labels Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "flip/json_io.hpp"

#include <sstream>

namespace flip {

using nlohmann::json;

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

std::string color_hex(const std::array<std::uint8_t, 3>& rgb) {
  std::ostringstream os;
  os << '#' << std::hex << std::uppercase;
  for (auto v : rgb) os << (v < 16 ? "0" : "") << static_cast<int>(v);
  return os.str();
}

std::array<std::uint8_t, 3> parse_color(const std::string& s) {
  if (s.size() != 7 || s[0] != '#') throw ConfigError("color '" + s + "' is not #RRGGBB");
  std::array<std::uint8_t, 3> rgb{};
  for (int i = 0; i < 3; ++i) {
    rgb[i] = static_cast<std::uint8_t>(std::stoi(s.substr(1 + 2 * i, 2), nullptr, 16));
  }
  return rgb;
}

const char* corner_name(Corner c) {
  switch (c) {
    case Corner::top_left: return "top-left";
    case Corner::top_right: return "top-right";
    case Corner::bottom_left: return "bottom-left";
    case Corner::bottom_right: return "bottom-right";
  }
  return "top-left";
}

Corner corner_from(const std::string& s) {
  if (s == "top-left") return Corner::top_left;
  if (s == "top-right") return Corner::top_right;
  if (s == "bottom-left") return Corner::bottom_left;
  if (s == "bottom-right") return Corner::bottom_right;
  throw ConfigError("unknown corner '" + s + "'");
}

}  // namespace

void to_json(json& j, const ImageShape& v) {
  j = json{{"channels", v.channels}, {"height", v.height}, {"width", v.width}};
}

void from_json(const json& j, ImageShape& v) {
  read_opt(j, "channels", v.channels);
  read_opt(j, "height", v.height);
  read_opt(j, "width", v.width);
}

void to_json(json& j, const ModelSpec& v) {
  j = json{{"arch", to_string(v.arch)}, {"input", v.input}, {"widths", v.widths},
           {"num_classes", v.numClasses}, {"blocks_per_stage", v.blocksPerStage}};
}

void from_json(const json& j, ModelSpec& v) {
  if (j.contains("arch")) v.arch = architecture_from_string(j.at("arch").get<std::string>());
  read_opt(j, "input", v.input);
  read_opt(j, "widths", v.widths);
  read_opt(j, "num_classes", v.numClasses);
  read_opt(j, "blocks_per_stage", v.blocksPerStage);
}

void to_json(json& j, const OptimizerHyper& v) {
  j = json{{"kind", to_string(v.kind)}, {"lr", v.lr},       {"weight_decay", v.weightDecay},
           {"momentum", v.momentum},    {"beta1", v.beta1}, {"beta2", v.beta2},
           {"eps", v.eps}};
}

void from_json(const json& j, OptimizerHyper& v) {
  if (j.contains("kind")) v.kind = optimizer_from_string(j.at("kind").get<std::string>());
  read_opt(j, "lr", v.lr);
  read_opt(j, "weight_decay", v.weightDecay);
  read_opt(j, "momentum", v.momentum);
  read_opt(j, "beta1", v.beta1);
  read_opt(j, "beta2", v.beta2);
  read_opt(j, "eps", v.eps);
}

void to_json(json& j, const AugmentationConfig& v) {
  j = json{{"crop_padding", v.cropPadding},
           {"crop_size", v.cropSize},
           {"horizontal_flip_prob", v.horizontalFlipProb},
           {"normalization_mean", v.normalizationMean},
           {"normalization_std", v.normalizationStd}};
}

void from_json(const json& j, AugmentationConfig& v) {
  read_opt(j, "crop_padding", v.cropPadding);
  read_opt(j, "crop_size", v.cropSize);
  read_opt(j, "horizontal_flip_prob", v.horizontalFlipProb);
  read_opt(j, "normalization_mean", v.normalizationMean);
  read_opt(j, "normalization_std", v.normalizationStd);
}

void to_json(json& j, const TrainConfig& v) {
  j = json{{"epochs", v.epochs},
           {"batch_size", v.batchSize},
           {"optimizer", v.optimizer},
           {"lr_milestones", v.lrMilestones},
           {"lr_gamma", v.lrGamma},
           {"checkpoint_stride", v.checkpointStride},
           {"seed", v.seed},
           {"augment", v.augment},
           {"augmentation", v.augmentation},
           {"record_batches", v.recordBatches},
           {"storage", v.storage == StorageType::float64 ? "float64" : "float32"}};
}

void from_json(const json& j, TrainConfig& v) {
  read_opt(j, "epochs", v.epochs);
  read_opt(j, "batch_size", v.batchSize);
  read_opt(j, "optimizer", v.optimizer);
  read_opt(j, "lr_milestones", v.lrMilestones);
  read_opt(j, "lr_gamma", v.lrGamma);
  read_opt(j, "checkpoint_stride", v.checkpointStride);
  read_opt(j, "seed", v.seed);
  read_opt(j, "augment", v.augment);
  read_opt(j, "augmentation", v.augmentation);
  read_opt(j, "record_batches", v.recordBatches);
  if (j.contains("storage")) {
    const auto s = j.at("storage").get<std::string>();
    if (s == "float32") v.storage = StorageType::float32;
    else if (s == "float64") v.storage = StorageType::float64;
    else throw ConfigError("unknown storage type '" + s + "'");
  }
}

void to_json(json& j, const TriggerSpec& v) {
  j = json{{"kind", v.name()}};
  switch (v.kind) {
    case TriggerKind::pixel: {
      json px = json::array();
      for (const auto& p : v.pixels) px.push_back({{"row", p.row}, {"col", p.col}, {"color", color_hex(p.rgb)}});
      j["pixels"] = px;
      break;
    }
    case TriggerKind::sinusoidal:
      j["amplitude"] = v.amplitude;
      j["frequency"] = v.frequency;
      j["axis"] = v.axis == Axis::horizontal ? "horizontal" : "vertical";
      break;
    case TriggerKind::patch: {
      json pattern = json::array();
      for (const auto& row : v.pattern) pattern.push_back(json::array({row[0], row[1], row[2]}));
      j["pattern"] = pattern;
      json corners = json::array();
      for (Corner c : v.corners) corners.push_back(corner_name(c));
      j["corners"] = corners;
      break;
    }
  }
}

void from_json(const json& j, TriggerSpec& v) {
  const auto kind = j.value("kind", std::string("sinusoidal"));
  if (kind == "pixel") v = TriggerSpec::pixel_default();
  else if (kind == "sinusoidal") v = TriggerSpec::sinusoidal_default();
  else if (kind == "patch") v = TriggerSpec::patch_default();
  else throw ConfigError("unknown trigger kind '" + kind + "'");

  if (j.contains("pixels")) {
    v.pixels.clear();
    for (const auto& p : j.at("pixels")) {
      v.pixels.push_back({p.at("row").get<int>(), p.at("col").get<int>(), parse_color(p.at("color").get<std::string>())});
    }
  }
  read_opt(j, "amplitude", v.amplitude);
  read_opt(j, "frequency", v.frequency);
  if (j.contains("axis")) {
    const auto a = j.at("axis").get<std::string>();
    if (a == "horizontal") v.axis = Axis::horizontal;
    else if (a == "vertical") v.axis = Axis::vertical;
    else throw ConfigError("unknown axis '" + a + "'");
  }
  if (j.contains("pattern")) {
    const auto& rows = j.at("pattern");
    if (rows.size() != 3) throw ConfigError("patch pattern must be 3x3");
    for (std::size_t r = 0; r < 3; ++r) {
      if (rows[r].size() != 3) throw ConfigError("patch pattern must be 3x3");
      for (std::size_t c = 0; c < 3; ++c) v.pattern[r][c] = rows[r][c].get<int>() != 0 ? 1 : 0;
    }
  }
  if (j.contains("corners")) {
    v.corners.clear();
    for (const auto& c : j.at("corners")) v.corners.push_back(corner_from(c.get<std::string>()));
  }
}

}  // namespace flip
