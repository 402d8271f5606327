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

#ifndef FLIP_JSON_IO_HPP_
#define FLIP_JSON_IO_HPP_

#include <json.hpp>

#include "flip/data.hpp"
#include "flip/expert.hpp"
#include "flip/model.hpp"

namespace flip {

// Missing keys keep their defaults on input; output always writes every field.

void to_json(nlohmann::json& j, const ImageShape& v);
void from_json(const nlohmann::json& j, ImageShape& v);
void to_json(nlohmann::json& j, const ModelSpec& v);
void from_json(const nlohmann::json& j, ModelSpec& v);
void to_json(nlohmann::json& j, const OptimizerHyper& v);
void from_json(const nlohmann::json& j, OptimizerHyper& v);
void to_json(nlohmann::json& j, const AugmentationConfig& v);
void from_json(const nlohmann::json& j, AugmentationConfig& v);
void to_json(nlohmann::json& j, const TrainConfig& v);
void from_json(const nlohmann::json& j, TrainConfig& v);
void to_json(nlohmann::json& j, const TriggerSpec& v);
void from_json(const nlohmann::json& j, TriggerSpec& v);

}  // namespace flip

#endif  // FLIP_JSON_IO_HPP_
