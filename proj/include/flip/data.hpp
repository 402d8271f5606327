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

#ifndef FLIP_DATA_HPP_
#define FLIP_DATA_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "flip/common.hpp"

namespace flip {

struct ImageShape {
  int channels = 3;
  int height = 32;
  int width = 32;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  bool operator==(const ImageShape&) const = default;
};

/// Channel-major (C, H, W) image with intensities in [0, 1].
struct Image {
  ImageShape shape;
  std::vector<float> pixels;

  Image() = default;
  explicit Image(ImageShape s, float fill = 0.0f) : shape(s), pixels(s.size(), fill) {}

  float& at(int c, int row, int col) {
    return pixels[(static_cast<std::size_t>(c) * shape.height + row) * shape.width + col];
  }
  float at(int c, int row, int col) const {
    return pixels[(static_cast<std::size_t>(c) * shape.height + row) * shape.width + col];
  }
  bool operator==(const Image&) const = default;
};

/// Nearest 8-bit code of an intensity.
std::uint8_t to_byte(float v);

struct Provenance {
  bool isPoison = false;
  std::optional<std::size_t> cleanSourceIndex;
  bool operator==(const Provenance&) const = default;
};

/// Immutable-after-construction image/label collection with poison provenance.
class LabeledDataset {
 public:
  LabeledDataset() = default;
  LabeledDataset(ImageShape shape, int numClasses);

  void add(std::span<const float> pixels, int label, Provenance provenance = {});
  void add(const Image& image, int label, Provenance provenance = {}) {
    add(image.pixels, label, provenance);
  }
  void reserve(std::size_t n);

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  const ImageShape& shape() const { return shape_; }
  int num_classes() const { return numClasses_; }

  int label(std::size_t i) const { return labels_.at(i); }
  const std::vector<int>& labels() const { return labels_; }
  const Provenance& provenance(std::size_t i) const { return provenance_.at(i); }
  std::span<const float> pixels(std::size_t i) const;
  Image image(std::size_t i) const;

  /// Index of the clean image carried by example i (itself unless it is a poison).
  std::size_t clean_index(std::size_t i) const;
  std::size_t poison_count() const;

  /// Copy with every label replaced; images and provenance are untouched.
  LabeledDataset with_labels(std::vector<int> labels) const;
  /// Copy restricted to the given example indices (provenance dropped).
  LabeledDataset subset(std::span<const std::size_t> indices) const;

  /// Content hash over shape, pixels, labels and provenance.
  std::uint64_t fingerprint() const;

  bool operator==(const LabeledDataset&) const = default;

 private:
  ImageShape shape_;
  int numClasses_ = 0;
  std::vector<float> pixels_;
  std::vector<int> labels_;
  std::vector<Provenance> provenance_;
};

// Triggers -----------------------------------------------------------------

enum class TriggerKind { pixel, sinusoidal, patch };
enum class Axis { horizontal, vertical };
enum class Corner { top_left, top_right, bottom_left, bottom_right };

struct PixelEdit {
  int row = 0;
  int col = 0;
  std::array<std::uint8_t, 3> rgb{};
};

struct TriggerSpec {
  TriggerKind kind = TriggerKind::sinusoidal;

  std::vector<PixelEdit> pixels;

  double amplitude = 6.0;  ///< on the 0..255 scale
  double frequency = 8.0;  ///< cycles across the image
  Axis axis = Axis::horizontal;

  /// 1 = white, 0 = black.
  std::array<std::array<std::uint8_t, 3>, 3> pattern{{{1, 0, 1}, {0, 1, 0}, {1, 0, 1}}};
  std::vector<Corner> corners;

  static TriggerSpec pixel_default();
  static TriggerSpec sinusoidal_default();
  static TriggerSpec patch_default();

  /// Throws ConfigError if the trigger cannot be applied to images of `shape`.
  void validate(const ImageShape& shape) const;
  std::string name() const;
};

Image apply_trigger(const Image& image, const TriggerSpec& trigger);
void apply_trigger_inplace(std::span<float> pixels, const ImageShape& shape,
                           const TriggerSpec& trigger);

/// Source-class selector; std::nullopt means every class except the target.
using SourceClass = std::optional<int>;

LabeledDataset build_poisoned_dataset(const LabeledDataset& clean, SourceClass ySource,
                                      int yTarget, const TriggerSpec& trigger);

// Augmentation and normalization --------------------------------------------

struct AugmentationConfig {
  int cropPadding = 4;
  int cropSize = 0;  ///< 0 keeps the input size
  double horizontalFlipProb = 0.5;
  std::array<double, 3> normalizationMean{0.4914, 0.4822, 0.4465};
  std::array<double, 3> normalizationStd{0.2470, 0.2435, 0.2616};

  void validate() const;
};

Image augment(const Image& image, std::mt19937_64& rng, const AugmentationConfig& cfg);

/// Writes (pixel - mean_c) / std_c for every pixel into `out`.
void normalize_into(std::span<const float> pixels, const ImageShape& shape,
                    const AugmentationConfig& cfg, double* out);

// Sources ----------------------------------------------------------------------

enum class CifarSplit { train, test };

/// Parses one CIFAR-10 binary batch. `name` is used in error messages.
LabeledDataset parse_cifar10_batch(std::span<const char> bytes, const std::string& name);
std::string serialize_cifar10_batch(const LabeledDataset& dataset);
/// Loads the five training batches or the test batch from a cifar-10-batches-bin directory.
LabeledDataset load_cifar10(const std::string& dir, CifarSplit split);

struct SyntheticSpec {
  std::uint64_t seed = 1;
  std::size_t n = 100;
  int numClasses = 2;
  int side = 8;
  int channels = 3;
  double noiseStd = 0.15;
  /// Seeds the class prototypes; train and test sets share it.
  std::uint64_t prototypeSeed = 0x5eed;
};

LabeledDataset make_synthetic(const SyntheticSpec& spec);
LabeledDataset make_synthetic(std::uint64_t seed, std::size_t n, int numClasses, int side);

std::string serialize_dataset(const LabeledDataset& dataset);
LabeledDataset parse_dataset(std::span<const char> bytes);
void save_dataset(const LabeledDataset& dataset, const std::string& path);
LabeledDataset load_dataset(const std::string& path);

}  // namespace flip

#endif  // FLIP_DATA_HPP_
