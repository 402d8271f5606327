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

#include "flip/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

namespace flip {

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

// LabeledDataset ---------------------------------------------------------------

LabeledDataset::LabeledDataset(ImageShape shape, int numClasses)
    : shape_(shape), numClasses_(numClasses) {
  if (numClasses < 1) throw ConfigError("numClasses must be positive");
  if (shape.channels < 1 || shape.height < 1 || shape.width < 1) {
    throw ConfigError("image dimensions must be positive");
  }
}

void LabeledDataset::add(std::span<const float> pixels, int label, Provenance provenance) {
  if (pixels.size() != shape_.size()) throw ConfigError("image does not match dataset shape");
  if (label < 0 || label >= numClasses_) {
    throw ConfigError("label " + std::to_string(label) + " outside [0, " +
                      std::to_string(numClasses_) + ")");
  }
  if (provenance.isPoison) {
    if (!provenance.cleanSourceIndex || *provenance.cleanSourceIndex >= labels_.size() ||
        provenance_[*provenance.cleanSourceIndex].isPoison) {
      throw ConfigError("poison provenance must reference an existing clean example");
    }
  } else if (provenance.cleanSourceIndex) {
    throw ConfigError("clean examples carry no source index");
  }
  pixels_.insert(pixels_.end(), pixels.begin(), pixels.end());
  labels_.push_back(label);
  provenance_.push_back(provenance);
}

void LabeledDataset::reserve(std::size_t n) {
  pixels_.reserve(n * shape_.size());
  labels_.reserve(n);
  provenance_.reserve(n);
}

std::span<const float> LabeledDataset::pixels(std::size_t i) const {
  if (i >= size()) throw std::out_of_range("example index out of range");
  return {pixels_.data() + i * shape_.size(), shape_.size()};
}

Image LabeledDataset::image(std::size_t i) const {
  Image img;
  img.shape = shape_;
  const auto px = pixels(i);
  img.pixels.assign(px.begin(), px.end());
  return img;
}

std::size_t LabeledDataset::clean_index(std::size_t i) const {
  const Provenance& p = provenance(i);
  return p.isPoison ? *p.cleanSourceIndex : i;
}

std::size_t LabeledDataset::poison_count() const {
  return static_cast<std::size_t>(
      std::count_if(provenance_.begin(), provenance_.end(), [](const Provenance& p) { return p.isPoison; }));
}

LabeledDataset LabeledDataset::with_labels(std::vector<int> labels) const {
  if (labels.size() != size()) throw ConfigError("label count does not match dataset size");
  for (int y : labels) {
    if (y < 0 || y >= numClasses_) throw ConfigError("label outside class range");
  }
  LabeledDataset out = *this;
  out.labels_ = std::move(labels);
  return out;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out(shape_, numClasses_);
  out.reserve(indices.size());
  for (std::size_t i : indices) out.add(pixels(i), label(i));
  return out;
}

std::uint64_t LabeledDataset::fingerprint() const {
  Fnv1a64 h;
  h.update_value(shape_.channels);
  h.update_value(shape_.height);
  h.update_value(shape_.width);
  h.update_value(numClasses_);
  h.update(pixels_.data(), pixels_.size() * sizeof(float));
  h.update(labels_.data(), labels_.size() * sizeof(int));
  for (const auto& p : provenance_) {
    const std::uint64_t src = p.cleanSourceIndex ? *p.cleanSourceIndex : ~std::uint64_t{0};
    h.update_value(static_cast<std::uint8_t>(p.isPoison));
    h.update_value(src);
  }
  return h.digest();
}

// Triggers -----------------------------------------------------------------

TriggerSpec TriggerSpec::pixel_default() {
  TriggerSpec t;
  t.kind = TriggerKind::pixel;
  t.pixels = {{11, 16, {0x65, 0x00, 0x19}}, {5, 27, {0x65, 0x7B, 0x79}}, {30, 7, {0x00, 0x24, 0x36}}};
  return t;
}

TriggerSpec TriggerSpec::sinusoidal_default() {
  TriggerSpec t;
  t.kind = TriggerKind::sinusoidal;
  t.amplitude = 6.0;
  t.frequency = 8.0;
  t.axis = Axis::horizontal;
  return t;
}

TriggerSpec TriggerSpec::patch_default() {
  TriggerSpec t;
  t.kind = TriggerKind::patch;
  t.corners = {Corner::top_left, Corner::top_right, Corner::bottom_left, Corner::bottom_right};
  return t;
}

void TriggerSpec::validate(const ImageShape& shape) const {
  switch (kind) {
    case TriggerKind::pixel:
      if (shape.channels != 3) throw ConfigError("pixel trigger needs RGB images");
      for (const auto& p : pixels) {
        if (p.row < 0 || p.row >= shape.height || p.col < 0 || p.col >= shape.width) {
          throw ConfigError("pixel trigger coordinate (" + std::to_string(p.row) + ", " +
                            std::to_string(p.col) + ") outside " + std::to_string(shape.height) +
                            "x" + std::to_string(shape.width) + " image");
        }
      }
      break;
    case TriggerKind::sinusoidal:
      if (!(amplitude >= 0.0)) throw ConfigError("sinusoidal amplitude must be >= 0");
      if (!(frequency > 0.0)) throw ConfigError("sinusoidal frequency must be > 0");
      break;
    case TriggerKind::patch:
      if (shape.height < 3 || shape.width < 3) throw ConfigError("patch trigger needs images >= 3x3");
      break;
  }
}

std::string TriggerSpec::name() const {
  switch (kind) {
    case TriggerKind::pixel: return "pixel";
    case TriggerKind::sinusoidal: return "sinusoidal";
    case TriggerKind::patch: return "patch";
  }
  return "unknown";
}

void apply_trigger_inplace(std::span<float> px, const ImageShape& shape, const TriggerSpec& trigger) {
  trigger.validate(shape);
  const auto idx = [&](int c, int r, int col) {
    return (static_cast<std::size_t>(c) * shape.height + r) * shape.width + col;
  };
  switch (trigger.kind) {
    case TriggerKind::pixel:
      for (const auto& p : trigger.pixels) {
        for (int c = 0; c < 3; ++c) px[idx(c, p.row, p.col)] = static_cast<float>(p.rgb[c]) / 255.0f;
      }
      break;
    case TriggerKind::sinusoidal: {
      const bool horizontal = trigger.axis == Axis::horizontal;
      const int extent = horizontal ? shape.width : shape.height;
      std::vector<double> delta(static_cast<std::size_t>(extent));
      for (int j = 0; j < extent; ++j) {
        delta[j] = trigger.amplitude *
                   std::sin(2.0 * std::numbers::pi * trigger.frequency * j / extent) / 255.0;
      }
      for (int c = 0; c < shape.channels; ++c) {
        for (int r = 0; r < shape.height; ++r) {
          for (int col = 0; col < shape.width; ++col) {
            float& v = px[idx(c, r, col)];
            const double shifted = v + delta[horizontal ? col : r];
            v = static_cast<float>(std::clamp(shifted, 0.0, 1.0));
          }
        }
      }
      break;
    }
    case TriggerKind::patch:
      for (Corner corner : trigger.corners) {
        const int r0 = (corner == Corner::bottom_left || corner == Corner::bottom_right) ? shape.height - 3 : 0;
        const int c0 = (corner == Corner::top_right || corner == Corner::bottom_right) ? shape.width - 3 : 0;
        for (int dr = 0; dr < 3; ++dr) {
          for (int dc = 0; dc < 3; ++dc) {
            const float v = trigger.pattern[dr][dc] ? 1.0f : 0.0f;
            for (int c = 0; c < shape.channels; ++c) px[idx(c, r0 + dr, c0 + dc)] = v;
          }
        }
      }
      break;
  }
}

Image apply_trigger(const Image& image, const TriggerSpec& trigger) {
  Image out = image;
  apply_trigger_inplace(out.pixels, out.shape, trigger);
  return out;
}

LabeledDataset build_poisoned_dataset(const LabeledDataset& clean, SourceClass ySource, int yTarget,
                                      const TriggerSpec& trigger) {
  const int k = clean.num_classes();
  if (yTarget < 0 || yTarget >= k) throw ConfigError("target class outside class range");
  if (ySource) {
    if (*ySource < 0 || *ySource >= k) throw ConfigError("source class outside class range");
    if (*ySource == yTarget) throw ConfigError("source and target class must differ");
  }
  if (clean.poison_count() != 0) throw ConfigError("input dataset already contains poisons");
  trigger.validate(clean.shape());

  LabeledDataset out = clean;
  std::vector<float> buf(clean.shape().size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const int y = clean.label(i);
    const bool selected = ySource ? (y == *ySource) : (y != yTarget);
    if (!selected) continue;
    const auto px = clean.pixels(i);
    std::copy(px.begin(), px.end(), buf.begin());
    apply_trigger_inplace(buf, clean.shape(), trigger);
    out.add(buf, yTarget, Provenance{true, i});
  }
  return out;
}

// Augmentation ------------------------------------------------------------------

void AugmentationConfig::validate() const {
  if (cropPadding < 0) throw ConfigError("cropPadding must be >= 0");
  if (cropSize < 0) throw ConfigError("cropSize must be >= 0");
  if (!(horizontalFlipProb >= 0.0 && horizontalFlipProb <= 1.0)) {
    throw ConfigError("horizontalFlipProb must lie in [0, 1]");
  }
  for (double s : normalizationStd) {
    if (!(s > 0.0)) throw ConfigError("normalization std must be positive");
  }
}

Image augment(const Image& image, std::mt19937_64& rng, const AugmentationConfig& cfg) {
  cfg.validate();
  const ImageShape in = image.shape;
  const int pad = cfg.cropPadding;
  const int outH = cfg.cropSize > 0 ? cfg.cropSize : in.height;
  const int outW = cfg.cropSize > 0 ? cfg.cropSize : in.width;
  if (outH > in.height + 2 * pad || outW > in.width + 2 * pad) {
    throw ConfigError("crop size exceeds padded image");
  }
  std::uniform_int_distribution<int> offR(0, in.height + 2 * pad - outH);
  std::uniform_int_distribution<int> offC(0, in.width + 2 * pad - outW);
  const int r0 = offR(rng) - pad;
  const int c0 = offC(rng) - pad;
  std::bernoulli_distribution flip(cfg.horizontalFlipProb);
  const bool mirror = flip(rng);

  Image out(ImageShape{in.channels, outH, outW}, 0.0f);
  for (int c = 0; c < in.channels; ++c) {
    for (int r = 0; r < outH; ++r) {
      const int sr = r + r0;
      if (sr < 0 || sr >= in.height) continue;
      for (int col = 0; col < outW; ++col) {
        const int sc = col + c0;
        if (sc < 0 || sc >= in.width) continue;
        out.at(c, r, mirror ? outW - 1 - col : col) = image.at(c, sr, sc);
      }
    }
  }
  return out;
}

void normalize_into(std::span<const float> pixels, const ImageShape& shape, const AugmentationConfig& cfg,
                    double* out) {
  const std::size_t plane = static_cast<std::size_t>(shape.height) * shape.width;
  for (int c = 0; c < shape.channels; ++c) {
    const double mean = cfg.normalizationMean[static_cast<std::size_t>(c % 3)];
    const double inv = 1.0 / cfg.normalizationStd[static_cast<std::size_t>(c % 3)];
    const float* src = pixels.data() + c * plane;
    double* dst = out + c * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = (static_cast<double>(src[i]) - mean) * inv;
  }
}

// CIFAR-10 -----------------------------------------------------------------

namespace {
constexpr std::size_t kCifarPixels = 3072;
constexpr std::size_t kCifarRecord = 1 + kCifarPixels;
const ImageShape kCifarShape{3, 32, 32};
}  // namespace

LabeledDataset parse_cifar10_batch(std::span<const char> bytes, const std::string& name) {
  if (bytes.size() % kCifarRecord != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % kCifarRecord;
    throw ParseError(name + ": truncated record at byte offset " + std::to_string(offset));
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  LabeledDataset ds(kCifarShape, 10);
  ds.reserve(n);
  std::vector<float> px(kCifarPixels);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t offset = i * kCifarRecord;
    const auto label = static_cast<unsigned char>(bytes[offset]);
    if (label >= 10) {
      throw ParseError(name + ": label byte " + std::to_string(label) + " >= 10 at byte offset " +
                       std::to_string(offset));
    }
    for (std::size_t j = 0; j < kCifarPixels; ++j) {
      px[j] = static_cast<float>(static_cast<unsigned char>(bytes[offset + 1 + j])) / 255.0f;
    }
    ds.add(px, label);
  }
  return ds;
}

std::string serialize_cifar10_batch(const LabeledDataset& dataset) {
  if (!(dataset.shape() == kCifarShape)) throw ConfigError("CIFAR-10 records are 3x32x32");
  std::string out;
  out.reserve(dataset.size() * kCifarRecord);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out.push_back(static_cast<char>(dataset.label(i)));
    for (float v : dataset.pixels(i)) out.push_back(static_cast<char>(to_byte(v)));
  }
  return out;
}

LabeledDataset load_cifar10(const std::string& dir, CifarSplit split) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (split == CifarSplit::train) {
    for (int b = 1; b <= 5; ++b) files.push_back("data_batch_" + std::to_string(b) + ".bin");
  } else {
    files.push_back("test_batch.bin");
  }
  LabeledDataset out(kCifarShape, 10);
  out.reserve(split == CifarSplit::train ? 50000 : 10000);
  for (const auto& f : files) {
    const fs::path p = fs::path(dir) / f;
    if (!fs::exists(p)) throw ParseError("missing CIFAR-10 file " + p.string());
    const auto bytes = read_file(p.string());
    const LabeledDataset part = parse_cifar10_batch(bytes, p.string());
    for (std::size_t i = 0; i < part.size(); ++i) out.add(part.pixels(i), part.label(i));
  }
  return out;
}

// Synthetic ----------------------------------------------------------------

LabeledDataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.numClasses < 2 || spec.n < static_cast<std::size_t>(spec.numClasses)) {
    throw ConfigError("synthetic data needs n >= numClasses >= 2");
  }
  if (spec.side < 1 || spec.channels < 1) throw ConfigError("synthetic image side must be positive");
  const ImageShape shape{spec.channels, spec.side, spec.side};

  // Class prototypes: a flat background color plus a few colored Gaussian blobs.
  std::mt19937_64 protoRng(spec.prototypeSeed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<double>> prototypes(static_cast<std::size_t>(spec.numClasses));
  for (auto& proto : prototypes) {
    proto.assign(shape.size(), 0.0);
    std::vector<double> background(static_cast<std::size_t>(spec.channels));
    for (auto& b : background) b = 0.3 + 0.4 * unit(protoRng);
    for (int c = 0; c < spec.channels; ++c) {
      for (int i = 0; i < spec.side * spec.side; ++i) proto[c * spec.side * spec.side + i] = background[c];
    }
    for (int blob = 0; blob < 3; ++blob) {
      const double cy = unit(protoRng) * spec.side;
      const double cx = unit(protoRng) * spec.side;
      const double radius = spec.side * (0.12 + 0.15 * unit(protoRng));
      std::vector<double> color(static_cast<std::size_t>(spec.channels));
      for (auto& v : color) v = 0.6 * unit(protoRng) - 0.3;
      for (int r = 0; r < spec.side; ++r) {
        for (int col = 0; col < spec.side; ++col) {
          const double d2 = (r - cy) * (r - cy) + (col - cx) * (col - cx);
          const double w = std::exp(-d2 / (2.0 * radius * radius));
          for (int c = 0; c < spec.channels; ++c) {
            proto[(c * spec.side + r) * spec.side + col] += w * color[c];
          }
        }
      }
    }
  }

  LabeledDataset ds(shape, spec.numClasses);
  ds.reserve(spec.n);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noiseStd);
  std::vector<float> px(shape.size());
  for (std::size_t i = 0; i < spec.n; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(spec.numClasses));
    const auto& proto = prototypes[static_cast<std::size_t>(label)];
    for (std::size_t j = 0; j < px.size(); ++j) {
      px[j] = static_cast<float>(std::clamp(proto[j] + noise(rng), 0.0, 1.0));
    }
    ds.add(px, label);
  }
  return ds;
}

LabeledDataset make_synthetic(std::uint64_t seed, std::size_t n, int numClasses, int side) {
  SyntheticSpec spec;
  spec.seed = seed;
  spec.n = n;
  spec.numClasses = numClasses;
  spec.side = side;
  return make_synthetic(spec);
}

// Container ----------------------------------------------------------------

namespace {
constexpr char kDatasetMagic[8] = {'F', 'L', 'I', 'P', 'D', 'A', 'T', '1'};
}

std::string serialize_dataset(const LabeledDataset& dataset) {
  std::ostringstream os(std::ios::binary);
  os.write(kDatasetMagic, sizeof(kDatasetMagic));
  write_le<std::uint64_t>(os, dataset.size());
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dataset.shape().height));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dataset.shape().width));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dataset.shape().channels));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dataset.num_classes()));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (float v : dataset.pixels(i)) write_le<float>(os, v);
  }
  for (int y : dataset.labels()) write_le<std::int32_t>(os, y);
  return os.str();
}

LabeledDataset parse_dataset(std::span<const char> bytes) {
  std::istringstream is(std::string(bytes.data(), bytes.size()), std::ios::binary);
  char magic[sizeof(kDatasetMagic)];
  is.read(magic, sizeof(magic));
  if (is.gcount() != sizeof(magic) || !std::equal(magic, magic + sizeof(magic), kDatasetMagic)) {
    throw ParseError("not a dataset container (bad magic)");
  }
  const auto n = read_le<std::uint64_t>(is, "dataset size");
  ImageShape shape;
  shape.height = static_cast<int>(read_le<std::uint32_t>(is, "height"));
  shape.width = static_cast<int>(read_le<std::uint32_t>(is, "width"));
  shape.channels = static_cast<int>(read_le<std::uint32_t>(is, "channels"));
  const auto k = static_cast<int>(read_le<std::uint32_t>(is, "class count"));
  const std::size_t expected = 8 + 8 + 16 + n * shape.size() * 4 + n * 4;
  if (bytes.size() != expected) {
    throw ParseError("dataset container has " + std::to_string(bytes.size()) + " bytes, expected " +
                     std::to_string(expected));
  }
  std::vector<float> pixels(n * shape.size());
  for (auto& v : pixels) v = read_le<float>(is, "pixels");
  LabeledDataset ds(shape, k);
  ds.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = read_le<std::int32_t>(is, "labels");
    ds.add(std::span<const float>(pixels.data() + i * shape.size(), shape.size()), y);
  }
  return ds;
}

void save_dataset(const LabeledDataset& dataset, const std::string& path) {
  write_file_atomic(path, serialize_dataset(dataset));
}

LabeledDataset load_dataset(const std::string& path) {
  const auto bytes = read_file(path);
  return parse_dataset(bytes);
}

}  // namespace flip
