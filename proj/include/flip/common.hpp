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

#ifndef FLIP_COMMON_HPP_
#define FLIP_COMMON_HPP_

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace flip {

/// Row-major dense matrix used for logits, label tables and soft targets.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or truncated input file.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or violated precondition.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage is missing its inputs or they were produced by another config.
class StageError : public Error {
 public:
  using Error::Error;
};

/// Raised when ||theta_{k+1} - theta_k|| vanishes and the matching loss is undefined.
class DegenerateStepError : public Error {
 public:
  using Error::Error;
};

// Seeds ----------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x);

/// Combines a base seed with a stage tag and an index; streams for distinct
/// (tag, index) pairs never share state.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index = 0);

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b);

// Hashing --------------------------------------------------------------------

class Fnv1a64 {
 public:
  void update(const void* data, std::size_t len);
  void update(std::string_view s) { update(s.data(), s.size()); }
  template <typename T>
  void update_value(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    update(&v, sizeof(T));
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::uint64_t fnv1a64(std::string_view s);
std::string hex64(std::uint64_t v);
std::uint64_t parse_hex64(std::string_view s);

// Little-endian binary helpers ------------------------------------------------

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_arithmetic_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

/// Reads one value; throws ParseError naming `what` on a short read.
template <typename T>
T read_le(std::istream& is, std::string_view what) {
  static_assert(std::is_arithmetic_v<T>);
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw ParseError("truncated input while reading " + std::string(what));
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

std::vector<char> read_file(const std::string& path);

/// Writes `bytes` to `path` through a temporary file and an atomic rename.
void write_file_atomic(const std::string& path, std::string_view bytes);

}  // namespace flip

#endif  // FLIP_COMMON_HPP_
