#pragma once

#include "aenc/common.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace aenc {

// Single-tensor file layout:
//   "AENC" | u8 version = 1 | u8 dtype (1 = f32) | u8 ndim |
//   ndim x u64 little-endian dims | row-major little-endian payload
inline constexpr std::uint8_t kTensorVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;

void write_tensor(std::ostream& out, const Mat& values);
void write_tensor(const std::filesystem::path& path, const Mat& values);

// Returned as doubles; every f32 value is exactly representable. A 1-D
// tensor comes back as a single row. Throws ValidationError on bad magic,
// version, dtype, shape, or payload size.
Mat read_tensor(std::istream& in, const std::string& context);
Mat read_tensor(const std::filesystem::path& path);

// Bundle: a JSON header plus an ordered list of named tensors, each stored
// in the single-tensor encoding above. Checkpoints and planted-parameter
// files use this.
struct TensorBundle {
  nlohmann::json header;
  std::vector<std::pair<std::string, Mat>> tensors;

  bool has(const std::string& name) const;
  const Mat& at(const std::string& name) const;
  void add(std::string name, Mat values);
};

void write_bundle(const std::filesystem::path& path, const TensorBundle& bundle);
TensorBundle read_bundle(const std::filesystem::path& path);

}  // namespace aenc
