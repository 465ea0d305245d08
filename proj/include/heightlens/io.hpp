// Copyright 2026 The HeightLens Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef HEIGHTLENS_IO_HPP_
#define HEIGHTLENS_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "heightlens/raster.hpp"
#include "json.hpp"

namespace heightlens::io {

using Json = nlohmann::json;
namespace fs = std::filesystem;

// In-memory counterpart of a .rawf file: a row-major float32 array.
struct FloatArray {
  std::vector<int64_t> shape;
  std::vector<float> values;

  FloatArray() = default;
  FloatArray(std::vector<int64_t> s, std::vector<float> v)
      : shape(std::move(s)), values(std::move(v)) {}

  int64_t element_count() const;
  bool operator==(const FloatArray&) const = default;
};

// .rawf codec. The file is one JSON header line followed by the raw
// little-endian float32 payload.
std::string encode_array(const FloatArray& array);
FloatArray decode_array(std::string_view bytes);
void write_array(const fs::path& path, const FloatArray& array);
FloatArray read_array(const fs::path& path);

FloatArray to_array(const RealMap& map);
RealMap to_map(const FloatArray& array);

// Reports.
enum class ReportKind {
  kSelectivity,
  kOod,
  kPerturb,
  kAttribution,
  kDlt,
  kMetrics,
  kTraining,
};

std::string to_string(ReportKind kind);
ReportKind report_kind_from_string(const std::string& name);

struct Report {
  ReportKind kind = ReportKind::kMetrics;
  std::string created_at;     // ISO-8601 UTC
  std::string config_digest;  // lowercase hex SHA-256
  Json body = Json::object();

  bool operator==(const Report&) const = default;
};

// Current UTC time, or SOURCE_DATE_EPOCH when that variable is set so that
// runs can be made byte-reproducible.
std::string timestamp_now();

// Canonical serialization: sorted keys, two-space indent, trailing newline.
std::string canonical_dump(const Json& value);

// SHA-256 of the canonical serialization of `config`.
std::string config_digest(const Json& config);
std::string sha256_hex(std::string_view bytes);

// Throws SchemaError naming the first violating JSON path.
void validate_report(const Report& report);

std::string encode_report(const Report& report);
Report decode_report(std::string_view text);
void write_report(const fs::path& path, const Report& report);
Report read_report(const fs::path& path);

// PNG helpers (8-bit). RGB images are quantized with round(v * 255).
void write_png_rgb(const fs::path& path, const Image& image);
Image read_png_rgb(const fs::path& path);
void write_png_gray(const fs::path& path, const LabelMap& map);
LabelMap read_png_gray(const fs::path& path);

// Maps a real-valued raster to an 8-bit heatmap (blue -> red) with a linear
// scale over [lo, hi]. Non-finite pixels are drawn black.
Image render_heatmap(const RealMap& map, float lo, float hi);
Image render_heatmap(const RealMap& map);

// Checkpoint directory: arch.json plus one <name>.rawf per tensor.
struct Checkpoint {
  Json arch = Json::object();
  std::map<std::string, FloatArray> tensors;
};
void write_checkpoint(const fs::path& dir, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const fs::path& dir);

void write_text(const fs::path& path, std::string_view text);
std::string read_text(const fs::path& path);

}  // namespace heightlens::io

#endif  // HEIGHTLENS_IO_HPP_
