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

#include "heightlens/io.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <memory>
#include <sstream>

namespace heightlens::io {

static_assert(std::endian::native == std::endian::little,
              "rawf payloads are written in host order");

int64_t FloatArray::element_count() const {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string encode_array(const FloatArray& array) {
  for (int64_t d : array.shape) {
    if (d < 0) throw FormatError("negative dimension in array shape");
  }
  if (array.element_count() != static_cast<int64_t>(array.values.size())) {
    throw FormatError("array shape does not match value count");
  }
  for (size_t i = 0; i < array.values.size(); ++i) {
    if (!std::isfinite(array.values[i])) {
      throw FormatError("refusing to write non-finite value at flat index " +
                        std::to_string(i));
    }
  }
  Json header = {{"shape", array.shape},
                 {"dtype", "f32"},
                 {"order", "row-major"},
                 {"byte_order", "little-endian"}};
  std::string out = header.dump();
  out.push_back('\n');
  const size_t offset = out.size();
  out.resize(offset + array.values.size() * sizeof(float));
  if (!array.values.empty()) {
    std::memcpy(out.data() + offset, array.values.data(),
                array.values.size() * sizeof(float));
  }
  return out;
}

FloatArray decode_array(std::string_view bytes) {
  const size_t newline = bytes.find('\n');
  if (newline == std::string_view::npos) {
    throw FormatError("rawf header is not newline-terminated");
  }
  Json header;
  try {
    header = Json::parse(bytes.substr(0, newline));
  } catch (const Json::parse_error& e) {
    throw FormatError(std::string("malformed rawf header: ") + e.what());
  }
  if (!header.is_object() || !header.contains("shape") ||
      !header["shape"].is_array()) {
    throw FormatError("rawf header lacks a shape list");
  }
  if (header.value("dtype", "") != "f32" ||
      header.value("order", "") != "row-major" ||
      header.value("byte_order", "") != "little-endian") {
    throw FormatError("unsupported rawf dtype/order/byte_order");
  }
  FloatArray array;
  for (const auto& d : header["shape"]) {
    if (!d.is_number_integer() || d.get<int64_t>() < 0) {
      throw FormatError("rawf shape entries must be nonnegative integers");
    }
    array.shape.push_back(d.get<int64_t>());
  }
  const int64_t count = array.element_count();
  const size_t payload = bytes.size() - newline - 1;
  if (payload != static_cast<size_t>(count) * sizeof(float)) {
    throw FormatError("rawf payload holds " + std::to_string(payload) +
                      " bytes but shape requires " +
                      std::to_string(count * 4) + " (" +
                      std::to_string(count) + " floats)");
  }
  array.values.resize(static_cast<size_t>(count));
  if (count > 0) {
    std::memcpy(array.values.data(), bytes.data() + newline + 1, payload);
  }
  return array;
}

void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_array(const fs::path& path, const FloatArray& array) {
  write_text(path, encode_array(array));
}

FloatArray read_array(const fs::path& path) {
  return decode_array(read_text(path));
}

FloatArray to_array(const RealMap& map) {
  return FloatArray({map.rows(), map.cols()}, map.storage());
}

RealMap to_map(const FloatArray& array) {
  if (array.shape.size() != 2) {
    throw FormatError("expected a 2-D array for a map");
  }
  RealMap map(static_cast<int>(array.shape[0]),
              static_cast<int>(array.shape[1]));
  map.storage() = array.values;
  return map;
}

// ---------------------------------------------------------------- reports

namespace {

constexpr std::pair<ReportKind, const char*> kKindNames[] = {
    {ReportKind::kSelectivity, "selectivity"},
    {ReportKind::kOod, "ood"},
    {ReportKind::kPerturb, "perturb"},
    {ReportKind::kAttribution, "attribution"},
    {ReportKind::kDlt, "dlt"},
    {ReportKind::kMetrics, "metrics"},
    {ReportKind::kTraining, "training"},
};

enum class FieldType { kNumber, kNullableNumber, kString, kArray, kObject };

struct Field {
  const char* name;
  FieldType type;
};

const std::vector<Field>& schema_for(ReportKind kind) {
  using enum FieldType;
  static const std::map<ReportKind, std::vector<Field>> schemas = {
      {ReportKind::kSelectivity,
       {{"classes", kArray},
        {"CR", kArray},
        {"HR", kArray},
        {"CS", kArray},
        {"HS", kArray},
        {"bin_edges", kArray},
        {"unit_ranking", kObject}}},
      {ReportKind::kOod,
       {{"images", kArray},
        {"mean_anomaly", kNullableNumber},
        {"undefined_pixels", kNumber}}},
      {ReportKind::kPerturb,
       {{"experiment", kString},
        {"cases", kArray},
        {"trend", kNullableNumber},
        {"skipped", kNumber}}},
      {ReportKind::kAttribution,
       {{"target", kObject},
        {"steps", kNumber},
        {"completeness_gap", kNumber},
        {"compactness", kNullableNumber}}},
      {ReportKind::kDlt,
       {{"K", kNumber},
        {"thresholds", kArray},
        {"iou", kObject},
        {"group_to_class", kArray}}},
      {ReportKind::kMetrics,
       {{"mae", kNumber},
        {"rmse", kNumber},
        {"si_rmse", kNumber},
        {"msge", kNumber},
        {"miou", kNullableNumber},
        {"manifest_digest", kString}}},
      {ReportKind::kTraining, {{"epochs", kArray}}},
  };
  return schemas.at(kind);
}

bool matches(const Json& v, FieldType type) {
  switch (type) {
    case FieldType::kNumber:
      return v.is_number();
    case FieldType::kNullableNumber:
      return v.is_number() || v.is_null();
    case FieldType::kString:
      return v.is_string();
    case FieldType::kArray:
      return v.is_array();
    case FieldType::kObject:
      return v.is_object();
  }
  return false;
}

const char* type_name(FieldType type) {
  switch (type) {
    case FieldType::kNumber:
      return "number";
    case FieldType::kNullableNumber:
      return "number or null";
    case FieldType::kString:
      return "string";
    case FieldType::kArray:
      return "array";
    case FieldType::kObject:
      return "object";
  }
  return "?";
}

}  // namespace

std::string to_string(ReportKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  throw DomainError("unknown report kind");
}

ReportKind report_kind_from_string(const std::string& name) {
  for (const auto& [k, n] : kKindNames) {
    if (name == n) return k;
  }
  throw SchemaError("/kind", "unknown report kind '" + name + "'");
}

std::string timestamp_now() {
  std::time_t t;
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) {
    t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string canonical_dump(const Json& value) {
  // nlohmann::json objects are std::map-backed, so keys come out sorted.
  return value.dump(2, ' ', false, Json::error_handler_t::strict) + "\n";
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                              EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string config_digest(const Json& config) {
  return sha256_hex(config.dump(-1, ' ', false, Json::error_handler_t::strict));
}

void validate_report(const Report& report) {
  if (report.config_digest.size() != 64 ||
      report.config_digest.find_first_not_of("0123456789abcdef") !=
          std::string::npos) {
    throw SchemaError("/config_digest", "expected 64 lowercase hex digits");
  }
  if (!report.body.is_object()) {
    throw SchemaError("/body", "expected an object");
  }
  std::vector<std::string> missing;
  for (const Field& f : schema_for(report.kind)) {
    if (!report.body.contains(f.name)) missing.emplace_back(f.name);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw SchemaError("/body", "missing required fields: " + list);
  }
  for (const Field& f : schema_for(report.kind)) {
    if (!matches(report.body[f.name], f.type)) {
      throw SchemaError(std::string("/body/") + f.name,
                        std::string("expected ") + type_name(f.type));
    }
  }
  if (report.kind == ReportKind::kTraining) {
    const Json& epochs = report.body["epochs"];
    for (size_t i = 0; i < epochs.size(); ++i) {
      const std::string base = "/body/epochs/" + std::to_string(i);
      const Json& e = epochs[i];
      if (!e.is_object()) throw SchemaError(base, "expected an object");
      for (const Field& f : std::initializer_list<Field>{
               {"epoch", FieldType::kNumber},
               {"train_loss", FieldType::kNumber},
               {"val_mae", FieldType::kNullableNumber}}) {
        if (!e.contains(f.name) || !matches(e[f.name], f.type)) {
          throw SchemaError(base + "/" + f.name,
                            std::string("expected ") + type_name(f.type));
        }
      }
    }
  }
}

std::string encode_report(const Report& report) {
  validate_report(report);
  Json j = {{"kind", to_string(report.kind)},
            {"created_at", report.created_at},
            {"config_digest", report.config_digest},
            {"body", report.body}};
  return canonical_dump(j);
}

Report decode_report(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw SchemaError("", std::string("not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw SchemaError("", "expected an object");
  for (const char* key : {"kind", "created_at", "config_digest"}) {
    if (!j.contains(key) || !j[key].is_string()) {
      throw SchemaError(std::string("/") + key, "expected a string");
    }
  }
  if (!j.contains("body")) throw SchemaError("/body", "missing");
  Report r;
  r.kind = report_kind_from_string(j["kind"].get<std::string>());
  r.created_at = j["created_at"].get<std::string>();
  r.config_digest = j["config_digest"].get<std::string>();
  r.body = j["body"];
  validate_report(r);
  return r;
}

void write_report(const fs::path& path, const Report& report) {
  write_text(path, encode_report(report));
}

Report read_report(const fs::path& path) {
  return decode_report(read_text(path));
}

// -------------------------------------------------------------------- PNG

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png(const fs::path& path, int width, int height, int color_type,
               int channels, const std::vector<uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw FormatError("cannot open for writing: " + path.string());
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw FormatError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("libpng write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < height; ++r) {
    png_write_row(png, const_cast<png_bytep>(bytes.data() +
                                             static_cast<size_t>(r) * width *
                                                 channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<uint8_t> read_png(const fs::path& path, int want_channels,
                              int* width, int* height) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw FormatError("cannot open for reading: " + path.string());
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw FormatError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("malformed PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  if (png_get_bit_depth(png, info) != 8 || channels != want_channels) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("unexpected PNG layout in " + path.string());
  }
  std::vector<uint8_t> bytes(static_cast<size_t>(w) * h * channels);
  for (int r = 0; r < h; ++r) {
    png_read_row(png, bytes.data() + static_cast<size_t>(r) * w * channels,
                 nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  *width = w;
  *height = h;
  return bytes;
}

uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

void write_png_rgb(const fs::path& path, const Image& image) {
  if (image.channels() != 3) throw ShapeError("RGB PNG needs 3 channels");
  std::vector<uint8_t> bytes(image.size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = quantize(image.storage()[i]);
  }
  write_png(path, image.cols(), image.rows(), PNG_COLOR_TYPE_RGB, 3, bytes);
}

Image read_png_rgb(const fs::path& path) {
  int w = 0, h = 0;
  auto bytes = read_png(path, 3, &w, &h);
  Image image(h, w, 3);
  for (size_t i = 0; i < bytes.size(); ++i) {
    image.storage()[i] = static_cast<float>(bytes[i]) / 255.0f;
  }
  return image;
}

void write_png_gray(const fs::path& path, const LabelMap& map) {
  write_png(path, map.cols(), map.rows(), PNG_COLOR_TYPE_GRAY, 1,
            map.storage());
}

LabelMap read_png_gray(const fs::path& path) {
  int w = 0, h = 0;
  auto bytes = read_png(path, 1, &w, &h);
  LabelMap map(h, w);
  map.storage() = std::move(bytes);
  return map;
}

Image render_heatmap(const RealMap& map, float lo, float hi) {
  Image out(map.rows(), map.cols(), 3);
  const float span = hi > lo ? hi - lo : 1.0f;
  for (int r = 0; r < map.rows(); ++r) {
    for (int c = 0; c < map.cols(); ++c) {
      const float v = map(r, c);
      if (!std::isfinite(v)) continue;
      const float t = std::clamp((v - lo) / span, 0.0f, 1.0f);
      // Piecewise-linear blue -> cyan -> yellow -> red.
      out(r, c, 0) = std::clamp(2.0f * t - 0.5f, 0.0f, 1.0f);
      out(r, c, 1) = std::clamp(1.5f - std::abs(2.0f * t - 1.0f) * 1.5f, 0.0f,
                                1.0f);
      out(r, c, 2) = std::clamp(1.5f - 2.0f * t, 0.0f, 1.0f);
    }
  }
  return out;
}

Image render_heatmap(const RealMap& map) {
  float lo = std::numeric_limits<float>::infinity();
  float hi = -lo;
  for (float v : map.storage()) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(lo <= hi)) lo = hi = 0.0f;
  return render_heatmap(map, lo, hi);
}

// ------------------------------------------------------------- checkpoints

void write_checkpoint(const fs::path& dir, const Checkpoint& checkpoint) {
  fs::create_directories(dir);
  Json arch = checkpoint.arch;
  Json names = Json::array();
  for (const auto& [name, array] : checkpoint.tensors) names.push_back(name);
  arch["tensors"] = names;
  write_text(dir / "arch.json", canonical_dump(arch));
  for (const auto& [name, array] : checkpoint.tensors) {
    write_array(dir / (name + ".rawf"), array);
  }
}

Checkpoint read_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "arch.json")) {
    throw FormatError("not a checkpoint directory (no arch.json): " +
                      dir.string());
  }
  Checkpoint ck;
  try {
    ck.arch = Json::parse(read_text(dir / "arch.json"));
  } catch (const Json::parse_error& e) {
    throw FormatError(std::string("malformed arch.json: ") + e.what());
  }
  if (!ck.arch.contains("tensors") || !ck.arch["tensors"].is_array()) {
    throw FormatError("arch.json lacks the tensor list");
  }
  for (const auto& name : ck.arch["tensors"]) {
    const std::string n = name.get<std::string>();
    ck.tensors[n] = read_array(dir / (n + ".rawf"));
  }
  ck.arch.erase("tensors");
  return ck;
}

}  // namespace heightlens::io
