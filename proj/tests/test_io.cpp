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

#include <cmath>
#include <cstring>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"
#include "heightlens/io.hpp"

using namespace heightlens;
using namespace heightlens::io;
using heightlens::testing::random_image;
using heightlens::testing::random_map;
using heightlens::testing::scratch;

namespace {

Report sample_report() {
  Report r;
  r.kind = ReportKind::kMetrics;
  r.created_at = "2026-01-02T03:04:05Z";
  r.config_digest = config_digest({{"seed", 1}});
  r.body = {{"mae", 0.1},
            {"rmse", 1.0 / 3.0},
            {"si_rmse", 2.0e-17},
            {"msge", 123456.789012345678},
            {"miou", nullptr},
            {"manifest_digest", sha256_hex("x")}};
  return r;
}

}  // namespace

TEST_CASE("2x2 zeros give a 16-byte zero payload") {
  const std::string bytes = encode_array(FloatArray({2, 2}, std::vector<float>(4, 0.0f)));
  const size_t nl = bytes.find('\n');
  REQUIRE(nl != std::string::npos);
  const Json header = Json::parse(bytes.substr(0, nl));
  CHECK(header["shape"] == Json::array({2, 2}));
  CHECK(header["dtype"] == "f32");
  CHECK(header["order"] == "row-major");
  CHECK(header["byte_order"] == "little-endian");
  const std::string payload = bytes.substr(nl + 1);
  CHECK(payload.size() == 16);
  CHECK(payload == std::string(16, '\0'));
}

TEST_CASE("rawf round-trip is bit exact") {
  const RealMap m = random_map(64, 64, 5, -1e6, 1e6);
  const auto dir = scratch("io_rawf");
  write_array(dir / "m.rawf", to_array(m));
  const RealMap back = to_map(read_array(dir / "m.rawf"));
  REQUIRE(back.same_grid(m));
  CHECK(std::memcmp(back.storage().data(), m.storage().data(), m.size() * sizeof(float)) == 0);

  FloatArray tiny({1}, {std::numeric_limits<float>::denorm_min()});
  CHECK(decode_array(encode_array(tiny)) == tiny);
  FloatArray empty({0, 3}, {});
  CHECK(decode_array(encode_array(empty)) == empty);
}

TEST_CASE("truncated and malformed rawf files are refused") {
  // header promises 3*4*5 = 60 floats but only 59 follow
  std::string bytes = encode_array(FloatArray({3, 4, 5}, std::vector<float>(60, 1.0f)));
  bytes.resize(bytes.size() - 4);
  CHECK_THROWS_AS(decode_array(bytes), FormatError);
  CHECK_THROWS_AS(decode_array("{\"shape\":[1]}"), FormatError);
  CHECK_THROWS_AS(decode_array("not json\n0000"), FormatError);
  CHECK_THROWS_AS(decode_array("{\"shape\":[1],\"dtype\":\"f64\",\"order\":\"row-major\","
                               "\"byte_order\":\"little-endian\"}\n00000000"),
                  FormatError);
  CHECK_THROWS_AS(encode_array(FloatArray({2}, {1.0f, std::nanf("")})), FormatError);
  CHECK_THROWS_AS(encode_array(FloatArray({2}, {1.0f, INFINITY})), FormatError);
  CHECK_THROWS_AS(encode_array(FloatArray({3}, {1.0f, 2.0f})), FormatError);
}

TEST_CASE("report round-trip and canonical bytes") {
  const Report r = sample_report();
  const auto dir = scratch("io_report");
  write_report(dir / "a.report.json", r);
  write_report(dir / "b.report.json", r);
  CHECK(read_text(dir / "a.report.json") == read_text(dir / "b.report.json"));
  const Report back = read_report(dir / "a.report.json");
  CHECK(back == r);
  CHECK(back.body["rmse"].get<double>() == 1.0 / 3.0);
  CHECK(back.body["msge"].get<double>() == 123456.789012345678);
  // keys sorted
  const std::string text = encode_report(r);
  CHECK(text.find("\"body\"") < text.find("\"config_digest\""));
  CHECK(text.find("\"config_digest\"") < text.find("\"created_at\""));
  CHECK(text.find("\"created_at\"") < text.find("\"kind\""));
}

TEST_CASE("empty metrics body names the missing fields") {
  Report r = sample_report();
  r.body = Json::object();
  try {
    encode_report(r);
    FAIL("expected a schema error");
  } catch (const SchemaError& e) {
    CHECK(e.path() == "/body");
    const std::string what = e.what();
    for (const char* f : {"mae", "rmse", "si_rmse", "msge", "miou", "manifest_digest"}) {
      CHECK(what.find(f) != std::string::npos);
    }
  }
  r = sample_report();
  r.body["mae"] = "small";
  try {
    encode_report(r);
    FAIL("expected a schema error");
  } catch (const SchemaError& e) {
    CHECK(e.path() == "/body/mae");
  }
  r = sample_report();
  r.config_digest = "ABC";
  CHECK_THROWS_AS(encode_report(r), SchemaError);
  CHECK_THROWS_AS(decode_report("{\"kind\":\"nope\",\"created_at\":\"t\",\"config_digest\":\"d\",\"body\":{}}"),
                  SchemaError);
}

TEST_CASE("training reports validate each epoch") {
  Report r = sample_report();
  r.kind = ReportKind::kTraining;
  r.body = {{"epochs", Json::array({{{"epoch", 0}, {"train_loss", 1.5}, {"val_mae", nullptr}}})}};
  CHECK(decode_report(encode_report(r)) == r);
  r.body["epochs"][0].erase("train_loss");
  try {
    encode_report(r);
    FAIL("expected a schema error");
  } catch (const SchemaError& e) {
    CHECK(e.path() == "/body/epochs/0/train_loss");
  }
}

TEST_CASE("every report kind has a name") {
  for (ReportKind k : {ReportKind::kSelectivity, ReportKind::kOod, ReportKind::kPerturb, ReportKind::kAttribution,
                       ReportKind::kDlt, ReportKind::kMetrics, ReportKind::kTraining}) {
    CHECK(report_kind_from_string(to_string(k)) == k);
  }
}

TEST_CASE("config digest is canonical and sensitive") {
  const Json a = Json::parse(R"({"b": 1, "a": {"y": 2.5, "x": [1, 2]}})");
  const Json b = Json::parse(R"({"a": {"x": [1, 2], "y": 2.5}, "b": 1})");
  CHECK(config_digest(a) == config_digest(b));
  Json c = a;
  c["b"] = 2;
  CHECK(config_digest(a) != config_digest(c));
  // FIPS 180-2 test vector
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("png round-trips at 8 bits") {
  const auto dir = scratch("io_png");
  Image im = random_image(9, 13, 4);
  for (float& v : im.storage()) v = std::round(v * 255.0f) / 255.0f;
  write_png_rgb(dir / "a.png", im);
  CHECK(read_png_rgb(dir / "a.png") == im);
  LabelMap lm(5, 7);
  for (size_t i = 0; i < lm.size(); ++i) lm.storage()[i] = static_cast<uint8_t>(i % 5);
  write_png_gray(dir / "s.png", lm);
  CHECK(read_png_gray(dir / "s.png") == lm);
  io::write_text(dir / "bad.png", "definitely not a png");
  CHECK_THROWS_AS(read_png_rgb(dir / "bad.png"), FormatError);
}

TEST_CASE("heatmap render spans the colour map") {
  RealMap m(1, 3);
  m(0, 0) = 0.0f;
  m(0, 1) = 0.5f;
  m(0, 2) = 1.0f;
  const Image im = render_heatmap(m);
  CHECK(im.rows() == 1);
  CHECK(im.channels() == 3);
  CHECK_FALSE(im(0, 0, 0) == im(0, 2, 0));
  for (float v : im.storage()) CHECK((v >= 0.0f && v <= 1.0f));
}

TEST_CASE("checkpoint directories round-trip") {
  const auto dir = scratch("io_ckpt");
  Checkpoint c;
  c.arch = {{"name", "toy"}, {"n", 3}};
  c.tensors["a.w"] = FloatArray({2, 3}, {1, 2, 3, 4, 5, 6});
  c.tensors["b"] = FloatArray({1}, {-0.5f});
  write_checkpoint(dir, c);
  const Checkpoint back = read_checkpoint(dir);
  CHECK(back.tensors == c.tensors);
  CHECK(back.arch["name"] == "toy");
  CHECK_THROWS_AS(read_checkpoint(scratch("io_ckpt_empty")), FormatError);
}
