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


#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "heightlens/io.hpp"

using namespace heightlens;
using heightlens::testing::scratch;
namespace fs = std::filesystem;

namespace {

struct Captured {
  int rc;
  std::string out, err;
};

Captured call(std::vector<std::string> args) {
  std::ostringstream o, e;
  auto* ob = std::cout.rdbuf(o.rdbuf());
  auto* eb = std::cerr.rdbuf(e.rdbuf());
  const int rc = cli::run(args);
  std::cout.rdbuf(ob);
  std::cerr.rdbuf(eb);
  return {rc, o.str(), e.str()};
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = io::read_text(e.path());
  }
  return files;
}

// Tiny corpus shared by the pipeline tests.
fs::path corpus() {
  static const fs::path p = [] {
    const fs::path d = scratch("cli_corpus");
    REQUIRE(call({"generate", "--out", d.string(), "--train", "6", "--val", "3", "--test", "2"}).rc == 0);
    return d;
  }();
  return p;
}

fs::path small_model_config(const fs::path& dir) {
  const fs::path f = dir / "small.json";
  io::write_text(f, R"({"model": {"final_units": 8, "depth": 2, "base_width": 4, "window": 4, "attention_heads": 2},
                        "train": {"epochs": 1, "batch_size": 3}})");
  return f;
}

}  // namespace

TEST_CASE("cli exit codes and help") {
  const Captured h = call({"train", "--help"});
  CHECK(h.rc == cli::kExitOk);
  CHECK(h.out.find("--units") != std::string::npos);
  CHECK(h.out.find("2000") == std::string::npos);  // train has no split counts
  const Captured g = call({"generate", "--help"});
  CHECK(g.out.find("2000") != std::string::npos);
  CHECK(call({}).rc == cli::kExitConfig);
  CHECK(call({"frobnicate"}).rc == cli::kExitConfig);
  CHECK(call({"train", "--no-such-flag"}).rc == cli::kExitConfig);
  CHECK(call({"train", "--units", "many"}).rc == cli::kExitConfig);
  const fs::path d = scratch("cli_codes");
  const Captured m = call({"train", "--data", (d / "missing").string(), "--out", (d / "o").string()});
  CHECK(m.rc == cli::kExitConfig);
  CHECK(m.err.find("missing") != std::string::npos);
  CHECK(call({"generate", "--out", (d / "g").string(), "--jobs", "0"}).rc == cli::kExitConfig);
}

TEST_CASE("cli config files: unknown keys, type errors, bad json") {
  const fs::path d = scratch("cli_config");
  io::write_text(d / "unknown.json", R"({"train": {"epochs": 2, "learning_rat": 0.1}})");
  const Captured u = call({"generate", "--config", (d / "unknown.json").string(), "--out", (d / "a").string()});
  CHECK(u.rc == cli::kExitConfig);
  CHECK(u.err.find("/train/learning_rat") != std::string::npos);
  io::write_text(d / "type.json", R"({"splits": {"train": "many"}})");
  const Captured t = call({"generate", "--config", (d / "type.json").string(), "--out", (d / "b").string()});
  CHECK(t.rc == cli::kExitConfig);
  CHECK(t.err.find("/splits/train") != std::string::npos);
  io::write_text(d / "broken.json", "{\"splits\": ");
  CHECK(call({"generate", "--config", (d / "broken.json").string(), "--out", (d / "c").string()}).rc ==
        cli::kExitConfig);
  CHECK(call({"generate", "--config", (d / "nope.json").string()}).rc == cli::kExitConfig);
}

TEST_CASE("cli generate is reproducible and flags override the config file") {
  const fs::path d = scratch("cli_generate");
  io::write_text(d / "cfg.json", R"({"splits": {"train": 2, "val": 1, "test": 1}, "seed": 4})");
  REQUIRE(call({"generate", "--config", (d / "cfg.json").string(), "--out", (d / "a").string()}).rc == 0);
  REQUIRE(call({"generate", "--config", (d / "cfg.json").string(), "--out", (d / "b").string()}).rc == 0);
  CHECK(tree(d / "a") == tree(d / "b"));
  REQUIRE(call({"generate", "--config", (d / "cfg.json").string(), "--train", "3", "--out", (d / "c").string()})
              .rc == 0);
  const io::Json m = io::Json::parse(io::read_text(d / "c" / "manifest.json"));
  CHECK(m["splits"]["train"].size() == 3);
  CHECK(m["splits"]["val"].size() == 1);
  // a different seed changes the pixels
  REQUIRE(call({"generate", "--config", (d / "cfg.json").string(), "--seed", "5", "--out", (d / "e").string()})
              .rc == 0);
  CHECK(tree(d / "a") != tree(d / "e"));
}

TEST_CASE("cli pipeline reports and idempotent reruns") {
  const fs::path data = corpus();
  const fs::path d = scratch("cli_pipeline");
  const fs::path cfg = small_model_config(d);
  const fs::path run = d / "run";
  setenv("SOURCE_DATE_EPOCH", "1700000000", 1);
  const std::vector<std::string> train = {"train", "--config", cfg.string(), "--data", data.string(),
                                          "--out", run.string()};
  REQUIRE(call(train).rc == 0);
  const std::string first = io::read_text(run / "training.json");
  const io::Report tr = io::read_report(run / "training.json");
  CHECK(tr.kind == io::ReportKind::kTraining);
  CHECK(tr.created_at == "2023-11-14T22:13:20Z");
  CHECK(tr.body["epochs"].size() == 1);

  REQUIRE(call({"dissect", "--ckpt", run.string(), "--data", data.string(), "--out", run.string(), "--limit",
                "3"})
              .rc == 0);
  const std::string csv = io::read_text(run / "selectivity.csv");
  CHECK(csv.rfind("unit,CR_ground,CR_road,CR_tree,CR_building,CR_water,CS\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);
  for (int u = 0; u < 8; ++u) CHECK(fs::exists(run / "units" / ("unit_0" + std::to_string(u) + ".png")));
  CHECK(io::read_report(run / "selectivity.json").kind == io::ReportKind::kSelectivity);

  REQUIRE(call({"evaluate", "--ckpt", run.string(), "--data", data.string(), "--out", run.string()}).rc == 0);
  const io::Report ev = io::read_report(run / "metrics.json");
  CHECK(ev.body["miou"].is_null());

  REQUIRE(call({"report", "--out", run.string()}).rc == 0);
  const io::Json idx = io::Json::parse(io::read_text(run / "report_index.json"));
  CHECK(idx["kinds"] == io::Json::array({"metrics", "selectivity", "training"}));
  const std::string md = io::read_text(run / "report.md");
  CHECK(md.find("training.svg") != std::string::npos);
  CHECK(fs::exists(run / "report.html"));

  // the same run again gives the same bytes; the digest covers paths.out,
  // so the rerun writes to the same place
  const auto ckpt = tree(run / "checkpoint");
  REQUIRE(call(train).rc == 0);
  CHECK(io::read_text(run / "training.json") == first);
  CHECK(tree(run / "checkpoint") == ckpt);
  REQUIRE(call({"report", "--out", run.string()}).rc == 0);
  CHECK(io::read_text(run / "report.md") == md);

  // a plain checkpoint is not a DLT checkpoint
  CHECK(call({"segment", "--dlt", run.string(), "--data", data.string(), "--out", (d / "seg").string()}).rc ==
        cli::kExitConfig);
  unsetenv("SOURCE_DATE_EPOCH");
}

TEST_CASE("cli report needs reports") {
  const fs::path d = scratch("cli_empty");
  CHECK(call({"report", "--out", d.string()}).rc == cli::kExitRuntime);
}
