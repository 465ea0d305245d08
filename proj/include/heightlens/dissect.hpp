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

#ifndef HEIGHTLENS_DISSECT_HPP_
#define HEIGHTLENS_DISSECT_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "heightlens/io.hpp"
#include "heightlens/raster.hpp"
#include "heightlens/scenegen.hpp"
#include "heightlens/toymodel.hpp"

namespace heightlens::dissect {

using toymodel::FeatureStack;

enum class MaskKind { kClass, kHeightRange };

// Disjoint category masks of one image.
struct MaskSet {
  MaskKind kind = MaskKind::kClass;
  std::vector<Mask> masks;
  // Height kind: {0, e_1, ..., e_{B-2}}. Bin 0 holds h <= 0; bin j >= 1
  // holds e_{j-1} < h <= e_j, the last bin being open above.
  std::vector<double> bin_edges;
};

MaskSet class_masks(const LabelMap& semantic, int num_classes);

// Height bins shared by a dataset: a zero bin plus num_bins - 1 bins cut at
// quantiles of the pooled positive heights.
std::vector<double> height_bin_edges(const std::vector<const RealMap*>& heights, int num_bins);
MaskSet height_masks(const RealMap& height, const std::vector<double>& edges);
std::vector<MaskSet> discretize_height(const std::vector<const RealMap*>& heights, int num_bins);
int height_bin(double h, const std::vector<double>& edges);

// units x categories; undefined columns had zero mask area over the data.
struct ResponseMatrix {
  int units = 0;
  int categories = 0;
  std::vector<double> values;
  std::vector<bool> defined;

  double at(int unit, int category) const {
    return values[static_cast<size_t>(unit) * categories + category];
  }
  std::vector<double> row(int unit) const;
};

// Streaming sums for the average-response formula; images may be added in
// any order but are reduced in insertion order.
class ResponseAccumulator {
 public:
  void add(const FeatureStack& features, const MaskSet& masks);
  ResponseMatrix result() const;

 private:
  int units_ = 0;
  int categories_ = 0;
  std::vector<double> mass_;
  std::vector<double> area_;
};

ResponseMatrix responses(const std::vector<FeatureStack>& features, const std::vector<MaskSet>& masks);

// |max - mean(rest)| / |max + mean(rest)| over the defined entries of a
// row; nullopt with fewer than two defined entries or a zero denominator.
std::optional<double> selectivity(const std::vector<double>& row,
                                  const std::vector<bool>& defined = {});

// Units ordered by response to `category`, descending; ties by unit index.
std::vector<int> rank_units(const ResponseMatrix& m, int category);

struct SelectivityReport {
  std::vector<std::string> classes;
  std::vector<std::string> height_bins;  // labels of the HR columns
  std::vector<double> bin_edges;
  ResponseMatrix CR;
  ResponseMatrix HR;
  std::vector<std::optional<double>> CS;
  std::vector<std::optional<double>> HS;

  // Ranking by CR for class names, by HR for height-bin labels.
  std::vector<int> rank_units(const std::string& category) const;
  // Largest CS among units whose top class is `class_index`.
  std::optional<double> max_class_selectivity(int class_index) const;
  io::Json to_json() const;  // selectivity report body
};

SelectivityReport build_report(ResponseMatrix cr, ResponseMatrix hr, std::vector<std::string> classes,
                               std::vector<double> edges);

// Runs the network over `patches`, accumulating class and height responses
// of every final-layer unit.
SelectivityReport analyze(const toymodel::Net& net, const std::vector<scenegen::ScenePatch>& patches,
                          const std::vector<std::string>& classes, int num_bins = 5);

// Table-I style CSV: unit, CR per class, CS.
std::string selectivity_csv(const SelectivityReport& report);

// ------------------------------------------------------------------- OOD

struct AnomalyMap {
  RealMap values;   // 1 - population variance of channel-normalized features
  Mask undefined;   // pixels whose channel sum is 0
};

AnomalyMap anomaly_map(const FeatureStack& features);
// Mean over defined pixels (inside `region` when given).
std::optional<double> mean_anomaly(const AnomalyMap& map, const Mask* region = nullptr);

// Pastes a black/white checkerboard (not part of any training class) with
// top-left (row, col); returns the pasted region as a mask.
Mask paste_checkerboard(Image& image, int row, int col, int size, int cell);

}  // namespace heightlens::dissect

#endif  // HEIGHTLENS_DISSECT_HPP_
