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

#include "heightlens/dissect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace heightlens::dissect {

MaskSet class_masks(const LabelMap& semantic, int num_classes) {
  MaskSet set;
  set.kind = MaskKind::kClass;
  set.masks.assign(static_cast<size_t>(num_classes), Mask(semantic.rows(), semantic.cols()));
  for (int r = 0; r < semantic.rows(); ++r) {
    for (int c = 0; c < semantic.cols(); ++c) {
      const int k = semantic(r, c);
      if (k < num_classes) set.masks[static_cast<size_t>(k)](r, c) = 1;
    }
  }
  return set;
}

std::vector<double> height_bin_edges(const std::vector<const RealMap*>& heights, int num_bins) {
  if (num_bins < 2) throw DomainError("num_bins must be >= 2 (a zero bin plus positive bins)");
  std::vector<float> pos;
  for (const RealMap* h : heights) {
    for (float v : h->storage()) {
      if (v > 0.0f) pos.push_back(v);
    }
  }
  if (pos.empty()) throw DomainError("degenerate height distribution: no positive heights");
  std::sort(pos.begin(), pos.end());
  const int positive_bins = num_bins - 1;
  std::vector<double> edges = {0.0};
  for (int j = 1; j < positive_bins; ++j) {
    // linear interpolation between order statistics
    const double q = static_cast<double>(j) / positive_bins * static_cast<double>(pos.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(q));
    const size_t hi = std::min(lo + 1, pos.size() - 1);
    const double e = pos[lo] + (q - static_cast<double>(lo)) * (pos[hi] - pos[lo]);
    if (e > edges.back()) edges.push_back(e);
  }
  return edges;
}

int height_bin(double h, const std::vector<double>& edges) {
  if (h <= 0.0) return 0;
  const auto it = std::lower_bound(edges.begin() + 1, edges.end(), h);
  return 1 + static_cast<int>(it - (edges.begin() + 1));
}

MaskSet height_masks(const RealMap& height, const std::vector<double>& edges) {
  MaskSet set;
  set.kind = MaskKind::kHeightRange;
  set.bin_edges = edges;
  set.masks.assign(edges.size() + 1, Mask(height.rows(), height.cols()));
  for (int r = 0; r < height.rows(); ++r) {
    for (int c = 0; c < height.cols(); ++c) {
      set.masks[static_cast<size_t>(height_bin(height(r, c), edges))](r, c) = 1;
    }
  }
  return set;
}

std::vector<MaskSet> discretize_height(const std::vector<const RealMap*>& heights, int num_bins) {
  const std::vector<double> edges = height_bin_edges(heights, num_bins);
  std::vector<MaskSet> out;
  out.reserve(heights.size());
  for (const RealMap* h : heights) out.push_back(height_masks(*h, edges));
  return out;
}

std::vector<double> ResponseMatrix::row(int unit) const {
  return {values.begin() + static_cast<long>(unit) * categories,
          values.begin() + static_cast<long>(unit + 1) * categories};
}

void ResponseAccumulator::add(const FeatureStack& features, const MaskSet& masks) {
  const int n = features.channels();
  const int C = static_cast<int>(masks.masks.size());
  if (mass_.empty()) {
    units_ = n;
    categories_ = C;
    mass_.assign(static_cast<size_t>(n) * C, 0.0);
    area_.assign(static_cast<size_t>(C), 0.0);
  } else if (n != units_ || C != categories_) {
    throw ShapeError("responses: unit or category count changed between images");
  }
  for (const Mask& m : masks.masks) require_same_grid(features, m, "responses");
  const auto& f = features.storage();
  std::vector<double> local(static_cast<size_t>(n) * C, 0.0);
  for (int c = 0; c < C; ++c) {
    const auto& m = masks.masks[static_cast<size_t>(c)].storage();
    double area = 0.0;
    for (size_t p = 0; p < m.size(); ++p) {
      if (!m[p]) continue;
      area += 1.0;
      const float* fp = f.data() + p * n;
      for (int k = 0; k < n; ++k) {
        local[static_cast<size_t>(k) * C + c] += std::max(0.0f, fp[k]);
      }
    }
    area_[static_cast<size_t>(c)] += area;
  }
  for (size_t i = 0; i < local.size(); ++i) mass_[i] += local[i];
}

ResponseMatrix ResponseAccumulator::result() const {
  ResponseMatrix m;
  m.units = units_;
  m.categories = categories_;
  m.values.assign(mass_.size(), 0.0);
  m.defined.assign(static_cast<size_t>(categories_), false);
  for (int c = 0; c < categories_; ++c) {
    const double a = area_[static_cast<size_t>(c)];
    if (a <= 0.0) continue;
    m.defined[static_cast<size_t>(c)] = true;
    for (int k = 0; k < units_; ++k) {
      m.values[static_cast<size_t>(k) * categories_ + c] = mass_[static_cast<size_t>(k) * categories_ + c] / a;
    }
  }
  return m;
}

ResponseMatrix responses(const std::vector<FeatureStack>& features, const std::vector<MaskSet>& masks) {
  if (features.size() != masks.size()) throw ShapeError("responses: one mask set per image required");
  ResponseAccumulator acc;
  for (size_t i = 0; i < features.size(); ++i) acc.add(features[i], masks[i]);
  return acc.result();
}

std::optional<double> selectivity(const std::vector<double>& row, const std::vector<bool>& defined) {
  std::vector<double> v;
  for (size_t i = 0; i < row.size(); ++i) {
    if (defined.empty() || defined[i]) v.push_back(row[i]);
  }
  if (v.size() < 2) return std::nullopt;
  const auto top = std::max_element(v.begin(), v.end());
  const double mx = *top;
  double rest = 0.0;
  for (auto it = v.begin(); it != v.end(); ++it) {
    if (it != top) rest += *it;
  }
  rest /= static_cast<double>(v.size() - 1);
  const double den = std::abs(mx + rest);
  if (den == 0.0) return std::nullopt;
  return std::abs(mx - rest) / den;
}

std::vector<int> rank_units(const ResponseMatrix& m, int category) {
  if (category < 0 || category >= m.categories) throw DomainError("unknown category index");
  std::vector<int> order(static_cast<size_t>(m.units));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return m.at(a, category) > m.at(b, category); });
  return order;
}

std::vector<int> SelectivityReport::rank_units(const std::string& category) const {
  for (size_t c = 0; c < classes.size(); ++c) {
    if (classes[c] == category) return dissect::rank_units(CR, static_cast<int>(c));
  }
  for (size_t b = 0; b < height_bins.size(); ++b) {
    if (height_bins[b] == category) return dissect::rank_units(HR, static_cast<int>(b));
  }
  throw DomainError("unknown category '" + category + "'");
}

std::optional<double> SelectivityReport::max_class_selectivity(int class_index) const {
  std::optional<double> best;
  for (int k = 0; k < CR.units; ++k) {
    if (!CS[static_cast<size_t>(k)]) continue;
    int top = -1;
    for (int c = 0; c < CR.categories; ++c) {
      if (!CR.defined[static_cast<size_t>(c)]) continue;
      if (top < 0 || CR.at(k, c) > CR.at(k, top)) top = c;
    }
    if (top != class_index) continue;
    if (!best || *CS[static_cast<size_t>(k)] > *best) best = CS[static_cast<size_t>(k)];
  }
  return best;
}

namespace {

io::Json matrix_json(const ResponseMatrix& m) {
  io::Json rows = io::Json::array();
  for (int k = 0; k < m.units; ++k) {
    io::Json row = io::Json::array();
    for (int c = 0; c < m.categories; ++c) {
      row.push_back(m.defined[static_cast<size_t>(c)] ? io::Json(m.at(k, c)) : io::Json(nullptr));
    }
    rows.push_back(row);
  }
  return rows;
}

io::Json scores_json(const std::vector<std::optional<double>>& s) {
  io::Json a = io::Json::array();
  for (const auto& v : s) a.push_back(v ? io::Json(*v) : io::Json(nullptr));
  return a;
}

}  // namespace

io::Json SelectivityReport::to_json() const {
  io::Json ranking = io::Json::object();
  for (const std::string& c : classes) ranking[c] = rank_units(c);
  for (const std::string& b : height_bins) ranking[b] = rank_units(b);
  return {{"classes", classes}, {"height_bins", height_bins}, {"bin_edges", bin_edges},
          {"CR", matrix_json(CR)}, {"HR", matrix_json(HR)},  {"CS", scores_json(CS)},
          {"HS", scores_json(HS)}, {"unit_ranking", ranking}};
}

SelectivityReport build_report(ResponseMatrix cr, ResponseMatrix hr, std::vector<std::string> classes,
                               std::vector<double> edges) {
  SelectivityReport r;
  r.classes = std::move(classes);
  r.bin_edges = std::move(edges);
  r.height_bins.push_back("h0");
  for (size_t j = 1; j <= r.bin_edges.size(); ++j) r.height_bins.push_back("h" + std::to_string(j));
  r.CR = std::move(cr);
  r.HR = std::move(hr);
  for (int k = 0; k < r.CR.units; ++k) r.CS.push_back(selectivity(r.CR.row(k), r.CR.defined));
  for (int k = 0; k < r.HR.units; ++k) r.HS.push_back(selectivity(r.HR.row(k), r.HR.defined));
  return r;
}

SelectivityReport analyze(const toymodel::Net& net, const std::vector<scenegen::ScenePatch>& patches,
                          const std::vector<std::string>& classes, int num_bins) {
  std::vector<const RealMap*> heights;
  for (const auto& p : patches) heights.push_back(&p.height);
  const std::vector<double> edges = height_bin_edges(heights, num_bins);
  ResponseAccumulator cr, hr;
  for (const auto& p : patches) {
    const FeatureStack f = toymodel::forward(net, p.image).features;
    cr.add(f, class_masks(p.semantic, static_cast<int>(classes.size())));
    hr.add(f, height_masks(p.height, edges));
  }
  return build_report(cr.result(), hr.result(), classes, edges);
}

std::string selectivity_csv(const SelectivityReport& report) {
  std::ostringstream os;
  os << "unit";
  for (const auto& c : report.classes) os << ",CR_" << c;
  os << ",CS\n";
  char buf[64];
  for (int k = 0; k < report.CR.units; ++k) {
    os << k;
    for (int c = 0; c < report.CR.categories; ++c) {
      if (report.CR.defined[static_cast<size_t>(c)]) {
        std::snprintf(buf, sizeof buf, ",%.4f", report.CR.at(k, c));
        os << buf;
      } else {
        os << ",";
      }
    }
    if (report.CS[static_cast<size_t>(k)]) {
      std::snprintf(buf, sizeof buf, ",%.4f", *report.CS[static_cast<size_t>(k)]);
      os << buf;
    } else {
      os << ",";
    }
    os << "\n";
  }
  return os.str();
}

// ------------------------------------------------------------------- OOD

AnomalyMap anomaly_map(const FeatureStack& features) {
  const int n = features.channels();
  AnomalyMap out{RealMap(features.rows(), features.cols()), Mask(features.rows(), features.cols())};
  const auto& f = features.storage();
  for (size_t p = 0; p < features.pixels(); ++p) {
    const float* fp = f.data() + p * n;
    double s = 0.0;
    for (int k = 0; k < n; ++k) s += std::max(0.0f, fp[k]);
    if (!(s > 0.0)) {
      out.undefined.storage()[p] = 1;
      continue;
    }
    const double mean = 1.0 / n;  // normalized channels sum to one
    double var = 0.0;
    for (int k = 0; k < n; ++k) {
      const double d = std::max(0.0f, fp[k]) / s - mean;
      var += d * d;
    }
    out.values.storage()[p] = static_cast<float>(1.0 - var / n);
  }
  return out;
}

std::optional<double> mean_anomaly(const AnomalyMap& map, const Mask* region) {
  double s = 0.0;
  size_t n = 0;
  for (size_t p = 0; p < map.values.size(); ++p) {
    if (map.undefined.storage()[p]) continue;
    if (region && !region->storage()[p]) continue;
    s += map.values.storage()[p];
    ++n;
  }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

Mask paste_checkerboard(Image& image, int row, int col, int size, int cell) {
  if (row < 0 || col < 0 || row + size > image.rows() || col + size > image.cols() || cell < 1) {
    throw PlacementError("checkerboard does not fit at the requested location");
  }
  Mask m(image.rows(), image.cols());
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const float v = ((r / cell + c / cell) % 2 == 0) ? 1.0f : 0.0f;
      for (int ch = 0; ch < 3; ++ch) image(row + r, col + c, ch) = v;
      m(row + r, col + c) = 1;
    }
  }
  return m;
}

}  // namespace heightlens::dissect
