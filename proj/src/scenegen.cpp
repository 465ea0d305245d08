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

#include "heightlens/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "heightlens/parallel.hpp"
#include "heightlens/random.hpp"

namespace heightlens::scenegen {

namespace fs = std::filesystem;

// ------------------------------------------------------------------ config

void SceneConfig::validate() const {
  if (image_size < 32) throw DomainError("image_size must be >= 32");
  if (class_set.empty() || class_set[0] != "ground") {
    throw DomainError("class_set must be nonempty with ground at index 0");
  }
  for (const char* needed : {"road", "tree", "building", "water"}) {
    if (std::find(class_set.begin(), class_set.end(), needed) ==
        class_set.end()) {
      throw DomainError(std::string("class_set lacks '") + needed + "'");
    }
  }
  for (const IntRange* r :
       {&building_count_range, &tree_count_range, &road_count_range,
        &water_count_range, &building_side_range, &tree_radius_range}) {
    if (r->lo < 0 || r->hi < r->lo) {
      throw DomainError("integer ranges must satisfy 0 <= lo <= hi");
    }
  }
  if (building_side_range.lo < 2 || tree_radius_range.lo < 1) {
    throw DomainError("object size ranges must be positive");
  }
  if (height_rule.building_base_m <= 0.0 ||
      height_rule.building_m_per_px < 0.0 || height_rule.tree_min_m <= 0.0 ||
      height_rule.tree_max_m < height_rule.tree_min_m) {
    throw DomainError("height_rule must give positive tree/building heights");
  }
  const double norm = std::hypot(shadow_direction[0], shadow_direction[1]);
  if (std::abs(norm - 1.0) > 1e-6) {
    throw DomainError("shadow_direction must be a unit vector");
  }
  if (noise_std < 0.0 || noise_std > 1.0) {
    throw DomainError("noise_std must lie in [0, 1]");
  }
  if (shadow_px_per_m < 0.0) throw DomainError("shadow_px_per_m must be >= 0");
}

int SceneConfig::class_index(const std::string& name) const {
  auto it = std::find(class_set.begin(), class_set.end(), name);
  if (it == class_set.end()) throw DomainError("unknown class '" + name + "'");
  return static_cast<int>(it - class_set.begin());
}

io::Json SceneConfig::to_json() const {
  auto range = [](const IntRange& r) { return io::Json::array({r.lo, r.hi}); };
  return {
      {"image_size", image_size},
      {"class_set", class_set},
      {"building_count_range", range(building_count_range)},
      {"tree_count_range", range(tree_count_range)},
      {"road_count_range", range(road_count_range)},
      {"water_count_range", range(water_count_range)},
      {"building_side_range", range(building_side_range)},
      {"tree_radius_range", range(tree_radius_range)},
      {"height_rule",
       {{"building_base_m", height_rule.building_base_m},
        {"building_m_per_px", height_rule.building_m_per_px},
        {"tree_min_m", height_rule.tree_min_m},
        {"tree_max_m", height_rule.tree_max_m}}},
      {"shadow_direction", shadow_direction},
      {"shadow_on", shadow_on},
      {"shadow_px_per_m", shadow_px_per_m},
      {"noise_std", noise_std},
      {"seed", seed},
  };
}

SceneConfig SceneConfig::from_json(const io::Json& j) {
  static const std::vector<std::string> kKnown = {
      "image_size",        "class_set",        "building_count_range",
      "tree_count_range",  "road_count_range", "water_count_range",
      "building_side_range", "tree_radius_range", "height_rule",
      "shadow_direction",  "shadow_on",        "shadow_px_per_m",
      "noise_std",         "seed"};
  if (!j.is_object()) throw SchemaError("/scene", "expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(kKnown.begin(), kKnown.end(), key) == kKnown.end()) {
      throw SchemaError("/scene/" + key, "unknown key");
    }
  }
  SceneConfig c;
  auto range = [&](const char* key, IntRange& out) {
    if (!j.contains(key)) return;
    const auto& v = j[key];
    if (!v.is_array() || v.size() != 2) {
      throw SchemaError(std::string("/scene/") + key, "expected [lo, hi]");
    }
    out = {v[0].get<int>(), v[1].get<int>()};
  };
  try {
    c.image_size = j.value("image_size", c.image_size);
    if (j.contains("class_set")) {
      c.class_set = j["class_set"].get<std::vector<std::string>>();
    }
    range("building_count_range", c.building_count_range);
    range("tree_count_range", c.tree_count_range);
    range("road_count_range", c.road_count_range);
    range("water_count_range", c.water_count_range);
    range("building_side_range", c.building_side_range);
    range("tree_radius_range", c.tree_radius_range);
    if (j.contains("height_rule")) {
      const auto& h = j["height_rule"];
      c.height_rule.building_base_m =
          h.value("building_base_m", c.height_rule.building_base_m);
      c.height_rule.building_m_per_px =
          h.value("building_m_per_px", c.height_rule.building_m_per_px);
      c.height_rule.tree_min_m = h.value("tree_min_m", c.height_rule.tree_min_m);
      c.height_rule.tree_max_m = h.value("tree_max_m", c.height_rule.tree_max_m);
    }
    if (j.contains("shadow_direction")) {
      c.shadow_direction = j["shadow_direction"].get<std::array<double, 2>>();
    }
    c.shadow_on = j.value("shadow_on", c.shadow_on);
    c.shadow_px_per_m = j.value("shadow_px_per_m", c.shadow_px_per_m);
    c.noise_std = j.value("noise_std", c.noise_std);
    c.seed = j.value("seed", c.seed);
  } catch (const io::Json::type_error& e) {
    throw SchemaError("/scene", e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- texture

namespace {

struct Rgb {
  float r, g, b;
};

struct Canvas {
  Image image;
  LabelMap semantic;
  RealMap height;
};

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

void put(Image& img, int r, int c, Rgb col) {
  img(r, c, 0) = clamp01(col.r);
  img(r, c, 1) = clamp01(col.g);
  img(r, c, 2) = clamp01(col.b);
}

Rgb scale(Rgb c, double s) {
  return {static_cast<float>(c.r * s), static_cast<float>(c.g * s),
          static_cast<float>(c.b * s)};
}

Rgb jitter(Rgb c, Rng& rng, double amount) {
  return {static_cast<float>(c.r + rng.uniform(-amount, amount)),
          static_cast<float>(c.g + rng.uniform(-amount, amount)),
          static_cast<float>(c.b + rng.uniform(-amount, amount))};
}

Rgb roof_color(Rng& rng) {
  static constexpr Rgb kPalette[] = {
      {0.62f, 0.62f, 0.64f},  // concrete
      {0.66f, 0.36f, 0.30f},  // tile
      {0.78f, 0.72f, 0.60f},  // beige
      {0.44f, 0.50f, 0.58f},  // slate
  };
  const Rgb base = kPalette[rng.uniform_int(0, 3)];
  return jitter(base, rng, 0.05);
}

Rgb tree_color(Rng& rng) { return jitter({0.16f, 0.40f, 0.13f}, rng, 0.04); }

// Roof pixel at (r, c) of an h x w footprint.
Rgb roof_pixel(Rgb base, int r, int c, int h, int w) {
  if (r == 0 || c == 0 || r == h - 1 || c == w - 1) return scale(base, 0.72);
  const bool along_x = w >= h;
  const int mid = along_x ? h / 2 : w / 2;
  const int pos = along_x ? r : c;
  if (std::min(h, w) >= 8 && pos == mid) return scale(base, 1.12);
  return pos < mid ? base : scale(base, 0.92);
}

// Tree pixel at normalized squared radius d2 in [0, 1].
Rgb tree_pixel(Rgb base, double d2, Rng& rng) {
  const double shade = 0.78 + 0.35 * (1.0 - d2) + rng.uniform(-0.08, 0.08);
  return scale(base, shade);
}

Rgb road_pixel(Rgb base, int across, int width, int along) {
  if (width >= 8 && across == width / 2 && (along / 4) % 2 == 0) {
    return {0.82f, 0.82f, 0.78f};
  }
  return base;
}

void add_noise(Image& img, double stddev, Rng& rng) {
  if (stddev <= 0.0) return;
  for (float& v : img.storage()) {
    v = clamp01(v + stddev * rng.normal());
  }
}

void quantize(Image& img) {
  for (float& v : img.storage()) {
    v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) /
        255.0f;
  }
}

bool region_is_free(const LabelMap& sem, int r0, int c0, int h, int w,
                    int margin) {
  const int rows = sem.rows(), cols = sem.cols();
  if (r0 < 0 || c0 < 0 || r0 + h > rows || c0 + w > cols) return false;
  for (int r = std::max(0, r0 - margin);
       r < std::min(rows, r0 + h + margin); ++r) {
    for (int c = std::max(0, c0 - margin);
         c < std::min(cols, c0 + w + margin); ++c) {
      if (sem(r, c) != kGround) return false;
    }
  }
  return true;
}

struct Footprint {
  std::vector<std::pair<int, int>> pixels;  // (row, col)
  float height = 0.0f;
};

std::string placement_failure(const char* what, int k, int n,
                              const SceneConfig& config) {
  return std::string("cannot place ") + what + " " + std::to_string(k + 1) +
         " of " + std::to_string(n) +
         " without overlapping existing objects after 100 attempts "
         "(image_size=" +
         std::to_string(config.image_size) + ")";
}

void render_ground(Canvas& cv, Rng& rng) {
  const Rgb base = jitter({0.55f, 0.52f, 0.37f}, rng, 0.04);
  const double fx = rng.uniform(0.02, 0.08), fy = rng.uniform(0.02, 0.08);
  const double px = rng.uniform(0, 6.28), py = rng.uniform(0, 6.28);
  for (int r = 0; r < cv.image.rows(); ++r) {
    for (int c = 0; c < cv.image.cols(); ++c) {
      const double v = 1.0 + 0.06 * std::sin(fx * c + px) *
                                 std::cos(fy * r + py);
      put(cv.image, r, c, scale(base, v));
    }
  }
}

void render_roads(Canvas& cv, const SceneConfig& config, Rng& rng) {
  const int n = static_cast<int>(
      rng.uniform_int(config.road_count_range.lo, config.road_count_range.hi));
  const int size = config.image_size;
  const int road = config.class_index("road");
  for (int k = 0; k < n; ++k) {
    const bool horizontal = rng.bernoulli(0.5);
    const int width = static_cast<int>(rng.uniform_int(6, 12));
    const int pos = static_cast<int>(rng.uniform_int(0, size - width));
    const Rgb base = jitter({0.36f, 0.36f, 0.37f}, rng, 0.03);
    for (int a = 0; a < size; ++a) {
      for (int w = 0; w < width; ++w) {
        const int r = horizontal ? pos + w : a;
        const int c = horizontal ? a : pos + w;
        put(cv.image, r, c, road_pixel(base, w, width, a));
        cv.semantic(r, c) = static_cast<uint8_t>(road);
      }
    }
  }
}

void render_water(Canvas& cv, const SceneConfig& config, Rng& rng) {
  const int n = static_cast<int>(rng.uniform_int(config.water_count_range.lo,
                                                 config.water_count_range.hi));
  const int water = config.class_index("water");
  for (int k = 0; k < n; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const int ry = static_cast<int>(rng.uniform_int(6, 16));
      const int rx = static_cast<int>(rng.uniform_int(6, 16));
      const int cy = static_cast<int>(
          rng.uniform_int(ry, config.image_size - ry - 1));
      const int cx = static_cast<int>(
          rng.uniform_int(rx, config.image_size - rx - 1));
      if (!region_is_free(cv.semantic, cy - ry, cx - rx, 2 * ry + 1,
                          2 * rx + 1, 1)) {
        continue;
      }
      const Rgb base = jitter({0.14f, 0.28f, 0.52f}, rng, 0.03);
      for (int r = cy - ry; r <= cy + ry; ++r) {
        for (int c = cx - rx; c <= cx + rx; ++c) {
          const double d2 =
              std::pow((r - cy) / double(ry), 2) + std::pow((c - cx) / double(rx), 2);
          if (d2 > 1.0) continue;
          put(cv.image, r, c, scale(base, 1.0 + 0.05 * std::sin(0.7 * r)));
          cv.semantic(r, c) = static_cast<uint8_t>(water);
        }
      }
      placed = true;
    }
    if (!placed) throw PlacementError(placement_failure("water body", k, n, config));
  }
}

Footprint render_building(Canvas& cv, const SceneConfig& config, int r0,
                          int c0, int h, int w, Rng& rng) {
  const int building = config.class_index("building");
  const Rgb base = roof_color(rng);
  Footprint fp;
  fp.height = static_cast<float>(
      config.height_rule.building_height(static_cast<double>(h) * w));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      put(cv.image, r0 + r, c0 + c, roof_pixel(base, r, c, h, w));
      cv.semantic(r0 + r, c0 + c) = static_cast<uint8_t>(building);
      cv.height(r0 + r, c0 + c) = fp.height;
      fp.pixels.emplace_back(r0 + r, c0 + c);
    }
  }
  return fp;
}

Footprint render_tree(Canvas& cv, const SceneConfig& config, int cy, int cx,
                      int ry, int rx, float height, Rng& rng) {
  const int tree = config.class_index("tree");
  const Rgb base = tree_color(rng);
  Footprint fp;
  fp.height = height;
  for (int r = cy - ry; r <= cy + ry; ++r) {
    for (int c = cx - rx; c <= cx + rx; ++c) {
      const double d2 = std::pow((r - cy) / double(ry), 2) +
                        std::pow((c - cx) / double(rx), 2);
      if (d2 > 1.0) continue;
      put(cv.image, r, c, tree_pixel(base, d2, rng));
      cv.semantic(r, c) = static_cast<uint8_t>(tree);
      cv.height(r, c) = height;
      fp.pixels.emplace_back(r, c);
    }
  }
  return fp;
}

void render_shadows(Canvas& cv, const SceneConfig& config,
                    const std::vector<Footprint>& objects) {
  Mask shaded(cv.image.rows(), cv.image.cols());
  for (const Footprint& fp : objects) {
    const double len = config.shadow_px_per_m * fp.height;
    const int dx = static_cast<int>(std::lround(len * config.shadow_direction[0]));
    const int dy = static_cast<int>(std::lround(len * config.shadow_direction[1]));
    for (auto [r, c] : fp.pixels) {
      const int rr = r + dy, cc = c + dx;
      if (!cv.semantic.in_bounds(rr, cc)) continue;
      if (cv.semantic(rr, cc) != kGround) continue;
      shaded(rr, cc) = 1;
    }
  }
  for (int r = 0; r < shaded.rows(); ++r) {
    for (int c = 0; c < shaded.cols(); ++c) {
      if (!shaded(r, c)) continue;
      for (int ch = 0; ch < 3; ++ch) cv.image(r, c, ch) *= 0.55f;
    }
  }
}

}  // namespace

// ------------------------------------------------------------------ scenes

ScenePatch generate_scene(const SceneConfig& config, int64_t index) {
  config.validate();
  const int size = config.image_size;
  Rng rng(mix_seed(config.seed, static_cast<uint64_t>(index)));
  Canvas cv{Image(size, size, 3), LabelMap(size, size, 1, kGround),
            RealMap(size, size, 1, 0.0f)};

  render_ground(cv, rng);
  render_roads(cv, config, rng);
  render_water(cv, config, rng);

  std::vector<Footprint> objects;
  const int nb = static_cast<int>(rng.uniform_int(
      config.building_count_range.lo, config.building_count_range.hi));
  const int side_hi = std::min(config.building_side_range.hi, size - 2);
  const int side_lo = std::min(config.building_side_range.lo, side_hi);
  for (int k = 0; k < nb; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const int h = static_cast<int>(rng.uniform_int(side_lo, side_hi));
      const int w = static_cast<int>(rng.uniform_int(side_lo, side_hi));
      const int r0 = static_cast<int>(rng.uniform_int(0, size - h));
      const int c0 = static_cast<int>(rng.uniform_int(0, size - w));
      if (!region_is_free(cv.semantic, r0, c0, h, w, 1)) continue;
      objects.push_back(render_building(cv, config, r0, c0, h, w, rng));
      placed = true;
    }
    if (!placed) throw PlacementError(placement_failure("building", k, nb, config));
  }

  const int nt = static_cast<int>(
      rng.uniform_int(config.tree_count_range.lo, config.tree_count_range.hi));
  for (int k = 0; k < nt; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const int ry = static_cast<int>(rng.uniform_int(
          config.tree_radius_range.lo, config.tree_radius_range.hi));
      const int rx = std::max<int>(1, static_cast<int>(ry + rng.uniform_int(-1, 1)));
      if (2 * std::max(rx, ry) + 1 > size) continue;
      const int cy = static_cast<int>(rng.uniform_int(ry, size - ry - 1));
      const int cx = static_cast<int>(rng.uniform_int(rx, size - rx - 1));
      if (!region_is_free(cv.semantic, cy - ry, cx - rx, 2 * ry + 1, 2 * rx + 1,
                          1)) {
        continue;
      }
      const float height = static_cast<float>(rng.uniform(
          config.height_rule.tree_min_m, config.height_rule.tree_max_m));
      objects.push_back(render_tree(cv, config, cy, cx, ry, rx, height, rng));
      placed = true;
    }
    if (!placed) throw PlacementError(placement_failure("tree", k, nt, config));
  }

  if (config.shadow_on) render_shadows(cv, config, objects);
  add_noise(cv.image, config.noise_std, rng);
  quantize(cv.image);

  char id[32];
  std::snprintf(id, sizeof(id), "scene_%06lld", static_cast<long long>(index));
  return ScenePatch{std::move(cv.image), std::move(cv.semantic),
                    std::move(cv.height), id};
}

// --------------------------------------------------------------- templates

namespace {

bool is_template_scale(double s) {
  return std::any_of(kTemplateScales.begin(), kTemplateScales.end(),
                     [s](double t) { return std::abs(t - s) < 1e-9; });
}

int base_unit(const SceneConfig& config, double px_at_128) {
  return std::max(2, static_cast<int>(std::lround(px_at_128 *
                                                  config.image_size / 128.0)));
}

// Rectangle of exactly `area` pixels (or within 1 px when no rectangle with an
// acceptable aspect exists) whose aspect ratio w/h is closest to `aspect`.
std::pair<int, int> fit_rectangle(int area, double aspect) {
  std::pair<int, int> best{0, 0};
  double best_cost = 1e300;
  for (int slack : {0, 1, -1}) {
    const int a = area + slack;
    if (a < 1) continue;
    for (int h = 1; h <= a; ++h) {
      if (a % h != 0) continue;
      const int w = a / h;
      const double cost = std::abs(std::log((double(w) / h) / aspect));
      if (cost < best_cost - 1e-12) {
        best_cost = cost;
        best = {h, w};
      }
    }
    if (best_cost <= std::log(2.0)) return best;
  }
  return best;
}

std::vector<std::pair<int, int>> disk_offsets(int count) {
  const int reach = static_cast<int>(std::ceil(std::sqrt(count / 3.0))) + 2;
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -reach; dy <= reach; ++dy) {
    for (int dx = -reach; dx <= reach; ++dx) offsets.emplace_back(dy, dx);
  }
  std::stable_sort(offsets.begin(), offsets.end(),
                   [](const auto& a, const auto& b) {
                     const int da = a.first * a.first + a.second * a.second;
                     const int db = b.first * b.first + b.second * b.second;
                     if (da != db) return da < db;
                     return std::atan2(a.first, a.second) <
                            std::atan2(b.first, b.second);
                   });
  offsets.resize(static_cast<size_t>(count));
  return offsets;
}

}  // namespace

size_t template_base_area(int class_index, const SceneConfig& config) {
  if (class_index == kBuilding) {
    const int side = base_unit(config, 16);
    return static_cast<size_t>(side) * side;
  }
  if (class_index == kTree) {
    const int radius = base_unit(config, 8);
    size_t n = 0;
    for (int dy = -radius; dy <= radius; ++dy) {
      for (int dx = -radius; dx <= radius; ++dx) {
        if (dx * dx + dy * dy <= radius * radius) ++n;
      }
    }
    return n;
  }
  if (class_index == kRoad) {
    return static_cast<size_t>(base_unit(config, 10)) * base_unit(config, 24);
  }
  throw DomainError("templates exist only for road, tree and building");
}

ObjectTemplate make_template(int class_index, double scale_factor,
                             const SceneConfig& config) {
  config.validate();
  if (class_index != kRoad && class_index != kTree &&
      class_index != kBuilding) {
    throw DomainError("templates exist only for road, tree and building");
  }
  if (!is_template_scale(scale_factor)) {
    throw DomainError("scale_factor must be one of 0.3, 1.0, 1.5, 2.5, 3.0");
  }
  const int target = static_cast<int>(
      std::lround(scale_factor *
                  static_cast<double>(template_base_area(class_index, config))));
  // One texture per (seed, class) so that the templates of a class differ
  // only in scale.
  Rng style_rng(mix_seed(config.seed ^ 0x7e3a11cULL, class_index));
  Rng pixel_rng(mix_seed(config.seed ^ 0x51d9e2ULL,
                         class_index * 16 + std::lround(scale_factor * 10)));

  ObjectTemplate t;
  t.class_index = class_index;
  t.scale_factor = scale_factor;

  if (class_index == kTree) {
    const auto offsets = disk_offsets(target);
    int min_r = 0, max_r = 0, min_c = 0, max_c = 0;
    for (auto [dy, dx] : offsets) {
      min_r = std::min(min_r, dy);
      max_r = std::max(max_r, dy);
      min_c = std::min(min_c, dx);
      max_c = std::max(max_c, dx);
    }
    const int h = max_r - min_r + 1, w = max_c - min_c + 1;
    t.mask = Mask(h, w);
    t.pixels = Image(h, w, 3);
    const Rgb base = tree_color(style_rng);
    const double r2 = std::max(1.0, double(max_r) * max_r);
    for (auto [dy, dx] : offsets) {
      t.mask(dy - min_r, dx - min_c) = 1;
      put(t.pixels, dy - min_r, dx - min_c,
          tree_pixel(base, std::min(1.0, (dy * dy + dx * dx) / r2), pixel_rng));
    }
    t.height_value = static_cast<float>(config.height_rule.tree_mean());
  } else {
    const double aspect = class_index == kRoad ? 2.4 : 1.0;
    auto [h, w] = fit_rectangle(target, aspect);
    t.mask = Mask(h, w, 1, 1);
    t.pixels = Image(h, w, 3);
    if (class_index == kBuilding) {
      const Rgb base = roof_color(style_rng);
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) put(t.pixels, r, c, roof_pixel(base, r, c, h, w));
      }
      t.height_value = static_cast<float>(
          config.height_rule.building_height(static_cast<double>(h) * w));
    } else {
      const Rgb base = jitter({0.36f, 0.36f, 0.37f}, style_rng, 0.03);
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) put(t.pixels, r, c, road_pixel(base, r, h, c));
      }
      t.height_value = 0.0f;
    }
  }
  add_noise(t.pixels, config.noise_std, pixel_rng);
  quantize(t.pixels);
  for (int r = 0; r < t.rows(); ++r) {
    for (int c = 0; c < t.cols(); ++c) {
      if (t.mask(r, c)) continue;
      for (int ch = 0; ch < 3; ++ch) t.pixels(r, c, ch) = 0.0f;
    }
  }
  return t;
}

ScenePatch paste_object(const ScenePatch& scene, const ObjectTemplate& tmpl,
                        Location at) {
  if (at.x < 0 || at.y < 0 || at.y + tmpl.rows() > scene.semantic.rows() ||
      at.x + tmpl.cols() > scene.semantic.cols()) {
    throw PlacementError("template of " + std::to_string(tmpl.rows()) + "x" +
                         std::to_string(tmpl.cols()) + " at (" +
                         std::to_string(at.x) + ", " + std::to_string(at.y) +
                         ") leaves the " + std::to_string(scene.semantic.rows()) +
                         "x" + std::to_string(scene.semantic.cols()) + " scene");
  }
  ScenePatch out = scene;
  for (int r = 0; r < tmpl.rows(); ++r) {
    for (int c = 0; c < tmpl.cols(); ++c) {
      if (!tmpl.mask(r, c)) continue;
      const int rr = at.y + r, cc = at.x + c;
      for (int ch = 0; ch < 3; ++ch) out.image(rr, cc, ch) = tmpl.pixels(r, c, ch);
      out.semantic(rr, cc) = static_cast<uint8_t>(tmpl.class_index);
      out.height(rr, cc) = tmpl.height_value;
    }
  }
  return out;
}

Mask shadow_footprint(const SceneConfig& config, const ObjectTemplate& tmpl,
                      Location at, double shadow_scale, int rows, int cols) {
  if (shadow_scale <= 0.0) throw DomainError("shadow scale must be positive");
  const double f = std::sqrt(shadow_scale);
  const int h = std::max(1, static_cast<int>(std::lround(tmpl.rows() * f)));
  const int w = std::max(1, static_cast<int>(std::lround(tmpl.cols() * f)));
  const double len = config.shadow_px_per_m * tmpl.height_value;
  const double cy = at.y + 0.5 * tmpl.rows() + len * config.shadow_direction[1];
  const double cx = at.x + 0.5 * tmpl.cols() + len * config.shadow_direction[0];
  const int r0 = static_cast<int>(std::lround(cy - 0.5 * h));
  const int c0 = static_cast<int>(std::lround(cx - 0.5 * w));
  Mask out(rows, cols);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int sr = std::min(tmpl.rows() - 1, static_cast<int>(r / f));
      const int sc = std::min(tmpl.cols() - 1, static_cast<int>(c / f));
      if (!tmpl.mask(sr, sc)) continue;
      const int rr = r0 + r, cc = c0 + c;
      if (!out.in_bounds(rr, cc)) continue;
      const int tr = rr - at.y, tc = cc - at.x;
      if (tr >= 0 && tc >= 0 && tr < tmpl.rows() && tc < tmpl.cols() &&
          tmpl.mask(tr, tc)) {
        continue;
      }
      out(rr, cc) = 1;
    }
  }
  return out;
}

ScenePatch paste_shadow(const ScenePatch& scene, const Mask& shadow,
                        Location at) {
  ScenePatch out = scene;
  for (int r = 0; r < shadow.rows(); ++r) {
    for (int c = 0; c < shadow.cols(); ++c) {
      if (!shadow(r, c)) continue;
      const int rr = at.y + r, cc = at.x + c;
      if (!out.semantic.in_bounds(rr, cc) || out.semantic(rr, cc) != kGround) {
        continue;
      }
      for (int ch = 0; ch < 3; ++ch) {
        out.image(rr, cc, ch) =
            std::round(out.image(rr, cc, ch) * 0.55f * 255.0f) / 255.0f;
      }
    }
  }
  return out;
}

// ------------------------------------------------------------------ corpus

io::Json Manifest::to_json() const {
  return {{"scene_config", config.to_json()},
          {"splits", {{"train", train}, {"val", val}, {"test", test}}}};
}

Manifest Manifest::from_json(const io::Json& j) {
  Manifest m;
  if (!j.contains("scene_config") || !j.contains("splits")) {
    throw SchemaError("/", "manifest needs scene_config and splits");
  }
  m.config = SceneConfig::from_json(j["scene_config"]);
  const auto& s = j["splits"];
  m.train = s.value("train", std::vector<std::string>{});
  m.val = s.value("val", std::vector<std::string>{});
  m.test = s.value("test", std::vector<std::string>{});
  return m;
}

const std::vector<std::string>& Manifest::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw DomainError("unknown split '" + name + "'");
}

int64_t split_offset(const SplitSizes& sizes, const std::string& split) {
  if (split == "train") return 0;
  if (split == "val") return sizes.train;
  if (split == "test") return static_cast<int64_t>(sizes.train) + sizes.val;
  throw DomainError("unknown split '" + split + "'");
}

std::string patch_id(const std::string& split, int i) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%s_%05d", split.c_str(), i);
  return buf;
}

namespace {

int split_count(const SplitSizes& sizes, const std::string& split) {
  if (split == "train") return sizes.train;
  if (split == "val") return sizes.val;
  if (split == "test") return sizes.test;
  throw DomainError("unknown split '" + split + "'");
}

}  // namespace

std::vector<ScenePatch> generate_split(const SceneConfig& config,
                                       const SplitSizes& sizes,
                                       const std::string& split, int jobs) {
  const int n = split_count(sizes, split);
  const int64_t offset = split_offset(sizes, split);
  std::vector<ScenePatch> out(static_cast<size_t>(n));
  parallel_for(n, jobs, [&](int i) {
    out[static_cast<size_t>(i)] = generate_scene(config, offset + i);
    out[static_cast<size_t>(i)].id = patch_id(split, i);
  });
  return out;
}

void write_patch(const fs::path& dir, const ScenePatch& p) {
  io::write_png_rgb(dir / (p.id + ".image.png"), p.image);
  io::write_png_gray(dir / (p.id + ".semantic.png"), p.semantic);
  io::write_array(dir / (p.id + ".height.rawf"), io::to_array(p.height));
}

ScenePatch read_patch(const fs::path& dir, const std::string& id) {
  ScenePatch p;
  p.id = id;
  p.image = io::read_png_rgb(dir / (id + ".image.png"));
  p.semantic = io::read_png_gray(dir / (id + ".semantic.png"));
  p.height = io::to_map(io::read_array(dir / (id + ".height.rawf")));
  require_same_grid(p.image, p.semantic, "patch " + id);
  require_same_grid(p.image, p.height, "patch " + id);
  return p;
}

Manifest write_corpus(const fs::path& root, const SceneConfig& config,
                      const SplitSizes& sizes, int jobs) {
  config.validate();
  Manifest m;
  m.config = config;
  for (const std::string split : {"train", "val", "test"}) {
    const int n = split_count(sizes, split);
    const int64_t offset = split_offset(sizes, split);
    auto& ids = split == "train" ? m.train : split == "val" ? m.val : m.test;
    ids.resize(static_cast<size_t>(n));
    fs::create_directories(root / split);
    parallel_for(n, jobs, [&](int i) {
      ScenePatch p = generate_scene(config, offset + i);
      p.id = patch_id(split, i);
      write_patch(root / split, p);
      ids[static_cast<size_t>(i)] = p.id;
    });
  }
  io::write_text(root / "manifest.json", io::canonical_dump(m.to_json()));
  return m;
}

Manifest read_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  if (!fs::exists(path)) {
    throw FormatError("corpus manifest not found: " + path.string());
  }
  return Manifest::from_json(io::Json::parse(io::read_text(path)));
}

std::vector<ScenePatch> load_split(const fs::path& root,
                                   const std::string& split, int limit) {
  const Manifest m = read_manifest(root);
  const auto& ids = m.split(split);
  const size_t n = limit < 0 ? ids.size()
                             : std::min(ids.size(), static_cast<size_t>(limit));
  std::vector<ScenePatch> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) out.push_back(read_patch(root / split, ids[i]));
  return out;
}

}  // namespace heightlens::scenegen
