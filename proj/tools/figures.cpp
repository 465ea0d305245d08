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

#include "figures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace heightlens::figures {
namespace {

constexpr int kW = 640, kH = 400;
constexpr int kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); }
  double py(double y) const { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); }
};

void pad(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
}

void header(std::ostringstream& o, const std::string& title) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title)
    << "</text>\n";
}

void axes(std::ostringstream& o, const Frame& f, bool xticks) {
  o << "<line x1=\"" << kLeft << "\" y1=\"" << kH - kBottom << "\" x2=\"" << kW - kRight << "\" y2=\""
    << kH - kBottom << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kH - kBottom
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = f.y0 + (f.y1 - f.y0) * i / 4.0;
    o << "<text x=\"" << kLeft - 6 << "\" y=\"" << f.py(y) + 4 << "\" text-anchor=\"end\">" << num(y)
      << "</text>\n";
    if (xticks) {
      const double x = f.x0 + (f.x1 - f.x0) * i / 4.0;
      o << "<text x=\"" << f.px(x) << "\" y=\"" << kH - kBottom + 16 << "\" text-anchor=\"middle\">"
        << num(x) << "</text>\n";
    }
  }
}

void legend(std::ostringstream& o, size_t i, const std::string& name) {
  const int y = kTop + 10 + static_cast<int>(i) * 18;
  o << "<rect x=\"" << kW - kRight + 12 << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"10\" fill=\""
    << kPalette[i % 10] << "\"/>\n<text x=\"" << kW - kRight + 30 << "\" y=\"" << y << "\">" << esc(name)
    << "</text>\n";
}

}  // namespace

std::string line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                       const std::vector<Series>& series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const Series& s : series) {
    for (size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  pad(x0, x1);
  pad(y0, y1);
  const Frame f{x0, x1, y0, y1};
  std::ostringstream o;
  header(o, title);
  axes(o, f, true);
  o << "<text x=\"" << (kLeft + kW - kRight) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">"
    << esc(xlabel) << "</text>\n";
  o << "<text transform=\"translate(16," << (kTop + kH - kBottom) / 2
    << ") rotate(-90)\" text-anchor=\"middle\">" << esc(ylabel) << "</text>\n";
  for (size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    o << "<polyline fill=\"none\" stroke=\"" << kPalette[k % 10] << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      o << f.px(s.x[i]) << "," << f.py(s.y[i]) << " ";
    }
    o << "\"/>\n";
    legend(o, k, s.name);
  }
  o << "</svg>\n";
  return o.str();
}

std::string bar_chart(const std::string& title, const std::vector<std::string>& categories,
                      const std::vector<BarGroup>& groups) {
  double y1 = 0.0;
  for (const BarGroup& g : groups)
    for (double v : g.values)
      if (std::isfinite(v)) y1 = std::max(y1, v);
  if (!(y1 > 0.0)) y1 = 1.0;
  const Frame f{0.0, static_cast<double>(std::max<size_t>(1, categories.size())), 0.0, y1};
  std::ostringstream o;
  header(o, title);
  axes(o, f, false);
  const double slot = (kW - kLeft - kRight) / f.x1;
  const double bw = slot * 0.8 / static_cast<double>(std::max<size_t>(1, groups.size()));
  for (size_t c = 0; c < categories.size(); ++c) {
    o << "<text x=\"" << f.px(c + 0.5) << "\" y=\"" << kH - kBottom + 16 << "\" text-anchor=\"middle\">"
      << esc(categories[c]) << "</text>\n";
    for (size_t g = 0; g < groups.size(); ++g) {
      const double v = c < groups[g].values.size() ? groups[g].values[c] : NAN;
      if (!std::isfinite(v)) continue;
      const double x = f.px(static_cast<double>(c)) + slot * 0.1 + bw * g;
      o << "<rect x=\"" << x << "\" y=\"" << f.py(v) << "\" width=\"" << bw << "\" height=\""
        << f.py(0.0) - f.py(v) << "\" fill=\"" << kPalette[g % 10] << "\"/>\n";
    }
  }
  for (size_t g = 0; g < groups.size(); ++g) legend(o, g, groups[g].name);
  o << "</svg>\n";
  return o.str();
}

}  // namespace heightlens::figures
