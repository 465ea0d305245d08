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

#ifndef HEIGHTLENS_TOOLS_FIGURES_HPP_
#define HEIGHTLENS_TOOLS_FIGURES_HPP_

#include <string>
#include <vector>

namespace heightlens::figures {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Static SVG line chart; non-finite points are skipped.
std::string line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                       const std::vector<Series>& series);

struct BarGroup {
  std::string name;            // legend entry
  std::vector<double> values;  // one per category
};

// Grouped vertical bars, one cluster per category.
std::string bar_chart(const std::string& title, const std::vector<std::string>& categories,
                      const std::vector<BarGroup>& groups);

}  // namespace heightlens::figures

#endif  // HEIGHTLENS_TOOLS_FIGURES_HPP_
