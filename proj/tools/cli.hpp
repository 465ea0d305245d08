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

#ifndef HEIGHTLENS_TOOLS_CLI_HPP_
#define HEIGHTLENS_TOOLS_CLI_HPP_

#include <string>
#include <vector>

#include "heightlens/io.hpp"

namespace heightlens::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

// Full default run configuration; every key a config file may set.
io::Json default_config();

// Overlays `patch` onto `base`, rejecting keys `base` does not have.
void merge_config(io::Json& base, const io::Json& patch, const std::string& where = "");

// Entry point; args excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace heightlens::cli

#endif  // HEIGHTLENS_TOOLS_CLI_HPP_
