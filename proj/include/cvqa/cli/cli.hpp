// Copyright 2026 The cvqa Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cvqa::cli {

/// Relative --out paths and default run directories live under this
/// directory when the variable is set.
inline constexpr const char* kOutputRootEnv = "CVQA_OUTPUT_ROOT";

enum ExitCode { kOk = 0, kValidation = 1, kRuntime = 2 };

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name. Returns an ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cvqa::cli
