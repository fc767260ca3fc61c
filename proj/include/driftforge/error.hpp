/*
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#pragma once

#include <stdexcept>
#include <string>

namespace driftforge {

/// Error categories, numerically equal to the CLI exit codes.
enum class ErrorKind : int {
    kInput = 2,     // bad config, schema, file contents
    kRuntime = 3,   // training divergence, SUT failure
    kRejected = 4,  // snapshot agent refused the request
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exitCode() const noexcept { return static_cast<int>(kind_); }

  private:
    ErrorKind kind_;
};

[[noreturn]] inline void failInput(const std::string& message) { throw Error(ErrorKind::kInput, message); }
[[noreturn]] inline void failRuntime(const std::string& message) { throw Error(ErrorKind::kRuntime, message); }

}// namespace driftforge
