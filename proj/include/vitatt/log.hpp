// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

namespace vitatt {

using WarningHandler = std::function<void(const std::string&)>;

// Reports a recoverable problem (clamped value, dropped rows, undefined
// metric). Goes to stderr unless a handler is installed.
void warn(const std::string& message);

// Installs `handler` (an empty one restores stderr) and returns the previous.
WarningHandler set_warning_handler(WarningHandler handler);

// Installs a handler for the lifetime of the object.
class ScopedWarningHandler {
 public:
  explicit ScopedWarningHandler(WarningHandler handler)
      : previous_(set_warning_handler(std::move(handler))) {}
  ~ScopedWarningHandler() { set_warning_handler(std::move(previous_)); }
  ScopedWarningHandler(const ScopedWarningHandler&) = delete;
  ScopedWarningHandler& operator=(const ScopedWarningHandler&) = delete;

 private:
  WarningHandler previous_;
};

}  // namespace vitatt
