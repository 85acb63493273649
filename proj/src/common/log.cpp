// SPDX-License-Identifier: Apache-2.0
#include "vitatt/log.hpp"

#include <iostream>
#include <mutex>

namespace vitatt {
namespace {
std::mutex g_mutex;
WarningHandler g_handler;
}  // namespace

void warn(const std::string& message) {
  std::lock_guard lock(g_mutex);
  if (g_handler) {
    g_handler(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

WarningHandler set_warning_handler(WarningHandler handler) {
  std::lock_guard lock(g_mutex);
  return std::exchange(g_handler, std::move(handler));
}

}  // namespace vitatt
