#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string_view>

namespace ddsde {

inline void log_warning(std::string_view msg) {
  static std::mutex mutex;
  if (std::getenv("DDSDE_QUIET") != nullptr) return;
  std::lock_guard lock(mutex);
  std::cerr << "[ddsde warning] " << msg << '\n';
}

}  // namespace ddsde
