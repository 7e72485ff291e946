#pragma once

#include <iostream>
#include <mutex>
#include <string_view>

namespace vircov {

inline void log_warning(std::string_view message) {
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << "warning: " << message << '\n';
}

}  // namespace vircov
