#pragma once

#include <functional>
#include <string>

namespace support {

// Message of the exception thrown by f, or "" if it returned normally.
inline std::string thrown_message(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

inline bool mentions(const std::string& text, const std::string& needle) {
  return text.find(needle) != std::string::npos;
}

}  // namespace support
