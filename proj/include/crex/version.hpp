#pragma once

namespace crex {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace crex
