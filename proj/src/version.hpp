#pragma once

namespace mvs {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mvs
