#pragma once

namespace aft {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace aft
