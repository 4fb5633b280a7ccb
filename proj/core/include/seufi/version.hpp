#pragma once

namespace seufi {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace seufi
