#pragma once

namespace corrnet {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace corrnet
