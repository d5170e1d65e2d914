#pragma once

namespace dopo {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dopo
