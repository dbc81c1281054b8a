#pragma once

namespace tdrl {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace tdrl
