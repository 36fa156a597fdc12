#pragma once

namespace prrn {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace prrn
