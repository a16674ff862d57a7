#pragma once

namespace nnmpc {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace nnmpc
