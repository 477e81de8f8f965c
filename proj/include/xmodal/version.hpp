#pragma once

namespace xmodal {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace xmodal
