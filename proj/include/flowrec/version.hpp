#pragma once

namespace flowrec {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace flowrec
