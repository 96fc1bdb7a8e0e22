#pragma once

namespace finetag {

inline constexpr const char* kToolName = "finetag";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace finetag
