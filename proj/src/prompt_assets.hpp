#pragma once

#include <string_view>

namespace laybench::prompts::assets {

extern const std::string_view kExplain;
extern const std::string_view kZeroShotLs;
extern const std::string_view kRater;
extern const std::string_view kScorePrefix;

}  // namespace laybench::prompts::assets
