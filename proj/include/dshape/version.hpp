#pragma once

namespace dshape {

inline constexpr const char* kVersion = "dshape 0.1.0";

}  // namespace dshape
