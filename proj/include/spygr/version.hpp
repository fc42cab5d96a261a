#pragma once

#define SPYGR_VERSION "0.1.0"

namespace spygr {

inline const char* version() { return SPYGR_VERSION; }

}  // namespace spygr
