#pragma once

namespace hcanet {

/// Library version, e.g. "0.1.0".
const char* version();

}  // namespace hcanet
