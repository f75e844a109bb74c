#include "hcanet/version.hpp"

namespace hcanet {

const char* version() { return HCANET_VERSION; }

}  // namespace hcanet
