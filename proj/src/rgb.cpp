#include "ruid/rgb.hpp"

#include <cstdio>

namespace ruid {

std::string to_hex(Rgb c) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02X%02X%02X", c.r, c.g, c.b);
    return buf;
}

} // namespace ruid
