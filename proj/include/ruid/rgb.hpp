#pragma once

#include <cstdint>
#include <string>

namespace ruid {

struct Rgb {
    uint8_t r = 0;
    uint8_t g = 0;
    uint8_t b = 0;

    bool operator==(const Rgb&) const = default;
};

// "#RRGGBB", uppercase.
std::string to_hex(Rgb c);

} // namespace ruid
