#pragma once

// Random valid UTF-8 strings mixing 1- to 4-byte code points.

#include <string>

#include "lvt/rng.hpp"

namespace lvt::testing {

inline std::string random_utf8(Rng& rng) {
    std::string s;
    const int n = static_cast<int>(rng.uniform() * 12);
    for (int i = 0; i < n; ++i) {
        const double kind = rng.uniform();
        std::uint32_t cp;
        if (kind < 0.5) cp = 0x20 + static_cast<std::uint32_t>(rng.uniform() * 0x5f);
        else if (kind < 0.75) cp = 0x80 + static_cast<std::uint32_t>(rng.uniform() * (0x800 - 0x80));
        else if (kind < 0.9) {
            cp = 0x800 + static_cast<std::uint32_t>(rng.uniform() * (0x10000 - 0x800));
            if (cp >= 0xD800 && cp <= 0xDFFF) cp = 0xE000;
        } else cp = 0x10000 + static_cast<std::uint32_t>(rng.uniform() * (0x110000 - 0x10000));
        if (cp < 0x80) s += static_cast<char>(cp);
        else if (cp < 0x800) {
            s += static_cast<char>(0xC0 | (cp >> 6));
            s += static_cast<char>(0x80 | (cp & 0x3F));
        } else if (cp < 0x10000) {
            s += static_cast<char>(0xE0 | (cp >> 12));
            s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
            s += static_cast<char>(0x80 | (cp & 0x3F));
        } else {
            s += static_cast<char>(0xF0 | (cp >> 18));
            s += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
            s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
            s += static_cast<char>(0x80 | (cp & 0x3F));
        }
    }
    return s;
}

} // namespace lvt::testing
