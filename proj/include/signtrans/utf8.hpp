// Minimal UTF-8 handling: validation and code-point splitting.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace signtrans {
namespace utf8 {

// Byte length of the sequence starting with `lead`, or 0 if `lead` cannot
// start a sequence.
inline int sequence_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead & 0xE0) == 0xC0) return 2;
    if ((lead & 0xF0) == 0xE0) return 3;
    if ((lead & 0xF8) == 0xF0) return 4;
    return 0;
}

inline bool is_continuation(unsigned char b) { return (b & 0xC0) == 0x80; }

// Returns the byte offset of the first malformed sequence, or npos if the
// input is valid UTF-8. Checks structure and overlong/anti-surrogate rules.
inline size_t find_invalid(std::string_view s) {
    size_t i = 0;
    while (i < s.size()) {
        unsigned char lead = static_cast<unsigned char>(s[i]);
        int len = sequence_length(lead);
        if (len == 0 || i + len > s.size()) return i;
        uint32_t cp = 0;
        switch (len) {
            case 1: cp = lead; break;
            case 2: cp = lead & 0x1Fu; break;
            case 3: cp = lead & 0x0Fu; break;
            case 4: cp = lead & 0x07u; break;
        }
        for (int k = 1; k < len; ++k) {
            unsigned char b = static_cast<unsigned char>(s[i + k]);
            if (!is_continuation(b)) return i;
            cp = (cp << 6) | (b & 0x3Fu);
        }
        bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
                        (len == 4 && cp < 0x10000);
        bool surrogate = cp >= 0xD800 && cp <= 0xDFFF;
        if (overlong || surrogate || cp > 0x10FFFF) return i;
        i += len;
    }
    return std::string_view::npos;
}

inline bool is_valid(std::string_view s) { return find_invalid(s) == std::string_view::npos; }

// Splits a valid UTF-8 string into one std::string per code point.
// Throws std::invalid_argument on malformed input.
inline std::vector<std::string> split_codepoints(std::string_view s) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < s.size()) {
        int len = sequence_length(static_cast<unsigned char>(s[i]));
        if (len == 0 || i + len > s.size()) {
            throw std::invalid_argument("invalid UTF-8 at byte offset " + std::to_string(i));
        }
        out.emplace_back(s.substr(i, static_cast<size_t>(len)));
        i += static_cast<size_t>(len);
    }
    return out;
}

inline size_t count_codepoints(std::string_view s) {
    size_t n = 0, i = 0;
    while (i < s.size()) {
        int len = sequence_length(static_cast<unsigned char>(s[i]));
        if (len == 0) throw std::invalid_argument("invalid UTF-8");
        i += static_cast<size_t>(len);
        ++n;
    }
    return n;
}

}  // namespace utf8
}  // namespace signtrans
