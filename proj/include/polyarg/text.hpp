#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace polyarg {

std::string_view trim(std::string_view s);

// Whitespace-separated tokens.
std::vector<std::string_view> split_ws(std::string_view s);

// Splits UTF-8 into one string_view per code point. Invalid bytes become
// single-byte units so arbitrary input never throws.
std::vector<std::string_view> utf8_chars(std::string_view s);

// ASCII-only lowercasing; other bytes are left untouched.
std::string ascii_lower(std::string_view s);
std::string ascii_upper(std::string_view s);

}  // namespace polyarg
