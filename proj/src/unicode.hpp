#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace redecode::unicode {

/// Invalid sequences decode to U+FFFD.
std::u32string decode_utf8(std::string_view text);
std::string encode_utf8(std::u32string_view text);

bool is_punctuation(char32_t cp);
bool is_whitespace(char32_t cp);
char32_t to_lower(char32_t cp);

}  // namespace redecode::unicode
