#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

// Thin UTF-8 helpers over ICU. All offsets in this project are byte offsets
// into UTF-8 text unless a name says otherwise.
namespace laybench::unicode {

// One decoded code point and the number of bytes it occupied. Invalid bytes
// decode as U+FFFD with length 1 so that scanning always makes progress.
struct Decoded {
  char32_t cp;
  std::size_t length;
};

Decoded decode_at(std::string_view text, std::size_t offset);

bool is_alpha(char32_t cp);
bool is_alnum(char32_t cp);
bool is_space(char32_t cp);
bool is_upper(char32_t cp);

std::string to_nfc(std::string_view text);
std::string fold_case(std::string_view text);

// Conversions between byte offsets and code-point offsets, used at the wire
// boundary where external tools count characters.
std::size_t byte_to_codepoint_offset(std::string_view text, std::size_t byte_offset);
std::size_t codepoint_to_byte_offset(std::string_view text, std::size_t cp_offset);

}  // namespace laybench::unicode
