#include "laybench/unicode.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "laybench/error.hpp"

namespace laybench::unicode {

Decoded decode_at(std::string_view text, std::size_t offset) {
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(text.data());
  auto length = static_cast<int32_t>(text.size());
  auto i = static_cast<int32_t>(offset);
  UChar32 c = 0;
  U8_NEXT(bytes, i, length, c);
  if (c < 0) return {U'\uFFFD', static_cast<std::size_t>(i) - offset};
  return {static_cast<char32_t>(c), static_cast<std::size_t>(i) - offset};
}

bool is_alpha(char32_t cp) { return u_isalpha(static_cast<UChar32>(cp)); }
bool is_alnum(char32_t cp) { return u_isalnum(static_cast<UChar32>(cp)); }
bool is_space(char32_t cp) { return u_isUWhiteSpace(static_cast<UChar32>(cp)); }
bool is_upper(char32_t cp) { return u_isupper(static_cast<UChar32>(cp)); }

std::string to_nfc(std::string_view text) {
  // Pure ASCII is already NFC.
  bool ascii = true;
  for (unsigned char c : text) {
    if (c >= 0x80) {
      ascii = false;
      break;
    }
  }
  if (ascii) return std::string(text);

  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
  auto source = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString normalized = nfc->normalize(source, status);
  if (U_FAILURE(status)) throw Error("NFC normalization failed");
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

std::string fold_case(std::string_view text) {
  auto s = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  s.foldCase();
  std::string out;
  s.toUTF8String(out);
  return out;
}

std::size_t byte_to_codepoint_offset(std::string_view text, std::size_t byte_offset) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < byte_offset && i < text.size();) {
    i += decode_at(text, i).length;
    ++count;
  }
  return count;
}

std::size_t codepoint_to_byte_offset(std::string_view text, std::size_t cp_offset) {
  std::size_t i = 0;
  for (std::size_t n = 0; n < cp_offset; ++n) {
    if (i >= text.size()) throw PreconditionError("code-point offset " + std::to_string(cp_offset) + " past end of text");
    i += decode_at(text, i).length;
  }
  return i;
}

}  // namespace laybench::unicode
