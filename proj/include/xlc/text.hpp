#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace xlc {

// Canonical composition (NFC). Invalid UTF-8 sequences are replaced with U+FFFD.
std::string nfc(std::string_view utf8);

// Unicode full case folding, then NFC.
std::string case_fold(std::string_view utf8);

// Code points of a UTF-8 string.
std::u32string to_code_points(std::string_view utf8);

// Splits on Unicode white space, dropping empty tokens.
std::vector<std::string> split_whitespace(std::string_view utf8);

bool is_white_space(char32_t c);

// Lowercase hex SHA-256 of the raw bytes.
std::string sha256_hex(std::string_view bytes);

}  // namespace xlc
