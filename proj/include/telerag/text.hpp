#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace telerag::text {

bool is_valid_utf8(std::string_view s);

/// Byte offset of every code point start in `s`, followed by s.size().
/// Assumes valid UTF-8.
std::vector<std::size_t> codepoint_offsets(std::string_view s);

/// Number of code points in `s`.
std::size_t codepoint_count(std::string_view s);

std::string to_lower_ascii(std::string_view s);
std::string trim(std::string_view s);

/// Splits on '\n', keeping no terminators. A trailing newline does not
/// produce an empty final line.
std::vector<std::string_view> split_lines(std::string_view s);

/// Escapes "\\", "\n", "\t" for single-line storage; unescape reverses it.
std::string escape_line(std::string_view s);
std::string unescape_line(std::string_view s);

}  // namespace telerag::text
