#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace evoconfig::text {

std::string trim(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string to_lower(std::string_view s);
bool contains(std::string_view haystack, std::string_view needle);
bool icontains(std::string_view haystack, std::string_view needle);
std::string replace_all(std::string s, std::string_view from, std::string_view to);

/// Collapses every run of whitespace (including newlines) into one space.
std::string single_line(std::string_view s);

/// Cuts `s` to at most `max_chars` bytes, appending "..." when cut.
std::string clip(std::string_view s, std::size_t max_chars);

/// Keeps the last `max_bytes` bytes. Returns true through `clipped` when cut.
std::string keep_tail(std::string_view s, std::size_t max_bytes, bool& clipped);

/// Escapes every ECMAScript regex metacharacter.
std::string regex_escape(std::string_view s);

/// Whitespace tokenization honouring single quotes, double quotes and
/// backslash escapes. Quotes are removed from the returned words.
std::vector<std::string> shell_words(std::string_view s);

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace evoconfig::text
