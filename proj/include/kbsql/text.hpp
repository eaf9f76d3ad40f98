#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace kbsql {

std::string trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
bool starts_with_ci(std::string_view s, std::string_view prefix);
std::vector<std::string> split_lines(std::string_view s);

// Dedup identity for knowledge text: ASCII lowercase, internal whitespace
// runs collapsed to one space, leading/trailing whitespace removed, and
// trailing punctuation (. , ; : ! ?) stripped.
std::string normalize_knowledge(std::string_view text);

// Lowercased maximal runs of [a-z0-9] and non-ASCII bytes.
std::vector<std::string> tokenize(std::string_view text);

std::uint64_t fnv1a64(std::string_view bytes);

std::string sha256_hex(std::string_view bytes);

// Shortest decimal representation that round-trips to the same double.
std::string format_double(double value);

// Whole-file helpers. Both throw IoError.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace kbsql
