#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace qadpt {

/// Whole file as bytes; DataError if it cannot be opened.
std::string read_file(const std::string& path);
/// Writes through a temporary sibling and renames it over `path`.
void write_file_atomic(const std::string& path, std::string_view bytes);

/// Calls fn(line_number, line) for every line, '\r' stripped, 1-based numbers.
void for_each_line(std::string_view text,
                   const std::function<void(std::size_t, std::string_view)>& fn);

std::uint64_t fnv1a(std::string_view bytes);

}  // namespace qadpt
