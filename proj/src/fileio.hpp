#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace redecode::io {

/// Lines without terminators; LF and CRLF both accepted. Throws DataError
/// naming the path if the file cannot be opened.
std::vector<std::string> read_lines(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`, so
/// readers never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::vector<std::string_view> split(std::string_view text, char sep);

}  // namespace redecode::io
