#pragma once

#include <filesystem>
#include <string>

namespace wxs {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

/// Writes to a sibling temporary name and renames over `path`, so readers
/// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace wxs
