#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace wallet {

/// Throws Error(io_failure).
std::string read_file(const std::filesystem::path& path);
/// Writes `<path>.tmp`, flushes it to disk and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

}  // namespace wallet
