#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

namespace l2rm::io {

/// Writes to a sibling temporary file, then renames it over `path`.
void atomic_write(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace l2rm::io
