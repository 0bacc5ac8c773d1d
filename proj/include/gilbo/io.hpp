#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace gilbo {

std::string read_file(const std::filesystem::path& path);

// Writes to "<path>.tmp" and renames over path, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

// Rounds to 9 significant digits; JSON dumps the shortest round-trip form.
double round9(double v);

// "%.9g" rendering used for CSV cells.
std::string fmt9(double v);

std::string dump_json(const nlohmann::json& j);

} // namespace gilbo
