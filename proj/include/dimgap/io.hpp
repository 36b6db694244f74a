#pragma once

#include "dimgap/common.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace dimgap {

/// printf("%.17g"), the CSV float format.
std::string fmt17(double v);

struct CsvTable {
  std::vector<std::string> header;  // empty when the first row is numeric
  Matrix values;                    // rows x cols
};

/// Rectangular numeric CSV. The first row is taken as a header when any of its
/// cells fails to parse as a number. Ragged rows and bad cells raise parse-error
/// naming the 1-based line.
CsvTable read_numeric_csv(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and rename.
void write_file(const std::filesystem::path& path, const std::string& content);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace dimgap
