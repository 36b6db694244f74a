#include "dimgap/io.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace dimgap {

namespace fs = std::filesystem;

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

bool parse_double(const std::string& cell, double& out) {
  std::size_t b = cell.find_first_not_of(" \t\r");
  std::size_t e = cell.find_last_not_of(" \t\r");
  if (b == std::string::npos) return false;
  const std::string s = cell.substr(b, e - b + 1);
  char* end = nullptr;
  errno = 0;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && errno != ERANGE;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  std::size_t e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace

CsvTable read_numeric_csv(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());

  CsvTable table;
  std::vector<double> values;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  long lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (first) {
      first = false;
      cols = cells.size();
      double tmp;
      bool numeric = true;
      for (const auto& c : cells) numeric = numeric && parse_double(c, tmp);
      if (!numeric) {
        for (const auto& c : cells) table.header.push_back(trim(c));
        continue;
      }
    }
    require(cells.size() == cols, ErrorKind::Parse,
            path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(cols) +
                " cells, found " + std::to_string(cells.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v;
      require(parse_double(cells[c], v) && std::isfinite(v), ErrorKind::Parse,
              path.string() + ":" + std::to_string(lineno) + ": bad numeric cell " +
                  std::to_string(c + 1) + " '" + trim(cells[c]) + "'");
      values.push_back(v);
    }
    ++rows;
  }
  require(cols > 0 && rows > 0, ErrorKind::Parse, path.string() + ": no data rows");
  table.values = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  return table;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + tmp.string());
    out << content;
    require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_file(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

}  // namespace dimgap
