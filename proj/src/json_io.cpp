#include "advgnn/json_io.hpp"

#include "advgnn/error.hpp"

#include <fstream>

namespace advgnn::json_io {

Vector vector_from_json(const nlohmann::json& node, const std::string& path) {
  if (!node.is_array()) throw FormatError(path + ": expected an array");
  Vector out(static_cast<Index>(node.size()));
  for (std::size_t i = 0; i < node.size(); ++i) {
    if (!node[i].is_number())
      throw FormatError(path + "[" + std::to_string(i) + "]: expected a number");
    out[static_cast<Index>(i)] = node[i].get<double>();
  }
  return out;
}

nlohmann::json vector_to_json(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Matrix matrix_from_json(const nlohmann::json& node, const std::string& path) {
  if (!node.is_array() || node.empty())
    throw FormatError(path + ": expected a nonempty array of rows");
  const std::size_t rows = node.size();
  if (!node[0].is_array()) throw FormatError(path + "[0]: expected a row array");
  const std::size_t cols = node[0].size();
  Matrix out(static_cast<Index>(rows), static_cast<Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::string row_path = path + "[" + std::to_string(r) + "]";
    if (!node[r].is_array()) throw FormatError(row_path + ": expected a row array");
    if (node[r].size() != cols)
      throw FormatError(row_path + ": row has " + std::to_string(node[r].size()) +
                        " columns, expected " + std::to_string(cols));
    for (std::size_t c = 0; c < cols; ++c) {
      if (!node[r][c].is_number())
        throw FormatError(row_path + "[" + std::to_string(c) + "]: expected a number");
      out(static_cast<Index>(r), static_cast<Index>(c)) = node[r][c].get<double>();
    }
  }
  return out;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string() + ": cannot open");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<nlohmann::json> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string() + ": cannot open");
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_file(const std::filesystem::path& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  if (!out) throw FormatError(path.string() + ": cannot write");
  out << doc.dump() << '\n';
}

}  // namespace advgnn::json_io
