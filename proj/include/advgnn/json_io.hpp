#pragma once

#include "advgnn/network.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace advgnn::json_io {

// Row-major nested arrays. Errors name `path`.
Matrix matrix_from_json(const nlohmann::json& node, const std::string& path);
nlohmann::json matrix_to_json(const Matrix& m);
Vector vector_from_json(const nlohmann::json& node, const std::string& path);
nlohmann::json vector_to_json(const Vector& v);

nlohmann::json read_file(const std::filesystem::path& path);
// One JSON value per nonempty line.
std::vector<nlohmann::json> read_lines(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const nlohmann::json& doc);

}  // namespace advgnn::json_io
