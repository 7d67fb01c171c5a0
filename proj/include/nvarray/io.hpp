#pragma once

// Locale-independent text output shared by every exporter.

#include <concepts>
#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>

#include <Eigen/Core>
#include "json.hpp"

namespace nvarray::io {

/// Shortest decimal representation that round-trips to the same double.
std::string format_number(double v);

namespace detail {
inline void write_field(std::ostream& os, std::string_view s) { os << s; }
inline void write_field(std::ostream& os, const std::string& s) { os << s; }
inline void write_field(std::ostream& os, const char* s) { os << s; }
inline void write_field(std::ostream& os, double v) { os << format_number(v); }
template <std::integral I>
void write_field(std::ostream& os, I v) { os << v; }
}  // namespace detail

/// Writes one comma-separated line.
template <typename... Fields>
void csv_row(std::ostream& os, const Fields&... fields) {
  bool first = true;
  ((os << (first ? "" : ","), detail::write_field(os, fields), first = false), ...);
  os << '\n';
}

nlohmann::json to_json(const Eigen::Vector3d& v);
Eigen::Vector3d vec3_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Eigen::MatrixXd& m);

/// Writes text to path, creating parent directories.
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);
/// Pretty-printed JSON with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace nvarray::io
