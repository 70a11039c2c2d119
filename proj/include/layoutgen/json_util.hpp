#pragma once

#include <json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "layoutgen/errors.hpp"

namespace layoutgen::jsonu {

using json = nlohmann::json;

/// Parses text, translating syntax errors into ParseError("line N", ...).
json parse_text(const std::string& text, const std::string& source);
json read_file(const std::string& path);
/// Writes `j` followed by a newline. Throws Error if the file cannot be opened.
void write_file(const std::string& path, const json& j);

const json& field(const json& j, std::string_view key, const std::string& path);
double number(const json& j, const std::string& path);
long long integer(const json& j, const std::string& path);
std::string string(const json& j, const std::string& path);
const json& array(const json& j, const std::string& path);

inline double number_at(const json& j, std::string_view key, const std::string& path) {
  return number(field(j, key, path), path + "." + std::string(key));
}
inline long long integer_at(const json& j, std::string_view key, const std::string& path) {
  return integer(field(j, key, path), path + "." + std::string(key));
}
inline std::string string_at(const json& j, std::string_view key, const std::string& path) {
  return string(field(j, key, path), path + "." + std::string(key));
}
inline const json& array_at(const json& j, std::string_view key, const std::string& path) {
  return array(field(j, key, path), path + "." + std::string(key));
}

/// Checks `format_version` equals `expected`; throws VersionError otherwise.
void require_version(const json& j, int expected, const std::string& what);

}  // namespace layoutgen::jsonu
