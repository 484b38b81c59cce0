#pragma once

#include <cstdio>
#include <optional>
#include <string>

namespace collapse_lab {

/// Round-trip decimal rendering used in every CSV output.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Settings such as ratios, which are typed by hand and read back by eye.
inline std::string format_setting(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// Absent values render as an empty CSV cell.
inline std::string format_optional(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string{};
}

/// Free text inside a CSV cell: commas and line breaks become ';' and ' '.
inline std::string csv_text(std::string s) {
  for (char& c : s) {
    if (c == ',') c = ';';
    else if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

inline constexpr const char* kCsvSchemaLine = "# schema=1";

}  // namespace collapse_lab
