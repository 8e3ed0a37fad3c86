#ifndef ZAPQ_CSV_HPP
#define ZAPQ_CSV_HPP

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace zapq {

// RFC-4180-style CSV writing: UTF-8, comma separated, fields quoted only when
// they contain a comma, quote, or newline.  Callers emit the header row first.

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

inline void csv_row(std::ostream& os, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) os << ',';
    os << csv_escape(fields[i]);
  }
  os << "\r\n";
}

// Shortest-round-trip-ish numeric formatting; %.17g is lossless for doubles.
inline std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string csv_num(long long v) { return std::to_string(v); }
inline std::string csv_num(int v) { return std::to_string(v); }

}  // namespace zapq

#endif  // ZAPQ_CSV_HPP
