#pragma once

// Small I/O helpers shared by the file formats: key=value text, number
// parsing with row/column context, and little-endian binary payloads.

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dost/errors.hpp"

namespace dost::io {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

/// Shortest text that reads back to the same double (17 significant digits).
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(std::string_view text, std::string_view context) {
  text = trim(text);
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ParseError("non-numeric value '" + std::string(text) + "' at " + std::string(context));
  }
  return v;
}

inline long long parse_int(std::string_view text, std::string_view context) {
  text = trim(text);
  long long v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ParseError("expected integer, got '" + std::string(text) + "' at " + std::string(context));
  }
  return v;
}

inline bool parse_bool(std::string_view text, std::string_view context) {
  text = trim(text);
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ParseError("expected boolean, got '" + std::string(text) + "' at " + std::string(context));
}

inline std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Flat key=value document. Blank lines and `#` comments are ignored; later
/// keys override earlier ones.
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(std::istream& in, const std::string& source) {
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      std::string_view body = trim(std::string_view(line).substr(0, hash));
      if (body.empty()) continue;
      auto eq = body.find('=');
      if (eq == std::string_view::npos) {
        throw ParseError(source + ":" + std::to_string(lineno) + ": expected key=value");
      }
      kv.set(std::string(trim(body.substr(0, eq))), std::string(trim(body.substr(eq + 1))));
    }
    return kv;
  }

  static KeyValues load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingFileError("cannot open " + path.string());
    return parse(in, path.string());
  }

  void set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ParseError("missing key '" + key + "'");
    return it->second;
  }

  std::size_t size_or(const std::string& key, std::size_t fallback) const {
    if (!has(key)) return fallback;
    const auto v = parse_int(str(key), key);
    if (v < 0) throw ParseError("key '" + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
  }
  long long int_or(const std::string& key, long long fallback) const {
    return has(key) ? parse_int(str(key), key) : fallback;
  }
  double real_or(const std::string& key, double fallback) const {
    return has(key) ? parse_double(str(key), key) : fallback;
  }
  bool flag_or(const std::string& key, bool fallback) const {
    return has(key) ? parse_bool(str(key), key) : fallback;
  }
  std::string str_or(const std::string& key, std::string fallback) const {
    return has(key) ? str(key) : fallback;
  }

  void write(std::ostream& out) const {
    for (const auto& [k, v] : values_) out << k << '=' << v << '\n';
  }

 private:
  std::map<std::string, std::string> values_;
};

template <typename T>
T to_little_endian(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

inline void write_f64(std::ostream& out, std::span<const double> values) {
  for (double v : values) {
    const auto bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
}

inline void read_f64(std::istream& in, std::span<double> values) {
  for (double& v : values) {
    std::uint64_t bits = 0;
    if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw ParseError("truncated binary payload");
    v = std::bit_cast<double>(to_little_endian(bits));
  }
}

inline void write_i64(std::ostream& out, std::int64_t v) {
  const auto bits = to_little_endian(v);
  out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
}

inline std::int64_t read_i64(std::istream& in) {
  std::int64_t bits = 0;
  if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw ParseError("truncated binary payload");
  return to_little_endian(bits);
}

/// Reads one manifest line, failing with `what` on EOF.
inline std::string expect_line(std::istream& in, std::string_view what) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("unexpected end of file while reading " + std::string(what));
  return line;
}

}  // namespace dost::io
