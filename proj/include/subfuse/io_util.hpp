#pragma once

// Text and little-endian binary helpers shared by the dataset, metrics and
// checkpoint readers/writers.  Floats are formatted in shortest round-trip
// form so repeated save/load cycles are byte-stable.

#include <bit>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "subfuse/errors.hpp"

namespace subfuse {

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw numeric_error("fmt_double: conversion failed");
  return std::string(buf, end);
}

inline double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size())
    throw format_error(where + ": cannot parse '" + std::string(s) + "' as a number");
  if (!std::isfinite(v)) throw format_error(where + ": non-finite value '" + std::string(s) + "'");
  return v;
}

inline long parse_int(std::string_view s, const std::string& where) {
  long v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size())
    throw format_error(where + ": cannot parse '" + std::string(s) + "' as an integer");
  return v;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw format_error(p.string() + ": cannot open");
  std::ostringstream os;
  os << in.rdbuf();
  return std::move(os).str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error(p.string() + ": cannot open for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw format_error(p.string() + ": write failed");
}

inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& s, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

inline void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const std::string& s, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

inline void put_f32(std::string& s, double v) {
  put_u32(s, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline double get_f32(const std::string& s, std::size_t off) {
  return static_cast<double>(std::bit_cast<float>(get_u32(s, off)));
}

inline void put_f64(std::string& s, double v) { put_u64(s, std::bit_cast<std::uint64_t>(v)); }

inline double get_f64(const std::string& s, std::size_t off) {
  return std::bit_cast<double>(get_u64(s, off));
}

// Lines split on '\n'; a trailing final newline yields no empty last line.
inline std::vector<std::string_view> split_lines(const std::string& text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    std::string_view line(text.data() + start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = nl + 1;
  }
  return lines;
}
// The views alias the argument, so a temporary would leave them dangling.
std::vector<std::string_view> split_lines(std::string&&) = delete;

}  // namespace detail

}  // namespace subfuse
