#pragma once

// Single-file training snapshot.  Layout, all little-endian:
//
//   "SFCK" | u32 format version | u64 epoch | u64 optimizer step count |
//   u32 length + config JSON | u32 length + data-order RNG state |
//   u32 entry count | entries
//
// Each entry is a length-prefixed UTF-8 key followed by u64 element count and
// that many float64 payload values.  Keys are canonical parameter paths;
// optimizer moments ride along under "opt/m/<path>" and "opt/v/<path>".
// Values round-trip bit-exactly, so a reloaded model reproduces forward
// outputs bitwise.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "subfuse/errors.hpp"
#include "subfuse/io_util.hpp"

namespace subfuse {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t epoch = 0;
  std::uint64_t opt_steps = 0;
  std::string config_json;
  std::string rng_state;
  std::vector<std::pair<std::string, std::vector<double>>> entries;

  const std::vector<double>& find(const std::string& key) const {
    for (const auto& [k, v] : entries)
      if (k == key) return v;
    throw format_error("checkpoint: missing entry '" + key + "'");
  }
};

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::string out = "SFCK";
  detail::put_u32(out, ck.version);
  detail::put_u64(out, ck.epoch);
  detail::put_u64(out, ck.opt_steps);
  auto put_str = [&](const std::string& s) {
    detail::put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
  };
  put_str(ck.config_json);
  put_str(ck.rng_state);
  detail::put_u32(out, static_cast<std::uint32_t>(ck.entries.size()));
  for (const auto& [key, values] : ck.entries) {
    put_str(key);
    detail::put_u64(out, values.size());
    for (double v : values) detail::put_f64(out, v);
  }
  detail::write_file(path, out);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string name = path.string();
  const std::string raw = detail::read_file(path);
  std::size_t off = 0;
  auto need = [&](std::size_t n) {
    if (off + n > raw.size())
      throw format_error(name + ": truncated at byte " + std::to_string(off));
    off += n;
    return off - n;
  };
  if (raw.size() < 4 || raw.compare(0, 4, "SFCK") != 0)
    throw format_error(name + ": not a checkpoint file (bad magic)");
  off = 4;
  Checkpoint ck;
  ck.version = detail::get_u32(raw, need(4));
  if (ck.version != kCheckpointVersion)
    throw format_error(name + ": unsupported checkpoint version " + std::to_string(ck.version) +
                       " (expected " + std::to_string(kCheckpointVersion) + ")");
  ck.epoch = detail::get_u64(raw, need(8));
  ck.opt_steps = detail::get_u64(raw, need(8));
  auto get_str = [&] {
    const std::uint32_t len = detail::get_u32(raw, need(4));
    const std::size_t at = need(len);
    return raw.substr(at, len);
  };
  ck.config_json = get_str();
  ck.rng_state = get_str();
  const std::uint32_t n = detail::get_u32(raw, need(4));
  ck.entries.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string key = get_str();
    const std::uint64_t count = detail::get_u64(raw, need(8));
    std::vector<double> values(count);
    for (std::uint64_t j = 0; j < count; ++j) values[j] = detail::get_f64(raw, need(8));
    ck.entries.emplace_back(std::move(key), std::move(values));
  }
  if (off != raw.size())
    throw format_error(name + ": " + std::to_string(raw.size() - off) + " trailing bytes");
  return ck;
}

}  // namespace subfuse
