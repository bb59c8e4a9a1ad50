#pragma once

// On-disk dataset layout: manifest.json + genes.csv + patches.bin +
// labels.csv in one directory.
//
//   manifest.json  dimensions, class counts, survival quartiles, seed
//   genes.csv      header `sample_id,g0,...`; second header line
//                  `#partition,t|e,...` tagging each gene column; data rows
//   patches.bin    magic "SFPG", little-endian u32 {n,h,w,c}, then per
//                  sample a 32-byte zero-padded id and row-major f32 values
//   labels.csv     header `sample_id,diagnosis,grade,time,event,bin`
//
// Text floats are written in shortest round-trip form, and grid values are
// generated f32-exact, so load(save(d)) == d holds exactly.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "subfuse/data.hpp"
#include "subfuse/errors.hpp"
#include "subfuse/io_util.hpp"

namespace subfuse {

inline void save(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  ds.validate();
  fs::create_directories(dir);

  nlohmann::ordered_json manifest;
  manifest["format_version"] = ds.info.format_version;
  manifest["n_samples"] = ds.info.n_samples;
  manifest["gene_count"] = ds.info.gene_count;
  manifest["tumour_genes"] = ds.info.tumour_genes;
  manifest["tme_genes"] = ds.info.tme_genes;
  manifest["grid_h"] = ds.info.grid_h;
  manifest["grid_w"] = ds.info.grid_w;
  manifest["channels"] = ds.info.channels;
  manifest["diagnosis_classes"] = ds.info.diagnosis_classes;
  manifest["grade_classes"] = ds.info.grade_classes;
  manifest["survival_quartiles"] = ds.info.survival_quartiles;
  manifest["seed"] = ds.info.seed;
  detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  for (const std::string& id : ds.sample_ids) {
    if (id.empty() || id.size() > 31 || id.find_first_of(",\n\r") != std::string::npos)
      throw format_error("save: sample id '" + id + "' not representable (1-31 chars, no comma/newline)");
  }

  std::string genes;
  genes += "sample_id";
  for (std::size_t j = 0; j < ds.info.gene_count; ++j) genes += ",g" + std::to_string(j);
  genes += "\n#partition";
  {
    std::vector<char> tag(ds.info.gene_count, 'e');
    for (std::size_t j : ds.partition.tumour) tag[j] = 't';
    for (std::size_t j = 0; j < ds.info.gene_count; ++j) {
      genes += ',';
      genes += tag[j];
    }
  }
  genes += '\n';
  for (std::size_t i = 0; i < ds.info.n_samples; ++i) {
    genes += ds.sample_ids[i];
    const double* row = ds.gene_row(i);
    for (std::size_t j = 0; j < ds.info.gene_count; ++j) {
      genes += ',';
      genes += detail::fmt_double(row[j]);
    }
    genes += '\n';
  }
  detail::write_file(dir / "genes.csv", genes);

  std::string bin;
  bin.reserve(16 + ds.info.n_samples * (32 + ds.grid_size() * 4));
  bin += "SFPG";
  detail::put_u32(bin, static_cast<std::uint32_t>(ds.info.n_samples));
  detail::put_u32(bin, static_cast<std::uint32_t>(ds.info.grid_h));
  detail::put_u32(bin, static_cast<std::uint32_t>(ds.info.grid_w));
  detail::put_u32(bin, static_cast<std::uint32_t>(ds.info.channels));
  for (std::size_t i = 0; i < ds.info.n_samples; ++i) {
    char id[32] = {};
    std::memcpy(id, ds.sample_ids[i].data(), ds.sample_ids[i].size());
    bin.append(id, 32);
    const double* grid = ds.patch_grid(i);
    for (std::size_t j = 0; j < ds.grid_size(); ++j) detail::put_f32(bin, grid[j]);
  }
  detail::write_file(dir / "patches.bin", bin);

  std::string labels = "sample_id,diagnosis,grade,time,event,bin\n";
  for (const SampleLabel& l : ds.labels) {
    labels += l.sample_id;
    labels += ',' + std::to_string(l.diagnosis);
    labels += ',' + std::to_string(l.grade);
    labels += ',' + detail::fmt_double(l.survival.time);
    labels += l.survival.event ? ",1" : ",0";
    labels += ',' + std::to_string(l.survival.bin);
    labels += '\n';
  }
  detail::write_file(dir / "labels.csv", labels);
}

inline Dataset load(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (const char* name : {"manifest.json", "genes.csv", "patches.bin", "labels.csv"})
    if (!fs::exists(dir / name)) throw format_error((dir / name).string() + ": missing");

  Dataset ds;
  const std::string mpath = (dir / "manifest.json").string();
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw format_error(mpath + ": " + e.what());
  }
  try {
    ds.info.format_version = manifest.at("format_version").get<std::uint32_t>();
    if (ds.info.format_version != 1)
      throw format_error(mpath + ": unsupported format_version " + std::to_string(ds.info.format_version));
    ds.info.n_samples = manifest.at("n_samples").get<std::size_t>();
    ds.info.gene_count = manifest.at("gene_count").get<std::size_t>();
    ds.info.tumour_genes = manifest.at("tumour_genes").get<std::size_t>();
    ds.info.tme_genes = manifest.at("tme_genes").get<std::size_t>();
    ds.info.grid_h = manifest.at("grid_h").get<std::size_t>();
    ds.info.grid_w = manifest.at("grid_w").get<std::size_t>();
    ds.info.channels = manifest.at("channels").get<std::size_t>();
    ds.info.diagnosis_classes = manifest.at("diagnosis_classes").get<std::size_t>();
    ds.info.grade_classes = manifest.at("grade_classes").get<std::size_t>();
    const auto q = manifest.at("survival_quartiles");
    if (!q.is_array() || q.size() != kSurvivalBins - 1)
      throw format_error(mpath + ": survival_quartiles must hold " + std::to_string(kSurvivalBins - 1) + " values");
    for (std::size_t i = 0; i < kSurvivalBins - 1; ++i)
      ds.info.survival_quartiles[i] = q[i].get<double>();
    ds.info.seed = manifest.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw format_error(mpath + ": " + e.what());
  }

  const std::size_t n = ds.info.n_samples, g = ds.info.gene_count;

  {  // genes.csv
    const std::string path = (dir / "genes.csv").string();
    const std::string text = detail::read_file(dir / "genes.csv");
    const auto lines = detail::split_lines(text);
    if (lines.size() != n + 2)
      throw format_error(path + ": expected " + std::to_string(n + 2) + " lines (2 headers + " +
                         std::to_string(n) + " rows), got " + std::to_string(lines.size()));
    const auto header = detail::split_csv(lines[0]);
    if (header.empty() || header[0] != "sample_id")
      throw format_error(path + ": first header field must be sample_id");
    if (header.size() != g + 1)
      throw format_error(path + ": manifest declares " + std::to_string(g) + " gene columns, header has " +
                         std::to_string(header.size() - 1));
    for (std::size_t j = 0; j < g; ++j)
      if (header[j + 1] != "g" + std::to_string(j))
        throw format_error(path + ": unexpected gene column header '" + std::string(header[j + 1]) + "'");
    const auto tags = detail::split_csv(lines[1]);
    if (tags.empty() || tags[0] != "#partition" || tags.size() != g + 1)
      throw format_error(path + ": second line must be a #partition tag row with " + std::to_string(g) + " tags");
    for (std::size_t j = 0; j < g; ++j) {
      if (tags[j + 1] == "t")
        ds.partition.tumour.push_back(j);
      else if (tags[j + 1] == "e")
        ds.partition.tme.push_back(j);
      else
        throw format_error(path + ": partition tag for g" + std::to_string(j) + " must be t or e, got '" +
                           std::string(tags[j + 1]) + "'");
    }
    ds.sample_ids.resize(n);
    ds.genes.resize(n * g);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = detail::split_csv(lines[i + 2]);
      const std::string where = path + " line " + std::to_string(i + 3);
      if (row.size() != g + 1)
        throw format_error(where + ": expected " + std::to_string(g + 1) + " fields, got " + std::to_string(row.size()));
      ds.sample_ids[i] = std::string(row[0]);
      for (std::size_t j = 0; j < g; ++j)
        ds.genes[i * g + j] = detail::parse_double(row[j + 1], where + " column g" + std::to_string(j));
    }
  }

  {  // patches.bin
    const std::string path = (dir / "patches.bin").string();
    const std::string bin = detail::read_file(dir / "patches.bin");
    if (bin.size() < 20 || bin.compare(0, 4, "SFPG") != 0)
      throw format_error(path + ": missing SFPG magic");
    const std::size_t bn = detail::get_u32(bin, 4), bh = detail::get_u32(bin, 8);
    const std::size_t bw = detail::get_u32(bin, 12), bc = detail::get_u32(bin, 16);
    if (bn != n || bh != ds.info.grid_h || bw != ds.info.grid_w || bc != ds.info.channels)
      throw format_error(path + ": header dims " + std::to_string(bn) + "x" + std::to_string(bh) + "x" +
                         std::to_string(bw) + "x" + std::to_string(bc) + " disagree with the manifest");
    const std::size_t grid = bh * bw * bc;
    const std::size_t expected = 20 + n * (32 + grid * 4);
    if (bin.size() != expected)
      throw format_error(path + ": expected " + std::to_string(expected) + " bytes, got " + std::to_string(bin.size()));
    ds.patches.resize(n * grid);
    std::size_t off = 20;
    for (std::size_t i = 0; i < n; ++i) {
      const char* idp = bin.data() + off;
      const std::size_t idlen = strnlen(idp, 32);
      const std::string id(idp, idlen);
      if (id != ds.sample_ids[i])
        throw format_error(path + ": sample " + std::to_string(i) + " id '" + id +
                           "' does not match genes.csv ('" + ds.sample_ids[i] + "')");
      off += 32;
      for (std::size_t j = 0; j < grid; ++j, off += 4) {
        const double v = detail::get_f32(bin, off);
        if (!std::isfinite(v))
          throw format_error(path + ": non-finite value at byte offset " + std::to_string(off));
        ds.patches[i * grid + j] = v;
      }
    }
  }

  {  // labels.csv
    const std::string path = (dir / "labels.csv").string();
    const std::string text = detail::read_file(dir / "labels.csv");  // keep alive behind the views
    const auto lines = detail::split_lines(text);
    if (lines.size() != n + 1)
      throw format_error(path + ": expected " + std::to_string(n + 1) + " lines, got " + std::to_string(lines.size()));
    if (lines[0] != "sample_id,diagnosis,grade,time,event,bin")
      throw format_error(path + ": unexpected header '" + std::string(lines[0]) + "'");
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = detail::split_csv(lines[i + 1]);
      const std::string where = path + " line " + std::to_string(i + 2);
      if (row.size() != 6) throw format_error(where + ": expected 6 fields, got " + std::to_string(row.size()));
      SampleLabel& l = ds.labels[i];
      l.sample_id = std::string(row[0]);
      l.diagnosis = static_cast<int>(detail::parse_int(row[1], where + " diagnosis"));
      l.grade = static_cast<int>(detail::parse_int(row[2], where + " grade"));
      l.survival.time = detail::parse_double(row[3], where + " time");
      if (row[4] == "1")
        l.survival.event = true;
      else if (row[4] == "0")
        l.survival.event = false;
      else
        throw format_error(where + ": event must be 0 or 1, got '" + std::string(row[4]) + "'");
      l.survival.bin = static_cast<int>(detail::parse_int(row[5], where + " bin"));
    }
  }

  try {
    ds.validate();
  } catch (const error& e) {
    throw format_error(dir.string() + ": inconsistent dataset: " + e.what());
  }
  return ds;
}

}  // namespace subfuse
