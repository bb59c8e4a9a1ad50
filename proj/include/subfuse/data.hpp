#pragma once

// Dataset model: paired genomic profiles and histology feature grids with
// diagnosis / grading / survival labels, plus the tumour-vs-TME gene
// partition that drives the two subspace streams.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "subfuse/errors.hpp"
#include "subfuse/tensor.hpp"

namespace subfuse {

// Survival times are discretized into quartile bins.
inline constexpr std::size_t kSurvivalBins = 4;

// Disjoint index sets over the gene axis. Indices are kept sorted.
struct GenePartition {
  std::vector<std::size_t> tumour;
  std::vector<std::size_t> tme;

  // Checks disjointness and coverage of {0..gene_count-1}.
  void validate(std::size_t gene_count) const {
    std::vector<char> seen(gene_count, 0);
    for (const auto* set : {&tumour, &tme})
      for (std::size_t g : *set) {
        if (g >= gene_count)
          throw contract_error("gene partition: index " + std::to_string(g) + " out of range");
        if (seen[g]++) throw contract_error("gene partition: index " + std::to_string(g) + " appears twice");
      }
    for (std::size_t g = 0; g < gene_count; ++g)
      if (!seen[g]) throw contract_error("gene partition: index " + std::to_string(g) + " unassigned");
  }
};

struct SurvivalRecord {
  double time = 0.0;   // recorded follow-up time (event or censoring)
  bool event = false;  // true = death observed, false = censored
  int bin = 0;         // quartile bin of `time`, in [0, kSurvivalBins)
};

struct SampleLabel {
  std::string sample_id;
  int diagnosis = 0;
  int grade = 0;
  SurvivalRecord survival;
};

struct DatasetInfo {
  std::uint32_t format_version = 1;
  std::size_t n_samples = 0;
  std::size_t gene_count = 0;
  std::size_t tumour_genes = 0;
  std::size_t tme_genes = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t channels = 0;
  std::size_t diagnosis_classes = 0;
  std::size_t grade_classes = 0;
  std::array<double, kSurvivalBins - 1> survival_quartiles{};
  std::uint64_t seed = 0;

  bool operator==(const DatasetInfo&) const = default;
};

enum class Split { train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

inline int survival_bin(double time, const std::array<double, kSurvivalBins - 1>& q) {
  int b = 0;
  while (b < static_cast<int>(kSurvivalBins) - 1 && time > q[b]) ++b;
  return b;
}

// In-memory dataset. Gene values and grid features are stored flat,
// row-major per sample; grids hold values exactly representable in 32-bit
// floats so disk round-trips are lossless.
struct Dataset {
  DatasetInfo info;
  GenePartition partition;
  std::vector<std::string> sample_ids;
  std::vector<double> genes;    // n_samples x gene_count
  std::vector<double> patches;  // n_samples x H x W x C
  std::vector<SampleLabel> labels;

  bool operator==(const Dataset& o) const {
    auto labels_eq = [&] {
      if (labels.size() != o.labels.size()) return false;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const SampleLabel &a = labels[i], &b = o.labels[i];
        if (a.sample_id != b.sample_id || a.diagnosis != b.diagnosis || a.grade != b.grade ||
            a.survival.time != b.survival.time || a.survival.event != b.survival.event ||
            a.survival.bin != b.survival.bin)
          return false;
      }
      return true;
    };
    return info == o.info && partition.tumour == o.partition.tumour &&
           partition.tme == o.partition.tme && sample_ids == o.sample_ids && genes == o.genes &&
           patches == o.patches && labels_eq();
  }

  std::size_t grid_size() const { return info.grid_h * info.grid_w * info.channels; }

  const double* gene_row(std::size_t i) const { return genes.data() + i * info.gene_count; }
  const double* patch_grid(std::size_t i) const { return patches.data() + i * grid_size(); }

  // Contiguous 70/15/15 split over the stored sample order.
  std::pair<std::size_t, std::size_t> split_range(Split s) const {
    const std::size_t n = info.n_samples;
    const std::size_t n_train = n * 70 / 100, n_val = n * 15 / 100;
    switch (s) {
      case Split::train: return {0, n_train};
      case Split::val: return {n_train, n_train + n_val};
      default: return {n_train + n_val, n};
    }
  }

  std::vector<std::size_t> split_indices(Split s) const {
    auto [b, e] = split_range(s);
    std::vector<std::size_t> idx(e - b);
    for (std::size_t i = b; i < e; ++i) idx[i - b] = i;
    return idx;
  }

  // Batch assembly: rows in the order given by idx. Inputs are constants;
  // gradients never flow into data.
  Tensor gene_batch(const std::vector<std::size_t>& idx) const {
    std::vector<double> v(idx.size() * info.gene_count);
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy_n(gene_row(idx[r]), info.gene_count, v.data() + r * info.gene_count);
    return Tensor::constant(std::move(v), {idx.size(), info.gene_count});
  }

  Tensor patch_batch(const std::vector<std::size_t>& idx) const {
    std::vector<double> v(idx.size() * grid_size());
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy_n(patch_grid(idx[r]), grid_size(), v.data() + r * grid_size());
    return Tensor::constant(std::move(v), {idx.size(), info.grid_h, info.grid_w, info.channels});
  }

  std::vector<int> diagnosis_labels(const std::vector<std::size_t>& idx) const {
    std::vector<int> out(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) out[r] = labels[idx[r]].diagnosis;
    return out;
  }

  std::vector<int> grade_labels(const std::vector<std::size_t>& idx) const {
    std::vector<int> out(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) out[r] = labels[idx[r]].grade;
    return out;
  }

  std::vector<SurvivalRecord> survival_records(const std::vector<std::size_t>& idx) const {
    std::vector<SurvivalRecord> out(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) out[r] = labels[idx[r]].survival;
    return out;
  }

  // Structural checks shared by generation and loading.
  void validate() const {
    const std::size_t n = info.n_samples;
    if (sample_ids.size() != n || labels.size() != n)
      throw contract_error("dataset: sample count mismatch across tables");
    if (genes.size() != n * info.gene_count || patches.size() != n * grid_size())
      throw contract_error("dataset: value buffer size mismatch");
    if (info.tumour_genes + info.tme_genes != info.gene_count)
      throw config_error("dataset: partition sizes do not sum to the gene count");
    partition.validate(info.gene_count);
    if (partition.tumour.size() != info.tumour_genes || partition.tme.size() != info.tme_genes)
      throw contract_error("dataset: partition sizes disagree with the manifest");
    for (std::size_t i = 0; i < n; ++i) {
      const SampleLabel& l = labels[i];
      if (l.sample_id != sample_ids[i])
        throw contract_error("dataset: label order mismatch at row " + std::to_string(i));
      if (l.diagnosis < 0 || l.diagnosis >= static_cast<int>(info.diagnosis_classes))
        throw contract_error("dataset: diagnosis class out of range at row " + std::to_string(i));
      if (l.grade < 0 || l.grade >= static_cast<int>(info.grade_classes))
        throw contract_error("dataset: grade out of range at row " + std::to_string(i));
      if (!(l.survival.time >= 0.0))
        throw contract_error("dataset: negative survival time at row " + std::to_string(i));
      if (l.survival.bin != survival_bin(l.survival.time, info.survival_quartiles))
        throw contract_error("dataset: survival bin inconsistent with quartiles at row " +
                             std::to_string(i));
    }
  }
};

}  // namespace subfuse
