#pragma once

// Synthetic paired-sample generator. Diagnosis class templates are planted
// in the tumour gene subspace, grade templates (which also drive survival
// time) in the TME subspace, and each subspace additionally carries an
// echo of the other task's label. The histology grid embeds both labels as
// localized blobs at class-specific cells, so attention over deformed
// sample locations has real spatial structure to find.
//
// The conflict knob flips both echoes to a wrong class on a random
// fraction of samples, making the two subspaces disagree there.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "subfuse/data.hpp"
#include "subfuse/errors.hpp"
#include "subfuse/nn.hpp"

namespace subfuse {

struct SynthConfig {
  std::size_t n_samples = 600;
  std::size_t gene_count = 420;
  std::size_t tumour_genes = 59;
  std::size_t tme_genes = 361;
  std::size_t grid_h = 7;
  std::size_t grid_w = 7;
  std::size_t channels = 64;
  std::size_t diagnosis_classes = 4;
  std::size_t grade_classes = 4;
  // Per-feature noise has standard deviation 1/snr against unit-scale
  // templates. An infinite snr produces noiseless samples.
  double snr = 3.0;
  // Fraction of samples whose cross-subspace echoes point at a wrong class.
  double conflict_strength = 0.0;
  // Amplitude of the cross-subspace echoes (1 = as strong as the primary
  // signal, 0 = each subspace carries only its own task).
  double echo_strength = 0.6;
  double censor_fraction = 0.25;

  void validate() const {
    if (tumour_genes + tme_genes != gene_count)
      throw config_error("synth: tumour (" + std::to_string(tumour_genes) + ") + tme (" +
                         std::to_string(tme_genes) + ") genes must sum to " + std::to_string(gene_count));
    if (n_samples < 10) throw config_error("synth: need at least 10 samples");
    if (tumour_genes == 0 || tme_genes == 0) throw config_error("synth: empty gene subspace");
    if (grid_h == 0 || grid_w == 0 || channels == 0) throw config_error("synth: empty grid");
    if (diagnosis_classes < 2 || grade_classes < 2) throw config_error("synth: need at least 2 classes");
    if (grid_h * grid_w < diagnosis_classes + grade_classes)
      throw config_error("synth: grid too small for distinct class sites");
    if (!(snr > 0.0)) throw config_error("synth: snr must be positive");
    if (conflict_strength < 0.0 || conflict_strength > 1.0)
      throw config_error("synth: conflict_strength must lie in [0,1]");
    if (echo_strength < 0.0) throw config_error("synth: echo_strength must be non-negative");
    if (censor_fraction < 0.0 || censor_fraction >= 1.0)
      throw config_error("synth: censor_fraction must lie in [0,1)");
  }
};

namespace detail {

inline std::vector<std::vector<double>> draw_templates(std::size_t count, std::size_t dim, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<std::vector<double>> t(count, std::vector<double>(dim));
  for (auto& v : t)
    for (double& x : v) x = dist(rng);
  return t;
}

// Linear interpolation quantile of a sorted vector (the convention where
// quantile p sits at fractional rank p*(n-1)).
inline double sorted_quantile(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

// Deterministic for a fixed (config, seed): every random draw comes from a
// single stream in a fixed order.
inline Dataset generate(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = derive_rng(seed, /*stream=*/0x5F4D61D5ull);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const std::size_t n = cfg.n_samples, g = cfg.gene_count;
  const std::size_t nt = cfg.tumour_genes, ne = cfg.tme_genes;
  const std::size_t hw = cfg.grid_h * cfg.grid_w, c = cfg.channels;
  const double noise = std::isinf(cfg.snr) ? 0.0 : 1.0 / cfg.snr;

  // Class templates for each subspace plus cross-subspace echo templates.
  const auto tum_class = detail::draw_templates(cfg.diagnosis_classes, nt, rng);
  const auto tme_grade = detail::draw_templates(cfg.grade_classes, ne, rng);
  const auto tum_echo = detail::draw_templates(cfg.grade_classes, nt, rng);
  const auto tme_echo = detail::draw_templates(cfg.diagnosis_classes, ne, rng);
  const auto diag_pattern = detail::draw_templates(cfg.diagnosis_classes, c, rng);
  const auto grade_pattern = detail::draw_templates(cfg.grade_classes, c, rng);

  // Distinct grid cells per class: one site per diagnosis class, then one
  // per grade, drawn from a single shuffle of all cells.
  std::vector<std::size_t> cells(hw);
  std::iota(cells.begin(), cells.end(), std::size_t{0});
  std::shuffle(cells.begin(), cells.end(), rng);
  const std::vector<std::size_t> diag_site(cells.begin(), cells.begin() + cfg.diagnosis_classes);
  const std::vector<std::size_t> grade_site(cells.begin() + cfg.diagnosis_classes,
                                            cells.begin() + cfg.diagnosis_classes + cfg.grade_classes);

  Dataset ds;
  ds.info.n_samples = n;
  ds.info.gene_count = g;
  ds.info.tumour_genes = nt;
  ds.info.tme_genes = ne;
  ds.info.grid_h = cfg.grid_h;
  ds.info.grid_w = cfg.grid_w;
  ds.info.channels = c;
  ds.info.diagnosis_classes = cfg.diagnosis_classes;
  ds.info.grade_classes = cfg.grade_classes;
  ds.info.seed = seed;
  ds.partition.tumour.resize(nt);
  std::iota(ds.partition.tumour.begin(), ds.partition.tumour.end(), std::size_t{0});
  ds.partition.tme.resize(ne);
  std::iota(ds.partition.tme.begin(), ds.partition.tme.end(), nt);

  ds.sample_ids.resize(n);
  ds.genes.assign(n * g, 0.0);
  ds.patches.assign(n * hw * c, 0.0);
  ds.labels.resize(n);

  std::uniform_int_distribution<int> diag_dist(0, static_cast<int>(cfg.diagnosis_classes) - 1);
  std::uniform_int_distribution<int> grade_dist(0, static_cast<int>(cfg.grade_classes) - 1);

  auto add_blob = [&](double* grid, std::size_t site, const std::vector<double>& pattern) {
    const std::size_t sy = site / cfg.grid_w, sx = site % cfg.grid_w;
    for (std::size_t j = 0; j < c; ++j) grid[site * c + j] += pattern[j];
    const long dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
      const long y = static_cast<long>(sy) + dy[k], x = static_cast<long>(sx) + dx[k];
      if (y < 0 || y >= static_cast<long>(cfg.grid_h) || x < 0 || x >= static_cast<long>(cfg.grid_w))
        continue;
      const std::size_t cell = static_cast<std::size_t>(y) * cfg.grid_w + static_cast<std::size_t>(x);
      for (std::size_t j = 0; j < c; ++j) grid[cell * c + j] += 0.5 * pattern[j];
    }
  };

  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "s%05zu", i);
    ds.sample_ids[i] = id;

    const int yd = diag_dist(rng);
    const int yg = grade_dist(rng);
    const bool conflicted = unit(rng) < cfg.conflict_strength;
    const int yd_echo = conflicted ? (yd + 1) % static_cast<int>(cfg.diagnosis_classes) : yd;
    const int yg_echo = conflicted ? (yg + 1) % static_cast<int>(cfg.grade_classes) : yg;

    double* gene = ds.genes.data() + i * g;
    for (std::size_t j = 0; j < nt; ++j)
      gene[j] = tum_class[yd][j] + cfg.echo_strength * tum_echo[yg_echo][j] + noise * normal(rng);
    for (std::size_t j = 0; j < ne; ++j)
      gene[nt + j] = tme_grade[yg][j] + cfg.echo_strength * tme_echo[yd_echo][j] + noise * normal(rng);

    double* grid = ds.patches.data() + i * hw * c;
    for (std::size_t j = 0; j < hw * c; ++j) grid[j] = noise * normal(rng);
    add_blob(grid, diag_site[yd], diag_pattern[yd]);
    add_blob(grid, grade_site[yg], grade_pattern[yg]);
    // Grid features are stored on disk as 32-bit floats; quantize now so
    // the in-memory dataset equals its own round trip.
    for (std::size_t j = 0; j < hw * c; ++j) grid[j] = static_cast<double>(static_cast<float>(grid[j]));

    // Event time: exponential with a grade-dependent rate, higher grades
    // dying faster. Censored samples record a uniform fraction of their
    // (unobserved) event time.
    const double mid = 0.5 * static_cast<double>(cfg.grade_classes - 1);
    const double rate = 0.08 * std::exp(0.8 * (static_cast<double>(yg) - mid));
    const double event_time = -std::log1p(-unit(rng)) / rate;
    const bool censored = unit(rng) < cfg.censor_fraction;

    SampleLabel& l = ds.labels[i];
    l.sample_id = ds.sample_ids[i];
    l.diagnosis = yd;
    l.grade = yg;
    l.survival.event = !censored;
    l.survival.time = censored ? unit(rng) * event_time : event_time;
  }

  // Quartile boundaries come from uncensored training-split times only, so
  // evaluation reuses the bins fitted on train.
  auto [tb, te] = ds.split_range(Split::train);
  std::vector<double> train_times;
  for (std::size_t i = tb; i < te; ++i)
    if (ds.labels[i].survival.event) train_times.push_back(ds.labels[i].survival.time);
  if (train_times.size() < kSurvivalBins)
    throw config_error("synth: too few uncensored training samples to fit quartiles");
  std::sort(train_times.begin(), train_times.end());
  for (std::size_t q = 0; q + 1 < kSurvivalBins; ++q)
    ds.info.survival_quartiles[q] =
        detail::sorted_quantile(train_times, static_cast<double>(q + 1) / kSurvivalBins);

  for (SampleLabel& l : ds.labels)
    l.survival.bin = survival_bin(l.survival.time, ds.info.survival_quartiles);

  ds.validate();
  return ds;
}

}  // namespace subfuse
