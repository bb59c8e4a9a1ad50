#pragma once

// Training/evaluation orchestration: builds the two-stream model from a
// dataset, drives Adam over shuffled mini-batches with optional
// confidence-guided coordination of the classifier gradient, logs per-epoch
// validation metrics, and snapshots everything into a single checkpoint
// file.  Runs are bitwise deterministic for a given seed: parameter init and
// data order draw from two independently derived RNG streams, so changing
// one never perturbs the other.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "subfuse/checkpoint.hpp"
#include "subfuse/data.hpp"
#include "subfuse/dataset_io.hpp"
#include "subfuse/errors.hpp"
#include "subfuse/grad_coord.hpp"
#include "subfuse/losses.hpp"
#include "subfuse/metrics.hpp"
#include "subfuse/model.hpp"

namespace subfuse {

struct TrainConfig {
  Task task = Task::diagnosis;
  LossWeights weights{};
  std::size_t epochs = 0;  // 0 = per-task default: 20 for the class heads, 10 for survival
  std::size_t batch_size = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool ge_con_enabled = true;
  bool cg_coord_enabled = true;
  FusionConfig fusion{};
  std::size_t gene_hidden = 64;
  std::string data_dir;  // consumed by the job helpers, not the Trainer itself
  std::string out_dir;

  std::size_t effective_epochs() const {
    if (epochs != 0) return epochs;
    return task == Task::survival ? 10 : 20;
  }

  void validate() const {
    weights.validate();
    fusion.validate();
    if (batch_size == 0) throw config_error("batch_size must be positive");
    if (!std::isfinite(lr) || lr < 0.0) throw config_error("lr must be finite and non-negative");
    if (gene_hidden == 0) throw config_error("gene_hidden must be positive");
  }
};

// Adam with the usual defaults.  Moment vectors run parallel to the
// parameter registry.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t steps = 0;
  std::vector<std::vector<double>> m, v;

  void init(const ParamRegistry& reg) {
    steps = 0;
    m.clear();
    v.clear();
    for (const auto& [_, p] : reg.items()) {
      m.emplace_back(p.size(), 0.0);
      v.emplace_back(p.size(), 0.0);
    }
  }

  void apply(const ParamRegistry& reg, const std::vector<std::vector<double>>& grads, double lr) {
    if (grads.size() != m.size()) throw contract_error("adam: gradient list size mismatch");
    ++steps;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      Tensor p = reg.items()[i].second;
      std::vector<double>& val = p.mutable_values();
      if (grads[i].size() != val.size()) throw contract_error("adam: gradient size mismatch");
      for (std::size_t j = 0; j < val.size(); ++j) {
        const double g = grads[i][j];
        m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g;
        v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g * g;
        val[j] -= lr * (m[i][j] / c1) / (std::sqrt(v[i][j] / c2) + eps);
      }
    }
  }
};

class Trainer {
 public:
  struct EpochRecord {
    std::size_t epoch = 0;
    double mean_train_loss = 0.0;
    MetricReport val;
  };
  // Return true to stop after this epoch (harness hook, not a CLI feature).
  using EpochCallback = std::function<bool(std::size_t, const MetricReport&)>;

  Trainer(const Dataset& ds, TrainConfig cfg) : ds_(ds), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (ds_.info.grid_h != cfg_.fusion.grid_h || ds_.info.grid_w != cfg_.fusion.grid_w)
      throw config_error("dataset grid " + std::to_string(ds_.info.grid_h) + "x" +
                         std::to_string(ds_.info.grid_w) + " does not match configured grid " +
                         std::to_string(cfg_.fusion.grid_h) + "x" +
                         std::to_string(cfg_.fusion.grid_w));
    Rng init_rng = derive_rng(cfg_.seed, kInitStream);
    model_ = FusionModel::init(ds_.partition, ds_.info.channels, cfg_.gene_hidden, task_classes(),
                               cfg_.fusion, init_rng);
    model_.register_params(reg_);
    opt_.init(reg_);
    cls_weight_idx_ = param_index("classifier/weight");
    cls_bias_idx_ = param_index("classifier/bias");
    data_rng_ = derive_rng(cfg_.seed, kDataStream);
    metrics_csv_ = MetricReport::csv_header() + "\n";
  }

  // One optimizer step on the given sample indices; returns the objective.
  double step(const std::vector<std::size_t>& batch) {
    if (batch.empty()) throw contract_error("step: empty batch");
    ModelOutput out = model_.forward(ds_.gene_batch(batch), ds_.patch_batch(batch));
    std::vector<int> labels;
    std::vector<SurvivalRecord> records;
    Tensor task_loss;
    if (cfg_.task == Task::survival) {
      records = ds_.survival_records(batch);
      task_loss = nll_survival_loss(out.logits, records);
    } else {
      labels = class_labels(batch);
      task_loss = ce_loss(out.logits, labels);
    }
    // With the consistency terms disabled the objective is the task loss
    // alone and alpha never enters.
    Tensor objective = cfg_.ge_con_enabled
                           ? total_loss(cfg_.task, task_loss, out.t.ge_con, out.e.ge_con, cfg_.weights)
                           : task_loss;
    const double loss_value = objective.item();
    GradMap grads = backward(objective);
    std::vector<std::vector<double>> g;
    g.reserve(reg_.items().size());
    for (const auto& [_, p] : reg_.items()) g.push_back(grads.grad_values(p));

    if (cfg_.cg_coord_enabled) apply_coordination(out, labels, records, g);

    opt_.apply(reg_, g, cfg_.lr);
    return loss_value;
  }

  MetricReport evaluate(Split split) { return evaluate_on(ds_.split_indices(split)); }

  // Metrics over an explicit index list.  Aggregation is order-invariant, so
  // any permutation of the same indices yields the identical report.
  MetricReport evaluate_on(const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw contract_error("evaluate: empty index list");
    std::vector<double> scores;  // class probabilities, or per-sample risks
    const std::size_t k = model_.classes();
    for (std::size_t at = 0; at < idx.size(); at += cfg_.batch_size) {
      const std::size_t end = std::min(at + cfg_.batch_size, idx.size());
      const std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(at),
                                           idx.begin() + static_cast<std::ptrdiff_t>(end));
      ModelOutput out = model_.forward(ds_.gene_batch(chunk), ds_.patch_batch(chunk));
      if (cfg_.task == Task::survival) {
        const std::vector<double> risks = survival_risks(out.logits);
        scores.insert(scores.end(), risks.begin(), risks.end());
      } else {
        const Tensor probs = softmax(out.logits, 1);  // keep the node alive behind the view
        const std::vector<double>& p = probs.values();
        scores.insert(scores.end(), p.begin(), p.end());
      }
    }
    if (cfg_.task == Task::survival) {
      MetricReport r;
      r.c_index = c_index(scores, ds_.survival_records(idx));
      return r;
    }
    return classification_metrics(scores, k, class_labels(idx));
  }

  // Epoch loop: shuffle, step over chunks, validate, log one CSV row per
  // epoch.  A non-finite value anywhere in a step aborts with its index.
  const std::vector<EpochRecord>& run(const EpochCallback& after_epoch = {}) {
    std::vector<std::size_t> order = ds_.split_indices(Split::train);
    const std::size_t epochs = cfg_.effective_epochs();
    for (std::size_t ep = epochs_done_ + 1; ep <= epochs; ++ep) {
      std::shuffle(order.begin(), order.end(), data_rng_);
      double loss_sum = 0.0;
      std::size_t batches = 0;
      for (std::size_t at = 0; at < order.size(); at += cfg_.batch_size) {
        const std::size_t end = std::min(at + cfg_.batch_size, order.size());
        try {
          loss_sum += step({order.begin() + static_cast<std::ptrdiff_t>(at),
                            order.begin() + static_cast<std::ptrdiff_t>(end)});
        } catch (const numeric_error& e) {
          throw numeric_error("training aborted at step " + std::to_string(opt_.steps + 1) + ": " +
                              e.what());
        }
        ++batches;
      }
      EpochRecord rec{ep, loss_sum / static_cast<double>(batches), evaluate(Split::val)};
      metrics_csv_ += rec.val.csv_row(ep, "val");
      metrics_csv_ += '\n';
      history_.push_back(rec);
      epochs_done_ = ep;
      if (after_epoch && after_epoch(ep, rec.val)) break;
    }
    return history_;
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.epoch = epochs_done_;
    ck.opt_steps = opt_.steps;
    ck.config_json = config_snapshot().dump();
    std::ostringstream os;
    os << data_rng_;
    ck.rng_state = std::move(os).str();
    for (std::size_t i = 0; i < reg_.items().size(); ++i)
      ck.entries.emplace_back(reg_.items()[i].first, reg_.items()[i].second.values());
    for (std::size_t i = 0; i < reg_.items().size(); ++i)
      ck.entries.emplace_back("opt/m/" + reg_.items()[i].first, opt_.m[i]);
    for (std::size_t i = 0; i < reg_.items().size(); ++i)
      ck.entries.emplace_back("opt/v/" + reg_.items()[i].first, opt_.v[i]);
    return ck;
  }

  void restore(const Checkpoint& ck) {
    for (std::size_t i = 0; i < reg_.items().size(); ++i) {
      const auto& [key, param] = reg_.items()[i];
      const std::vector<double>& saved = ck.find(key);
      Tensor p = param;
      if (saved.size() != p.size())
        throw format_error("checkpoint: entry '" + key + "' has " + std::to_string(saved.size()) +
                           " values, model expects " + std::to_string(p.size()));
      p.mutable_values() = saved;
      opt_.m[i] = ck.find("opt/m/" + key);
      opt_.v[i] = ck.find("opt/v/" + key);
      if (opt_.m[i].size() != p.size() || opt_.v[i].size() != p.size())
        throw format_error("checkpoint: moment size mismatch for '" + key + "'");
    }
    opt_.steps = ck.opt_steps;
    epochs_done_ = ck.epoch;
    std::istringstream is(ck.rng_state);
    is >> data_rng_;
    if (!is) throw format_error("checkpoint: malformed rng state");
  }

  // Everything evaluate() needs to rebuild this trainer later, plus the
  // dataset dimensions it was trained against.
  nlohmann::ordered_json config_snapshot() const {
    nlohmann::ordered_json j;
    j["task"] = std::string(task_name(cfg_.task));
    j["alpha"] = cfg_.weights.alpha;
    j["epochs"] = cfg_.effective_epochs();
    j["batch_size"] = cfg_.batch_size;
    j["lr"] = cfg_.lr;
    j["seed"] = cfg_.seed;
    j["ge_con"] = cfg_.ge_con_enabled;
    j["cg_coord"] = cfg_.cg_coord_enabled;
    j["heads"] = cfg_.fusion.heads;
    j["embed_dim"] = cfg_.fusion.embed_dim;
    j["grid_h"] = cfg_.fusion.grid_h;
    j["grid_w"] = cfg_.fusion.grid_w;
    j["offset_scale"] = cfg_.fusion.offset_scale;
    j["gene_hidden"] = cfg_.gene_hidden;
    j["classes"] = model_.classes();
    j["gene_count"] = ds_.info.gene_count;
    j["tumour_genes"] = ds_.info.tumour_genes;
    j["tme_genes"] = ds_.info.tme_genes;
    j["channels"] = ds_.info.channels;
    return j;
  }

  FusionModel& model() { return model_; }
  const ParamRegistry& params() const { return reg_; }
  const AdamState& optimizer() const { return opt_; }
  const TrainConfig& config() const { return cfg_; }
  const std::string& metrics_csv() const { return metrics_csv_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  std::size_t epochs_done() const { return epochs_done_; }

 private:
  static constexpr std::uint64_t kInitStream = 0;
  static constexpr std::uint64_t kDataStream = 1;

  std::size_t task_classes() const {
    switch (cfg_.task) {
      case Task::diagnosis: return ds_.info.diagnosis_classes;
      case Task::grading: return ds_.info.grade_classes;
      case Task::survival: return kSurvivalBins;
    }
    throw contract_error("task_classes: unknown task");
  }

  std::vector<int> class_labels(const std::vector<std::size_t>& idx) const {
    return cfg_.task == Task::diagnosis ? ds_.diagnosis_labels(idx) : ds_.grade_labels(idx);
  }

  // Branch gradient over the classifier head only, via the masked input, plus
  // the branch's batch confidence.
  std::vector<double> branch_grad(const Tensor& z, bool tumour, const std::vector<int>& labels,
                                  const std::vector<SurvivalRecord>& records, double& conf) {
    Tensor logits = model_.branch_logits(z, tumour);
    Tensor loss;
    if (cfg_.task == Task::survival) {
      loss = nll_survival_loss(logits, records);
      // A single-sample batch has no comparable pairs; both branches then
      // read as equally (un)confident and coordination stands down.
      conf = records.size() >= 2 ? branch_confidence_surv(survival_risks(logits), records) : 0.5;
    } else {
      loss = ce_loss(logits, labels);
      conf = branch_confidence_cls(logits, labels);
    }
    GradMap gm = backward(loss);
    std::vector<double> flat = gm.grad_values(model_.classifier.weight);
    const std::vector<double> gb = gm.grad_values(model_.classifier.bias);
    flat.insert(flat.end(), gb.begin(), gb.end());
    return flat;
  }

  // Replace the head's joint-loss gradient with the coordinated sum of the
  // two branch gradients; stream parameters keep the joint gradient.
  void apply_coordination(const ModelOutput& out, const std::vector<int>& labels,
                          const std::vector<SurvivalRecord>& records,
                          std::vector<std::vector<double>>& g) {
    BranchGradients bg;
    bg.grad_t = branch_grad(out.t.fused, true, labels, records, bg.conf_t);
    bg.grad_e = branch_grad(out.e.fused, false, labels, records, bg.conf_e);
    const CoordResult cr = coordinate(bg);
    std::vector<double>& gw = g[cls_weight_idx_];
    std::vector<double>& gb = g[cls_bias_idx_];
    const std::size_t wn = gw.size();
    for (std::size_t i = 0; i < wn; ++i) gw[i] = cr.grad_t[i] + cr.grad_e[i];
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = cr.grad_t[wn + i] + cr.grad_e[wn + i];
  }

  std::size_t param_index(const std::string& key) const {
    for (std::size_t i = 0; i < reg_.items().size(); ++i)
      if (reg_.items()[i].first == key) return i;
    throw contract_error("trainer: parameter '" + key + "' not registered");
  }

  const Dataset& ds_;
  TrainConfig cfg_;
  FusionModel model_;
  ParamRegistry reg_;
  AdamState opt_;
  Rng data_rng_;
  std::string metrics_csv_;
  std::vector<EpochRecord> history_;
  std::size_t epochs_done_ = 0;
  std::size_t cls_weight_idx_ = 0;
  std::size_t cls_bias_idx_ = 0;
};

// Rebuilds the TrainConfig stored in a checkpoint and checks it against the
// dataset it is about to run on.
inline TrainConfig train_config_from_snapshot(const std::string& json_text, const Dataset& ds) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("checkpoint config: ") + e.what());
  }
  TrainConfig cfg;
  try {
    cfg.task = parse_task(j.at("task").get<std::string>());
    cfg.weights.alpha = j.at("alpha").get<double>();
    cfg.epochs = j.at("epochs").get<std::size_t>();
    cfg.batch_size = j.at("batch_size").get<std::size_t>();
    cfg.lr = j.at("lr").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.ge_con_enabled = j.at("ge_con").get<bool>();
    cfg.cg_coord_enabled = j.at("cg_coord").get<bool>();
    cfg.fusion.heads = j.at("heads").get<std::size_t>();
    cfg.fusion.embed_dim = j.at("embed_dim").get<std::size_t>();
    cfg.fusion.grid_h = j.at("grid_h").get<std::size_t>();
    cfg.fusion.grid_w = j.at("grid_w").get<std::size_t>();
    cfg.fusion.offset_scale = j.at("offset_scale").get<double>();
    cfg.gene_hidden = j.at("gene_hidden").get<std::size_t>();
    const auto expect = [&](const char* key, std::size_t have) {
      const std::size_t want = j.at(key).get<std::size_t>();
      if (want != have)
        throw config_error(std::string("checkpoint was trained with ") + key + "=" +
                           std::to_string(want) + " but the dataset has " + std::to_string(have));
    };
    expect("gene_count", ds.info.gene_count);
    expect("tumour_genes", ds.info.tumour_genes);
    expect("tme_genes", ds.info.tme_genes);
    expect("channels", ds.info.channels);
    const std::size_t ds_classes = cfg.task == Task::diagnosis  ? ds.info.diagnosis_classes
                                   : cfg.task == Task::grading ? ds.info.grade_classes
                                                               : kSurvivalBins;
    expect("classes", ds_classes);
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("checkpoint config: ") + e.what());
  }
  return cfg;
}

// ---- CLI-level jobs -------------------------------------------------------

inline nlohmann::ordered_json train_config_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["task"] = std::string(task_name(cfg.task));
  j["alpha"] = cfg.weights.alpha;
  j["epochs"] = cfg.effective_epochs();
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["seed"] = cfg.seed;
  j["ge_con"] = cfg.ge_con_enabled;
  j["cg_coord"] = cfg.cg_coord_enabled;
  j["heads"] = cfg.fusion.heads;
  j["embed_dim"] = cfg.fusion.embed_dim;
  j["grid_h"] = cfg.fusion.grid_h;
  j["grid_w"] = cfg.fusion.grid_w;
  j["offset_scale"] = cfg.fusion.offset_scale;
  j["gene_hidden"] = cfg.gene_hidden;
  j["data"] = cfg.data_dir;
  j["out"] = cfg.out_dir;
  return j;
}

struct TrainJobResult {
  MetricReport final_val;
  std::vector<Trainer::EpochRecord> history;
};

// train: load data, run the full schedule, leave metrics.csv, model.sfck and
// a config.json echo in the output directory.
inline TrainJobResult run_training_job(const TrainConfig& cfg) {
  if (cfg.data_dir.empty()) throw config_error("train: a dataset directory is required");
  if (cfg.out_dir.empty()) throw config_error("train: an output directory is required");
  const Dataset ds = load(cfg.data_dir);
  Trainer tr(ds, cfg);
  const auto& history = tr.run();
  const std::filesystem::path out(cfg.out_dir);
  std::filesystem::create_directories(out);
  detail::write_file(out / "metrics.csv", tr.metrics_csv());
  save_checkpoint(tr.checkpoint(), out / "model.sfck");
  detail::write_file(out / "config.json", train_config_json(cfg).dump(2) + "\n");
  return {history.back().val, history};
}

inline MetricReport run_evaluate_job(const std::filesystem::path& checkpoint_file,
                                     const std::filesystem::path& data_dir, Split split) {
  const Dataset ds = load(data_dir);
  const Checkpoint ck = load_checkpoint(checkpoint_file);
  TrainConfig cfg = train_config_from_snapshot(ck.config_json, ds);
  Trainer tr(ds, cfg);
  tr.restore(ck);
  return tr.evaluate(split);
}

// ---- Ablation -------------------------------------------------------------

struct AblationRow {
  std::string variant;
  std::size_t runs = 0;
  MetricReport mean;
};

// Train {full, no Ge-Con, no CG-Coord} across the given seeds and average
// the final validation reports per variant.
inline std::vector<AblationRow> ablate(const Dataset& ds, const TrainConfig& base,
                                       const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw config_error("ablate: need at least one seed");
  struct Variant {
    const char* name;
    bool ge_con, cg_coord;
  };
  const Variant variants[] = {
      {"full", true, true}, {"no_ge_con", false, true}, {"no_cg_coord", true, false}};
  std::vector<AblationRow> rows;
  for (const Variant& var : variants) {
    std::array<double, 6> sums{};
    std::array<std::size_t, 6> counts{};
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      cfg.ge_con_enabled = var.ge_con;
      cfg.cg_coord_enabled = var.cg_coord;
      Trainer tr(ds, cfg);
      const MetricReport rep = tr.run().back().val;
      const std::optional<double>* fields[] = {&rep.auc, &rep.acc,  &rep.sen,
                                               &rep.spec, &rep.f1, &rep.c_index};
      for (std::size_t f = 0; f < 6; ++f)
        if (*fields[f]) {
          sums[f] += **fields[f];
          ++counts[f];
        }
    }
    AblationRow row{var.name, seeds.size(), {}};
    std::optional<double>* fields[] = {&row.mean.auc, &row.mean.acc,  &row.mean.sen,
                                       &row.mean.spec, &row.mean.f1, &row.mean.c_index};
    for (std::size_t f = 0; f < 6; ++f)
      if (counts[f] == seeds.size()) *fields[f] = sums[f] / static_cast<double>(seeds.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,runs,auc,acc,sen,spec,f1,cindex\n";
  for (const AblationRow& r : rows) {
    out += r.variant;
    out += ',' + std::to_string(r.runs);
    for (const auto* f : {&r.mean.auc, &r.mean.acc, &r.mean.sen, &r.mean.spec, &r.mean.f1,
                          &r.mean.c_index}) {
      out += ',';
      if (*f) out += detail::fmt_double(**f);
    }
    out += '\n';
  }
  return out;
}

inline std::vector<AblationRow> run_ablation_job(const TrainConfig& cfg, std::size_t n_seeds) {
  if (cfg.data_dir.empty()) throw config_error("ablate: a dataset directory is required");
  if (cfg.out_dir.empty()) throw config_error("ablate: an output directory is required");
  if (n_seeds == 0) throw config_error("ablate: need at least one seed");
  const Dataset ds = load(cfg.data_dir);
  std::vector<std::uint64_t> seeds(n_seeds);
  for (std::size_t i = 0; i < n_seeds; ++i) seeds[i] = cfg.seed + i;
  // The ablation grid always starts from the full pipeline.
  TrainConfig base = cfg;
  base.ge_con_enabled = true;
  base.cg_coord_enabled = true;
  const std::vector<AblationRow> rows = ablate(ds, base, seeds);
  const std::filesystem::path out(cfg.out_dir);
  std::filesystem::create_directories(out);
  detail::write_file(out / "ablation.csv", ablation_csv(rows));
  return rows;
}

}  // namespace subfuse
