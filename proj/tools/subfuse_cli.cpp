// Command-line front end: generate synthetic cohorts, train the two-stream
// fusion model, evaluate checkpoints, and run the ablation grid.
//
// Exit codes: 0 success, 2 invalid configuration or flags, 3 malformed data
// or checkpoint files.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include <subfuse/checkpoint.hpp>
#include <subfuse/dataset_io.hpp>
#include <subfuse/synth.hpp>
#include <subfuse/trainer.hpp>

namespace {

using namespace subfuse;

std::size_t parse_dim(std::string_view s) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || v == 0)
    throw config_error("grid sides must be positive integers, got '" + std::string(s) + "'");
  return v;
}

void apply_grid(const std::string& spec, std::size_t& h, std::size_t& w) {
  if (spec.empty()) return;
  const auto x = spec.find_first_of("xX");
  if (x == std::string::npos || x == 0 || x + 1 == spec.size())
    throw config_error("--grid expects HxW, e.g. 7x7, got '" + spec + "'");
  h = parse_dim(std::string_view(spec).substr(0, x));
  w = parse_dim(std::string_view(spec).substr(x + 1));
}

// Flags shared by `train` and `ablate`.
struct TrainArgs {
  TrainConfig cfg;
  std::string task = "diagnosis";
  std::string grid;
  std::string data;
  std::string out;
  bool no_ge_con = false;
  bool no_cg_coord = false;
};

void add_train_flags(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--task", a.task, "prediction task")
      ->check(CLI::IsMember({"diagnosis", "grading", "survival"}))
      ->capture_default_str();
  cmd->add_option("--alpha", a.cfg.weights.alpha, "consistency mixing weight in [0,1]")
      ->capture_default_str();
  cmd->add_option("--epochs", a.cfg.epochs, "training epochs (default: 20, survival 10)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--batch-size", a.cfg.batch_size, "samples per step")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--lr", a.cfg.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--seed", a.cfg.seed, "run seed")->capture_default_str();
  cmd->add_option("--data", a.data, "dataset directory")->required();
  cmd->add_option("--out", a.out, "output directory")->required();
  cmd->add_flag("--no-ge-con", a.no_ge_con, "disable the gene-guided consistency terms");
  cmd->add_flag("--no-cg-coord", a.no_cg_coord, "disable confidence-guided gradient coordination");
  cmd->add_option("--grid", a.grid, "attention grid as HxW (default: dataset grid)");
  cmd->add_option("--heads", a.cfg.fusion.heads, "attention heads")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--embed-dim", a.cfg.fusion.embed_dim, "fusion embedding width")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

TrainConfig resolve(const TrainArgs& a, const DatasetInfo& info) {
  TrainConfig cfg = a.cfg;
  cfg.task = parse_task(a.task);
  cfg.ge_con_enabled = !a.no_ge_con;
  cfg.cg_coord_enabled = !a.no_cg_coord;
  cfg.data_dir = a.data;
  cfg.out_dir = a.out;
  // Unless overridden, attend over the grid the data was generated with.
  cfg.fusion.grid_h = info.grid_h;
  cfg.fusion.grid_w = info.grid_w;
  apply_grid(a.grid, cfg.fusion.grid_h, cfg.fusion.grid_w);
  return cfg;
}

int do_train(const TrainArgs& a) {
  const Dataset ds = load(a.data);
  const TrainJobResult res = run_training_job(resolve(a, ds.info));
  std::cout << MetricReport::csv_header() << '\n'
            << res.final_val.csv_row(res.history.size(), "val") << '\n';
  std::cerr << "wrote " << (std::filesystem::path(a.out) / "metrics.csv").string() << ", model.sfck, config.json\n";
  return 0;
}

int do_evaluate(const std::string& ckpt, const std::string& data, const std::string& split_str) {
  const Split split = split_str == "train" ? Split::train
                      : split_str == "val" ? Split::val
                                           : Split::test;
  const Dataset ds = load(data);
  const Checkpoint ck = load_checkpoint(ckpt);
  Trainer tr(ds, train_config_from_snapshot(ck.config_json, ds));
  tr.restore(ck);
  const MetricReport rep = tr.evaluate(split);
  std::cout << MetricReport::csv_header() << '\n' << rep.csv_row(ck.epoch, split_name(split)) << '\n';
  return 0;
}

int do_ablate(const TrainArgs& a, std::size_t seeds) {
  const Dataset ds = load(a.data);
  const std::vector<AblationRow> rows = run_ablation_job(resolve(a, ds.info), seeds);
  std::cout << ablation_csv(rows);
  std::cerr << "wrote " << (std::filesystem::path(a.out) / "ablation.csv").string() << '\n';
  return 0;
}

struct GenArgs {
  SynthConfig cfg;
  std::size_t genes = 420;
  std::size_t tumour = 59;
  std::string grid;
  std::uint64_t seed = 0;
  std::string out;
};

int do_generate(const GenArgs& a) {
  SynthConfig cfg = a.cfg;
  cfg.gene_count = a.genes;
  if (a.tumour >= a.genes)
    throw config_error("--tumour-genes (" + std::to_string(a.tumour) + ") must be below --genes (" +
                       std::to_string(a.genes) + ")");
  cfg.tumour_genes = a.tumour;
  cfg.tme_genes = a.genes - a.tumour;
  apply_grid(a.grid, cfg.grid_h, cfg.grid_w);
  const Dataset ds = generate(cfg, a.seed);
  save(ds, a.out);
  std::cerr << "wrote " << ds.info.n_samples << " samples to " << a.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stream subspace fusion for paired gene/histology data"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train a model and write metrics + checkpoint");
  add_train_flags(train, train_args);

  std::string eval_ckpt, eval_data, eval_split = "test";
  CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a dataset split");
  evaluate->add_option("checkpoint", eval_ckpt, "model.sfck file")->required();
  evaluate->add_option("--data", eval_data, "dataset directory")->required();
  evaluate->add_option("--split", eval_split, "dataset split")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();

  GenArgs gen_args;
  CLI::App* gen = app.add_subcommand("generate", "write a synthetic paired cohort");
  gen->add_option("--samples", gen_args.cfg.n_samples, "cohort size")->capture_default_str();
  gen->add_option("--genes", gen_args.genes, "total gene count")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  gen->add_option("--tumour-genes", gen_args.tumour, "size of the tumour partition")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  gen->add_option("--grid", gen_args.grid, "histology grid as HxW (default 7x7)");
  gen->add_option("--channels", gen_args.cfg.channels, "histology feature channels")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  gen->add_option("--classes", gen_args.cfg.diagnosis_classes, "diagnosis classes")
      ->capture_default_str();
  gen->add_option("--grades", gen_args.cfg.grade_classes, "grade classes")->capture_default_str();
  gen->add_option("--snr", gen_args.cfg.snr, "signal-to-noise ratio")->capture_default_str();
  gen->add_option("--conflict", gen_args.cfg.conflict_strength,
                  "fraction of samples with contradictory cross-subspace echoes")
      ->capture_default_str();
  gen->add_option("--echo", gen_args.cfg.echo_strength, "cross-subspace echo amplitude")
      ->capture_default_str();
  gen->add_option("--censor", gen_args.cfg.censor_fraction, "right-censoring fraction")
      ->capture_default_str();
  gen->add_option("--seed", gen_args.seed, "generator seed")->capture_default_str();
  gen->add_option("--out", gen_args.out, "output directory")->required();

  TrainArgs ablate_args;
  std::size_t ablate_seeds = 5;
  CLI::App* ablate = app.add_subcommand("ablate", "compare full model against single-feature ablations");
  add_train_flags(ablate, ablate_args);
  ablate->add_option("--seeds", ablate_seeds, "number of seeds to average over")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // flag misuse is a configuration error
  }

  try {
    if (train->parsed()) return do_train(train_args);
    if (evaluate->parsed()) return do_evaluate(eval_ckpt, eval_data, eval_split);
    if (gen->parsed()) return do_generate(gen_args);
    if (ablate->parsed()) return do_ablate(ablate_args, ablate_seeds);
    return 2;
  } catch (const subfuse::config_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const subfuse::format_error& e) {
    std::cerr << "data format error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
