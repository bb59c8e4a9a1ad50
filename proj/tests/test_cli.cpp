// Black-box checks of the installed command-line binary: subcommand wiring,
// artifact layout, and the exit-code contract (0 ok, 2 config, 3 data).

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <string>
#include <sys/wait.h>

#include <subfuse/io_util.hpp>

#include "support/temp_dir.hpp"

namespace {

const std::string kBin = SUBFUSE_CLI_PATH;

int run(const std::string& args, const std::string& stdout_file = "/dev/null") {
  const std::string cmd = kBin + " " + args + " > " + stdout_file + " 2> /dev/null";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WEXITSTATUS(rc);
}

std::string slurp(const std::filesystem::path& p) { return subfuse::detail::read_file(p); }

}  // namespace

TEST_CASE("cli round trip: generate, train, evaluate, ablate") {
  testsupport::TempDir dir("cli");
  const std::string data = (dir / "data").string();
  const std::string small = "--samples 80 --genes 30 --tumour-genes 8 --grid 5x5 --channels 8 "
                            "--classes 3 --grades 3 --seed 4 --out " + data;
  REQUIRE(run("generate " + small) == 0);
  CHECK(std::filesystem::exists(dir / "data" / "manifest.json"));
  CHECK(std::filesystem::exists(dir / "data" / "genes.csv"));
  CHECK(std::filesystem::exists(dir / "data" / "patches.bin"));
  CHECK(std::filesystem::exists(dir / "data" / "labels.csv"));

  // Same seed: byte-identical dataset files.
  REQUIRE(run("generate " + small + "2") == 0);
  CHECK(slurp(dir / "data" / "genes.csv") == slurp(dir / "data2" / "genes.csv"));
  CHECK(slurp(dir / "data" / "patches.bin") == slurp(dir / "data2" / "patches.bin"));
  CHECK(slurp(dir / "data" / "labels.csv") == slurp(dir / "data2" / "labels.csv"));

  const std::string base_flags = " --data " + data + " --heads 2 --embed-dim 8";
  const std::string train_flags = base_flags + " --epochs 2";
  REQUIRE(run("train" + train_flags + " --out " + (dir / "run").string(),
              (dir / "train_out.txt").string()) == 0);
  CHECK(std::filesystem::exists(dir / "run" / "metrics.csv"));
  CHECK(std::filesystem::exists(dir / "run" / "model.sfck"));
  CHECK(std::filesystem::exists(dir / "run" / "config.json"));

  // Stdout repeats the final validation row from metrics.csv.
  const std::string metrics = slurp(dir / "run" / "metrics.csv");
  const auto rows = subfuse::detail::split_lines(metrics);
  REQUIRE(rows.size() == 3);
  const std::string train_out = slurp(dir / "train_out.txt");
  CHECK(train_out.find(std::string(rows.back())) != std::string::npos);

  // Evaluating the checkpoint on val reproduces that row bitwise.
  REQUIRE(run("evaluate " + (dir / "run" / "model.sfck").string() + " --data " + data +
              " --split val", (dir / "eval_out.txt").string()) == 0);
  CHECK(slurp(dir / "eval_out.txt").find(std::string(rows.back())) != std::string::npos);

  REQUIRE(run("ablate" + base_flags + " --epochs 1 --seeds 1 --out " + (dir / "ab").string()) == 0);
  const std::string ab = slurp(dir / "ab" / "ablation.csv");
  const auto ab_rows = subfuse::detail::split_lines(ab);
  REQUIRE(ab_rows.size() == 4);
  CHECK(ab_rows[0] == "variant,runs,auc,acc,sen,spec,f1,cindex");
  CHECK(ab_rows[1].substr(0, 5) == "full,");
  CHECK(ab_rows[2].substr(0, 10) == "no_ge_con,");
  CHECK(ab_rows[3].substr(0, 12) == "no_cg_coord,");
}

TEST_CASE("cli maps configuration problems to exit code 2") {
  testsupport::TempDir dir("cli2");
  const std::string data = (dir / "data").string();
  REQUIRE(run("generate --samples 60 --genes 20 --tumour-genes 5 --grid 5x5 --channels 4 "
              "--classes 3 --grades 3 --out " + data) == 0);

  CHECK(run("") == 2);                               // missing subcommand
  CHECK(run("frobnicate") == 2);                     // unknown subcommand
  CHECK(run("train --data " + data) == 2);           // missing required --out
  CHECK(run("train --data " + data + " --out " + (dir / "o").string() + " --alpha 2 --epochs 1") == 2);
  CHECK(run("train --data " + data + " --out " + (dir / "o").string() + " --grid banana") == 2);
  CHECK(run("train --data " + data + " --out " + (dir / "o").string() +
            " --grid 3x3 --heads 2 --embed-dim 8") == 2);  // dataset/config mismatch
  CHECK(run("generate --genes 10 --tumour-genes 10 --out " + (dir / "g").string()) == 2);
  CHECK(run("--help") == 0);
}

TEST_CASE("cli maps malformed data to exit code 3") {
  testsupport::TempDir dir("cli3");
  CHECK(run("train --data " + (dir / "nope").string() + " --out " + (dir / "o").string()) == 3);

  subfuse::detail::write_file(dir / "model.sfck", "not a checkpoint");
  const std::string data = (dir / "data").string();
  REQUIRE(run("generate --samples 60 --genes 20 --tumour-genes 5 --grid 5x5 --channels 4 "
              "--classes 3 --grades 3 --out " + data) == 0);
  CHECK(run("evaluate " + (dir / "model.sfck").string() + " --data " + data) == 3);

  // Truncating the patch payload must be caught by the loader.
  const std::string patches = slurp(dir / "data" / "patches.bin");
  subfuse::detail::write_file(dir / "data" / "patches.bin", patches.substr(0, patches.size() - 7));
  CHECK(run("train --data " + data + " --out " + (dir / "o").string()) == 3);
}
