#include <sstream>

#include "csmil/cli.hpp"
#include "doctest.h"
#include "scratch.hpp"

namespace fs = std::filesystem;
using csmil::testing::scratch_dir;
using csmil::testing::slurp;
using csmil::testing::spit;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = csmil::cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Small enough for a few seconds per pipeline.
fs::path quick_config(const fs::path& dir, const std::string& extra = "") {
  const fs::path file = dir / "config.json";
  spit(file, R"({"seed": 3, "data": {"patients_per_class": 6, "locations": 12, "dim": 6},
  "cluster": {"k": 4}, "model": {"encoder_dim": 8, "attention_hidden": 4},
  "train": {"epochs": 3, "learning_rate": 0.001, "n_splits": 2}, "eval": {"n_bootstrap": 100})" + extra + "}");
  return file;
}

std::size_t count_files(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

}  // namespace

TEST_CASE("gen-data writes the default cohort deterministically") {
  const auto dir = scratch_dir("cli_gen");
  REQUIRE(run({"gen-data", "--out-dir", (dir / "a").string()}).code == 0);
  REQUIRE(run({"gen-data", "--out-dir", (dir / "b").string()}).code == 0);
  CHECK(count_files(dir / "a" / "data", ".csv") == 40);
  for (const char* f : {"manifest.json", "ground_truth.json", "resolved_config.json", "pos_000.csv"})
    CHECK(slurp(dir / "a" / "data" / f) == slurp(dir / "b" / "data" / f));
  const auto other = run({"gen-data", "--seed", "5", "--out-dir", (dir / "c").string()});
  CHECK(other.code == 0);
  CHECK(slurp(dir / "c" / "data" / "pos_000.csv") != slurp(dir / "a" / "data" / "pos_000.csv"));
}

TEST_CASE("invalid parameters and unknown keys exit with code 2") {
  const auto dir = scratch_dir("cli_bad");
  spit(dir / "rho.json", R"({"data": {"signal_fraction": 0}})");
  const auto rho = run({"gen-data", "--config", (dir / "rho.json").string(), "--out-dir", dir.string()});
  CHECK(rho.code == 2);
  CHECK(rho.err.find("signal_fraction") != std::string::npos);

  spit(dir / "typo.json", R"({"train": {"epoch": 3}})");
  const auto typo = run({"gen-data", "--config", (dir / "typo.json").string(), "--out-dir", dir.string()});
  CHECK(typo.code == 2);
  CHECK(typo.err.find("train.epoch") != std::string::npos);

  spit(dir / "broken.json", "{\"seed\": ");
  CHECK(run({"gen-data", "--config", (dir / "broken.json").string(), "--out-dir", dir.string()}).code == 2);
  CHECK(run({"gen-data", "--no-such-flag"}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("full pipeline through the command line") {
  const auto dir = scratch_dir("cli_pipeline");
  const std::string cfg = quick_config(dir).string();
  const std::string out = (dir / "run").string();
  REQUIRE(run({"gen-data", "--config", cfg, "--out-dir", out}).code == 0);
  REQUIRE(run({"cluster", "--config", cfg, "--out-dir", out}).code == 0);
  CHECK(fs::exists(dir / "run" / "cohort" / "splits.json"));
  CHECK(fs::exists(dir / "run" / "cohort" / "clusters_5x.json"));
  CHECK(fs::exists(dir / "run" / "cohort" / "clusters_multi.json"));

  for (const char* fusion : {"cs-attn", "concat"}) {
    const auto r = run({"train", "--config", cfg, "--out-dir", out, "--fusion", fusion});
    REQUIRE(r.code == 0);
    const fs::path models = dir / "run" / "models" / fusion;
    CHECK(count_files(models, ".ckpt") == 2);
    CHECK(fs::exists(models / "loss_00.csv"));
    CHECK(slurp(models / "info.json").find("\"n_splits\": 2") != std::string::npos);
    REQUIRE(run({"eval", "--config", cfg, "--out-dir", out, "--name", fusion}).code == 0);
    const std::string report = slurp(dir / "run" / "eval" / fusion / "report.txt");
    CHECK(report.find("auc=") != std::string::npos);
    CHECK(report.find(std::string("model=") + fusion) != std::string::npos);
    CHECK(fs::exists(dir / "run" / "eval" / fusion / "roc.csv"));
    CHECK(fs::exists(dir / "run" / "eval" / fusion / "scores.csv"));
  }

  const auto cmp = run({"compare", "--config", cfg, "--out-dir", out});
  REQUIRE(cmp.code == 0);
  const std::string table = slurp(dir / "run" / "compare.csv");
  CHECK(std::count(table.begin(), table.end(), '\n') == 3);
  CHECK(table.find("\nconcat,") != std::string::npos);

  REQUIRE(run({"attn-map", "--config", cfg, "--out-dir", out, "--name", "cs-attn"}).code == 0);
  const fs::path attn = dir / "run" / "attn" / "cs-attn";
  // Three scales per test patient; the quick cohort holds out two of each class.
  CHECK(count_files(attn, ".pgm") == 3 * 4);
  CHECK(fs::exists(attn / "attention.csv"));
  const auto concat_map = run({"attn-map", "--config", cfg, "--out-dir", out, "--name", "concat"});
  CHECK(concat_map.code == 2);
  CHECK(concat_map.err.find("no cross-scale attention") != std::string::npos);

  // Retraining a variant replaces its checkpoints.
  REQUIRE(run({"train", "--config", cfg, "--out-dir", out, "--fusion", "concat", "--seed", "4"}).code == 0);
  CHECK(count_files(dir / "run" / "models" / "concat", ".ckpt") == 2);
}

TEST_CASE("missing inputs are configuration errors") {
  const auto dir = scratch_dir("cli_missing");
  const std::string cfg = quick_config(dir).string();
  const std::string out = (dir / "run").string();
  CHECK(run({"train", "--config", cfg, "--out-dir", out}).code == 2);
  CHECK(run({"cluster", "--config", cfg, "--out-dir", out, "--dataset", (dir / "nowhere").string()}).code == 2);
  REQUIRE(run({"gen-data", "--config", cfg, "--out-dir", out}).code == 0);
  REQUIRE(run({"cluster", "--config", cfg, "--out-dir", out}).code == 0);
  const auto ev = run({"eval", "--config", cfg, "--out-dir", out, "--name", "cs-attn"});
  CHECK(ev.code == 2);
  CHECK_FALSE(ev.err.empty());
  CHECK(run({"compare", "--config", cfg, "--out-dir", out}).code == 2);
}

TEST_CASE("an unwritable output location exits with code 3") {
  const auto dir = scratch_dir("cli_io");
  spit(dir / "file", "not a directory");
  CHECK(run({"gen-data", "--out-dir", (dir / "file" / "run").string()}).code == 3);
}

TEST_CASE("resolved config is canonical") {
  const auto dir = scratch_dir("cli_resolved");
  const std::string cfg = quick_config(dir).string();
  REQUIRE(run({"gen-data", "--config", cfg, "--out-dir", (dir / "run").string()}).code == 0);
  const std::string resolved = slurp(dir / "run" / "data" / "resolved_config.json");
  CHECK(resolved.find(dir.string()) == std::string::npos);
  spit(dir / "again.json", resolved);
  const auto a = csmil::cli::load_run_config(dir / "again.json");
  const auto b = csmil::cli::load_run_config(cfg);
  CHECK(a.resolved_json() == b.resolved_json());
  CHECK(a.train.epochs == 3);
  CHECK(a.data.patients_per_class == 6);
}
