// drives the installed command-line binary as a subprocess and checks exit
// codes, diagnostics, and the files a run directory accumulates. the binary
// path comes in through POPAVG_CLI_PATH at compile time.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "popavg/checkpoint.hpp"
#include "popavg/harness.hpp"

using namespace popavg;
namespace fs = std::filesystem;

namespace {

fs::path scratch_root() {
  static fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "popavg_cli_tests";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return "";
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << text;
}

// runs the cli with shell-redirected streams; returns the exit code
int run_cli(const std::string& args, std::string* out = nullptr,
            std::string* err = nullptr) {
  static int call = 0;
  fs::path o = scratch_root() / ("stdout_" + std::to_string(call) + ".txt");
  fs::path e = scratch_root() / ("stderr_" + std::to_string(call) + ".txt");
  ++call;
  std::string cmd = std::string(POPAVG_CLI_PATH) + " " + args + " > " + o.string() +
                    " 2> " + e.string();
  int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  if (out) *out = slurp(o);
  if (err) *err = slurp(e);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

// small synthetic population run with batch-norm, renormalization, and a
// holdout split, so every downstream subcommand has something to chew on
std::string train_config(const std::string& out_dir) {
  return
      "dataset = synthetic\n"
      "dataset.synthetic_n = 96\n"
      "dataset.synthetic_dim = 8\n"
      "dataset.synthetic_classes = 3\n"
      "dataset.synthetic_test_n = 48\n"
      "model = mlp\n"
      "model.hidden = 8\n"
      "model.batchnorm = true\n"
      "n_epochs = 2\n"
      "batch_size = 16\n"
      "optimizer = sgd\n"
      "schedule = constant\n"
      "schedule.lr = 0.05\n"
      "papa.variant = papa_all\n"
      "papa.freq = 1\n"
      "papa.repair_k = 2\n"
      "p = 2\n"
      "holdout_fraction = 0.1\n"
      "grids.mixup = 0\n"
      "grids.label_smooth = 0\n"
      "grids.cutmix = 0\n"
      "grids.erase = 0\n"
      "seed = 5\n"
      "threads = 2\n"
      "out_dir = " + out_dir + "\n";
}

// the run directory shared by the soup/ensemble/analyze cases
const fs::path& shared_run_dir() {
  static fs::path dir = [] {
    fs::path d = scratch_root() / "run1";
    fs::path cfg = scratch_root() / "run1.cfg";
    write_text(cfg, train_config(d.string()));
    REQUIRE(run_cli("train --config " + cfg.string()) == 0);
    return d;
  }();
  return dir;
}

std::string accuracy_after(const std::string& text, const std::string& prefix) {
  size_t at = text.find(prefix);
  REQUIRE(at != std::string::npos);
  size_t begin = at + prefix.size();
  size_t end = text.find('\n', begin);
  return text.substr(begin, end - begin);
}

}  // namespace

TEST_CASE("malformed invocations are usage errors") {
  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("train") == 1);  // --config is required
  CHECK(run_cli("train --config x.cfg --bogus") == 1);
  std::string out;
  CHECK(run_cli("--help", &out) == 0);
  CHECK(out.find("train") != std::string::npos);
}

TEST_CASE("config problems exit with code 2 and a pointed diagnostic") {
  std::string err;
  fs::path missing = scratch_root() / "does_not_exist.cfg";
  CHECK(run_cli("train --config " + missing.string(), nullptr, &err) == 2);
  CHECK(err.find("config error") != std::string::npos);
  CHECK(err.find("does_not_exist.cfg") != std::string::npos);

  fs::path bad_value = scratch_root() / "bad_value.cfg";
  write_text(bad_value, "p = 0\n");
  CHECK(run_cli("train --config " + bad_value.string(), nullptr, &err) == 2);

  fs::path bad_key = scratch_root() / "bad_key.cfg";
  write_text(bad_key, "not_a_key = 1\n");
  CHECK(run_cli("train --config " + bad_key.string(), nullptr, &err) == 2);
  CHECK(err.find("line 1") != std::string::npos);
}

TEST_CASE("train writes a complete run directory") {
  std::string out;
  fs::path dir = scratch_root() / "run_files";
  fs::path cfg = scratch_root() / "run_files.cfg";
  write_text(cfg, train_config(dir.string()));
  CHECK(run_cli("train --config " + cfg.string(), &out) == 0);
  CHECK(out.find("AVG test accuracy ") != std::string::npos);
  CHECK(out.find("GREEDY test accuracy ") != std::string::npos);
  CHECK(out.find("ENS test accuracy ") != std::string::npos);
  CHECK(out.find("written to") != std::string::npos);

  CHECK(fs::exists(dir / "config.txt"));
  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "member_0.ckpt"));
  CHECK(fs::exists(dir / "member_1.ckpt"));
  CHECK(fs::exists(dir / "avg.ckpt"));
  CHECK(fs::exists(dir / "greedy.ckpt"));

  // the stored config is the canonical dump and reparses to the same run
  ExperimentConfig stored = load_config((dir / "config.txt").string());
  CHECK(stored.p == 2);
  CHECK(stored.papa.repair_k == 2);
  std::vector<MetricsRecord> rows = parse_metrics((dir / "metrics.csv").string());
  CHECK(rows.size() > 0);
  // checkpoints carry the digest of exactly that config text
  std::string expect_digest = hex64(text_digest(slurp(dir / "config.txt")));
  CHECK(checkpoint_digest((dir / "member_0.ckpt").string()) == expect_digest);
  CHECK(checkpoint_digest((dir / "avg.ckpt").string()) == expect_digest);
}

TEST_CASE("re-running the same config reproduces every output byte") {
  fs::path dir = scratch_root() / "run_repeat";
  fs::path cfg = scratch_root() / "run_repeat.cfg";
  write_text(cfg, train_config(dir.string()));
  REQUIRE(run_cli("train --config " + cfg.string()) == 0);
  std::string metrics1 = slurp(dir / "metrics.csv");
  std::string member1 = slurp(dir / "member_0.ckpt");
  std::string avg1 = slurp(dir / "avg.ckpt");
  REQUIRE(run_cli("train --config " + cfg.string()) == 0);
  CHECK(slurp(dir / "metrics.csv") == metrics1);
  CHECK(slurp(dir / "member_0.ckpt") == member1);
  CHECK(slurp(dir / "avg.ckpt") == avg1);
}

TEST_CASE("seed and output overrides change the run identity") {
  fs::path dir = scratch_root() / "run_seed";
  fs::path cfg = scratch_root() / "run_seed.cfg";
  write_text(cfg, train_config((scratch_root() / "run_seed_ignored").string()));
  REQUIRE(run_cli("train --config " + cfg.string() + " --seed 6 --out " + dir.string()) == 0);
  ExperimentConfig stored = load_config((dir / "config.txt").string());
  CHECK(stored.seed == 6);
  CHECK(stored.out_dir == dir.string());
  std::vector<MetricsRecord> rows = parse_metrics((dir / "metrics.csv").string());
  std::vector<MetricsRecord> base =
      parse_metrics((shared_run_dir() / "metrics.csv").string());
  REQUIRE(rows.size() > 0);
  REQUIRE(base.size() > 0);
  CHECK(rows[0].run_id != base[0].run_id);
}

TEST_CASE("evaluate scores a checkpoint on a named test set") {
  // a classifier that always answers 7 is perfect on an all-sevens file
  Network net = build_network({LayerSpec::dense(64, 10)}, 1);
  VecXf p = VecXf::Zero(net.flat_size);
  p[net.offset_of("dense0", "bias") + 7] = 1.0f;
  net.set_params(p);
  fs::path ckpt = scratch_root() / "sevens.ckpt";
  save_checkpoint(net, ckpt.string());

  std::string row;
  for (int i = 0; i < 64; ++i) row += "0,";
  fs::path data = scratch_root() / "sevens.tes";
  write_text(data, row + "7\n" + row + "7\n" + row + "7\n");

  std::string out;
  CHECK(run_cli("evaluate --checkpoint " + ckpt.string() +
                    " --dataset optdigits --test-path " + data.string(),
                &out) == 0);
  CHECK(out.find("accuracy 1\n") != std::string::npos);

  // synthetic evaluation derives its dimensions from the checkpoint
  CHECK(run_cli("evaluate --checkpoint " + ckpt.string() + " --dataset synthetic --seed 3",
                &out) == 0);
  CHECK(out.find("accuracy ") != std::string::npos);

  CHECK(run_cli("evaluate --checkpoint " + ckpt.string() + " --dataset nonsense") == 2);
  fs::path gone = scratch_root() / "gone.ckpt";
  CHECK(run_cli("evaluate --checkpoint " + gone.string() + " --dataset synthetic") == 3);
}

TEST_CASE("soup rebuilds and combines a saved population") {
  const fs::path& dir = shared_run_dir();
  std::string out;
  CHECK(run_cli("soup --run " + dir.string() + " --kind avg", &out) == 0);
  CHECK(out.find("avg soup test accuracy ") != std::string::npos);
  CHECK(fs::exists(dir / "soup_avg.ckpt"));

  // rebuilding the averaged net from checkpoints must reproduce the accuracy
  // the training run printed for AVG
  std::vector<MetricsRecord> rows = parse_metrics((dir / "metrics.csv").string());
  double avg_acc = -1.0;
  for (const auto& r : rows)
    if (r.member_id == "AVG" && r.split == "test" && r.epoch == 2) avg_acc = r.accuracy;
  REQUIRE(avg_acc >= 0.0);
  CHECK(accuracy_after(out, "avg soup test accuracy ") == format_double(avg_acc));

  CHECK(run_cli("soup --run " + dir.string() + " --kind greedy", &out) == 0);
  CHECK(out.find("included members:") != std::string::npos);
  CHECK(out.find("greedy soup test accuracy ") != std::string::npos);
  CHECK(fs::exists(dir / "soup_greedy.ckpt"));

  CHECK(run_cli("soup --run " + dir.string() + " --kind nonsense") == 2);

  // a directory with a config but no checkpoints is a runtime failure
  fs::path empty = scratch_root() / "empty_run";
  fs::create_directories(empty);
  fs::copy_file(dir / "config.txt", empty / "config.txt",
                fs::copy_options::overwrite_existing);
  CHECK(run_cli("soup --run " + empty.string() + " --kind avg") == 3);
}

TEST_CASE("ensemble reports the logit-averaged accuracy") {
  std::string out;
  CHECK(run_cli("ensemble --run " + shared_run_dir().string(), &out) == 0);
  CHECK(out.find("ensemble test accuracy ") != std::string::npos);
}

TEST_CASE("analyze emits similarity tables and event logs") {
  const fs::path& dir = shared_run_dir();
  std::string out;
  CHECK(run_cli("analyze --run " + dir.string() + " --similarity --events", &out) == 0);
  CHECK(out.find("member0-member1") != std::string::npos);
  CHECK(out.find("relu0") != std::string::npos);
  CHECK(out.find("avg_all") != std::string::npos);
  std::string csv = slurp(dir / "similarity.csv");
  CHECK(csv.rfind("pair,layer,cosine\n", 0) == 0);
  CHECK(csv.find("member0-member1,relu0,") != std::string::npos);

  CHECK(run_cli("analyze --run " + dir.string()) == 2);  // needs a flag

  // a model without hidden activations has nothing to compare
  fs::path flat_dir = scratch_root() / "run_logreg";
  fs::path flat_cfg = scratch_root() / "run_logreg.cfg";
  write_text(flat_cfg,
             "dataset = synthetic\n"
             "dataset.synthetic_n = 64\n"
             "dataset.synthetic_dim = 8\n"
             "dataset.synthetic_classes = 3\n"
             "dataset.synthetic_test_n = 32\n"
             "model = logreg\n"
             "n_epochs = 1\n"
             "batch_size = 16\n"
             "schedule = constant\n"
             "schedule.lr = 0.05\n"
             "papa.variant = baseline\n"
             "papa.repair_k = 0\n"
             "p = 1\n"
             "holdout_fraction = 0\n"
             "grids.mixup = 0\n"
             "grids.label_smooth = 0\n"
             "grids.cutmix = 0\n"
             "grids.erase = 0\n"
             "out_dir = " + flat_dir.string() + "\n");
  REQUIRE(run_cli("train --config " + flat_cfg.string()) == 0);
  CHECK(run_cli("analyze --run " + flat_dir.string() + " --similarity") == 3);
  CHECK(run_cli("analyze --run " + flat_dir.string() + " --events") == 0);
}
