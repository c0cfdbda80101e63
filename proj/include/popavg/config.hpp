#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "popavg/augment.hpp"
#include "popavg/optim.hpp"
#include "popavg/population.hpp"

namespace popavg {

// malformed or inconsistent configuration; the cli maps this to its own exit
// code, distinct from runtime failures
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  std::string id = "optdigits";  // optdigits | cifar10 | synthetic
  std::string train_path = "data/optdigits/optdigits.tra";
  std::string test_path = "data/optdigits/optdigits.tes";
  int synthetic_n = 512;
  int synthetic_dim = 16;
  int synthetic_classes = 4;
  bool synthetic_image = false;  // emit (n,1,hw,hw) instead of flat rows
  int synthetic_hw = 8;
  int synthetic_test_n = 256;
};

struct ModelConfig {
  std::string id = "logreg";  // logreg | mlp | smallconv
  std::vector<int> hidden = {32, 32};
  bool batchnorm = true;  // mlp/smallconv only
};

struct OptimizerConfig {
  std::string kind = "sgd";  // sgd | adamw
  double momentum = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct SwaConfig {
  bool enabled = false;
  double start_fraction = 0.75;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  int n_epochs = 10;
  int batch_size = 64;
  OptimizerConfig optimizer;
  ScheduleSpec schedule;  // total_steps is derived at run time, not a key
  PapaConfig papa;
  int p = 1;
  double holdout_fraction = 0.02;
  Grids grids;
  uint64_t seed = 1;
  SwaConfig swa;
  std::string out_dir = "runs/out";
  int threads = 1;

  // programmatic hooks, not config-file keys
  bool same_member_streams = false;  // all members share seed and policy
  std::string source_text;           // original file content, feeds the run id
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);
void validate_config(ExperimentConfig& cfg);  // clamps papa window to n_epochs

// canonical key=value form; parse_config_text(dump_config(c)) reproduces c
std::string dump_config(const ExperimentConfig& cfg);

uint64_t text_digest(const std::string& text);
std::string hex64(uint64_t v);

}  // namespace popavg
