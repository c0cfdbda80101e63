#pragma once

#include <string>
#include <vector>

#include "popavg/analysis.hpp"
#include "popavg/config.hpp"
#include "popavg/metrics.hpp"
#include "popavg/soups.hpp"

namespace popavg {

struct LoadedData {
  Dataset train;    // holdout rows removed
  Dataset holdout;  // soup-selection split
  Dataset test;
};

LoadedData load_data(const ExperimentConfig& cfg);

std::vector<LayerSpec> model_specs(const ExperimentConfig& cfg, const Dataset& train);

std::string make_run_id(const ExperimentConfig& cfg);

struct RunOutputs {
  Population population;
  Network avg_soup;  // after the optional renormalization pass
  SoupResult greedy;
  std::vector<MetricsRecord> metrics;
  AveragingEventTrace events;
  std::vector<double> papa_pulls;  // effective 1-alpha' at each pull
  std::string run_id;
};

// the full population training loop: per-member shuffled epochs and policies,
// schedule-driven optimizer steps, averaging events per variant, optional
// tail-averaging swap, final soups. bitwise deterministic for a given config,
// independent of the thread count.
RunOutputs run_training(ExperimentConfig cfg);

}  // namespace popavg
