#pragma once

#include <string>
#include <vector>

#include "popavg/data.hpp"
#include "popavg/population.hpp"

namespace popavg {

struct SimilarityReport {
  std::string pair;   // e.g. "member0-member1" or "member0-avg"
  std::string layer;
  double cosine = 0.0;
};

// mean over samples of the cosine between the two nets' flattened activations
// at a named layer (eval mode); zero-norm samples are skipped with a warning
double cosine_feature_similarity(Network& net_a, Network& net_b, const std::string& layer,
                                 const Dataset& ds, int n_samples);

struct AveragingEvent {
  int epoch = 0;
  std::vector<double> pre_accuracies;  // members before the event
  double post_accuracy = 0.0;          // population mean after the event
  double post_repair_accuracy = -1.0;  // -1 when renormalization was off
};

struct AveragingEventTrace {
  std::vector<AveragingEvent> events;
};

void record_averaging_event(AveragingEventTrace& trace, Population& pre_population,
                            Network& post_net, Network* post_repair_net,
                            const Dataset& ds_test, int epoch);

}  // namespace popavg
