#pragma once

#include <vector>

#include "popavg/data.hpp"
#include "popavg/population.hpp"
#include "popavg/repair.hpp"

namespace popavg {

struct SoupResult {
  Network network;
  std::vector<int> included_member_ids;  // in acceptance order
  std::vector<double> val_accuracy_trace;
};

struct GreedySoupOptions {
  // when reset_data is set, batch-norm stats are rebuilt via reset_batchnorm;
  // by default only once on the final soup, per_candidate rebuilds every trial
  const Dataset* reset_data = nullptr;
  AugmentPolicy reset_policy;
  uint64_t reset_seed = 666;
  int reset_k = 5;
  int reset_batch = 64;
  bool per_candidate = false;
};

Network average_soup(const Population& pop);

// sort members by holdout accuracy, then grow an equal-weight running mean,
// keeping each candidate iff its accuracy does not drop (ties accepted)
SoupResult greedy_soup(const Population& pop, const Dataset& eval_ds,
                       const GreedySoupOptions& options = {});

// elementwise mean of members' eval-mode logits
Tensor ensemble_logits(Population& pop, const Tensor& x);

double evaluate_accuracy(Network& net, const Dataset& ds);
double evaluate_accuracy_ensemble(Population& pop, const Dataset& ds);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

// softmax cross-entropy against one-hot labels plus argmax accuracy
EvalResult evaluate_model(Network& net, const Dataset& ds);
EvalResult evaluate_ensemble(Population& pop, const Dataset& ds);

}  // namespace popavg
