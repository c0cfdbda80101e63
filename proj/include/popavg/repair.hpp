#pragma once

#include <cstdint>
#include <vector>

#include "popavg/augment.hpp"
#include "popavg/data.hpp"
#include "popavg/network.hpp"

namespace popavg {

struct RepairPlan {
  std::vector<double> weights;          // one per member, must sum to 1
  int k = 5;                            // estimation passes
  int batch_size = 64;
  const Dataset* data = nullptr;
  std::vector<AugmentPolicy> policies;  // per-member augmentation
  AugmentPolicy avg_policy;             // used when rebuilding the averaged net
  uint64_t seed = 666;
};

// weighted per-channel targets for one dense/conv layer's outputs
struct ChannelTargets {
  int after_layer = -1;
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
};

// one passive observer after every dense/conv layer; throws on double attach
void attach_observers(Network& net, bool active = false);
void remove_observers(Network& net);

// reset batch-norm and observer running stats, then re-estimate them with k
// policy-augmented batches. the example stream depends only on the seed, not
// on the policy, so different members see the same underlying rows.
void reset_batchnorm(Network& net, const Dataset& data, const AugmentPolicy& policy,
                     uint64_t seed, int k, int batch_size = 64);

// member stats are rebuilt on copies under the shared seed, then combined as
// mean_t = sum w_i mean_i, std_t = sum w_i std_i (stds averaged directly)
std::vector<ChannelTargets> collect_weighted_stats(const std::vector<Network>& members,
                                                   const RepairPlan& plan);

// rescales the averaged net's dense/conv outputs so their measured per-channel
// moments match the weighted member targets, then fuses the rescaling into the
// layer parameters and removes the observers
void repair(Network& avg_net, const std::vector<Network>& members, const RepairPlan& plan);

}  // namespace popavg
