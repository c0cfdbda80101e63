#pragma once

#include <vector>

#include "popavg/data.hpp"
#include "popavg/rng.hpp"
#include "popavg/tensor.hpp"

namespace popavg {

// one member's sampled transform strengths; 0 disables a transform
struct AugmentPolicy {
  double mixup_alpha = 0.0;
  double label_smooth_alpha = 0.0;
  double cutmix_prob = 0.0;  // grid value read as application probability
  double erase_prob = 0.0;
};

struct Grids {
  std::vector<double> mixup = {0.0, 0.5, 1.0};
  std::vector<double> label_smooth = {0.0, 0.05, 0.10};
  std::vector<double> cutmix = {0.0, 0.5, 1.0};
  std::vector<double> erase = {0.0, 0.15, 0.35};
};

AugmentPolicy sample_policy(Rng& rng, const Grids& grids);

struct Batch {
  Tensor x;
  Tensor t;  // soft targets, rows sum to 1
};

// gathers rows, then applies mixup XOR cutmix, random erasing, label
// smoothing, in that order; cutmix/erasing require image-shaped data
Batch apply_policy(const std::vector<int>& indices, const Dataset& ds,
                   const AugmentPolicy& policy, Rng& rng);

}  // namespace popavg
