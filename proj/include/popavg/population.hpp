#pragma once

#include <cstdint>
#include <vector>

#include "popavg/augment.hpp"
#include "popavg/network.hpp"
#include "popavg/rng.hpp"

namespace popavg {

struct Population {
  std::vector<Network> members;
  std::vector<uint64_t> member_seeds;
  std::vector<AugmentPolicy> policies;

  int size() const { return static_cast<int>(members.size()); }
};

struct PapaConfig {
  enum class Variant { papa, papa_all, papa_2, baseline };
  Variant variant = Variant::papa;
  double alpha_papa = 0.99;
  int64_t freq = 10;       // SGD steps for papa, epochs for papa_all/papa_2
  int window_start = 1;    // averaging permitted for epochs in [start, end]
  int window_end = 1 << 30;
  int repair_k = 5;        // 0 disables renormalization
  bool lr_scaling = true;
};

Eigen::VectorXf population_mean(const Population& pop);

// every member moves toward the pre-update mean: theta <- a'*theta + (1-a')*mean
// with 1-a' = (gamma/gamma0)*(1-alpha)
void papa_pull(Population& pop, double alpha_papa, double gamma, double gamma0);

// per output slot, replace with the mean of m distinct members of the old
// population; returns the drawn member indices per slot
std::vector<std::vector<int>> average_replace(Population& pop, int m, Rng& rng);

// additive gaussian noise with std sigma0/g on trainable entries
void mutate(VecXf& params, int generation_g, double sigma0, Rng& rng,
            const std::vector<uint8_t>& trainable);

struct StepCounters {
  int64_t steps_since_event = 0;   // papa
  int64_t epochs_since_event = 0;  // papa_all / papa_2
  int epoch = 1;                   // current epoch (1-based)
};

bool should_average(const StepCounters& counters, const PapaConfig& config);

}  // namespace popavg
