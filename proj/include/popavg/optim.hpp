#pragma once

#include <cstdint>
#include <vector>

#include "popavg/tensor.hpp"

namespace popavg {

struct ScheduleSpec {
  enum class Kind { constant, cosine, cosine_restarts, multistep, linear };
  Kind kind = Kind::constant;
  double gamma0 = 0.1;
  double gamma_min = 1e-4;
  int64_t total_steps = 0;
  int64_t period = 0;                 // cosine_restarts
  std::vector<int64_t> milestones;    // multistep, in steps
  double factor = 0.1;                // multistep decay
};

double lr_at(const ScheduleSpec& s, int64_t step);

struct OptimState {
  enum class Kind { sgd, adamw };
  Kind kind = Kind::sgd;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  VecXf buf1, buf2;  // sgd velocity / adam first+second moments
  int64_t t = 0;

  static OptimState sgd(int64_t n, double momentum = 0.9, double weight_decay = 0.0);
  static OptimState adamw(int64_t n, double weight_decay = 0.0, double beta1 = 0.9,
                          double beta2 = 0.999, double eps = 1e-8);
};

// decoupled weight decay, applied before the momentum/moment update; entries
// with trainable[i]==0 (batch-norm running stats) are never touched
void optim_step(VecXf& params, const VecXf& grads, OptimState& state, double gamma,
                const std::vector<uint8_t>& trainable);

struct SwaState {
  Eigen::VectorXd mean;
  int64_t count = 0;
};

void swa_accumulate(SwaState& swa, const VecXf& params);

}  // namespace popavg
