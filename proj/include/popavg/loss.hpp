#pragma once

#include <utility>

#include "popavg/tensor.hpp"

namespace popavg {

// mean over batch of -sum_k t_k log softmax(z)_k, with gradient already
// divided by the batch size; targets may be soft (rows sum to 1)
std::pair<double, Tensor> loss_softmax_ce(const Tensor& logits, const Tensor& targets);

}  // namespace popavg
