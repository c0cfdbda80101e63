#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "popavg/tensor.hpp"

namespace popavg {

struct Dataset {
  Tensor inputs;             // (n, features) or (n, C, H, W)
  std::vector<int> labels;   // class ids in [0, K)
  int n = 0;
  int K = 0;

  bool is_image() const { return inputs.rank() == 4; }
  int feature_count() const;                 // per-sample flat size
  Tensor gather(const std::vector<int>& idx) const;  // rows by index
};

Dataset load_optdigits(const std::string& path);

// standard binary batches (1 label byte + 3072 pixel bytes per record); path
// may be a single .bin file or a directory holding data_batch_*.bin
Dataset load_cifar10_binary(const std::string& path,
                            std::array<float, 3> mean = {0.4914f, 0.4822f, 0.4465f},
                            std::array<float, 3> std = {0.2470f, 0.2435f, 0.2616f});

// gaussian blobs around per-class centers; flat features
Dataset make_synthetic_blobs(int n, int dim, int k, uint64_t seed);
// image-shaped variant for conv paths
Dataset make_synthetic_image_blobs(int n, int c, int h, int w, int k, uint64_t seed);

std::pair<Dataset, Dataset> holdout_split(const Dataset& ds, double fraction,
                                          uint64_t seed);

std::vector<int> epoch_order(int n, uint64_t member_seed, int epoch);

}  // namespace popavg
