#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "popavg/tensor.hpp"

namespace popavg {

struct LayerSpec {
  enum class Kind { dense, conv2d, batchnorm, relu, flatten, avgpool };
  Kind kind = Kind::dense;
  std::string name;  // unique within a network; auto-assigned when empty
  int in = 0, out = 0;                                         // dense
  int in_ch = 0, out_ch = 0, kernel = 0, stride = 1, pad = 0;  // conv2d
  int ch = 0;                                                  // batchnorm
  int pool = 0;                                                // avgpool

  static LayerSpec dense(int in, int out, std::string name = "");
  static LayerSpec conv2d(int in_ch, int out_ch, int kernel, int stride = 1,
                          int pad = 0, std::string name = "");
  static LayerSpec batchnorm(int ch, std::string name = "");
  static LayerSpec relu(std::string name = "");
  static LayerSpec flatten(std::string name = "");
  static LayerSpec avgpool(int k, std::string name = "");
};

struct ManifestEntry {
  std::string layer;
  std::string role;  // weight / bias / bn_weight / bn_bias / bn_rmean / bn_rvar
  std::vector<int> shape;
  int64_t offset = 0;
};

struct Layer {
  LayerSpec spec;
  Tensor W, b;                            // dense: W in x out; conv: W out_ch x in_ch x k x k
  Tensor bn_w, bn_b, bn_rmean, bn_rvar;   // batchnorm affine + running stats
  int64_t bn_count = 0;                   // batches folded while in cumulative mode
};

// temporary batch-norm stand-in attached after a dense/conv layer during
// renormalization; passive = record stats only, active = normalize with batch
// stats and apply the affine
struct Observer {
  int after_layer = -1;
  bool active = false;
  int ch = 0;
  Eigen::VectorXd acc_mean, acc_var;  // sums of per-batch stats
  int64_t batches = 0;
  VecXf affine_w, affine_b;

  Eigen::VectorXd mean() const;
  Eigen::VectorXd variance() const;
  void reset();
};

enum class Mode { train, eval };

struct LayerCache {
  Tensor in;
  Tensor col;                  // conv im2col buffer / bn xhat
  Eigen::VectorXd mean, var;   // bn batch stats
  double inv_m = 0.0;
  std::vector<int> in_shape;
};

struct Cache {
  std::vector<LayerCache> per_layer;
  int batch = 0;
  bool valid = false;
};

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

struct Network {
  std::vector<Layer> layers;
  std::vector<ManifestEntry> manifest;
  std::vector<uint8_t> trainable_mask;  // one flag per flat-vector entry
  int64_t flat_size = 0;
  int64_t trainable_size = 0;
  std::vector<Observer> observers;
  bool cumulative_stats = false;  // batch-norm stat rebuild mode

  Tensor forward(const Tensor& x, Mode mode, Cache* cache = nullptr);
  // per-layer post-activation outputs, eval mode (index-aligned with layers)
  std::vector<Tensor> forward_collect(const Tensor& x);
  VecXf backward(const Cache& cache, const Tensor& dlogits);

  VecXf get_params() const;
  void set_params(const VecXf& v);
  int64_t param_count() const { return flat_size; }
  int64_t trainable_param_count() const { return trainable_size; }

  Tensor extract_activations(const Tensor& x, const std::string& layer_name);
  int layer_index(const std::string& name) const;  // -1 when absent
  int64_t offset_of(const std::string& layer, const std::string& role) const;
};

Network build_network(const std::vector<LayerSpec>& specs, uint64_t init_seed);

}  // namespace popavg
