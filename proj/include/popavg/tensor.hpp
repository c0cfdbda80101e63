#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

namespace popavg {

using VecXf = Eigen::VectorXf;
using RowMatXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRowMatXf = Eigen::Map<RowMatXf>;
using ConstMapRowMatXf = Eigen::Map<const RowMatXf>;

// shape + row-major float32 payload; all engine activations and parameters
// live in these
struct Tensor {
  std::vector<int> shape;
  VecXf data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);

  int64_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  static Tensor zeros(std::vector<int> s);

  // 2-D views; product of dims must equal size
  MapRowMatXf mat(int rows, int cols);
  ConstMapRowMatXf mat(int rows, int cols) const;

  void reshape(std::vector<int> s);  // same total size
  bool all_finite() const;
};

int64_t shape_product(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);  // dims joined by 'x'

}  // namespace popavg
