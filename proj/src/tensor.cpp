#include "popavg/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace popavg {

int64_t shape_product(const std::vector<int>& shape) {
  int64_t p = 1;
  for (int d : shape) {
    if (d <= 0) throw std::runtime_error("tensor shape dims must be positive");
    p *= d;
  }
  return p;
}

std::string shape_to_string(const std::vector<int>& shape) {
  std::string s;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  data = VecXf::Zero(shape_product(shape));
}

Tensor Tensor::zeros(std::vector<int> s) { return Tensor(std::move(s)); }

MapRowMatXf Tensor::mat(int rows, int cols) {
  if (static_cast<int64_t>(rows) * cols != size())
    throw std::runtime_error("tensor view size mismatch");
  return MapRowMatXf(data.data(), rows, cols);
}

ConstMapRowMatXf Tensor::mat(int rows, int cols) const {
  if (static_cast<int64_t>(rows) * cols != size())
    throw std::runtime_error("tensor view size mismatch");
  return ConstMapRowMatXf(data.data(), rows, cols);
}

void Tensor::reshape(std::vector<int> s) {
  if (shape_product(s) != size()) throw std::runtime_error("reshape size mismatch");
  shape = std::move(s);
}

bool Tensor::all_finite() const {
  for (int64_t i = 0; i < data.size(); ++i)
    if (!std::isfinite(data[i])) return false;
  return true;
}

}  // namespace popavg
