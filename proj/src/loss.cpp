#include "popavg/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace popavg {

std::pair<double, Tensor> loss_softmax_ce(const Tensor& logits, const Tensor& targets) {
  if (logits.rank() != 2 || targets.rank() != 2 || logits.shape != targets.shape)
    throw std::runtime_error("loss_softmax_ce: logits/targets shape mismatch");
  int n = logits.dim(0), k = logits.dim(1);
  auto zm = logits.mat(n, k);
  auto tm = targets.mat(n, k);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += tm(i, j);
    if (std::abs(s - 1.0) > 1e-5)
      throw std::runtime_error("loss_softmax_ce: target row does not sum to 1");
  }
  Tensor dlogits({n, k});
  auto dm = dlogits.mat(n, k);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double zmax = zm(i, 0);
    for (int j = 1; j < k; ++j) zmax = std::max(zmax, static_cast<double>(zm(i, j)));
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += std::exp(static_cast<double>(zm(i, j)) - zmax);
    double lse = zmax + std::log(sum);
    for (int j = 0; j < k; ++j) {
      double logp = static_cast<double>(zm(i, j)) - lse;
      double p = std::exp(logp);
      loss -= tm(i, j) * logp;
      dm(i, j) = static_cast<float>((p - tm(i, j)) / n);
    }
  }
  return {loss / n, std::move(dlogits)};
}

}  // namespace popavg
