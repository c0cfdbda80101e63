#include "popavg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace popavg {

namespace {

double pick(Rng& rng, const std::vector<double>& grid) {
  if (grid.empty()) throw std::runtime_error("augmentation grid is empty");
  return grid[rng.uniform_int(grid.size())];
}

void mix_rows(Tensor& t, const std::vector<int>& perm, double lam) {
  // t <- lam*t + (1-lam)*t[perm], computed against a snapshot of t
  int b = t.dim(0);
  int64_t f = t.size() / b;
  VecXf snap = t.data;
  for (int i = 0; i < b; ++i) {
    float* dst = t.data.data() + static_cast<int64_t>(i) * f;
    const float* a = snap.data() + static_cast<int64_t>(i) * f;
    const float* c = snap.data() + static_cast<int64_t>(perm[static_cast<size_t>(i)]) * f;
    for (int64_t j = 0; j < f; ++j)
      dst[j] = static_cast<float>(lam * a[j] + (1.0 - lam) * c[j]);
  }
}

}  // namespace

AugmentPolicy sample_policy(Rng& rng, const Grids& grids) {
  AugmentPolicy p;
  p.mixup_alpha = pick(rng, grids.mixup);
  p.label_smooth_alpha = pick(rng, grids.label_smooth);
  p.cutmix_prob = pick(rng, grids.cutmix);
  p.erase_prob = pick(rng, grids.erase);
  return p;
}

Batch apply_policy(const std::vector<int>& indices, const Dataset& ds,
                   const AugmentPolicy& policy, Rng& rng) {
  if (indices.empty()) throw std::runtime_error("apply_policy: empty batch");
  if ((policy.cutmix_prob > 0.0 || policy.erase_prob > 0.0) && !ds.is_image())
    throw std::runtime_error("cutmix/erasing require image-shaped data");
  int b = static_cast<int>(indices.size());
  Batch out;
  out.x = ds.gather(indices);
  out.t = Tensor({b, ds.K});
  auto tm = out.t.mat(b, ds.K);
  for (int i = 0; i < b; ++i)
    tm(i, ds.labels[static_cast<size_t>(indices[static_cast<size_t>(i)])]) = 1.0f;

  bool do_mixup = policy.mixup_alpha > 0.0;
  bool do_cutmix = policy.cutmix_prob > 0.0;
  if (do_mixup && do_cutmix) {
    // mutually exclusive per batch
    if (rng.u01() < 0.5) do_cutmix = false;
    else do_mixup = false;
  }

  if (do_mixup) {
    double lam = rng.beta(policy.mixup_alpha, policy.mixup_alpha);
    std::vector<int> perm = rng.permutation(b);
    mix_rows(out.x, perm, lam);
    mix_rows(out.t, perm, lam);
  } else if (do_cutmix) {
    if (rng.u01() < policy.cutmix_prob) {
      int c = out.x.dim(1), h = out.x.dim(2), w = out.x.dim(3);
      double lam_box = rng.beta(1.0, 1.0);
      double cut = std::sqrt(1.0 - lam_box);
      int bh = std::min(h, std::max(1, static_cast<int>(std::lround(cut * h))));
      int bw = std::min(w, std::max(1, static_cast<int>(std::lround(cut * w))));
      int y0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(h - bh + 1)));
      int x0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(w - bw + 1)));
      std::vector<int> perm = rng.permutation(b);
      VecXf snap = out.x.data;
      for (int i = 0; i < b; ++i) {
        int src = perm[static_cast<size_t>(i)];
        for (int ci = 0; ci < c; ++ci)
          for (int y = y0; y < y0 + bh; ++y)
            for (int x = x0; x < x0 + bw; ++x) {
              int64_t o = ((static_cast<int64_t>(i) * c + ci) * h + y) * w + x;
              int64_t s = ((static_cast<int64_t>(src) * c + ci) * h + y) * w + x;
              out.x.data[o] = snap[s];
            }
      }
      double lam_adj = 1.0 - static_cast<double>(bh) * bw / (static_cast<double>(h) * w);
      mix_rows(out.t, perm, lam_adj);
    }
  }

  if (policy.erase_prob > 0.0) {
    int c = out.x.dim(1), h = out.x.dim(2), w = out.x.dim(3);
    for (int i = 0; i < b; ++i) {
      if (rng.u01() >= policy.erase_prob) continue;
      double area = rng.uniform(0.02, 0.33) * h * w;
      double aspect = std::exp(rng.uniform(std::log(0.3), std::log(1.0 / 0.3)));
      int eh = std::min(h, std::max(1, static_cast<int>(std::lround(std::sqrt(area * aspect)))));
      int ew = std::min(w, std::max(1, static_cast<int>(std::lround(std::sqrt(area / aspect)))));
      int y0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(h - eh + 1)));
      int x0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(w - ew + 1)));
      for (int ci = 0; ci < c; ++ci)
        for (int y = y0; y < y0 + eh; ++y)
          for (int x = x0; x < x0 + ew; ++x)
            out.x.data[((static_cast<int64_t>(i) * c + ci) * h + y) * w + x] = 0.0f;
    }
  }

  if (policy.label_smooth_alpha > 0.0) {
    double a = policy.label_smooth_alpha;
    for (int64_t i = 0; i < out.t.size(); ++i)
      out.t.data[i] = static_cast<float>((1.0 - a) * out.t.data[i] + a / ds.K);
  }
  return out;
}

}  // namespace popavg
