#include "popavg/network.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "popavg/rng.hpp"

namespace popavg {

LayerSpec LayerSpec::dense(int in, int out, std::string name) {
  LayerSpec s;
  s.kind = Kind::dense;
  s.in = in;
  s.out = out;
  s.name = std::move(name);
  return s;
}

LayerSpec LayerSpec::conv2d(int in_ch, int out_ch, int kernel, int stride, int pad,
                            std::string name) {
  LayerSpec s;
  s.kind = Kind::conv2d;
  s.in_ch = in_ch;
  s.out_ch = out_ch;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  s.name = std::move(name);
  return s;
}

LayerSpec LayerSpec::batchnorm(int ch, std::string name) {
  LayerSpec s;
  s.kind = Kind::batchnorm;
  s.ch = ch;
  s.name = std::move(name);
  return s;
}

LayerSpec LayerSpec::relu(std::string name) {
  LayerSpec s;
  s.kind = Kind::relu;
  s.name = std::move(name);
  return s;
}

LayerSpec LayerSpec::flatten(std::string name) {
  LayerSpec s;
  s.kind = Kind::flatten;
  s.name = std::move(name);
  return s;
}

LayerSpec LayerSpec::avgpool(int k, std::string name) {
  LayerSpec s;
  s.kind = Kind::avgpool;
  s.pool = k;
  s.name = std::move(name);
  return s;
}

Eigen::VectorXd Observer::mean() const {
  if (batches == 0) throw std::runtime_error("observer has no recorded batches");
  return acc_mean / static_cast<double>(batches);
}

Eigen::VectorXd Observer::variance() const {
  if (batches == 0) throw std::runtime_error("observer has no recorded batches");
  return acc_var / static_cast<double>(batches);
}

void Observer::reset() {
  acc_mean = Eigen::VectorXd::Zero(ch);
  acc_var = Eigen::VectorXd::Zero(ch);
  batches = 0;
}

namespace {

// (rows, channels) channel view of a dense (N,F) or conv (N,C,H,W) activation:
// dense -> N rows of F channels; conv -> stats taken per channel over N*H*W
struct ChannelView {
  int ch = 0;
  int64_t per_ch = 0;  // samples per channel
};

ChannelView channel_view(const Tensor& t) {
  ChannelView v;
  if (t.rank() == 2) {
    v.ch = t.dim(1);
    v.per_ch = t.dim(0);
  } else if (t.rank() == 4) {
    v.ch = t.dim(1);
    v.per_ch = static_cast<int64_t>(t.dim(0)) * t.dim(2) * t.dim(3);
  } else {
    throw std::runtime_error("batch-norm input must be rank 2 or 4");
  }
  return v;
}

void batch_stats(const Tensor& t, Eigen::VectorXd& mean, Eigen::VectorXd& var) {
  ChannelView v = channel_view(t);
  mean = Eigen::VectorXd::Zero(v.ch);
  var = Eigen::VectorXd::Zero(v.ch);
  if (t.rank() == 2) {
    int n = t.dim(0), f = t.dim(1);
    auto m = t.mat(n, f);
    for (int j = 0; j < f; ++j) {
      double s = 0.0, s2 = 0.0;
      for (int i = 0; i < n; ++i) {
        double x = m(i, j);
        s += x;
        s2 += x * x;
      }
      mean[j] = s / n;
      var[j] = std::max(0.0, s2 / n - mean[j] * mean[j]);
    }
  } else {
    int n = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
    int64_t hw = static_cast<int64_t>(h) * w;
    for (int j = 0; j < c; ++j) {
      double s = 0.0, s2 = 0.0;
      for (int i = 0; i < n; ++i) {
        const float* p = t.data.data() + (static_cast<int64_t>(i) * c + j) * hw;
        for (int64_t q = 0; q < hw; ++q) {
          double x = p[q];
          s += x;
          s2 += x * x;
        }
      }
      double m = static_cast<double>(n) * hw;
      mean[j] = s / m;
      var[j] = std::max(0.0, s2 / m - mean[j] * mean[j]);
    }
  }
}

// y[i] = (x[i]-shift[ch]) * scale[ch] + offset[ch], per channel
void apply_channel_affine(const Tensor& x, Tensor& y, const Eigen::VectorXd& shift,
                          const Eigen::VectorXd& scale, const Eigen::VectorXd& offset) {
  y = x;
  if (x.rank() == 2) {
    int n = x.dim(0), f = x.dim(1);
    auto xm = x.mat(n, f);
    auto ym = y.mat(n, f);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < f; ++j)
        ym(i, j) = static_cast<float>((xm(i, j) - shift[j]) * scale[j] + offset[j]);
  } else {
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int64_t hw = static_cast<int64_t>(h) * w;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j) {
        const float* px = x.data.data() + (static_cast<int64_t>(i) * c + j) * hw;
        float* py = y.data.data() + (static_cast<int64_t>(i) * c + j) * hw;
        for (int64_t q = 0; q < hw; ++q)
          py[q] = static_cast<float>((px[q] - shift[j]) * scale[j] + offset[j]);
      }
  }
}

void im2col(const Tensor& x, int k, int stride, int pad, int oh, int ow, Tensor& col) {
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int ckk = c * k * k;
  col = Tensor({n * oh * ow, ckk});
  auto cm = col.mat(n * oh * ow, ckk);
  for (int ni = 0; ni < n; ++ni)
    for (int y0 = 0; y0 < oh; ++y0)
      for (int x0 = 0; x0 < ow; ++x0) {
        int row = (ni * oh + y0) * ow + x0;
        for (int ci = 0; ci < c; ++ci)
          for (int kh = 0; kh < k; ++kh) {
            int iy = y0 * stride - pad + kh;
            for (int kw = 0; kw < k; ++kw) {
              int ix = x0 * stride - pad + kw;
              float v = 0.0f;
              if (iy >= 0 && iy < h && ix >= 0 && ix < w)
                v = x.data[((static_cast<int64_t>(ni) * c + ci) * h + iy) * w + ix];
              cm(row, (ci * k + kh) * k + kw) = v;
            }
          }
      }
}

void col2im(const Tensor& dcol, int n, int c, int h, int w, int k, int stride, int pad,
            int oh, int ow, Tensor& dx) {
  dx = Tensor({n, c, h, w});
  auto cm = dcol.mat(n * oh * ow, c * k * k);
  for (int ni = 0; ni < n; ++ni)
    for (int y0 = 0; y0 < oh; ++y0)
      for (int x0 = 0; x0 < ow; ++x0) {
        int row = (ni * oh + y0) * ow + x0;
        for (int ci = 0; ci < c; ++ci)
          for (int kh = 0; kh < k; ++kh) {
            int iy = y0 * stride - pad + kh;
            if (iy < 0 || iy >= h) continue;
            for (int kw = 0; kw < k; ++kw) {
              int ix = x0 * stride - pad + kw;
              if (ix < 0 || ix >= w) continue;
              dx.data[((static_cast<int64_t>(ni) * c + ci) * h + iy) * w + ix] +=
                  cm(row, (ci * k + kh) * k + kw);
            }
          }
      }
}

int conv_out_dim(int in, int k, int stride, int pad) {
  int num = in + 2 * pad - k;
  if (num < 0 || num % stride != 0)
    throw std::runtime_error("conv2d geometry does not compose");
  return num / stride + 1;
}

}  // namespace

int Network::layer_index(const std::string& name) const {
  for (size_t i = 0; i < layers.size(); ++i)
    if (layers[i].spec.name == name) return static_cast<int>(i);
  return -1;
}

Tensor Network::forward(const Tensor& x, Mode mode, Cache* cache) {
  if (!x.all_finite()) throw std::runtime_error("forward: non-finite input");
  if (cache) {
    cache->per_layer.assign(layers.size(), LayerCache{});
    cache->batch = x.rank() >= 1 ? x.dim(0) : 0;
    cache->valid = true;
  }
  Tensor cur = x;
  for (size_t li = 0; li < layers.size(); ++li) {
    Layer& L = layers[li];
    LayerCache* lc = cache ? &cache->per_layer[li] : nullptr;
    switch (L.spec.kind) {
      case LayerSpec::Kind::dense: {
        if (cur.rank() != 2 || cur.dim(1) != L.spec.in)
          throw std::runtime_error("dense input shape mismatch at " + L.spec.name);
        int n = cur.dim(0);
        if (lc) lc->in = cur;
        Tensor out({n, L.spec.out});
        out.mat(n, L.spec.out).noalias() =
            cur.mat(n, L.spec.in) * L.W.mat(L.spec.in, L.spec.out);
        out.mat(n, L.spec.out).rowwise() +=
            Eigen::Map<const Eigen::RowVectorXf>(L.b.data.data(), L.spec.out);
        cur = std::move(out);
        break;
      }
      case LayerSpec::Kind::conv2d: {
        if (cur.rank() != 4 || cur.dim(1) != L.spec.in_ch)
          throw std::runtime_error("conv2d input shape mismatch at " + L.spec.name);
        int n = cur.dim(0), h = cur.dim(2), w = cur.dim(3);
        int oh = conv_out_dim(h, L.spec.kernel, L.spec.stride, L.spec.pad);
        int ow = conv_out_dim(w, L.spec.kernel, L.spec.stride, L.spec.pad);
        int ckk = L.spec.in_ch * L.spec.kernel * L.spec.kernel;
        Tensor col;
        im2col(cur, L.spec.kernel, L.spec.stride, L.spec.pad, oh, ow, col);
        RowMatXf y = col.mat(n * oh * ow, ckk) * L.W.mat(L.spec.out_ch, ckk).transpose();
        y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(L.b.data.data(), L.spec.out_ch);
        Tensor out({n, L.spec.out_ch, oh, ow});
        for (int ni = 0; ni < n; ++ni)
          for (int r = 0; r < oh * ow; ++r)
            for (int c = 0; c < L.spec.out_ch; ++c)
              out.data[((static_cast<int64_t>(ni) * L.spec.out_ch + c) * oh * ow) + r] =
                  y(ni * oh * ow + r, c);
        if (lc) {
          lc->in_shape = cur.shape;
          lc->col = std::move(col);
        }
        cur = std::move(out);
        break;
      }
      case LayerSpec::Kind::batchnorm: {
        ChannelView v = channel_view(cur);
        if (v.ch != L.spec.ch)
          throw std::runtime_error("batchnorm channel mismatch at " + L.spec.name);
        Eigen::VectorXd gamma = L.bn_w.data.cast<double>();
        Eigen::VectorXd beta = L.bn_b.data.cast<double>();
        if (mode == Mode::train) {
          Eigen::VectorXd mean, var;
          batch_stats(cur, mean, var);
          Eigen::VectorXd invstd = (var.array() + kBnEps).sqrt().inverse().matrix();
          Tensor xhat;
          apply_channel_affine(cur, xhat, mean, invstd, Eigen::VectorXd::Zero(v.ch));
          Tensor out;
          apply_channel_affine(xhat, out, Eigen::VectorXd::Zero(v.ch), gamma, beta);
          if (cumulative_stats) {
            double c0 = static_cast<double>(L.bn_count);
            for (int j = 0; j < v.ch; ++j) {
              L.bn_rmean.data[j] =
                  static_cast<float>((c0 * L.bn_rmean.data[j] + mean[j]) / (c0 + 1.0));
              L.bn_rvar.data[j] =
                  static_cast<float>((c0 * L.bn_rvar.data[j] + var[j]) / (c0 + 1.0));
            }
            L.bn_count += 1;
          } else {
            for (int j = 0; j < v.ch; ++j) {
              L.bn_rmean.data[j] = static_cast<float>((1.0 - kBnMomentum) * L.bn_rmean.data[j] +
                                                      kBnMomentum * mean[j]);
              L.bn_rvar.data[j] = static_cast<float>((1.0 - kBnMomentum) * L.bn_rvar.data[j] +
                                                     kBnMomentum * var[j]);
            }
          }
          if (lc) {
            lc->in = cur;
            lc->col = xhat;
            lc->mean = std::move(mean);
            lc->var = std::move(var);
            lc->inv_m = 1.0 / static_cast<double>(v.per_ch);
          }
          cur = std::move(out);
        } else {
          Eigen::VectorXd rmean = L.bn_rmean.data.cast<double>();
          Eigen::VectorXd scale =
              (gamma.array() / (L.bn_rvar.data.cast<double>().array() + kBnEps).sqrt())
                  .matrix();
          Tensor out;
          apply_channel_affine(cur, out, rmean, scale, beta);
          cur = std::move(out);
        }
        break;
      }
      case LayerSpec::Kind::relu: {
        if (lc) lc->in = cur;
        Tensor out = cur;
        out.data = out.data.cwiseMax(0.0f);
        cur = std::move(out);
        break;
      }
      case LayerSpec::Kind::flatten: {
        if (cur.rank() < 2) throw std::runtime_error("flatten needs batched input");
        if (lc) lc->in_shape = cur.shape;
        Tensor out = cur;
        out.reshape({cur.dim(0), static_cast<int>(cur.size() / cur.dim(0))});
        cur = std::move(out);
        break;
      }
      case LayerSpec::Kind::avgpool: {
        if (cur.rank() != 4) throw std::runtime_error("avgpool needs NCHW input");
        int k = L.spec.pool;
        int n = cur.dim(0), c = cur.dim(1), h = cur.dim(2), w = cur.dim(3);
        if (h % k != 0 || w % k != 0)
          throw std::runtime_error("avgpool size does not divide input at " + L.spec.name);
        int oh = h / k, ow = w / k;
        Tensor out({n, c, oh, ow});
        for (int ni = 0; ni < n; ++ni)
          for (int ci = 0; ci < c; ++ci) {
            const float* p = cur.data.data() + (static_cast<int64_t>(ni) * c + ci) * h * w;
            float* q = out.data.data() + (static_cast<int64_t>(ni) * c + ci) * oh * ow;
            for (int y0 = 0; y0 < oh; ++y0)
              for (int x0 = 0; x0 < ow; ++x0) {
                double s = 0.0;
                for (int dy = 0; dy < k; ++dy)
                  for (int dx = 0; dx < k; ++dx) s += p[(y0 * k + dy) * w + (x0 * k + dx)];
                q[y0 * ow + x0] = static_cast<float>(s / (k * k));
              }
          }
        if (lc) lc->in_shape = cur.shape;
        cur = std::move(out);
        break;
      }
    }
    // observers attach logically right after their layer's output
    for (Observer& ob : observers) {
      if (ob.after_layer != static_cast<int>(li)) continue;
      ChannelView v = channel_view(cur);
      if (v.ch != ob.ch) throw std::runtime_error("observer channel mismatch");
      if (mode == Mode::train) {
        Eigen::VectorXd mean, var;
        batch_stats(cur, mean, var);
        ob.acc_mean += mean;
        ob.acc_var += var;
        ob.batches += 1;
        if (ob.active) {
          Eigen::VectorXd invstd = (var.array() + kBnEps).sqrt().inverse().matrix();
          Eigen::VectorXd scale =
              (invstd.array() * ob.affine_w.cast<double>().array()).matrix();
          Eigen::VectorXd offset = ob.affine_b.cast<double>();
          Tensor out;
          apply_channel_affine(cur, out, mean, scale, offset);
          cur = std::move(out);
        }
      } else if (ob.active) {
        Eigen::VectorXd mean = ob.mean();
        Eigen::VectorXd invstd =
            (ob.variance().array() + kBnEps).sqrt().inverse().matrix();
        Eigen::VectorXd scale =
            (invstd.array() * ob.affine_w.cast<double>().array()).matrix();
        Eigen::VectorXd offset = ob.affine_b.cast<double>();
        Tensor out;
        apply_channel_affine(cur, out, mean, scale, offset);
        cur = std::move(out);
      }
    }
  }
  if (!cur.all_finite()) throw std::runtime_error("forward produced non-finite values");
  return cur;
}

std::vector<Tensor> Network::forward_collect(const Tensor& x) {
  // replay the forward layer by layer through single-layer slices so each
  // intermediate output can be captured without duplicating layer logic
  std::vector<Tensor> outs;
  outs.reserve(layers.size());
  Tensor running = x;
  for (size_t li = 0; li < layers.size(); ++li) {
    Network one;
    one.layers.push_back(layers[li]);
    for (const Observer& ob : observers)
      if (ob.after_layer == static_cast<int>(li)) {
        Observer o2 = ob;
        o2.after_layer = 0;
        one.observers.push_back(std::move(o2));
      }
    running = one.forward(running, Mode::eval);
    outs.push_back(running);
  }
  return outs;
}

VecXf Network::backward(const Cache& cache, const Tensor& dlogits) {
  if (!cache.valid) throw std::runtime_error("backward: missing forward cache");
  if (!observers.empty())
    throw std::runtime_error("backward unsupported while observers are attached");
  VecXf grads = VecXf::Zero(flat_size);
  Tensor d = dlogits;
  for (int li = static_cast<int>(layers.size()) - 1; li >= 0; --li) {
    Layer& L = layers[li];
    const LayerCache& lc = cache.per_layer[li];
    switch (L.spec.kind) {
      case LayerSpec::Kind::dense: {
        int n = d.dim(0);
        auto dm = d.mat(n, L.spec.out);
        auto xm = lc.in.mat(n, L.spec.in);
        RowMatXf dW = xm.transpose() * dm;  // (in, out)
        Eigen::RowVectorXf db = dm.colwise().sum();
        Tensor dx({n, L.spec.in});
        dx.mat(n, L.spec.in).noalias() = dm * L.W.mat(L.spec.in, L.spec.out).transpose();
        int64_t off = offset_of(L.spec.name, "weight");
        Eigen::Map<RowMatXf>(grads.data() + off, L.spec.in, L.spec.out) = dW;
        off = offset_of(L.spec.name, "bias");
        Eigen::Map<Eigen::RowVectorXf>(grads.data() + off, L.spec.out) = db;
        d = std::move(dx);
        break;
      }
      case LayerSpec::Kind::conv2d: {
        int n = lc.in_shape[0], h = lc.in_shape[2], w = lc.in_shape[3];
        int oh = conv_out_dim(h, L.spec.kernel, L.spec.stride, L.spec.pad);
        int ow = conv_out_dim(w, L.spec.kernel, L.spec.stride, L.spec.pad);
        int ckk = L.spec.in_ch * L.spec.kernel * L.spec.kernel;
        // d: (N, out_ch, OH, OW) -> rows (N*OH*OW, out_ch)
        RowMatXf dr(n * oh * ow, L.spec.out_ch);
        for (int ni = 0; ni < n; ++ni)
          for (int c = 0; c < L.spec.out_ch; ++c)
            for (int r = 0; r < oh * ow; ++r)
              dr(ni * oh * ow + r, c) =
                  d.data[((static_cast<int64_t>(ni) * L.spec.out_ch + c) * oh * ow) + r];
        RowMatXf dW = dr.transpose() * lc.col.mat(n * oh * ow, ckk);  // (out_ch, ckk)
        Eigen::RowVectorXf db = dr.colwise().sum();
        Tensor dcol({n * oh * ow, ckk});
        dcol.mat(n * oh * ow, ckk).noalias() = dr * L.W.mat(L.spec.out_ch, ckk);
        Tensor dx;
        col2im(dcol, n, L.spec.in_ch, h, w, L.spec.kernel, L.spec.stride, L.spec.pad, oh,
               ow, dx);
        int64_t off = offset_of(L.spec.name, "weight");
        Eigen::Map<RowMatXf>(grads.data() + off, L.spec.out_ch, ckk) = dW;
        off = offset_of(L.spec.name, "bias");
        Eigen::Map<Eigen::RowVectorXf>(grads.data() + off, L.spec.out_ch) = db;
        d = std::move(dx);
        break;
      }
      case LayerSpec::Kind::batchnorm: {
        const Tensor& xhat = lc.col;
        ChannelView v = channel_view(xhat);
        Eigen::VectorXd invstd = (lc.var.array() + kBnEps).sqrt().inverse().matrix();
        Eigen::VectorXd gamma = L.bn_w.data.cast<double>();
        // channel reductions of dy and dy*xhat
        Eigen::VectorXd sum_dy = Eigen::VectorXd::Zero(v.ch);
        Eigen::VectorXd sum_dy_xhat = Eigen::VectorXd::Zero(v.ch);
        auto for_each_entry = [&](auto&& fn) {
          if (xhat.rank() == 2) {
            int n = xhat.dim(0), f = xhat.dim(1);
            for (int i = 0; i < n; ++i)
              for (int j = 0; j < f; ++j) fn(j, static_cast<int64_t>(i) * f + j);
          } else {
            int n = xhat.dim(0), c = xhat.dim(1), hh = xhat.dim(2), ww = xhat.dim(3);
            int64_t hw = static_cast<int64_t>(hh) * ww;
            for (int i = 0; i < n; ++i)
              for (int j = 0; j < c; ++j) {
                int64_t base = (static_cast<int64_t>(i) * c + j) * hw;
                for (int64_t q = 0; q < hw; ++q) fn(j, base + q);
              }
          }
        };
        for_each_entry([&](int ch, int64_t idx) {
          sum_dy[ch] += d.data[idx];
          sum_dy_xhat[ch] += static_cast<double>(d.data[idx]) * xhat.data[idx];
        });
        int64_t off_w = offset_of(L.spec.name, "bn_weight");
        int64_t off_b = offset_of(L.spec.name, "bn_bias");
        for (int j = 0; j < v.ch; ++j) {
          grads[off_w + j] = static_cast<float>(sum_dy_xhat[j]);
          grads[off_b + j] = static_cast<float>(sum_dy[j]);
        }
        Tensor dx = d;
        double inv_m = lc.inv_m;
        for_each_entry([&](int ch, int64_t idx) {
          double dxhat = static_cast<double>(d.data[idx]) * gamma[ch];
          double val = dxhat - inv_m * (sum_dy[ch] * gamma[ch] +
                                        static_cast<double>(xhat.data[idx]) *
                                            sum_dy_xhat[ch] * gamma[ch]);
          dx.data[idx] = static_cast<float>(val * invstd[ch]);
        });
        d = std::move(dx);
        break;
      }
      case LayerSpec::Kind::relu: {
        Tensor dx = d;
        for (int64_t i = 0; i < dx.size(); ++i)
          if (lc.in.data[i] <= 0.0f) dx.data[i] = 0.0f;
        d = std::move(dx);
        break;
      }
      case LayerSpec::Kind::flatten: {
        Tensor dx = d;
        dx.reshape(lc.in_shape);
        d = std::move(dx);
        break;
      }
      case LayerSpec::Kind::avgpool: {
        int k = L.spec.pool;
        int n = lc.in_shape[0], c = lc.in_shape[1], h = lc.in_shape[2], w = lc.in_shape[3];
        int oh = h / k, ow = w / k;
        Tensor dx({n, c, h, w});
        float inv = 1.0f / static_cast<float>(k * k);
        for (int ni = 0; ni < n; ++ni)
          for (int ci = 0; ci < c; ++ci) {
            const float* q = d.data.data() + (static_cast<int64_t>(ni) * c + ci) * oh * ow;
            float* p = dx.data.data() + (static_cast<int64_t>(ni) * c + ci) * h * w;
            for (int y0 = 0; y0 < oh; ++y0)
              for (int x0 = 0; x0 < ow; ++x0)
                for (int dy = 0; dy < k; ++dy)
                  for (int dxi = 0; dxi < k; ++dxi)
                    p[(y0 * k + dy) * w + (x0 * k + dxi)] = q[y0 * ow + x0] * inv;
          }
        d = std::move(dx);
        break;
      }
    }
  }
  return grads;
}

int64_t Network::offset_of(const std::string& layer, const std::string& role) const {
  for (const ManifestEntry& e : manifest)
    if (e.layer == layer && e.role == role) return e.offset;
  throw std::runtime_error("manifest entry not found: " + layer + "/" + role);
}

VecXf Network::get_params() const {
  VecXf v = VecXf::Zero(flat_size);
  for (const ManifestEntry& e : manifest) {
    const Layer& L = layers[static_cast<size_t>(layer_index(e.layer))];
    const Tensor* src = nullptr;
    if (e.role == "weight") src = &L.W;
    else if (e.role == "bias") src = &L.b;
    else if (e.role == "bn_weight") src = &L.bn_w;
    else if (e.role == "bn_bias") src = &L.bn_b;
    else if (e.role == "bn_rmean") src = &L.bn_rmean;
    else if (e.role == "bn_rvar") src = &L.bn_rvar;
    else throw std::runtime_error("unknown manifest role " + e.role);
    v.segment(e.offset, src->size()) = src->data;
  }
  return v;
}

void Network::set_params(const VecXf& v) {
  if (v.size() != flat_size) throw std::runtime_error("set_params: length mismatch");
  for (const ManifestEntry& e : manifest) {
    Layer& L = layers[static_cast<size_t>(layer_index(e.layer))];
    Tensor* dst = nullptr;
    if (e.role == "weight") dst = &L.W;
    else if (e.role == "bias") dst = &L.b;
    else if (e.role == "bn_weight") dst = &L.bn_w;
    else if (e.role == "bn_bias") dst = &L.bn_b;
    else if (e.role == "bn_rmean") dst = &L.bn_rmean;
    else if (e.role == "bn_rvar") dst = &L.bn_rvar;
    else throw std::runtime_error("unknown manifest role " + e.role);
    dst->data = v.segment(e.offset, dst->size());
  }
}

Tensor Network::extract_activations(const Tensor& x, const std::string& layer_name) {
  int idx = layer_index(layer_name);
  if (idx < 0) throw std::runtime_error("unknown layer name " + layer_name);
  std::vector<Tensor> outs = forward_collect(x);
  return outs[static_cast<size_t>(idx)];
}

Network build_network(const std::vector<LayerSpec>& specs, uint64_t init_seed) {
  if (specs.empty()) throw std::runtime_error("build_network: empty spec");
  Network net;
  Rng rng(init_seed);
  int counters[6] = {0, 0, 0, 0, 0, 0};
  const char* prefixes[6] = {"dense", "conv", "bn", "relu", "flatten", "pool"};
  int prev_features = -1;  // statically known feature/channel count, -1 unknown
  for (LayerSpec spec : specs) {
    int ki = static_cast<int>(spec.kind);
    if (spec.name.empty()) spec.name = prefixes[ki] + std::to_string(counters[ki]++);
    Layer L;
    L.spec = spec;
    switch (spec.kind) {
      case LayerSpec::Kind::dense: {
        if (spec.in <= 0 || spec.out <= 0)
          throw std::runtime_error("dense dims must be positive");
        if (prev_features != -1 && prev_features != spec.in)
          throw std::runtime_error("layer shapes do not compose at " + spec.name);
        double lim = std::sqrt(6.0 / spec.in);
        L.W = Tensor({spec.in, spec.out});
        for (int64_t i = 0; i < L.W.size(); ++i)
          L.W.data[i] = static_cast<float>(rng.uniform(-lim, lim));
        L.b = Tensor({spec.out});
        prev_features = spec.out;
        break;
      }
      case LayerSpec::Kind::conv2d: {
        if (spec.in_ch <= 0 || spec.out_ch <= 0 || spec.kernel <= 0 || spec.stride <= 0)
          throw std::runtime_error("conv2d dims must be positive");
        if (prev_features != -1 && prev_features != spec.in_ch)
          throw std::runtime_error("layer shapes do not compose at " + spec.name);
        int ckk = spec.in_ch * spec.kernel * spec.kernel;
        double lim = std::sqrt(6.0 / ckk);
        L.W = Tensor({spec.out_ch, spec.in_ch, spec.kernel, spec.kernel});
        for (int64_t i = 0; i < L.W.size(); ++i)
          L.W.data[i] = static_cast<float>(rng.uniform(-lim, lim));
        L.b = Tensor({spec.out_ch});
        prev_features = spec.out_ch;
        break;
      }
      case LayerSpec::Kind::batchnorm: {
        if (spec.ch <= 0) throw std::runtime_error("batchnorm channels must be positive");
        if (prev_features != -1 && prev_features != spec.ch)
          throw std::runtime_error("layer shapes do not compose at " + spec.name);
        L.bn_w = Tensor({spec.ch});
        L.bn_w.data.setOnes();
        L.bn_b = Tensor({spec.ch});
        L.bn_rmean = Tensor({spec.ch});
        L.bn_rvar = Tensor({spec.ch});
        L.bn_rvar.data.setOnes();
        prev_features = spec.ch;
        break;
      }
      case LayerSpec::Kind::relu:
        break;
      case LayerSpec::Kind::flatten:
        prev_features = -1;  // collapses C*H*W, only known at runtime
        break;
      case LayerSpec::Kind::avgpool:
        if (spec.pool <= 0) throw std::runtime_error("avgpool size must be positive");
        break;
    }
    net.layers.push_back(std::move(L));
  }
  std::set<std::string> names;
  for (const Layer& L : net.layers)
    if (!names.insert(L.spec.name).second)
      throw std::runtime_error("duplicate layer name " + L.spec.name);

  int64_t offset = 0;
  auto add_entry = [&](const std::string& layer, const std::string& role,
                       const std::vector<int>& shape, bool trainable) {
    ManifestEntry e;
    e.layer = layer;
    e.role = role;
    e.shape = shape;
    e.offset = offset;
    int64_t n = shape_product(shape);
    net.manifest.push_back(std::move(e));
    for (int64_t i = 0; i < n; ++i) net.trainable_mask.push_back(trainable ? 1 : 0);
    offset += n;
    if (trainable) net.trainable_size += n;
  };
  for (const Layer& L : net.layers) {
    switch (L.spec.kind) {
      case LayerSpec::Kind::dense:
      case LayerSpec::Kind::conv2d:
        add_entry(L.spec.name, "weight", L.W.shape, true);
        add_entry(L.spec.name, "bias", L.b.shape, true);
        break;
      case LayerSpec::Kind::batchnorm:
        add_entry(L.spec.name, "bn_weight", L.bn_w.shape, true);
        add_entry(L.spec.name, "bn_bias", L.bn_b.shape, true);
        add_entry(L.spec.name, "bn_rmean", L.bn_rmean.shape, false);
        add_entry(L.spec.name, "bn_rvar", L.bn_rvar.shape, false);
        break;
      default:
        break;
    }
  }
  net.flat_size = offset;
  return net;
}

}  // namespace popavg
