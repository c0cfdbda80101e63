#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "popavg/loss.hpp"
#include "popavg/network.hpp"
#include "popavg/rng.hpp"

using namespace popavg;

namespace {

Tensor random_input(std::vector<int> shape, uint64_t seed) {
  Tensor x(shape);
  Rng rng(seed);
  for (int64_t i = 0; i < x.size(); ++i)
    x.data[i] = static_cast<float>(rng.normal());
  return x;
}

Tensor soft_targets(int b, int k, uint64_t seed) {
  Tensor t({b, k});
  Rng rng(seed);
  for (int i = 0; i < b; ++i) {
    double s = 0.0;
    std::vector<double> row(static_cast<size_t>(k));
    for (int j = 0; j < k; ++j) {
      row[static_cast<size_t>(j)] = rng.u01() + 0.05;
      s += row[static_cast<size_t>(j)];
    }
    for (int j = 0; j < k; ++j)
      t.data[static_cast<int64_t>(i) * k + j] = static_cast<float>(row[static_cast<size_t>(j)] / s);
  }
  return t;
}

Tensor one_hot(const std::vector<int>& labels, int k) {
  Tensor t({static_cast<int>(labels.size()), k});
  for (size_t i = 0; i < labels.size(); ++i)
    t.data[static_cast<int64_t>(i) * k + labels[i]] = 1.0f;
  return t;
}

// independent scalar re-implementation of the dense/relu stack in double
std::vector<double> dense_relu_oracle(const Network& net, const Tensor& x,
                                      const std::vector<int>& widths) {
  int b = x.dim(0);
  VecXf p = net.get_params();
  std::vector<double> cur(x.data.data(), x.data.data() + x.size());
  int in = x.dim(1);
  size_t off = 0;
  for (size_t li = 0; li + 1 < widths.size(); ++li) {
    int out = widths[li + 1];
    std::vector<double> nxt(static_cast<size_t>(b) * out, 0.0);
    for (int r = 0; r < b; ++r)
      for (int c = 0; c < out; ++c) {
        double acc = p[static_cast<int64_t>(off) + static_cast<int64_t>(in) * out + c];  // bias
        for (int k = 0; k < in; ++k)
          acc += cur[static_cast<size_t>(r) * in + k] *
                 static_cast<double>(p[static_cast<int64_t>(off) + static_cast<int64_t>(k) * out + c]);
        nxt[static_cast<size_t>(r) * out + c] = acc;
      }
    off += static_cast<size_t>(in) * out + static_cast<size_t>(out);
    bool last = li + 2 == widths.size();
    if (!last)
      for (double& v : nxt) v = std::max(v, 0.0);
    cur = std::move(nxt);
    in = out;
  }
  return cur;
}

double loss_of(Network net, const VecXf& params, const Tensor& x, const Tensor& t) {
  net.set_params(params);
  Tensor logits = net.forward(x, Mode::train);
  return loss_softmax_ce(logits, t).first;
}

// max over entries of |fd - analytic| / max(1, |fd|, |analytic|)
double gradcheck(const Network& net, const Tensor& x, const Tensor& t) {
  Network work = net;
  Cache cache;
  Tensor logits = work.forward(x, Mode::train, &cache);
  auto [loss, dlogits] = loss_softmax_ce(logits, t);
  (void)loss;
  VecXf grads = work.backward(cache, dlogits);
  VecXf base = net.get_params();
  REQUIRE(grads.size() == base.size());
  double h = 1e-3;
  double worst = 0.0;
  for (int64_t i = 0; i < base.size(); ++i) {
    VecXf up = base, dn = base;
    up[i] += static_cast<float>(h);
    dn[i] -= static_cast<float>(h);
    double fd = (loss_of(net, up, x, t) - loss_of(net, dn, x, t)) / (2.0 * h);
    double an = grads[i];
    double err = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST_CASE("parameter counts for the two reference stacks") {
  Network logreg = build_network({LayerSpec::dense(64, 10)}, 1);
  CHECK(logreg.trainable_param_count() == 650);
  CHECK(logreg.param_count() == 650);

  Network mlp = build_network({LayerSpec::dense(64, 32), LayerSpec::batchnorm(32),
                               LayerSpec::relu(), LayerSpec::dense(32, 10)},
                              1);
  CHECK(mlp.trainable_param_count() == 2474);
  // flat vector additionally carries the 2x32 running stats
  CHECK(mlp.param_count() == 2538);
}

TEST_CASE("initialization is seed-deterministic with bounded weights and zero biases") {
  auto specs = std::vector<LayerSpec>{LayerSpec::dense(20, 12), LayerSpec::relu(),
                                      LayerSpec::dense(12, 3)};
  Network a = build_network(specs, 77);
  Network b = build_network(specs, 77);
  CHECK(a.get_params() == b.get_params());
  Network c = build_network(specs, 78);
  CHECK(a.get_params() != c.get_params());

  double lim = std::sqrt(6.0 / 20);
  const Tensor& W = a.layers[0].W;
  float lo = W.data.minCoeff(), hi = W.data.maxCoeff();
  CHECK(lo >= -lim);
  CHECK(hi <= lim);
  CHECK(lo != hi);
  CHECK(a.layers[0].b.data.cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("manifest offsets are contiguous and roles follow the layer layout") {
  Network net = build_network({LayerSpec::conv2d(1, 2, 3, 1, 1), LayerSpec::batchnorm(2),
                               LayerSpec::relu(), LayerSpec::avgpool(2), LayerSpec::flatten(),
                               LayerSpec::dense(8, 3)},
                              5);
  int64_t off = 0;
  for (const ManifestEntry& e : net.manifest) {
    CHECK(e.offset == off);
    off += shape_product(e.shape);
  }
  CHECK(off == net.param_count());
  std::vector<std::string> roles;
  for (const ManifestEntry& e : net.manifest) roles.push_back(e.role);
  CHECK(roles == std::vector<std::string>{"weight", "bias", "bn_weight", "bn_bias",
                                          "bn_rmean", "bn_rvar", "weight", "bias"});
  CHECK(net.manifest[0].layer == "conv0");
  CHECK(net.manifest[2].layer == "bn0");
  CHECK(net.manifest[6].layer == "dense0");
  CHECK(net.offset_of("dense0", "bias") ==
        net.offset_of("dense0", "weight") + 8 * 3);
}

TEST_CASE("zero-weight dense emits its bias") {
  Network net = build_network({LayerSpec::dense(5, 3)}, 9);
  VecXf p = VecXf::Zero(net.param_count());
  p[15] = 1.5f;  // bias of output 0
  p[17] = -2.0f;
  net.set_params(p);
  Tensor x = random_input({4, 5}, 3);
  Tensor y = net.forward(x, Mode::eval);
  for (int r = 0; r < 4; ++r) {
    CHECK(y.data[r * 3 + 0] == 1.5f);
    CHECK(y.data[r * 3 + 1] == 0.0f);
    CHECK(y.data[r * 3 + 2] == -2.0f);
  }
}

TEST_CASE("dense-relu stack matches a scalar double-precision replay") {
  std::vector<int> widths = {6, 8, 5};
  Network net = build_network(
      {LayerSpec::dense(6, 8), LayerSpec::relu(), LayerSpec::dense(8, 5)}, 21);
  Tensor x = random_input({7, 6}, 4);
  Tensor y = net.forward(x, Mode::eval);
  auto ref = dense_relu_oracle(net, x, widths);
  REQUIRE(static_cast<int64_t>(ref.size()) == y.size());
  for (int64_t i = 0; i < y.size(); ++i) {
    double err = std::abs(ref[static_cast<size_t>(i)] - y.data[i]) /
                 std::max(1.0, std::abs(ref[static_cast<size_t>(i)]));
    CHECK(err < 1e-4);
  }
}

TEST_CASE("conv-pool-flatten-dense matches a scalar double-precision replay") {
  Network net = build_network({LayerSpec::conv2d(2, 3, 3, 1, 1), LayerSpec::relu(),
                               LayerSpec::avgpool(2), LayerSpec::flatten(),
                               LayerSpec::dense(3 * 2 * 2, 4)},
                              33);
  int b = 3, c = 2, h = 4, w = 4;
  Tensor x = random_input({b, c, h, w}, 8);
  Tensor y = net.forward(x, Mode::eval);
  REQUIRE(y.dim(0) == b);
  REQUIRE(y.dim(1) == 4);

  VecXf p = net.get_params();
  int oc = 3, k = 3, pad = 1;
  int64_t woff = net.offset_of("conv0", "weight");
  int64_t boff = net.offset_of("conv0", "bias");
  auto wat = [&](int o, int ci, int ky, int kx) {
    return static_cast<double>(p[woff + ((static_cast<int64_t>(o) * c + ci) * k + ky) * k + kx]);
  };
  // conv (stride 1), relu, 2x2 mean pool, flatten, dense -- all in double
  std::vector<double> pooled(static_cast<size_t>(b) * oc * 2 * 2, 0.0);
  for (int i = 0; i < b; ++i)
    for (int o = 0; o < oc; ++o)
      for (int py = 0; py < 2; ++py)
        for (int px = 0; px < 2; ++px) {
          double s = 0.0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              int y0 = py * 2 + dy, x0 = px * 2 + dx;
              double acc = p[boff + o];
              for (int ci = 0; ci < c; ++ci)
                for (int ky = 0; ky < k; ++ky)
                  for (int kx = 0; kx < k; ++kx) {
                    int yy = y0 + ky - pad, xx = x0 + kx - pad;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    acc += wat(o, ci, ky, kx) *
                           static_cast<double>(
                               x.data[((static_cast<int64_t>(i) * c + ci) * h + yy) * w + xx]);
                  }
              s += std::max(acc, 0.0);
            }
          pooled[((static_cast<size_t>(i) * oc + o) * 2 + py) * 2 + px] = s / 4.0;
        }
  int64_t dwoff = net.offset_of("dense0", "weight");
  int64_t dboff = net.offset_of("dense0", "bias");
  int in = oc * 2 * 2, out = 4;
  for (int i = 0; i < b; ++i)
    for (int o = 0; o < out; ++o) {
      double acc = p[dboff + o];
      for (int j = 0; j < in; ++j)
        acc += pooled[static_cast<size_t>(i) * in + j] *
               static_cast<double>(p[dwoff + static_cast<int64_t>(j) * out + o]);
      double got = y.data[static_cast<int64_t>(i) * out + o];
      CHECK(std::abs(acc - got) / std::max(1.0, std::abs(acc)) < 1e-4);
    }
}

TEST_CASE("train-mode batch norm recenters and rescales each channel") {
  Network net = build_network({LayerSpec::batchnorm(4)}, 1);
  int b = 32;
  Tensor x({b, 4});
  Rng rng(5);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < 4; ++j)
      x.data[i * 4 + j] = static_cast<float>(5.0 + 2.0 * rng.normal());
  Tensor y = net.forward(x, Mode::train);
  for (int j = 0; j < 4; ++j) {
    double m = 0.0, v = 0.0;
    for (int i = 0; i < b; ++i) m += y.data[i * 4 + j];
    m /= b;
    for (int i = 0; i < b; ++i) {
      double d = y.data[i * 4 + j] - m;
      v += d * d;
    }
    v /= b;  // biased, matching the normalizer
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::abs(std::sqrt(v) - 1.0) < 1e-3);
  }
}

TEST_CASE("eval-mode batch norm applies the running-stat affine") {
  Network net = build_network({LayerSpec::batchnorm(2)}, 1);
  net.layers[0].bn_rmean.data << 1.0f, -2.0f;
  net.layers[0].bn_rvar.data << 4.0f, 0.25f;
  net.layers[0].bn_w.data << 3.0f, 1.0f;
  net.layers[0].bn_b.data << 0.5f, 0.0f;
  Tensor x({2, 2});
  x.data << 2.0f, -1.0f, 1.0f, -2.0f;
  Tensor y = net.forward(x, Mode::eval);
  auto expect = [](double xv, double m, double var, double w, double bb) {
    return (xv - m) / std::sqrt(var + kBnEps) * w + bb;
  };
  CHECK(y.data[0] == doctest::Approx(expect(2, 1, 4, 3, 0.5)).epsilon(1e-6));
  CHECK(y.data[1] == doctest::Approx(expect(-1, -2, 0.25, 1, 0)).epsilon(1e-6));
  CHECK(y.data[2] == doctest::Approx(expect(1, 1, 4, 3, 0.5)).epsilon(1e-6));
  CHECK(y.data[3] == doctest::Approx(expect(-2, -2, 0.25, 1, 0)).epsilon(1e-6));
}

TEST_CASE("standard train mode nudges running stats with momentum 0.1") {
  Network net = build_network({LayerSpec::batchnorm(1)}, 1);
  Tensor x({4, 1});
  x.data << 1.0f, 2.0f, 3.0f, 6.0f;  // mean 3, biased var 3.5
  net.forward(x, Mode::train);
  CHECK(net.layers[0].bn_rmean.data[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 3.0).epsilon(1e-6));
  CHECK(net.layers[0].bn_rvar.data[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 3.5).epsilon(1e-6));
  CHECK(net.layers[0].bn_count == 0);
}

TEST_CASE("cumulative mode averages batch stats with equal weight") {
  Network net = build_network({LayerSpec::batchnorm(1)}, 1);
  net.layers[0].bn_rmean.data.setZero();
  net.layers[0].bn_rvar.data.setZero();
  net.cumulative_stats = true;
  Tensor x1({2, 1});
  x1.data << 0.0f, 2.0f;  // mean 1, var 1
  Tensor x2({2, 1});
  x2.data << 2.0f, 8.0f;  // mean 5, var 9
  net.forward(x1, Mode::train);
  CHECK(net.layers[0].bn_count == 1);
  CHECK(net.layers[0].bn_rmean.data[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(net.layers[0].bn_rvar.data[0] == doctest::Approx(1.0).epsilon(1e-6));
  net.forward(x2, Mode::train);
  CHECK(net.layers[0].bn_count == 2);
  CHECK(net.layers[0].bn_rmean.data[0] == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(net.layers[0].bn_rvar.data[0] == doctest::Approx(5.0).epsilon(1e-6));
}

TEST_CASE("softmax cross-entropy closed forms") {
  Tensor logits({1, 2});
  Tensor t = one_hot({0}, 2);
  auto [l2, d2] = loss_softmax_ce(logits, t);
  CHECK(l2 == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  (void)d2;

  Tensor logits10({3, 10});
  std::vector<int> labels = {0, 4, 9};
  auto [l10, d10] = loss_softmax_ce(logits10, one_hot(labels, 10));
  CHECK(l10 == doctest::Approx(std::log(10.0)).epsilon(1e-6));
  // gradient is (softmax - t)/B
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 10; ++j) {
      double want = (0.1 - (labels[static_cast<size_t>(i)] == j ? 1.0 : 0.0)) / 3.0;
      CHECK(d10.data[i * 10 + j] == doctest::Approx(want).epsilon(1e-5));
    }
}

TEST_CASE("loss rejects target rows that do not sum to one") {
  Tensor logits({2, 3});
  Tensor t({2, 3});
  t.data << 1.0f, 0.0f, 0.0f, 0.5f, 0.1f, 0.1f;
  CHECK_THROWS(loss_softmax_ce(logits, t));
}

TEST_CASE("loss gradient matches finite differences on the logits") {
  Tensor logits = random_input({4, 6}, 19);
  Tensor t = soft_targets(4, 6, 20);
  auto [loss, d] = loss_softmax_ce(logits, t);
  (void)loss;
  double h = 1e-3;
  for (int64_t i = 0; i < logits.size(); ++i) {
    Tensor up = logits, dn = logits;
    up.data[i] += static_cast<float>(h);
    dn.data[i] -= static_cast<float>(h);
    double fd =
        (loss_softmax_ce(up, t).first - loss_softmax_ce(dn, t).first) / (2.0 * h);
    double err = std::abs(fd - d.data[i]) / std::max({1.0, std::abs(fd), std::abs(static_cast<double>(d.data[i]))});
    CHECK(err < 1e-4);
  }
}

TEST_CASE("backward matches finite differences on a plain mlp") {
  Network net = build_network(
      {LayerSpec::dense(6, 8), LayerSpec::relu(), LayerSpec::dense(8, 4)}, 41);
  REQUIRE(net.param_count() <= 1000);
  Tensor x = random_input({5, 6}, 6);
  Tensor t = soft_targets(5, 4, 7);
  CHECK(gradcheck(net, x, t) < 1e-4);
}

TEST_CASE("backward matches finite differences with batch norm in the stack") {
  Network net = build_network({LayerSpec::dense(5, 6), LayerSpec::batchnorm(6),
                               LayerSpec::relu(), LayerSpec::dense(6, 3)},
                              43);
  REQUIRE(net.param_count() <= 1000);
  Tensor x = random_input({6, 5}, 9);
  Tensor t = soft_targets(6, 3, 10);
  CHECK(gradcheck(net, x, t) < 1e-4);
}

TEST_CASE("backward matches finite differences on a conv stack") {
  Network net = build_network({LayerSpec::conv2d(1, 2, 3, 1, 1), LayerSpec::batchnorm(2),
                               LayerSpec::relu(), LayerSpec::avgpool(2), LayerSpec::flatten(),
                               LayerSpec::dense(8, 3)},
                              47);
  REQUIRE(net.param_count() <= 1000);
  Tensor x = random_input({4, 1, 4, 4}, 11);
  Tensor t = soft_targets(4, 3, 12);
  CHECK(gradcheck(net, x, t) < 1e-4);
}

TEST_CASE("get/set params round-trips bitwise and validates length") {
  Network net = build_network({LayerSpec::dense(4, 3), LayerSpec::batchnorm(3)}, 51);
  VecXf p = net.get_params();
  Network other = build_network({LayerSpec::dense(4, 3), LayerSpec::batchnorm(3)}, 52);
  other.set_params(p);
  CHECK(other.get_params() == p);
  VecXf wrong = VecXf::Zero(p.size() + 1);
  CHECK_THROWS(net.set_params(wrong));
}

TEST_CASE("extract_activations agrees with forward and rejects unknown layers") {
  Network net = build_network(
      {LayerSpec::dense(6, 8), LayerSpec::relu(), LayerSpec::dense(8, 5)}, 53);
  Tensor x = random_input({3, 6}, 14);
  Tensor last = net.extract_activations(x, "dense1");
  Tensor fwd = net.forward(x, Mode::eval);
  CHECK(last.data == fwd.data);
  Tensor hidden = net.extract_activations(x, "relu0");
  CHECK(hidden.data.minCoeff() >= 0.0f);
  auto outs = net.forward_collect(x);
  REQUIRE(outs.size() == 3);
  CHECK(outs[1].data == hidden.data);
  CHECK(outs[2].data == fwd.data);
  CHECK_THROWS(net.extract_activations(x, "nope"));
}

TEST_CASE("passive observers do not change the forward pass") {
  auto specs = std::vector<LayerSpec>{LayerSpec::dense(6, 8), LayerSpec::batchnorm(8),
                                      LayerSpec::relu(), LayerSpec::dense(8, 4)};
  Tensor x = random_input({5, 6}, 15);
  Observer ob;
  ob.after_layer = 0;
  ob.ch = 8;
  ob.acc_mean = Eigen::VectorXd::Zero(8);
  ob.acc_var = Eigen::VectorXd::Zero(8);

  Network plain = build_network(specs, 57);
  Network watched = build_network(specs, 57);
  watched.observers.push_back(ob);
  CHECK(watched.forward(x, Mode::eval).data == plain.forward(x, Mode::eval).data);
  CHECK(watched.observers[0].batches == 0);  // eval records nothing
  CHECK(watched.forward(x, Mode::train).data == plain.forward(x, Mode::train).data);
  CHECK(watched.observers[0].batches == 1);
}

TEST_CASE("backward refuses to run while observers are attached") {
  Network net = build_network({LayerSpec::dense(4, 2)}, 59);
  Tensor x = random_input({3, 4}, 16);
  Cache cache;
  Tensor logits = net.forward(x, Mode::train, &cache);
  auto [loss, d] = loss_softmax_ce(logits, one_hot({0, 1, 0}, 2));
  (void)loss;
  Observer ob;
  ob.after_layer = 0;
  ob.ch = 2;
  ob.acc_mean = Eigen::VectorXd::Zero(2);
  ob.acc_var = Eigen::VectorXd::Zero(2);
  net.observers.push_back(ob);
  CHECK_THROWS(net.backward(cache, d));
}

TEST_CASE("observer accumulators average per-batch stats") {
  Observer ob;
  ob.ch = 2;
  ob.acc_mean = Eigen::VectorXd::Zero(2);
  ob.acc_var = Eigen::VectorXd::Zero(2);
  CHECK_THROWS(ob.mean());
  ob.acc_mean << 2.0, 4.0;
  ob.acc_var << 6.0, 8.0;
  ob.batches = 2;
  CHECK(ob.mean()[0] == doctest::Approx(1.0));
  CHECK(ob.variance()[1] == doctest::Approx(4.0));
  ob.reset();
  CHECK(ob.batches == 0);
  CHECK(ob.acc_mean.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("malformed stacks and inputs are rejected") {
  CHECK_THROWS(build_network({}, 1));
  CHECK_THROWS(build_network({LayerSpec::dense(4, 3), LayerSpec::dense(5, 2)}, 1));
  CHECK_THROWS(build_network({LayerSpec::dense(4, 3, "a"), LayerSpec::relu("a")}, 1));
  CHECK_THROWS(build_network({LayerSpec::dense(0, 3)}, 1));

  Network net = build_network({LayerSpec::dense(4, 3)}, 1);
  Tensor bad = random_input({2, 4}, 17);
  bad.data[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS(net.forward(bad, Mode::eval));
  Tensor wrong_rank({2, 1, 2, 2});
  CHECK_THROWS(net.forward(wrong_rank, Mode::eval));
  Tensor wrong_width = random_input({2, 5}, 18);
  CHECK_THROWS(net.forward(wrong_width, Mode::eval));
}
