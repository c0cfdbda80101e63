#include "popavg/repair.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace popavg {

namespace {

constexpr double kSigmaFloor = 3.16e-3;  // ~sqrt(batch-norm eps)

void check_plan(const std::vector<Network>& members, const RepairPlan& plan) {
  if (members.empty()) throw std::runtime_error("repair plan has no members");
  if (plan.weights.size() != members.size())
    throw std::runtime_error("repair plan weight count mismatch");
  if (plan.policies.size() != members.size())
    throw std::runtime_error("repair plan policy count mismatch");
  double sum = 0.0;
  for (double w : plan.weights) sum += w;
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::runtime_error("repair weights must sum to 1");
  if (plan.k < 1) throw std::runtime_error("repair needs k >= 1");
  if (plan.data == nullptr || plan.data->n == 0)
    throw std::runtime_error("repair needs a non-empty data source");
  for (size_t i = 1; i < members.size(); ++i)
    if (members[i].flat_size != members[0].flat_size ||
        members[i].manifest.size() != members[0].manifest.size())
      throw std::runtime_error("repair members have mismatched architectures");
}

// std estimate matching the forward-pass normalization: sqrt(var + eps)
Eigen::VectorXd observer_std(const Observer& ob) {
  return (ob.variance().array().max(0.0) + kBnEps).sqrt().matrix();
}

}  // namespace

void attach_observers(Network& net, bool active) {
  if (!net.observers.empty()) throw std::runtime_error("observers already attached");
  for (size_t li = 0; li < net.layers.size(); ++li) {
    const LayerSpec& s = net.layers[li].spec;
    int ch = 0;
    if (s.kind == LayerSpec::Kind::dense) ch = s.out;
    else if (s.kind == LayerSpec::Kind::conv2d) ch = s.out_ch;
    else continue;
    Observer ob;
    ob.after_layer = static_cast<int>(li);
    ob.active = active;
    ob.ch = ch;
    ob.affine_w = VecXf::Ones(ch);
    ob.affine_b = VecXf::Zero(ch);
    ob.reset();
    net.observers.push_back(std::move(ob));
  }
  if (net.observers.empty())
    throw std::runtime_error("network has no dense/conv layers to observe");
}

void remove_observers(Network& net) { net.observers.clear(); }

void reset_batchnorm(Network& net, const Dataset& data, const AugmentPolicy& policy,
                     uint64_t seed, int k, int batch_size) {
  if (k < 1) throw std::runtime_error("reset_batchnorm needs k >= 1");
  if (data.n == 0) throw std::runtime_error("reset_batchnorm needs data");
  if (batch_size < 1) throw std::runtime_error("reset_batchnorm needs a positive batch");
  for (Layer& L : net.layers) {
    if (L.spec.kind != LayerSpec::Kind::batchnorm) continue;
    L.bn_rmean.data.setZero();
    L.bn_rvar.data.setOnes();
    L.bn_count = 0;
  }
  for (Observer& ob : net.observers) ob.reset();

  // separate index and augmentation streams: the rows visited are identical
  // across policies, only the transforms differ
  Rng idx_rng(hash_combine(seed, "idx"));
  Rng aug_rng(hash_combine(seed, "aug"));
  const int bs = std::min(batch_size, data.n);
  net.cumulative_stats = true;
  try {
    for (int t = 0; t < k; ++t) {
      std::vector<int> perm = idx_rng.permutation(data.n);
      std::vector<int> idx(perm.begin(), perm.begin() + bs);
      Batch batch = apply_policy(idx, data, policy, aug_rng);
      net.forward(batch.x, Mode::train);
    }
  } catch (...) {
    net.cumulative_stats = false;
    throw;
  }
  net.cumulative_stats = false;
}

std::vector<ChannelTargets> collect_weighted_stats(const std::vector<Network>& members,
                                                   const RepairPlan& plan) {
  check_plan(members, plan);
  std::vector<ChannelTargets> targets;
  for (size_t i = 0; i < members.size(); ++i) {
    Network copy = members[i];
    copy.observers.clear();
    attach_observers(copy, false);
    reset_batchnorm(copy, *plan.data, plan.policies[i], plan.seed, plan.k,
                    plan.batch_size);
    if (targets.empty()) {
      targets.resize(copy.observers.size());
      for (size_t o = 0; o < copy.observers.size(); ++o) {
        targets[o].after_layer = copy.observers[o].after_layer;
        targets[o].mean = Eigen::VectorXd::Zero(copy.observers[o].ch);
        targets[o].std = Eigen::VectorXd::Zero(copy.observers[o].ch);
      }
    }
    for (size_t o = 0; o < copy.observers.size(); ++o) {
      targets[o].mean += plan.weights[i] * copy.observers[o].mean();
      targets[o].std += plan.weights[i] * observer_std(copy.observers[o]);
    }
  }
  return targets;
}

void repair(Network& avg_net, const std::vector<Network>& members, const RepairPlan& plan) {
  check_plan(members, plan);
  if (avg_net.flat_size != members[0].flat_size ||
      avg_net.manifest.size() != members[0].manifest.size())
    throw std::runtime_error("averaged net does not match member architecture");

  std::vector<ChannelTargets> targets = collect_weighted_stats(members, plan);

  if (!avg_net.observers.empty()) remove_observers(avg_net);
  attach_observers(avg_net, true);
  if (avg_net.observers.size() != targets.size())
    throw std::runtime_error("observer/target count mismatch");
  for (size_t o = 0; o < targets.size(); ++o) {
    avg_net.observers[o].affine_b = targets[o].mean.cast<float>();
    avg_net.observers[o].affine_w = targets[o].std.cast<float>();
  }

  reset_batchnorm(avg_net, *plan.data, plan.avg_policy, plan.seed, plan.k,
                  plan.batch_size);

  // fold each observer's eval-time transform into the preceding layer:
  // weight row/col *= std_t/std, bias <- mean_t + (std_t/std)*(bias - mean)
  for (size_t o = 0; o < avg_net.observers.size(); ++o) {
    const Observer& ob = avg_net.observers[o];
    Layer& L = avg_net.layers[static_cast<size_t>(ob.after_layer)];
    Eigen::VectorXd mu = ob.mean();
    Eigen::VectorXd sigma = observer_std(ob);
    Eigen::VectorXd raw_var = ob.variance();
    for (int c = 0; c < ob.ch; ++c) {
      if (raw_var[c] <= 0.0)
        std::cerr << "repair: dead channel " << c << " after layer " << L.spec.name
                  << "; eps floor applied\n";
      double s = std::max(sigma[c], kSigmaFloor);
      double scale = static_cast<double>(ob.affine_w[c]) / s;
      double shift = static_cast<double>(ob.affine_b[c]) +
                     scale * (static_cast<double>(L.b.data[c]) - mu[c]);
      if (L.spec.kind == LayerSpec::Kind::dense) {
        auto W = L.W.mat(L.spec.in, L.spec.out);
        W.col(c) = (W.col(c).cast<double>() * scale).cast<float>();
      } else {
        int ckk = L.spec.in_ch * L.spec.kernel * L.spec.kernel;
        auto W = L.W.mat(L.spec.out_ch, ckk);
        W.row(c) = (W.row(c).cast<double>() * scale).cast<float>();
      }
      L.b.data[c] = static_cast<float>(shift);
    }
  }
  remove_observers(avg_net);
}

}  // namespace popavg
