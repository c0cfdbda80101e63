#include "popavg/soups.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "popavg/loss.hpp"

namespace popavg {

namespace {

constexpr int kEvalBatch = 512;

// batched eval-mode logits over the whole dataset
Tensor all_logits(Network& net, const Dataset& ds) {
  if (ds.n == 0) throw std::runtime_error("evaluate on empty dataset");
  Tensor out;
  int out_dim = -1;
  for (int start = 0; start < ds.n; start += kEvalBatch) {
    int stop = std::min(ds.n, start + kEvalBatch);
    std::vector<int> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    Tensor logits = net.forward(ds.gather(idx), Mode::eval);
    if (logits.rank() != 2) throw std::runtime_error("model output must be (n, classes)");
    if (out_dim < 0) {
      out_dim = logits.dim(1);
      out = Tensor({ds.n, out_dim});
    }
    out.data.segment(static_cast<int64_t>(start) * out_dim, logits.size()) = logits.data;
  }
  return out;
}

double accuracy_from_logits(const Tensor& logits, const std::vector<int>& labels) {
  int n = logits.dim(0), k = logits.dim(1);
  auto m = logits.mat(n, k);
  int64_t hits = 0;
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (m(i, j) > m(i, best)) best = j;  // ties keep the lowest class index
    if (best == labels[static_cast<size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / n;
}

void maybe_reset(Network& net, const GreedySoupOptions& opt) {
  if (opt.reset_data == nullptr) return;
  reset_batchnorm(net, *opt.reset_data, opt.reset_policy, opt.reset_seed, opt.reset_k,
                  opt.reset_batch);
}

}  // namespace

Network average_soup(const Population& pop) {
  if (pop.members.empty()) throw std::runtime_error("average_soup: empty population");
  Network net = pop.members.front();
  net.observers.clear();
  net.set_params(population_mean(pop));
  return net;
}

SoupResult greedy_soup(const Population& pop, const Dataset& eval_ds,
                       const GreedySoupOptions& options) {
  if (pop.members.empty()) throw std::runtime_error("greedy_soup: empty population");
  if (eval_ds.n == 0) throw std::runtime_error("greedy_soup: empty eval set");
  const int p = pop.size();

  std::vector<VecXf> params(p);
  std::vector<double> acc(p);
  for (int j = 0; j < p; ++j) {
    Network copy = pop.members[j];
    copy.observers.clear();
    params[j] = copy.get_params();
    acc[j] = evaluate_accuracy(copy, eval_ds);
  }
  std::vector<int> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return acc[a] > acc[b]; });

  Network scratch = pop.members.front();
  scratch.observers.clear();
  auto eval_mean = [&](const Eigen::VectorXd& sum, int count) {
    scratch.set_params((sum / count).cast<float>());
    if (options.per_candidate) maybe_reset(scratch, options);
    return evaluate_accuracy(scratch, eval_ds);
  };

  SoupResult result;
  Eigen::VectorXd sum = params[order[0]].cast<double>();
  result.included_member_ids.push_back(order[0]);
  double best = eval_mean(sum, 1);
  result.val_accuracy_trace.push_back(best);

  for (int r = 1; r < p; ++r) {
    Eigen::VectorXd cand = sum + params[order[r]].cast<double>();
    double cand_acc = eval_mean(cand, static_cast<int>(result.included_member_ids.size()) + 1);
    if (cand_acc >= best) {
      sum = std::move(cand);
      best = cand_acc;
      result.included_member_ids.push_back(order[r]);
    }
    result.val_accuracy_trace.push_back(best);
  }

  scratch.set_params((sum / static_cast<double>(result.included_member_ids.size())).cast<float>());
  if (!options.per_candidate) maybe_reset(scratch, options);
  result.network = std::move(scratch);
  return result;
}

Tensor ensemble_logits(Population& pop, const Tensor& x) {
  if (pop.members.empty()) throw std::runtime_error("ensemble_logits: empty population");
  Tensor first = pop.members.front().forward(x, Mode::eval);
  Eigen::VectorXd acc = first.data.cast<double>();
  for (int j = 1; j < pop.size(); ++j) {
    Tensor logits = pop.members[j].forward(x, Mode::eval);
    if (logits.shape != first.shape)
      throw std::runtime_error("ensemble members disagree on output shape");
    acc += logits.data.cast<double>();
  }
  Tensor out = first;
  out.data = (acc / static_cast<double>(pop.size())).cast<float>();
  return out;
}

double evaluate_accuracy(Network& net, const Dataset& ds) {
  return accuracy_from_logits(all_logits(net, ds), ds.labels);
}

namespace {

EvalResult eval_from_logits(const Tensor& logits, const Dataset& ds) {
  Tensor targets({ds.n, ds.K});
  for (int i = 0; i < ds.n; ++i)
    targets.data[static_cast<int64_t>(i) * ds.K + ds.labels[static_cast<size_t>(i)]] = 1.0f;
  EvalResult r;
  r.loss = loss_softmax_ce(logits, targets).first;
  r.accuracy = accuracy_from_logits(logits, ds.labels);
  return r;
}

}  // namespace

EvalResult evaluate_model(Network& net, const Dataset& ds) {
  return eval_from_logits(all_logits(net, ds), ds);
}

EvalResult evaluate_ensemble(Population& pop, const Dataset& ds) {
  if (ds.n == 0) throw std::runtime_error("evaluate on empty dataset");
  Tensor out;
  int out_dim = -1;
  for (int start = 0; start < ds.n; start += kEvalBatch) {
    int stop = std::min(ds.n, start + kEvalBatch);
    std::vector<int> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    Tensor logits = ensemble_logits(pop, ds.gather(idx));
    if (out_dim < 0) {
      out_dim = logits.dim(1);
      out = Tensor({ds.n, out_dim});
    }
    out.data.segment(static_cast<int64_t>(start) * out_dim, logits.size()) = logits.data;
  }
  return eval_from_logits(out, ds);
}

double evaluate_accuracy_ensemble(Population& pop, const Dataset& ds) {
  return evaluate_ensemble(pop, ds).accuracy;
}

}  // namespace popavg
