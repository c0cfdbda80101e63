#include "popavg/analysis.hpp"

#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "popavg/soups.hpp"

namespace popavg {

double cosine_feature_similarity(Network& net_a, Network& net_b, const std::string& layer,
                                 const Dataset& ds, int n_samples) {
  if (net_a.layer_index(layer) < 0 || net_b.layer_index(layer) < 0)
    throw std::runtime_error("cosine similarity: layer " + layer + " missing");
  if (n_samples < 1 || n_samples > ds.n)
    throw std::runtime_error("cosine similarity: n_samples out of range");
  std::vector<int> idx(n_samples);
  std::iota(idx.begin(), idx.end(), 0);
  Tensor x = ds.gather(idx);
  Tensor act_a = net_a.extract_activations(x, layer);
  Tensor act_b = net_b.extract_activations(x, layer);
  if (act_a.shape != act_b.shape)
    throw std::runtime_error("cosine similarity: activation shapes differ");
  const int64_t per = act_a.size() / n_samples;
  double sum = 0.0;
  int used = 0;
  for (int i = 0; i < n_samples; ++i) {
    Eigen::VectorXd va = act_a.data.segment(i * per, per).cast<double>();
    Eigen::VectorXd vb = act_b.data.segment(i * per, per).cast<double>();
    double na = va.norm(), nb = vb.norm();
    if (na == 0.0 || nb == 0.0) {
      std::cerr << "cosine similarity: zero-norm activation for sample " << i
                << ", skipped\n";
      continue;
    }
    sum += va.dot(vb) / (na * nb);
    ++used;
  }
  if (used == 0) throw std::runtime_error("cosine similarity: all samples zero-norm");
  return sum / used;
}

void record_averaging_event(AveragingEventTrace& trace, Population& pre_population,
                            Network& post_net, Network* post_repair_net,
                            const Dataset& ds_test, int epoch) {
  if (!trace.events.empty() && trace.events.back().epoch >= epoch)
    throw std::runtime_error("averaging events must have strictly increasing epochs");
  AveragingEvent ev;
  ev.epoch = epoch;
  for (auto& member : pre_population.members)
    ev.pre_accuracies.push_back(evaluate_accuracy(member, ds_test));
  ev.post_accuracy = evaluate_accuracy(post_net, ds_test);
  if (post_repair_net != nullptr)
    ev.post_repair_accuracy = evaluate_accuracy(*post_repair_net, ds_test);
  trace.events.push_back(std::move(ev));
}

}  // namespace popavg
