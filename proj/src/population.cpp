#include "popavg/population.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace popavg {

namespace {

void check_members(const Population& pop) {
  if (pop.members.empty()) throw std::runtime_error("population is empty");
  const auto& ref = pop.members.front().manifest;
  for (const auto& net : pop.members) {
    if (net.manifest.size() != ref.size() || net.flat_size != pop.members.front().flat_size)
      throw std::runtime_error("population members have mismatched manifests");
  }
}

}  // namespace

Eigen::VectorXf population_mean(const Population& pop) {
  check_members(pop);
  const int64_t n = pop.members.front().flat_size;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
  for (const auto& net : pop.members) acc += net.get_params().cast<double>();
  acc /= static_cast<double>(pop.size());
  return acc.cast<float>();
}

void papa_pull(Population& pop, double alpha_papa, double gamma, double gamma0) {
  check_members(pop);
  if (gamma0 <= 0.0) throw std::runtime_error("papa_pull: gamma0 must be positive");
  if (gamma > gamma0) throw std::runtime_error("papa_pull: gamma exceeds gamma0");
  if (alpha_papa < 0.0 || alpha_papa > 1.0)
    throw std::runtime_error("papa_pull: alpha_papa must lie in [0,1]");
  // mean snapshot taken before any member moves, so update order cannot matter
  const Eigen::VectorXf mean = population_mean(pop);
  const double pull = (gamma / gamma0) * (1.0 - alpha_papa);
  const double keep = 1.0 - pull;
  for (auto& net : pop.members) {
    Eigen::VectorXf params = net.get_params();
    params = (keep * params.cast<double>() + pull * mean.cast<double>()).cast<float>();
    net.set_params(params);
  }
}

std::vector<std::vector<int>> average_replace(Population& pop, int m, Rng& rng) {
  check_members(pop);
  const int p = pop.size();
  if (m < 1 || m > p) throw std::runtime_error("average_replace: m must lie in [1, p]");
  const int64_t n = pop.members.front().flat_size;

  std::vector<Eigen::VectorXf> old_params(p);
  for (int j = 0; j < p; ++j) old_params[j] = pop.members[j].get_params();

  // one independent draw of m distinct members per output slot, via a partial
  // fisher-yates over member indices
  std::vector<std::vector<int>> draws(p);
  std::vector<int> pool(p);
  for (int i = 0; i < p; ++i) {
    std::vector<int> chosen(m);
    for (int j = 0; j < p; ++j) pool[j] = j;
    for (int t = 0; t < m; ++t) {
      const int64_t r = rng.uniform_int(p - t);
      std::swap(pool[t], pool[t + r]);
      chosen[t] = pool[t];
    }
    // canonical accumulation order, so m=p gives bitwise-identical outputs
    std::sort(chosen.begin(), chosen.end());
    draws[i] = chosen;

    Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
    for (int idx : chosen) acc += old_params[idx].cast<double>();
    acc /= static_cast<double>(m);
    pop.members[i].set_params(acc.cast<float>());
  }
  return draws;
}

void mutate(VecXf& params, int generation_g, double sigma0, Rng& rng,
            const std::vector<uint8_t>& trainable) {
  if (generation_g < 1) throw std::runtime_error("mutate: generation must be >= 1");
  if (trainable.size() != static_cast<size_t>(params.size()))
    throw std::runtime_error("mutate: trainable mask size mismatch");
  const double sigma = sigma0 / static_cast<double>(generation_g);
  for (int64_t i = 0; i < params.size(); ++i) {
    const double z = rng.normal();  // always drawn so the stream is mask-independent
    if (trainable[static_cast<size_t>(i)])
      params[i] = static_cast<float>(params[i] + sigma * z);
  }
}

bool should_average(const StepCounters& counters, const PapaConfig& config) {
  if (counters.steps_since_event < 0 || counters.epochs_since_event < 0)
    throw std::runtime_error("should_average: negative counter");
  if (config.variant == PapaConfig::Variant::baseline) return false;
  if (counters.epoch < config.window_start || counters.epoch > config.window_end) return false;
  const int64_t counter = config.variant == PapaConfig::Variant::papa
                              ? counters.steps_since_event
                              : counters.epochs_since_event;
  return counter > 0 && counter % config.freq == 0;
}

}  // namespace popavg
