#include "popavg/harness.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>

#include "popavg/loss.hpp"
#include "popavg/repair.hpp"

namespace popavg {

namespace {

constexpr uint64_t kRepairSeed = 666;

// run fn(j) for j in [0,p) on up to `threads` workers; member work must be
// independent so the schedule cannot affect results
void for_each_member(int threads, int p, const std::function<void(int)>& fn) {
  if (threads <= 1 || p <= 1) {
    for (int j = 0; j < p; ++j) fn(j);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex err_mutex;
  auto worker = [&] {
    for (;;) {
      int j = next.fetch_add(1);
      if (j >= p) return;
      try {
        fn(j);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  int width = std::min(threads, p);
  pool.reserve(static_cast<size_t>(width));
  for (int t = 0; t < width; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

bool has_batchnorm(const Network& net) {
  for (const Layer& L : net.layers)
    if (L.spec.kind == LayerSpec::Kind::batchnorm) return true;
  return false;
}

}  // namespace

LoadedData load_data(const ExperimentConfig& cfg) {
  Dataset full_train, test;
  if (cfg.dataset.id == "optdigits") {
    full_train = load_optdigits(cfg.dataset.train_path);
    test = load_optdigits(cfg.dataset.test_path);
  } else if (cfg.dataset.id == "cifar10") {
    full_train = load_cifar10_binary(cfg.dataset.train_path);
    test = load_cifar10_binary(cfg.dataset.test_path);
  } else if (cfg.dataset.id == "synthetic") {
    const DatasetConfig& d = cfg.dataset;
    if (d.synthetic_image) {
      full_train = make_synthetic_image_blobs(d.synthetic_n, 1, d.synthetic_hw,
                                              d.synthetic_hw, d.synthetic_classes,
                                              hash_combine(cfg.seed, "synth_train"));
      test = make_synthetic_image_blobs(d.synthetic_test_n, 1, d.synthetic_hw,
                                        d.synthetic_hw, d.synthetic_classes,
                                        hash_combine(cfg.seed, "synth_test"));
    } else {
      full_train = make_synthetic_blobs(d.synthetic_n, d.synthetic_dim, d.synthetic_classes,
                                        hash_combine(cfg.seed, "synth_train"));
      test = make_synthetic_blobs(d.synthetic_test_n, d.synthetic_dim, d.synthetic_classes,
                                  hash_combine(cfg.seed, "synth_test"));
    }
  } else {
    throw ConfigError("unknown dataset '" + cfg.dataset.id + "'");
  }
  LoadedData out;
  auto [train, holdout] = holdout_split(full_train, cfg.holdout_fraction, cfg.seed);
  out.train = std::move(train);
  out.holdout = std::move(holdout);
  out.test = std::move(test);
  return out;
}

std::vector<LayerSpec> model_specs(const ExperimentConfig& cfg, const Dataset& train) {
  std::vector<LayerSpec> specs;
  const int K = train.K;
  if (cfg.model.id == "logreg" || cfg.model.id == "mlp") {
    if (train.is_image())
      throw ConfigError("model " + cfg.model.id + " needs flat input rows");
    int f = train.feature_count();
    if (cfg.model.id == "logreg") {
      specs.push_back(LayerSpec::dense(f, K));
      return specs;
    }
    int prev = f;
    for (int h : cfg.model.hidden) {
      specs.push_back(LayerSpec::dense(prev, h));
      if (cfg.model.batchnorm) specs.push_back(LayerSpec::batchnorm(h));
      specs.push_back(LayerSpec::relu());
      prev = h;
    }
    specs.push_back(LayerSpec::dense(prev, K));
    return specs;
  }
  if (cfg.model.id == "smallconv") {
    if (!train.is_image()) throw ConfigError("model smallconv needs image input");
    int c = train.inputs.dim(1), h = train.inputs.dim(2), w = train.inputs.dim(3);
    if (h % 4 != 0 || w % 4 != 0)
      throw ConfigError("smallconv needs height/width divisible by 4");
    specs.push_back(LayerSpec::conv2d(c, 8, 3, 1, 1));
    if (cfg.model.batchnorm) specs.push_back(LayerSpec::batchnorm(8));
    specs.push_back(LayerSpec::relu());
    specs.push_back(LayerSpec::avgpool(2));
    specs.push_back(LayerSpec::conv2d(8, 16, 3, 1, 1));
    if (cfg.model.batchnorm) specs.push_back(LayerSpec::batchnorm(16));
    specs.push_back(LayerSpec::relu());
    specs.push_back(LayerSpec::avgpool(2));
    specs.push_back(LayerSpec::flatten());
    specs.push_back(LayerSpec::dense(16 * (h / 4) * (w / 4), K));
    return specs;
  }
  throw ConfigError("unknown model '" + cfg.model.id + "'");
}

std::string make_run_id(const ExperimentConfig& cfg) {
  return hex64(hash_combine(text_digest(cfg.source_text), cfg.seed));
}

RunOutputs run_training(ExperimentConfig cfg) {
  validate_config(cfg);
  LoadedData data = load_data(cfg);
  std::vector<LayerSpec> specs = model_specs(cfg, data.train);

  const int p = cfg.p;
  const int bs = cfg.batch_size;
  const int64_t steps_per_epoch = data.train.n / bs;
  if (steps_per_epoch == 0) throw ConfigError("batch_size exceeds the training set");
  ScheduleSpec sched = cfg.schedule;
  sched.total_steps = static_cast<int64_t>(cfg.n_epochs) * steps_per_epoch;
  if (sched.kind == ScheduleSpec::Kind::cosine_restarts && sched.period <= 0)
    throw ConfigError("cosine_restarts needs schedule.period");

  RunOutputs out;
  out.run_id = make_run_id(cfg);

  Population& pop = out.population;
  std::vector<Rng> aug_rngs;
  std::vector<OptimState> opts;
  std::vector<SwaState> swas(static_cast<size_t>(p));
  for (int j = 0; j < p; ++j) {
    uint64_t seed_j =
        hash_combine(cfg.seed, static_cast<uint64_t>(cfg.same_member_streams ? 0 : j));
    pop.member_seeds.push_back(seed_j);
    Rng pol_rng(hash_combine(seed_j, "policy"));
    pop.policies.push_back(sample_policy(pol_rng, cfg.grids));
    pop.members.push_back(build_network(specs, hash_combine(seed_j, "init")));
    aug_rngs.emplace_back(hash_combine(seed_j, "aug"));
    if (cfg.optimizer.kind == "sgd")
      opts.push_back(OptimState::sgd(pop.members.back().flat_size, cfg.optimizer.momentum,
                                     cfg.optimizer.weight_decay));
    else
      opts.push_back(OptimState::adamw(pop.members.back().flat_size,
                                       cfg.optimizer.weight_decay, cfg.optimizer.beta1,
                                       cfg.optimizer.beta2, cfg.optimizer.eps));
  }

  const PapaConfig& papa = cfg.papa;
  const bool is_papa = papa.variant == PapaConfig::Variant::papa;
  const bool is_replace = papa.variant == PapaConfig::Variant::papa_all ||
                          papa.variant == PapaConfig::Variant::papa_2;
  const int repair_batch = std::min(64, data.train.n);

  int64_t global_step = 0;  // completed steps, shared by all members (lockstep)
  int64_t n_total = 0;      // steps since the last pull event
  int64_t epochs_since = 0;
  uint64_t event_counter = 0;
  std::vector<double> epoch_loss(static_cast<size_t>(p), 0.0);
  std::vector<std::vector<int>> orders(static_cast<size_t>(p));

  auto member_steps = [&](int j, int64_t s_begin, int64_t s_end) {
    Network& net = pop.members[static_cast<size_t>(j)];
    for (int64_t s = s_begin; s < s_end; ++s) {
      std::vector<int> idx(
          orders[static_cast<size_t>(j)].begin() + s * bs,
          orders[static_cast<size_t>(j)].begin() + (s + 1) * bs);
      Batch b = apply_policy(idx, data.train, pop.policies[static_cast<size_t>(j)],
                             aug_rngs[static_cast<size_t>(j)]);
      Cache cache;
      Tensor logits = net.forward(b.x, Mode::train, &cache);
      auto [loss, dlogits] = loss_softmax_ce(logits, b.t);
      VecXf grads = net.backward(cache, dlogits);
      VecXf params = net.get_params();
      optim_step(params, grads, opts[static_cast<size_t>(j)], lr_at(sched, global_step + s),
                 net.trainable_mask);
      net.set_params(params);
      epoch_loss[static_cast<size_t>(j)] += loss;
    }
  };

  auto replace_event = [&](int epoch) {
    Rng event_rng(hash_combine(hash_combine(cfg.seed, "event"), event_counter));
    ++event_counter;
    Population old_pop = pop;  // frozen donors for stats and the event trace
    const int m = papa.variant == PapaConfig::Variant::papa_all ? p : std::min(2, p);
    std::vector<std::vector<int>> draws = average_replace(pop, m, event_rng);
    Network post_net = average_soup(pop);
    Network post_repair_net;
    bool repaired = false;
    if (papa.repair_k > 0) {
      for (int i = 0; i < p; ++i) {
        std::vector<Network> donors;
        RepairPlan plan;
        for (int idx : draws[static_cast<size_t>(i)]) {
          donors.push_back(old_pop.members[static_cast<size_t>(idx)]);
          plan.policies.push_back(old_pop.policies[static_cast<size_t>(idx)]);
          plan.weights.push_back(1.0 / m);
        }
        plan.k = papa.repair_k;
        plan.batch_size = repair_batch;
        plan.data = &data.train;
        plan.avg_policy = pop.policies[static_cast<size_t>(i)];
        plan.seed = kRepairSeed;
        repair(pop.members[static_cast<size_t>(i)], donors, plan);
      }
      post_repair_net = average_soup(pop);
      repaired = true;
    }
    record_averaging_event(out.events, old_pop, post_net,
                           repaired ? &post_repair_net : nullptr, data.test, epoch);
    const AveragingEvent& ev = out.events.events.back();
    double lr_now = lr_at(sched, std::max<int64_t>(0, global_step - 1));
    MetricsRecord row;
    row.run_id = out.run_id;
    row.epoch = epoch;
    row.member_id = "AVG";
    row.split = "test";
    row.loss = evaluate_model(post_net, data.test).loss;
    row.accuracy = ev.post_accuracy;
    row.lr = lr_now;
    row.event = papa.variant == PapaConfig::Variant::papa_all ? "avg_all" : "avg_pair";
    out.metrics.push_back(row);
    if (repaired) {
      row.loss = evaluate_model(post_repair_net, data.test).loss;
      row.accuracy = ev.post_repair_accuracy;
      row.event = "repair";
      out.metrics.push_back(row);
    }
  };

  const int swa_start_epoch =
      static_cast<int>(cfg.swa.start_fraction * cfg.n_epochs) + 1;

  for (int epoch = 1; epoch <= cfg.n_epochs; ++epoch) {
    for (int j = 0; j < p; ++j) {
      orders[static_cast<size_t>(j)] =
          epoch_order(data.train.n, pop.member_seeds[static_cast<size_t>(j)], epoch);
      epoch_loss[static_cast<size_t>(j)] = 0.0;
    }
    bool pulled_this_epoch = false;

    if (is_papa) {
      int64_t s = 0;
      const bool in_window = epoch >= papa.window_start && epoch <= papa.window_end;
      while (s < steps_per_epoch) {
        int64_t seg = steps_per_epoch - s;
        if (in_window) seg = std::min(seg, papa.freq - (n_total % papa.freq));
        int64_t s_end = s + seg;
        for_each_member(cfg.threads, p, [&](int j) { member_steps(j, s, s_end); });
        s = s_end;
        n_total += seg;
        StepCounters counters{n_total, 0, epoch};
        if (should_average(counters, papa)) {
          double gamma = papa.lr_scaling
                             ? lr_at(sched, global_step + s - 1)
                             : sched.gamma0;
          papa_pull(pop, papa.alpha_papa, gamma, sched.gamma0);
          out.papa_pulls.push_back((gamma / sched.gamma0) * (1.0 - papa.alpha_papa));
          n_total = 0;
          pulled_this_epoch = true;
        }
      }
    } else {
      for_each_member(cfg.threads, p,
                      [&](int j) { member_steps(j, 0, steps_per_epoch); });
    }
    global_step += steps_per_epoch;

    std::string epoch_event = pulled_this_epoch ? "papa_pull" : "none";
    if (is_replace) {
      epochs_since += 1;
      StepCounters counters{0, epochs_since, epoch};
      if (should_average(counters, papa)) {
        replace_event(epoch);
        epochs_since = 0;
        epoch_event = papa.variant == PapaConfig::Variant::papa_all ? "avg_all" : "avg_pair";
      }
    }

    if (cfg.swa.enabled && epoch >= swa_start_epoch)
      for (int j = 0; j < p; ++j)
        swa_accumulate(swas[static_cast<size_t>(j)],
                       pop.members[static_cast<size_t>(j)].get_params());

    const double lr_row = lr_at(sched, global_step - 1);
    for (int j = 0; j < p; ++j) {
      Network& net = pop.members[static_cast<size_t>(j)];
      MetricsRecord row;
      row.run_id = out.run_id;
      row.epoch = epoch;
      row.member_id = std::to_string(j);
      row.lr = lr_row;
      row.event = epoch_event;
      row.split = "train";
      row.loss = epoch_loss[static_cast<size_t>(j)] / static_cast<double>(steps_per_epoch);
      row.accuracy = evaluate_accuracy(net, data.train);
      out.metrics.push_back(row);
      if (data.holdout.n > 0) {
        EvalResult val = evaluate_model(net, data.holdout);
        row.split = "val";
        row.loss = val.loss;
        row.accuracy = val.accuracy;
        out.metrics.push_back(row);
      }
    }
  }

  bool swa_applied = false;
  if (cfg.swa.enabled) {
    for (int j = 0; j < p; ++j) {
      SwaState& swa = swas[static_cast<size_t>(j)];
      if (swa.count == 0) continue;
      Network& net = pop.members[static_cast<size_t>(j)];
      net.set_params(swa.mean.cast<float>());
      if (has_batchnorm(net))
        reset_batchnorm(net, data.train, pop.policies[static_cast<size_t>(j)], kRepairSeed,
                        std::max(1, papa.repair_k), repair_batch);
      swa_applied = true;
    }
  }

  out.avg_soup = average_soup(pop);
  if (papa.repair_k > 0) {
    RepairPlan plan;
    plan.weights.assign(static_cast<size_t>(p), 1.0 / p);
    plan.policies = pop.policies;
    plan.k = papa.repair_k;
    plan.batch_size = repair_batch;
    plan.data = &data.train;
    plan.seed = kRepairSeed;
    repair(out.avg_soup, pop.members, plan);
  }

  GreedySoupOptions gopt;
  if (papa.repair_k > 0 && has_batchnorm(pop.members.front())) {
    gopt.reset_data = &data.train;
    gopt.reset_seed = kRepairSeed;
    gopt.reset_k = papa.repair_k;
    gopt.reset_batch = repair_batch;
  }
  const Dataset& soup_eval = data.holdout.n > 0 ? data.holdout : data.test;
  out.greedy = greedy_soup(pop, soup_eval, gopt);

  const double lr_final = lr_at(sched, sched.total_steps - 1);
  auto push_test_row = [&](const std::string& id, const EvalResult& ev,
                           const std::string& event) {
    MetricsRecord row;
    row.run_id = out.run_id;
    row.epoch = cfg.n_epochs;
    row.member_id = id;
    row.split = "test";
    row.loss = ev.loss;
    row.accuracy = ev.accuracy;
    row.lr = lr_final;
    row.event = event;
    out.metrics.push_back(row);
  };
  for (int j = 0; j < p; ++j)
    push_test_row(std::to_string(j),
                  evaluate_model(pop.members[static_cast<size_t>(j)], data.test),
                  swa_applied ? "swa" : "none");
  push_test_row("AVG", evaluate_model(out.avg_soup, data.test),
                papa.repair_k > 0 ? "repair" : "none");
  push_test_row("GREEDY", evaluate_model(out.greedy.network, data.test), "none");
  push_test_row("ENS", evaluate_ensemble(pop, data.test), "none");
  return out;
}

}  // namespace popavg
