#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "popavg/checkpoint.hpp"
#include "popavg/harness.hpp"

namespace fs = std::filesystem;
using namespace popavg;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

Dataset load_test_set(const std::string& dataset, const std::string& test_path,
                      uint64_t seed, const Network& net) {
  if (dataset == "optdigits") return load_optdigits(test_path);
  if (dataset == "cifar10") return load_cifar10_binary(test_path);
  if (dataset == "synthetic") {
    // dims are taken from the checkpointed first/last layers
    const LayerSpec& first = net.layers.front().spec;
    int dim = first.kind == LayerSpec::Kind::dense ? first.in : 0;
    int classes = 0;
    for (const Layer& l : net.layers)
      if (l.spec.kind == LayerSpec::Kind::dense) classes = l.spec.out;
    if (dim <= 0 || classes <= 0)
      throw ConfigError("synthetic evaluation needs a dense model");
    return make_synthetic_blobs(256, dim, classes, hash_combine(seed, "synth_test"));
  }
  throw ConfigError("unknown dataset '" + dataset + "'");
}

// rebuild the trained population saved under a run directory
struct RunDir {
  ExperimentConfig cfg;
  LoadedData data;
  Population pop;
};

RunDir open_run_dir(const std::string& dir) {
  RunDir rd;
  rd.cfg = load_config(dir + "/config.txt");
  rd.data = load_data(rd.cfg);
  for (int j = 0; j < rd.cfg.p; ++j) {
    std::string path = dir + "/member_" + std::to_string(j) + ".ckpt";
    if (!fs::exists(path)) throw std::runtime_error("missing checkpoint " + path);
    uint64_t seed_j = hash_combine(rd.cfg.seed, static_cast<uint64_t>(j));
    rd.pop.members.push_back(load_checkpoint(path));
    rd.pop.member_seeds.push_back(seed_j);
    Rng pol_rng(hash_combine(seed_j, "policy"));
    rd.pop.policies.push_back(sample_policy(pol_rng, rd.cfg.grids));
  }
  return rd;
}

int cmd_train(const std::string& config_path, int64_t seed_override,
              const std::string& out_override) {
  ExperimentConfig cfg = load_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  if (!out_override.empty()) cfg.out_dir = out_override;
  cfg.source_text = dump_config(cfg);

  RunOutputs out = run_training(cfg);
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir + "/config.txt", cfg.source_text);
  emit_metrics(out.metrics, cfg.out_dir + "/metrics.csv");
  std::string digest = hex64(text_digest(cfg.source_text));
  for (int j = 0; j < cfg.p; ++j)
    save_checkpoint(out.population.members[static_cast<size_t>(j)],
                    cfg.out_dir + "/member_" + std::to_string(j) + ".ckpt", digest);
  save_checkpoint(out.avg_soup, cfg.out_dir + "/avg.ckpt", digest);
  save_checkpoint(out.greedy.network, cfg.out_dir + "/greedy.ckpt", digest);

  for (const MetricsRecord& r : out.metrics)
    if (r.split == "test" && r.epoch == cfg.n_epochs &&
        (r.member_id == "AVG" || r.member_id == "GREEDY" || r.member_id == "ENS"))
      std::cout << r.member_id << " test accuracy " << format_double(r.accuracy) << "\n";
  std::cout << "run " << out.run_id << " written to " << cfg.out_dir << "\n";
  return 0;
}

int cmd_evaluate(const std::string& ckpt, const std::string& dataset,
                 const std::string& test_path, uint64_t seed) {
  Network net = load_checkpoint(ckpt);
  Dataset test = load_test_set(dataset, test_path, seed, net);
  std::cout << "accuracy " << format_double(evaluate_accuracy(net, test)) << "\n";
  return 0;
}

int cmd_soup(const std::string& dir, const std::string& kind) {
  if (kind != "avg" && kind != "greedy") throw ConfigError("soup kind must be avg or greedy");
  RunDir rd = open_run_dir(dir);
  Network result;
  if (kind == "avg") {
    result = average_soup(rd.pop);
    if (rd.cfg.papa.repair_k > 0) {
      RepairPlan plan;
      plan.weights.assign(rd.pop.members.size(), 1.0 / rd.pop.size());
      plan.policies = rd.pop.policies;
      plan.k = rd.cfg.papa.repair_k;
      plan.batch_size = std::min(64, rd.data.train.n);
      plan.data = &rd.data.train;
      plan.seed = 666;
      repair(result, rd.pop.members, plan);
    }
  } else {
    const Dataset& eval_ds = rd.data.holdout.n > 0 ? rd.data.holdout : rd.data.test;
    SoupResult soup = greedy_soup(rd.pop, eval_ds);
    std::cout << "included members:";
    for (int id : soup.included_member_ids) std::cout << ' ' << id;
    std::cout << "\n";
    result = std::move(soup.network);
  }
  std::cout << kind << " soup test accuracy "
            << format_double(evaluate_accuracy(result, rd.data.test)) << "\n";
  save_checkpoint(result, dir + "/soup_" + kind + ".ckpt");
  return 0;
}

int cmd_ensemble(const std::string& dir) {
  RunDir rd = open_run_dir(dir);
  std::cout << "ensemble test accuracy "
            << format_double(evaluate_accuracy_ensemble(rd.pop, rd.data.test)) << "\n";
  return 0;
}

int cmd_analyze(const std::string& dir, bool similarity, bool events) {
  if (!similarity && !events)
    throw ConfigError("analyze needs --similarity and/or --events");
  if (similarity) {
    RunDir rd = open_run_dir(dir);
    std::vector<std::string> hidden;
    for (const Layer& l : rd.pop.members.front().layers)
      if (l.spec.kind == LayerSpec::Kind::relu) hidden.push_back(l.spec.name);
    if (hidden.empty()) throw std::runtime_error("model has no hidden layers to compare");
    int n_samples = std::min(256, rd.data.test.n);
    std::ofstream csv(dir + "/similarity.csv", std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write " + dir + "/similarity.csv");
    csv << "pair,layer,cosine\n";
    for (int a = 0; a < rd.pop.size(); ++a)
      for (int b = a + 1; b < rd.pop.size(); ++b)
        for (const std::string& layer : hidden) {
          double c = cosine_feature_similarity(rd.pop.members[static_cast<size_t>(a)],
                                               rd.pop.members[static_cast<size_t>(b)],
                                               layer, rd.data.test, n_samples);
          csv << "member" << a << "-member" << b << ',' << layer << ','
              << format_double(c) << "\n";
          std::cout << "member" << a << "-member" << b << " " << layer << " cosine "
                    << format_double(c) << "\n";
        }
  }
  if (events) {
    std::vector<MetricsRecord> rows = parse_metrics(dir + "/metrics.csv");
    for (const MetricsRecord& r : rows)
      if (r.event != "none")
        std::cout << "epoch " << r.epoch << " member " << r.member_id << " event "
                  << r.event << " split " << r.split << " accuracy "
                  << format_double(r.accuracy) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"population-averaged training harness"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  int64_t seed_override = -1;
  CLI::App* train = app.add_subcommand("train", "run a configured experiment");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--seed", seed_override, "override the config seed");
  train->add_option("--out", out_dir, "override the output directory");

  std::string ckpt, eval_dataset, test_path;
  uint64_t eval_seed = 1;
  CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a test set");
  evaluate->add_option("--checkpoint", ckpt, "checkpoint path")->required();
  evaluate->add_option("--dataset", eval_dataset, "optdigits|cifar10|synthetic")->required();
  evaluate->add_option("--test-path", test_path, "test file/directory");
  evaluate->add_option("--seed", eval_seed, "seed for synthetic data");

  std::string soup_dir, soup_kind = "avg";
  CLI::App* soup = app.add_subcommand("soup", "combine a saved population");
  soup->add_option("--run", soup_dir, "run directory from train")->required();
  soup->add_option("--kind", soup_kind, "avg|greedy");

  std::string ens_dir;
  CLI::App* ensemble = app.add_subcommand("ensemble", "logit-average a saved population");
  ensemble->add_option("--run", ens_dir, "run directory from train")->required();

  std::string ana_dir;
  bool similarity = false, events = false;
  CLI::App* analyze = app.add_subcommand("analyze", "diagnostics over a saved run");
  analyze->add_option("--run", ana_dir, "run directory from train")->required();
  analyze->add_flag("--similarity", similarity, "pairwise feature cosine similarity");
  analyze->add_flag("--events", events, "print averaging-event rows");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, seed_override, out_dir);
    if (evaluate->parsed()) {
      if (test_path.empty()) {
        if (eval_dataset == "optdigits") test_path = "data/optdigits/optdigits.tes";
        else if (eval_dataset == "cifar10") test_path = "data/cifar10/test_batch.bin";
      }
      return cmd_evaluate(ckpt, eval_dataset, test_path, eval_seed);
    }
    if (soup->parsed()) return cmd_soup(soup_dir, soup_kind);
    if (ensemble->parsed()) return cmd_ensemble(ens_dir);
    if (analyze->parsed()) return cmd_analyze(ana_dir, similarity, events);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
