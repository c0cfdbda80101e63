#include "popavg/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "popavg/metrics.hpp"
#include "popavg/rng.hpp"

namespace popavg {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// all numeric parsing goes through from_chars so the locale can never leak in
double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config key " + key + ": bad number '" + v + "'");
  return out;
}

int64_t parse_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config key " + key + ": bad integer '" + v + "'");
  return out;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config key " + key + ": bad integer '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": bad boolean '" + v + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const std::string& tok : split(v, ','))
    if (!tok.empty()) out.push_back(parse_double(key, tok));
  if (out.empty()) throw ConfigError("config key " + key + ": empty list");
  return out;
}

std::vector<int> parse_dims(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const std::string& tok : split(v, 'x'))
    if (!tok.empty()) out.push_back(static_cast<int>(parse_int(key, tok)));
  if (out.empty()) throw ConfigError("config key " + key + ": empty dims");
  return out;
}

ScheduleSpec::Kind parse_schedule_kind(const std::string& v) {
  if (v == "constant") return ScheduleSpec::Kind::constant;
  if (v == "cosine") return ScheduleSpec::Kind::cosine;
  if (v == "cosine_restarts") return ScheduleSpec::Kind::cosine_restarts;
  if (v == "multistep") return ScheduleSpec::Kind::multistep;
  if (v == "linear") return ScheduleSpec::Kind::linear;
  throw ConfigError("unknown schedule kind '" + v + "'");
}

PapaConfig::Variant parse_variant(const std::string& v) {
  if (v == "baseline") return PapaConfig::Variant::baseline;
  if (v == "papa") return PapaConfig::Variant::papa;
  if (v == "papa_all") return PapaConfig::Variant::papa_all;
  if (v == "papa_2") return PapaConfig::Variant::papa_2;
  throw ConfigError("unknown papa variant '" + v + "'");
}

void apply_key(ExperimentConfig& cfg, const std::string& key, const std::string& val) {
  if (key == "dataset") cfg.dataset.id = val;
  else if (key == "dataset.train_path") cfg.dataset.train_path = val;
  else if (key == "dataset.test_path") cfg.dataset.test_path = val;
  else if (key == "dataset.synthetic_n") cfg.dataset.synthetic_n = static_cast<int>(parse_int(key, val));
  else if (key == "dataset.synthetic_dim") cfg.dataset.synthetic_dim = static_cast<int>(parse_int(key, val));
  else if (key == "dataset.synthetic_classes") cfg.dataset.synthetic_classes = static_cast<int>(parse_int(key, val));
  else if (key == "dataset.synthetic_image") cfg.dataset.synthetic_image = parse_bool(key, val);
  else if (key == "dataset.synthetic_hw") cfg.dataset.synthetic_hw = static_cast<int>(parse_int(key, val));
  else if (key == "dataset.synthetic_test_n") cfg.dataset.synthetic_test_n = static_cast<int>(parse_int(key, val));
  else if (key == "model") cfg.model.id = val;
  else if (key == "model.hidden") cfg.model.hidden = parse_dims(key, val);
  else if (key == "model.batchnorm") cfg.model.batchnorm = parse_bool(key, val);
  else if (key == "n_epochs") cfg.n_epochs = static_cast<int>(parse_int(key, val));
  else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(key, val));
  else if (key == "optimizer") cfg.optimizer.kind = val;
  else if (key == "optimizer.momentum") cfg.optimizer.momentum = parse_double(key, val);
  else if (key == "optimizer.weight_decay") cfg.optimizer.weight_decay = parse_double(key, val);
  else if (key == "optimizer.beta1") cfg.optimizer.beta1 = parse_double(key, val);
  else if (key == "optimizer.beta2") cfg.optimizer.beta2 = parse_double(key, val);
  else if (key == "optimizer.eps") cfg.optimizer.eps = parse_double(key, val);
  else if (key == "schedule") cfg.schedule.kind = parse_schedule_kind(val);
  else if (key == "schedule.lr") cfg.schedule.gamma0 = parse_double(key, val);
  else if (key == "schedule.lr_min") cfg.schedule.gamma_min = parse_double(key, val);
  else if (key == "schedule.period") cfg.schedule.period = parse_int(key, val);
  else if (key == "schedule.factor") cfg.schedule.factor = parse_double(key, val);
  else if (key == "schedule.milestones") {
    cfg.schedule.milestones.clear();
    for (double d : parse_double_list(key, val))
      cfg.schedule.milestones.push_back(static_cast<int64_t>(d));
  }
  else if (key == "papa.variant") cfg.papa.variant = parse_variant(val);
  else if (key == "papa.alpha") cfg.papa.alpha_papa = parse_double(key, val);
  else if (key == "papa.freq") cfg.papa.freq = parse_int(key, val);
  else if (key == "papa.window_start") cfg.papa.window_start = static_cast<int>(parse_int(key, val));
  else if (key == "papa.window_end") cfg.papa.window_end = static_cast<int>(parse_int(key, val));
  else if (key == "papa.repair_k") cfg.papa.repair_k = static_cast<int>(parse_int(key, val));
  else if (key == "papa.lr_scaling") cfg.papa.lr_scaling = parse_bool(key, val);
  else if (key == "p") cfg.p = static_cast<int>(parse_int(key, val));
  else if (key == "holdout_fraction") cfg.holdout_fraction = parse_double(key, val);
  else if (key == "grids.mixup") cfg.grids.mixup = parse_double_list(key, val);
  else if (key == "grids.label_smooth") cfg.grids.label_smooth = parse_double_list(key, val);
  else if (key == "grids.cutmix") cfg.grids.cutmix = parse_double_list(key, val);
  else if (key == "grids.erase") cfg.grids.erase = parse_double_list(key, val);
  else if (key == "seed") cfg.seed = parse_u64(key, val);
  else if (key == "swa.enabled") cfg.swa.enabled = parse_bool(key, val);
  else if (key == "swa.start_fraction") cfg.swa.start_fraction = parse_double(key, val);
  else if (key == "out_dir") cfg.out_dir = val;
  else if (key == "threads") cfg.threads = static_cast<int>(parse_int(key, val));
  else throw ConfigError("unknown config key " + key);
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  cfg.source_text = text;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    try {
      if (!seen.insert(key).second) throw ConfigError("duplicate config key " + key);
      apply_key(cfg, key, val);
    } catch (const ConfigError& e) {
      // key-level problems point back at the offending line
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void validate_config(ExperimentConfig& cfg) {
  if (cfg.p < 1) throw ConfigError("p must be >= 1");
  if (cfg.n_epochs < 1) throw ConfigError("n_epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.holdout_fraction < 0.0 || cfg.holdout_fraction >= 1.0)
    throw ConfigError("holdout_fraction must lie in [0,1)");
  if (cfg.dataset.id != "optdigits" && cfg.dataset.id != "cifar10" &&
      cfg.dataset.id != "synthetic")
    throw ConfigError("unknown dataset '" + cfg.dataset.id + "'");
  if (cfg.model.id != "logreg" && cfg.model.id != "mlp" && cfg.model.id != "smallconv")
    throw ConfigError("unknown model '" + cfg.model.id + "'");
  if (cfg.model.id == "mlp" && cfg.model.hidden.empty())
    throw ConfigError("mlp needs at least one hidden width");
  for (int h : cfg.model.hidden)
    if (h < 1) throw ConfigError("hidden widths must be positive");
  if (cfg.optimizer.kind != "sgd" && cfg.optimizer.kind != "adamw")
    throw ConfigError("unknown optimizer '" + cfg.optimizer.kind + "'");
  if (cfg.schedule.gamma0 <= 0.0) throw ConfigError("schedule.lr must be positive");
  if (cfg.papa.alpha_papa < 0.0 || cfg.papa.alpha_papa > 1.0)
    throw ConfigError("papa.alpha must lie in [0,1]");
  if (cfg.papa.freq < 1) throw ConfigError("papa.freq must be >= 1");
  if (cfg.papa.repair_k < 0) throw ConfigError("papa.repair_k must be >= 0");
  if (cfg.papa.window_start < 1) throw ConfigError("papa.window_start must be >= 1");
  if (cfg.papa.window_end > cfg.n_epochs) cfg.papa.window_end = cfg.n_epochs;
  if (cfg.papa.window_start > cfg.papa.window_end)
    throw ConfigError("papa window start exceeds end");
  if (cfg.grids.mixup.empty() || cfg.grids.label_smooth.empty() ||
      cfg.grids.cutmix.empty() || cfg.grids.erase.empty())
    throw ConfigError("augmentation grids must be nonempty");
  for (const auto* grid : {&cfg.grids.mixup, &cfg.grids.label_smooth,
                           &cfg.grids.cutmix, &cfg.grids.erase})
    for (double v : *grid)
      if (v < 0.0) throw ConfigError("augmentation grid values must be >= 0");
  if (cfg.schedule.kind == ScheduleSpec::Kind::cosine_restarts && cfg.schedule.period < 1)
    throw ConfigError("cosine_restarts needs schedule.period >= 1");
  if (cfg.swa.start_fraction < 0.0 || cfg.swa.start_fraction >= 1.0)
    throw ConfigError("swa.start_fraction must lie in [0,1)");
  if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
}

namespace {

std::string schedule_kind_name(ScheduleSpec::Kind k) {
  switch (k) {
    case ScheduleSpec::Kind::constant: return "constant";
    case ScheduleSpec::Kind::cosine: return "cosine";
    case ScheduleSpec::Kind::cosine_restarts: return "cosine_restarts";
    case ScheduleSpec::Kind::multistep: return "multistep";
    case ScheduleSpec::Kind::linear: return "linear";
  }
  return "constant";
}

std::string variant_name(PapaConfig::Variant v) {
  switch (v) {
    case PapaConfig::Variant::baseline: return "baseline";
    case PapaConfig::Variant::papa: return "papa";
    case PapaConfig::Variant::papa_all: return "papa_all";
    case PapaConfig::Variant::papa_2: return "papa_2";
  }
  return "baseline";
}

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += format_double(v[i]);
  }
  return s;
}

}  // namespace

std::string dump_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "dataset = " << cfg.dataset.id << '\n';
  out << "dataset.train_path = " << cfg.dataset.train_path << '\n';
  out << "dataset.test_path = " << cfg.dataset.test_path << '\n';
  out << "dataset.synthetic_n = " << cfg.dataset.synthetic_n << '\n';
  out << "dataset.synthetic_dim = " << cfg.dataset.synthetic_dim << '\n';
  out << "dataset.synthetic_classes = " << cfg.dataset.synthetic_classes << '\n';
  out << "dataset.synthetic_image = " << (cfg.dataset.synthetic_image ? "true" : "false")
      << '\n';
  out << "dataset.synthetic_hw = " << cfg.dataset.synthetic_hw << '\n';
  out << "dataset.synthetic_test_n = " << cfg.dataset.synthetic_test_n << '\n';
  out << "model = " << cfg.model.id << '\n';
  std::string hidden;
  for (size_t i = 0; i < cfg.model.hidden.size(); ++i) {
    if (i) hidden += 'x';
    hidden += std::to_string(cfg.model.hidden[i]);
  }
  out << "model.hidden = " << hidden << '\n';
  out << "model.batchnorm = " << (cfg.model.batchnorm ? "true" : "false") << '\n';
  out << "n_epochs = " << cfg.n_epochs << '\n';
  out << "batch_size = " << cfg.batch_size << '\n';
  out << "optimizer = " << cfg.optimizer.kind << '\n';
  out << "optimizer.momentum = " << format_double(cfg.optimizer.momentum) << '\n';
  out << "optimizer.weight_decay = " << format_double(cfg.optimizer.weight_decay) << '\n';
  out << "optimizer.beta1 = " << format_double(cfg.optimizer.beta1) << '\n';
  out << "optimizer.beta2 = " << format_double(cfg.optimizer.beta2) << '\n';
  out << "optimizer.eps = " << format_double(cfg.optimizer.eps) << '\n';
  out << "schedule = " << schedule_kind_name(cfg.schedule.kind) << '\n';
  out << "schedule.lr = " << format_double(cfg.schedule.gamma0) << '\n';
  out << "schedule.lr_min = " << format_double(cfg.schedule.gamma_min) << '\n';
  if (cfg.schedule.period > 0) out << "schedule.period = " << cfg.schedule.period << '\n';
  if (!cfg.schedule.milestones.empty()) {
    out << "schedule.milestones = ";
    for (size_t i = 0; i < cfg.schedule.milestones.size(); ++i) {
      if (i) out << ',';
      out << cfg.schedule.milestones[i];
    }
    out << '\n';
  }
  out << "schedule.factor = " << format_double(cfg.schedule.factor) << '\n';
  out << "papa.variant = " << variant_name(cfg.papa.variant) << '\n';
  out << "papa.alpha = " << format_double(cfg.papa.alpha_papa) << '\n';
  out << "papa.freq = " << cfg.papa.freq << '\n';
  out << "papa.window_start = " << cfg.papa.window_start << '\n';
  out << "papa.window_end = " << cfg.papa.window_end << '\n';
  out << "papa.repair_k = " << cfg.papa.repair_k << '\n';
  out << "papa.lr_scaling = " << (cfg.papa.lr_scaling ? "true" : "false") << '\n';
  out << "p = " << cfg.p << '\n';
  out << "holdout_fraction = " << format_double(cfg.holdout_fraction) << '\n';
  out << "grids.mixup = " << join_doubles(cfg.grids.mixup) << '\n';
  out << "grids.label_smooth = " << join_doubles(cfg.grids.label_smooth) << '\n';
  out << "grids.cutmix = " << join_doubles(cfg.grids.cutmix) << '\n';
  out << "grids.erase = " << join_doubles(cfg.grids.erase) << '\n';
  out << "seed = " << cfg.seed << '\n';
  out << "swa.enabled = " << (cfg.swa.enabled ? "true" : "false") << '\n';
  out << "swa.start_fraction = " << format_double(cfg.swa.start_fraction) << '\n';
  out << "out_dir = " << cfg.out_dir << '\n';
  out << "threads = " << cfg.threads << '\n';
  return out.str();
}

uint64_t text_digest(const std::string& text) {
  // fnv-1a folded through the mixer
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return mix64(h);
}

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace popavg
