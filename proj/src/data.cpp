#include "popavg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "popavg/rng.hpp"

namespace popavg {

int Dataset::feature_count() const {
  return static_cast<int>(inputs.size() / std::max(1, n));
}

Tensor Dataset::gather(const std::vector<int>& idx) const {
  int f = feature_count();
  std::vector<int> shape = inputs.shape;
  shape[0] = static_cast<int>(idx.size());
  Tensor out(shape);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= n) throw std::runtime_error("gather index out of range");
    out.data.segment(static_cast<int64_t>(i) * f, f) =
        inputs.data.segment(static_cast<int64_t>(idx[i]) * f, f);
  }
  return out;
}

Dataset load_optdigits(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open optdigits file " + path);
  std::vector<float> feats;
  std::vector<int> labels;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<int> vals;
    while (std::getline(ss, field, ',')) {
      try {
        vals.push_back(std::stoi(field));
      } catch (...) {
        throw std::runtime_error("optdigits parse error at line " +
                                 std::to_string(lineno));
      }
    }
    if (vals.size() != 65)
      throw std::runtime_error("optdigits row with " + std::to_string(vals.size()) +
                               " fields at line " + std::to_string(lineno));
    for (int i = 0; i < 64; ++i) {
      if (vals[i] < 0 || vals[i] > 16)
        throw std::runtime_error("optdigits value out of range at line " +
                                 std::to_string(lineno));
      feats.push_back(static_cast<float>(vals[i]) / 16.0f);
    }
    if (vals[64] < 0 || vals[64] > 9)
      throw std::runtime_error("optdigits label out of range at line " +
                               std::to_string(lineno));
    labels.push_back(vals[64]);
  }
  if (labels.empty()) throw std::runtime_error("optdigits file is empty: " + path);
  Dataset ds;
  ds.n = static_cast<int>(labels.size());
  ds.K = 10;
  ds.labels = std::move(labels);
  ds.inputs = Tensor({ds.n, 64});
  std::copy(feats.begin(), feats.end(), ds.inputs.data.data());
  return ds;
}

namespace {

void read_cifar_file(const std::string& file, std::vector<unsigned char>& raw) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open cifar batch " + file);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.empty() || buf.size() % 3073 != 0)
    throw std::runtime_error("cifar batch size not a multiple of 3073: " + file);
  raw.insert(raw.end(), buf.begin(), buf.end());
}

}  // namespace

Dataset load_cifar10_binary(const std::string& path, std::array<float, 3> mean,
                            std::array<float, 3> std) {
  namespace fs = std::filesystem;
  std::vector<unsigned char> raw;
  if (fs::is_directory(path)) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(path)) {
      std::string name = e.path().filename().string();
      if (name.rfind("data_batch_", 0) == 0 && name.size() >= 4 &&
          name.substr(name.size() - 4) == ".bin")
        files.push_back(e.path().string());
    }
    if (files.empty()) throw std::runtime_error("no data_batch_*.bin under " + path);
    std::sort(files.begin(), files.end());
    for (const std::string& f : files) read_cifar_file(f, raw);
  } else {
    read_cifar_file(path, raw);
  }
  int n = static_cast<int>(raw.size() / 3073);
  Dataset ds;
  ds.n = n;
  ds.K = 10;
  ds.inputs = Tensor({n, 3, 32, 32});
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    unsigned char lab = raw[static_cast<size_t>(i) * 3073];
    if (lab > 9) throw std::runtime_error("cifar label out of range: record " +
                                          std::to_string(i));
    ds.labels[i] = lab;
    const unsigned char* px = raw.data() + static_cast<size_t>(i) * 3073 + 1;
    for (int c = 0; c < 3; ++c)
      for (int j = 0; j < 1024; ++j) {
        float v = static_cast<float>(px[c * 1024 + j]) / 255.0f;
        ds.inputs.data[(static_cast<int64_t>(i) * 3 + c) * 1024 + j] =
            (v - mean[static_cast<size_t>(c)]) / std[static_cast<size_t>(c)];
      }
  }
  return ds;
}

Dataset make_synthetic_blobs(int n, int dim, int k, uint64_t seed) {
  if (n <= 0 || dim <= 0 || k <= 0) throw std::runtime_error("synthetic dims invalid");
  Rng crng(hash_combine(seed, "centers"));
  std::vector<std::vector<double>> centers(static_cast<size_t>(k),
                                           std::vector<double>(static_cast<size_t>(dim)));
  for (auto& c : centers)
    for (double& v : c) v = 2.0 * crng.normal();
  Rng srng(hash_combine(seed, "samples"));
  Dataset ds;
  ds.n = n;
  ds.K = k;
  ds.inputs = Tensor({n, dim});
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    int lab = static_cast<int>(srng.uniform_int(static_cast<uint64_t>(k)));
    ds.labels[i] = lab;
    for (int j = 0; j < dim; ++j)
      ds.inputs.data[static_cast<int64_t>(i) * dim + j] =
          static_cast<float>(centers[static_cast<size_t>(lab)][static_cast<size_t>(j)] +
                             srng.normal());
  }
  return ds;
}

Dataset make_synthetic_image_blobs(int n, int c, int h, int w, int k, uint64_t seed) {
  Dataset ds = make_synthetic_blobs(n, c * h * w, k, seed);
  ds.inputs.reshape({n, c, h, w});
  return ds;
}

std::pair<Dataset, Dataset> holdout_split(const Dataset& ds, double fraction,
                                          uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0)
    throw std::runtime_error("holdout fraction must be in [0,1)");
  int n_eval = static_cast<int>(std::lround(fraction * ds.n));
  Rng rng(hash_combine(seed, "holdout"));
  std::vector<int> perm = rng.permutation(ds.n);
  std::vector<int> eval_idx(perm.begin(), perm.begin() + n_eval);
  std::vector<int> train_idx(perm.begin() + n_eval, perm.end());
  std::sort(eval_idx.begin(), eval_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  auto take = [&](const std::vector<int>& idx) {
    Dataset out;
    out.n = static_cast<int>(idx.size());
    out.K = ds.K;
    if (out.n > 0) out.inputs = ds.gather(idx);
    out.labels.reserve(idx.size());
    for (int i : idx) out.labels.push_back(ds.labels[static_cast<size_t>(i)]);
    return out;
  };
  return {take(train_idx), take(eval_idx)};
}

std::vector<int> epoch_order(int n, uint64_t member_seed, int epoch) {
  if (n <= 0) throw std::runtime_error("epoch_order: n must be positive");
  Rng rng(hash_combine(hash_combine(member_seed, "order"),
                       static_cast<uint64_t>(epoch)));
  return rng.permutation(n);
}

}  // namespace popavg
