#include "popavg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "popavg/tensor.hpp"

namespace popavg {

namespace {

constexpr const char* kFormatTag = "PAPA1";

std::string dims_string(const std::vector<int>& shape) {
  std::string s;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

void swap_to_little_endian(std::vector<char>& bytes) {
  if constexpr (std::endian::native == std::endian::little) {
    (void)bytes;
  } else {
    for (size_t i = 0; i + 3 < bytes.size(); i += 4) {
      std::swap(bytes[i], bytes[i + 3]);
      std::swap(bytes[i + 1], bytes[i + 2]);
    }
  }
}

struct Group {
  std::string name;
  std::vector<std::string> roles;
  std::vector<std::vector<int>> shapes;

  bool has(const std::string& role) const {
    for (const auto& r : roles)
      if (r == role) return true;
    return false;
  }
  const std::vector<int>& shape(const std::string& role) const {
    for (size_t i = 0; i < roles.size(); ++i)
      if (roles[i] == role) return shapes[i];
    throw std::runtime_error("checkpoint: missing role " + role);
  }
};

// the manifest only lists tensors, so activation layers are re-inserted
// following the fixed layout of the built-in model family: conv blocks are
// conv[-bn]-relu-pool(2), dense blocks are dense[-bn]-relu except the head
std::vector<LayerSpec> infer_specs(const std::vector<Group>& groups) {
  std::vector<LayerSpec> specs;
  // indices of parameterized (dense/conv) groups
  std::vector<size_t> param_idx;
  for (size_t i = 0; i < groups.size(); ++i)
    if (groups[i].has("weight")) param_idx.push_back(i);
  if (param_idx.empty()) throw std::runtime_error("checkpoint: no dense/conv tensors");

  bool seen_dense = false;
  for (size_t n = 0; n < param_idx.size(); ++n) {
    const Group& g = groups[param_idx[n]];
    if (!g.has("bias")) throw std::runtime_error("checkpoint: layer " + g.name + " lacks bias");
    const std::vector<int>& w = g.shape("weight");
    const bool last = n + 1 == param_idx.size();
    const bool bn_follows =
        param_idx[n] + 1 < groups.size() && groups[param_idx[n] + 1].has("bn_weight");
    if (w.size() == 4) {
      if (seen_dense) throw std::runtime_error("checkpoint: conv after dense unsupported");
      specs.push_back(LayerSpec::conv2d(w[1], w[0], w[2], 1, w[2] / 2, g.name));
      if (bn_follows) specs.push_back(LayerSpec::batchnorm(w[0], groups[param_idx[n] + 1].name));
      specs.push_back(LayerSpec::relu());
      specs.push_back(LayerSpec::avgpool(2));
    } else if (w.size() == 2) {
      if (!seen_dense) {
        // first dense after a conv stack needs the flatten
        bool conv_before = false;
        for (size_t m = 0; m < n; ++m)
          if (groups[param_idx[m]].shape("weight").size() == 4) conv_before = true;
        if (conv_before) specs.push_back(LayerSpec::flatten());
      }
      seen_dense = true;
      specs.push_back(LayerSpec::dense(w[0], w[1], g.name));
      if (bn_follows) specs.push_back(LayerSpec::batchnorm(w[1], groups[param_idx[n] + 1].name));
      if (!last) specs.push_back(LayerSpec::relu());
    } else {
      throw std::runtime_error("checkpoint: weight rank unsupported for " + g.name);
    }
  }
  return specs;
}

}  // namespace

void save_checkpoint(const Network& net, const std::string& path,
                     const std::string& digest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out << kFormatTag << ' ' << net.flat_size;
  if (!digest.empty()) out << ' ' << digest;
  out << '\n';
  for (const ManifestEntry& e : net.manifest)
    out << e.layer << ',' << e.role << ',' << dims_string(e.shape) << ',' << e.offset
        << '\n';
  out << '\n';
  VecXf params = net.get_params();
  std::vector<char> bytes(static_cast<size_t>(params.size()) * 4);
  std::memcpy(bytes.data(), params.data(), bytes.size());
  swap_to_little_endian(bytes);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Network load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("checkpoint header missing");
  std::istringstream hs(header);
  std::string tag;
  int64_t count = -1;
  hs >> tag >> count;
  if (tag != kFormatTag) throw std::runtime_error("checkpoint format tag mismatch: " + tag);
  if (count < 0) throw std::runtime_error("checkpoint header lacks a parameter count");

  std::vector<ManifestEntry> entries;
  std::vector<Group> groups;
  std::string line;
  int64_t running = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) break;
    std::vector<std::string> f = split(line, ',');
    if (f.size() != 4) throw std::runtime_error("checkpoint manifest line malformed: " + line);
    ManifestEntry e;
    e.layer = f[0];
    e.role = f[1];
    for (const std::string& d : split(f[2], 'x')) e.shape.push_back(std::stoi(d));
    e.offset = std::stoll(f[3]);
    if (e.offset != running)
      throw std::runtime_error("checkpoint manifest offsets are not contiguous");
    running += shape_product(e.shape);
    if (groups.empty() || groups.back().name != e.layer) {
      Group g;
      g.name = e.layer;
      groups.push_back(std::move(g));
    }
    groups.back().roles.push_back(e.role);
    groups.back().shapes.push_back(e.shape);
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw std::runtime_error("checkpoint manifest is empty");
  if (running != count)
    throw std::runtime_error("checkpoint manifest total disagrees with header count");

  std::vector<char> bytes(static_cast<size_t>(count) * 4);
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw std::runtime_error("checkpoint payload truncated");
  char extra;
  if (in.read(&extra, 1))
    throw std::runtime_error("checkpoint has trailing bytes after payload");
  swap_to_little_endian(bytes);

  Network net = build_network(infer_specs(groups), 0);
  if (net.flat_size != count ||
      net.manifest.size() != entries.size())
    throw std::runtime_error("checkpoint architecture could not be reconstructed");
  for (size_t i = 0; i < entries.size(); ++i) {
    const ManifestEntry& a = net.manifest[i];
    const ManifestEntry& b = entries[i];
    if (a.layer != b.layer || a.role != b.role || a.shape != b.shape || a.offset != b.offset)
      throw std::runtime_error("checkpoint manifest mismatch at " + b.layer + "/" + b.role);
  }
  VecXf params(count);
  std::memcpy(params.data(), bytes.data(), bytes.size());
  net.set_params(params);
  return net;
}

std::string checkpoint_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("checkpoint header missing");
  std::istringstream hs(header);
  std::string tag, count, digest;
  hs >> tag >> count >> digest;
  if (tag != kFormatTag) throw std::runtime_error("checkpoint format tag mismatch: " + tag);
  return digest;
}

}  // namespace popavg
