#include "popavg/metrics.hpp"

#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace popavg {

namespace {

constexpr const char* kHeader = "run_id,epoch,member_id,split,loss,accuracy,lr,event";

double parse_field_double(const std::string& s) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::runtime_error("metrics: bad numeric field '" + s + "'");
  return out;
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

}  // namespace

std::string format_double(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back = 0.0;
    auto [p, ec] = std::from_chars(buf, buf + std::strlen(buf), back);
    (void)p;
    if (ec == std::errc() && back == v) break;
  }
  return buf;
}

void emit_metrics(const std::vector<MetricsRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open metrics file for writing: " + path);
  out << kHeader << '\n';
  for (const MetricsRecord& r : records) {
    if (r.accuracy < 0.0 || r.accuracy > 1.0)
      throw std::runtime_error("metrics: accuracy outside [0,1]");
    out << r.run_id << ',' << r.epoch << ',' << r.member_id << ',' << r.split << ','
        << format_double(r.loss) << ',' << format_double(r.accuracy) << ','
        << format_double(r.lr) << ',' << r.event << '\n';
  }
  if (!out) throw std::runtime_error("metrics write failed: " + path);
}

std::vector<MetricsRecord> parse_metrics(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open metrics file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("metrics file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) throw std::runtime_error("metrics header mismatch");
  std::vector<MetricsRecord> out;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f = split(line, ',');
    if (f.size() != 8) throw std::runtime_error("metrics row has wrong field count");
    MetricsRecord r;
    r.run_id = f[0];
    r.epoch = static_cast<int>(parse_field_double(f[1]));
    r.member_id = f[2];
    r.split = f[3];
    r.loss = parse_field_double(f[4]);
    r.accuracy = parse_field_double(f[5]);
    r.lr = parse_field_double(f[6]);
    r.event = f[7];
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace popavg
