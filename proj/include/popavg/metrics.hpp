#pragma once

#include <string>
#include <vector>

namespace popavg {

struct MetricsRecord {
  std::string run_id;
  int epoch = 0;
  std::string member_id;  // "0".."p-1", or AVG / GREEDY / ENS
  std::string split;      // train | val | test
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
  std::string event = "none";  // none|papa_pull|avg_all|avg_pair|repair|swa
};

// header row then one csv row per record, '.' decimal separator, values
// printed with the shortest digits that parse back exactly
void emit_metrics(const std::vector<MetricsRecord>& records, const std::string& path);
std::vector<MetricsRecord> parse_metrics(const std::string& path);

std::string format_double(double v);

}  // namespace popavg
