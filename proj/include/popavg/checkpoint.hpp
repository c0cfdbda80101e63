#pragma once

#include <string>

#include "popavg/network.hpp"

namespace popavg {

// format: ascii header "PAPA1 <param_count> [digest]", one line per tensor
// "<layer>,<role>,<dims-joined-by-x>,<offset>", a blank line, then the
// little-endian float32 payload
void save_checkpoint(const Network& net, const std::string& path,
                     const std::string& digest = "");

// rebuilds the network (including activation layers, which carry no tensors)
// for the built-in model family, then validates the manifest byte-for-byte
Network load_checkpoint(const std::string& path);

// digest token from the header, empty when absent
std::string checkpoint_digest(const std::string& path);

}  // namespace popavg
