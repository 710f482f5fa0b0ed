#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fusionact/common.hpp"

namespace fusionact {

// Flat key = value run configuration.  Exactly these keys exist; anything
// else is rejected.  '#' lines are comments.  Defaults:
//
//   dataset        = ucihar        ucihar | motionsense
//   root           = data          dataset root directory
//   stage          = 1-static      1-static | 1-dynamic | 2
//   batch_size     = 64            at least 2 (batch statistics need it)
//   epochs         = stage default 100 for stage I, 50 for stage II
//   lr             = 0.001         initial Adam learning rate, > 0
//   seed           = 42
//   freeze_experts = true          stage II: gate-only training
//   out            = model.ck      checkpoint output path
struct RunConfig {
  std::string dataset = "ucihar";
  std::string root = "data";
  std::string stage = "1-static";
  int batch_size = 64;
  int epochs = -1;  // -1 stands for the stage default
  double lr = 1e-3;
  std::uint64_t seed = 42;
  bool freeze_experts = true;
  std::string out = "model.ck";
};

// Throws ConfigError on unknown or duplicate keys, malformed lines, and
// values that parse but are out of range.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// The effective configuration as ordered key/value strings, as echoed into
// checkpoint manifests.
std::vector<std::pair<std::string, std::string>> echo_config(
    const RunConfig& cfg);

}  // namespace fusionact
