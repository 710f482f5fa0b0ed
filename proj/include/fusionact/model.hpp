#pragma once

#include <array>
#include <string>
#include <vector>

#include "fusionact/nn.hpp"

namespace fusionact {

// Two-expert residual CNN with a learned gate.  A static-activity pathway and
// a dynamic-activity pathway each emit a probability distribution over their
// own class block; a lightweight guidance network maps the raw window to a
// scalar gate g in (0,1) that weights the concatenation of the two blocks.

struct PathwayConfig {
  // Each block is {d_in, d_out, d_pool}; consecutive blocks must chain.
  std::vector<std::array<int, 3>> block_specs;
  int num_outputs = 0;
};

struct GuidanceConfig {
  // Each block is {d_in, d_out}; the final d_out feeds a linear layer to one
  // scalar, so the gate head is implied by the last spec.
  std::vector<std::array<int, 2>> dwsep_specs;
};

struct PathwayParams {
  std::vector<ResidualBlockParams> blocks;
  Tensor head_weight;  // [num_outputs, last d_out]
  Tensor head_bias;    // [num_outputs]
};

struct GuidanceParams {
  std::vector<DwSepBlockParams> blocks;
  Tensor head_weight;  // [1, last d_out]
  Tensor head_bias;    // [1]
};

struct FusionModel {
  PathwayConfig static_config;
  PathwayConfig dynamic_config;
  GuidanceConfig guidance_config;
  PathwayParams static_params;
  PathwayParams dynamic_params;
  GuidanceParams guidance_params;
  // All static labels first, then all dynamic labels; no duplicates.
  std::vector<std::string> class_order;
  int n_static = 0;
  int in_channels = 0;
  int window_len = 0;

  // Carried through checkpoints: source dataset name, per-channel z-score
  // statistics from the training split, and the effective run configuration
  // as ordered key/value strings.
  std::string dataset;
  std::vector<double> norm_mean;
  std::vector<double> norm_std;
  std::vector<std::pair<std::string, std::string>> config_echo;

  int n_dynamic() const { return static_cast<int>(class_order.size()) - n_static; }
  bool loaded() const;
};

// Stock shapes used when a run does not override the architecture.
PathwayConfig default_pathway_config(int in_channels, int num_outputs);
GuidanceConfig default_guidance_config(int in_channels);

PathwayParams make_pathway(const PathwayConfig& cfg, Rng& rng);
GuidanceParams make_guidance(const GuidanceConfig& cfg, Rng& rng);

// Builds the default-architecture model for a dataset described by its
// channel count, window length, and label list (static block first).
FusionModel make_fusion_model(int in_channels, int window_len,
                              std::vector<std::string> class_order,
                              int n_static, Rng& rng);

// Probability rows over the pathway's classes; rows sum to 1 within 1e-9.
Tensor pathway_forward(const Tensor& x, PathwayParams& p, Mode mode);
Tensor static_forward(const Tensor& x, FusionModel& m, Mode mode);
Tensor dynamic_forward(const Tensor& x, FusionModel& m, Mode mode);

// Gate per sample, shape [batch, 1], strictly inside (0,1); values near 1
// prioritize the static block.
Tensor guidance_forward(const Tensor& x, FusionModel& m, Mode mode);

// y_pred = concat(g*y_s, (1-g)*y_d) along the class axis.  Convexity keeps
// every output row a probability distribution.
Tensor fuse(const Tensor& y_s, const Tensor& y_d, const Tensor& g_x);

// Full pipeline: both pathways, the gate, and the fusion.
Tensor fused_forward(const Tensor& x, FusionModel& m, Mode mode);

// Mean over the batch of -log(y_pred[label] + 1e-12).
Tensor nll_loss(const Tensor& y_pred, const std::vector<int>& labels);

// Argmax per row; ties break toward the lowest class index.
std::vector<int> predict_classes(const Tensor& y_pred);

// Single-window inference: x is [channels, time]; returns the label name.
std::string predict(const Tensor& x, FusionModel& m);

// Parameter enumeration in a fixed order (static pathway, dynamic pathway,
// guidance); names are dot paths like "static.block0.conv1.weight".
void collect_params(const std::string& prefix, const PathwayParams& p,
                    NamedTensors& learnable, NamedTensors& state);
void collect_params(const std::string& prefix, const GuidanceParams& p,
                    NamedTensors& learnable, NamedTensors& state);
void collect_params(const FusionModel& m, NamedTensors& learnable,
                    NamedTensors& state);

}  // namespace fusionact
