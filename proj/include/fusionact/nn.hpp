#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fusionact/tensor.hpp"

namespace fusionact {

/// Train mode uses batch statistics and updates running ones; eval mode is a
/// pure function of the stored state.
enum class Mode { train, eval };

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct Conv1dParams {
  Tensor weight;  // [out_channels, in_channels, kernel]
  Tensor bias;    // [out_channels]
  int stride = 1;
  int padding = 0;
};

struct BatchNorm1dParams {
  Tensor gamma;  // [channels]
  Tensor beta;   // [channels]
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// conv-bn-relu-conv-bn with a 1x1 skip, post-addition ReLU, then max-pool.
struct ResidualBlockParams {
  int d_in = 0;
  int d_out = 0;
  int d_pool = 1;
  Conv1dParams conv1;          // d_in -> d_out, kernel 3
  Conv1dParams conv2;          // d_out -> d_out, kernel 3
  Conv1dParams identity_conv;  // d_in -> d_out, kernel 1
  BatchNorm1dParams bn1, bn2;
};

/// Depthwise conv, bn, relu, pointwise conv, bn, skip addition, relu.
struct DwSepBlockParams {
  Conv1dParams depthwise;  // weight [channels, 1, kernel]
  Conv1dParams pointwise;  // [out_channels, channels, 1]
  BatchNorm1dParams bn_dw, bn_pw;
  // Projection for the skip path; engaged only when channel counts differ.
  std::optional<Conv1dParams> skip;
};

Tensor conv1d(const Tensor& x, const Conv1dParams& p);
/// Per-channel convolution: weight [channels, 1, kernel], group count ==
/// channel count.
Tensor depthwise_conv1d(const Tensor& x, const Conv1dParams& p);
Tensor batchnorm1d(const Tensor& x, BatchNorm1dParams& p, Mode mode);
Tensor maxpool1d(const Tensor& x, int d_pool);
Tensor global_avgpool(const Tensor& x);
Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b);

Tensor residual_block(const Tensor& x, ResidualBlockParams& p, Mode mode);
Tensor dwsep_block(const Tensor& x, DwSepBlockParams& p, Mode mode);

// Initializers. Weights draw uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) from
// rng in a fixed field order, so a seed pins the whole parameter set.
Conv1dParams make_conv1d(int in_ch, int out_ch, int kernel, int stride,
                         int padding, Rng& rng);
Conv1dParams make_depthwise_conv1d(int channels, int kernel, int stride,
                                   int padding, Rng& rng);
BatchNorm1dParams make_batchnorm1d(int channels);
ResidualBlockParams make_residual_block(int d_in, int d_out, int d_pool, Rng& rng);
DwSepBlockParams make_dwsep_block(int in_ch, int out_ch, Rng& rng);

// Parameter enumeration. `learnable` receives optimizer-updated tensors,
// `state` the batchnorm running statistics; both are persisted.
void collect_params(const std::string& prefix, const Conv1dParams& p,
                    NamedTensors& learnable, NamedTensors& state);
void collect_params(const std::string& prefix, const BatchNorm1dParams& p,
                    NamedTensors& learnable, NamedTensors& state);
void collect_params(const std::string& prefix, const ResidualBlockParams& p,
                    NamedTensors& learnable, NamedTensors& state);
void collect_params(const std::string& prefix, const DwSepBlockParams& p,
                    NamedTensors& learnable, NamedTensors& state);

}  // namespace fusionact
