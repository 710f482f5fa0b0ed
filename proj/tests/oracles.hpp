#pragma once

// Deliberately naive reference implementations. The library is tested
// against these, never against itself.

#include <cstddef>
#include <vector>

namespace oracles {

// Bounds-checked zero-padded read of x[b][c][t].
inline double at(const std::vector<double>& x, int channels, int time, int b,
                 int c, int t) {
  if (t < 0 || t >= time) return 0.0;
  return x[(static_cast<std::size_t>(b) * channels + c) * time + t];
}

inline std::vector<double> conv1d(const std::vector<double>& x, int batch,
                                  int in_ch, int time,
                                  const std::vector<double>& w, int out_ch,
                                  int kernel, const std::vector<double>& bias,
                                  int stride, int pad) {
  int t_out = (time + 2 * pad - kernel) / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(batch) * out_ch * t_out);
  for (int b = 0; b < batch; ++b)
    for (int co = 0; co < out_ch; ++co)
      for (int t = 0; t < t_out; ++t) {
        double acc = bias[co];
        for (int ci = 0; ci < in_ch; ++ci)
          for (int k = 0; k < kernel; ++k)
            acc += w[(static_cast<std::size_t>(co) * in_ch + ci) * kernel + k] *
                   at(x, in_ch, time, b, ci, t * stride + k - pad);
        y[(static_cast<std::size_t>(b) * out_ch + co) * t_out + t] = acc;
      }
  return y;
}

inline std::vector<double> depthwise_conv1d(const std::vector<double>& x,
                                            int batch, int channels, int time,
                                            const std::vector<double>& w,
                                            int kernel,
                                            const std::vector<double>& bias,
                                            int stride, int pad) {
  int t_out = (time + 2 * pad - kernel) / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(batch) * channels * t_out);
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c)
      for (int t = 0; t < t_out; ++t) {
        double acc = bias[c];
        for (int k = 0; k < kernel; ++k)
          acc += w[static_cast<std::size_t>(c) * kernel + k] *
                 at(x, channels, time, b, c, t * stride + k - pad);
        y[(static_cast<std::size_t>(b) * channels + c) * t_out + t] = acc;
      }
  return y;
}

// y = x W^T + b with x [batch, in], W [out, in].
inline std::vector<double> linear(const std::vector<double>& x, int batch, int in,
                                  const std::vector<double>& w, int out,
                                  const std::vector<double>& bias) {
  std::vector<double> y(static_cast<std::size_t>(batch) * out);
  for (int i = 0; i < batch; ++i)
    for (int o = 0; o < out; ++o) {
      double acc = bias[o];
      for (int j = 0; j < in; ++j)
        acc += x[static_cast<std::size_t>(i) * in + j] *
               w[static_cast<std::size_t>(o) * in + j];
      y[static_cast<std::size_t>(i) * out + o] = acc;
    }
  return y;
}

}  // namespace oracles
