#include "fusionact/nn.hpp"

#include <algorithm>
#include <cmath>

namespace fusionact {

namespace {

void expect_3d(const char* op, const Tensor& x) {
  if (x.ndim() != 3)
    throw ShapeError(std::string(op) + ": expected [batch, channels, time], got " +
                     shape_to_string(x.shape()));
}

void check_conv_args(const char* op, const Tensor& x, const Conv1dParams& p,
                     int expected_in_ch) {
  expect_3d(op, x);
  if (p.weight.ndim() != 3 || p.bias.ndim() != 1 ||
      p.bias.dim(0) != p.weight.dim(0))
    throw ShapeError(std::string(op) + ": malformed parameters, weight " +
                     shape_to_string(p.weight.shape()) + " bias " +
                     shape_to_string(p.bias.shape()));
  if (p.stride < 1) throw ContractError(std::string(op) + ": stride must be >= 1");
  if (p.padding < 0) throw ContractError(std::string(op) + ": padding must be >= 0");
  if (x.dim(1) != expected_in_ch)
    throw ShapeError(std::string(op) + ": input has " + std::to_string(x.dim(1)) +
                     " channels, parameters expect " + std::to_string(expected_in_ch));
  int kernel = p.weight.dim(2);
  if (x.dim(2) + 2 * p.padding < kernel)
    throw ShapeError(std::string(op) + ": time " + std::to_string(x.dim(2)) +
                     " too short for kernel " + std::to_string(kernel) +
                     " with padding " + std::to_string(p.padding));
}

// Output positions t for which t*stride + k - pad lands inside [0, time).
struct TapRange {
  int lo, hi;  // half-open in t
};

TapRange tap_range(int k, int pad, int stride, int time, int t_out) {
  int lo = 0;
  if (pad - k > 0) lo = (pad - k + stride - 1) / stride;
  int last = time - 1 + pad - k;
  int hi = last < 0 ? 0 : std::min(t_out, last / stride + 1);
  return {lo, std::max(lo, hi)};
}

// Dot products with a fixed 8-lane accumulation order. The lane split keeps
// the summation order identical no matter how the compiler vectorizes,
// while exposing enough parallelism for FMA units.
inline double dot8(const double* a, const double* b, int n) {
  double l0 = 0, l1 = 0, l2 = 0, l3 = 0, l4 = 0, l5 = 0, l6 = 0, l7 = 0;
  int t = 0;
  for (; t + 8 <= n; t += 8) {
    l0 += a[t] * b[t];
    l1 += a[t + 1] * b[t + 1];
    l2 += a[t + 2] * b[t + 2];
    l3 += a[t + 3] * b[t + 3];
    l4 += a[t + 4] * b[t + 4];
    l5 += a[t + 5] * b[t + 5];
    l6 += a[t + 6] * b[t + 6];
    l7 += a[t + 7] * b[t + 7];
  }
  double tail = 0;
  for (; t < n; ++t) tail += a[t] * b[t];
  return ((l0 + l1) + (l2 + l3)) + ((l4 + l5) + (l6 + l7)) + tail;
}

// Stride-1 convolution paths. Operands are transposed once so that every
// accumulation is a contiguous dot product; the general (any-stride) path
// below stays as the reference fallback.
void conv_forward_s1(const double* px, const double* pw, const double* pb,
                     double* po, int batch, int in_ch, int time, int out_ch,
                     int kernel, int pad, int t_out) {
  std::vector<double> wT(static_cast<std::size_t>(kernel) * out_ch * in_ch);  // [k][co][ci]
  for (int co = 0; co < out_ch; ++co)
    for (int ci = 0; ci < in_ch; ++ci)
      for (int k = 0; k < kernel; ++k)
        wT[(static_cast<std::size_t>(k) * out_ch + co) * in_ch + ci] =
            pw[(static_cast<std::size_t>(co) * in_ch + ci) * kernel + k];

  std::vector<double> xT(static_cast<std::size_t>(time) * in_ch);  // [t][ci]
  for (int b = 0; b < batch; ++b) {
    const double* xb = px + static_cast<std::size_t>(b) * in_ch * time;
    for (int ci = 0; ci < in_ch; ++ci)
      for (int t = 0; t < time; ++t) xT[static_cast<std::size_t>(t) * in_ch + ci] = xb[static_cast<std::size_t>(ci) * time + t];
    double* ob = po + static_cast<std::size_t>(b) * out_ch * t_out;

    for (int co = 0; co < out_ch; ++co) {
      double* orow = ob + static_cast<std::size_t>(co) * t_out;
      for (int t = 0; t < t_out; ++t) {
        double acc = pb[co];
        for (int k = 0; k < kernel; ++k) {
          int ti = t + k - pad;
          if (ti < 0 || ti >= time) continue;
          acc += dot8(&xT[static_cast<std::size_t>(ti) * in_ch],
                      &wT[(static_cast<std::size_t>(k) * out_ch + co) * in_ch], in_ch);
        }
        orow[t] = acc;
      }
    }
  }
}

// gw[co][ci][k] += sum over batch and output position.  A reduction over
// output positions would be short (t_out shrinks to 8 deep in a network), so
// instead this streams t and does vertical fused multiply-adds over ci into a
// panel of four output-channel rows that stays in L1.  Scratch is laid out
// [co][k][ci] to keep those adds unit-stride and is folded into gw at the
// end; each gw element still accumulates in a fixed (batch, t) order.
void conv_backward_w_s1(const double* px, const double* go, double* gw,
                        int batch, int in_ch, int time, int out_ch, int kernel,
                        int pad, int t_out) {
  const std::size_t krows = static_cast<std::size_t>(kernel) * in_ch;
  std::vector<double> scratch(static_cast<std::size_t>(out_ch) * krows, 0.0);
  std::vector<double> xT(static_cast<std::size_t>(time) * in_ch);
  for (int b = 0; b < batch; ++b) {
    const double* xb = px + static_cast<std::size_t>(b) * in_ch * time;
    for (int ci = 0; ci < in_ch; ++ci)
      for (int t = 0; t < time; ++t)
        xT[static_cast<std::size_t>(t) * in_ch + ci] =
            xb[static_cast<std::size_t>(ci) * time + t];
    const double* gb = go + static_cast<std::size_t>(b) * out_ch * t_out;

    int co = 0;
    for (; co + 4 <= out_ch; co += 4) {
      const double* g0 = gb + static_cast<std::size_t>(co) * t_out;
      const double* g1 = g0 + t_out;
      const double* g2 = g1 + t_out;
      const double* g3 = g2 + t_out;
      for (int k = 0; k < kernel; ++k) {
        int lo = std::max(0, pad - k);
        int hi = std::min(t_out, time + pad - k);
        double* __restrict r0 = &scratch[static_cast<std::size_t>(co) * krows + static_cast<std::size_t>(k) * in_ch];
        double* __restrict r1 = r0 + krows;
        double* __restrict r2 = r1 + krows;
        double* __restrict r3 = r2 + krows;
        for (int t = lo; t < hi; ++t) {
          const double* __restrict xr = &xT[static_cast<std::size_t>(t + k - pad) * in_ch];
          const double a0 = g0[t], a1 = g1[t], a2 = g2[t], a3 = g3[t];
          for (int ci = 0; ci < in_ch; ++ci) {
            r0[ci] += a0 * xr[ci];
            r1[ci] += a1 * xr[ci];
            r2[ci] += a2 * xr[ci];
            r3[ci] += a3 * xr[ci];
          }
        }
      }
    }
    for (; co < out_ch; ++co) {
      const double* g0 = gb + static_cast<std::size_t>(co) * t_out;
      for (int k = 0; k < kernel; ++k) {
        int lo = std::max(0, pad - k);
        int hi = std::min(t_out, time + pad - k);
        double* __restrict r0 = &scratch[static_cast<std::size_t>(co) * krows + static_cast<std::size_t>(k) * in_ch];
        for (int t = lo; t < hi; ++t) {
          const double* __restrict xr = &xT[static_cast<std::size_t>(t + k - pad) * in_ch];
          const double a0 = g0[t];
          for (int ci = 0; ci < in_ch; ++ci) r0[ci] += a0 * xr[ci];
        }
      }
    }
  }
  for (int co = 0; co < out_ch; ++co)
    for (int k = 0; k < kernel; ++k) {
      const double* s = &scratch[static_cast<std::size_t>(co) * krows + static_cast<std::size_t>(k) * in_ch];
      for (int ci = 0; ci < in_ch; ++ci)
        gw[(static_cast<std::size_t>(co) * in_ch + ci) * kernel + k] += s[ci];
    }
}

void conv_backward_x_s1(const double* pw, const double* go, double* gx,
                        int batch, int in_ch, int time, int out_ch, int kernel,
                        int pad, int t_out) {
  std::vector<double> wG(static_cast<std::size_t>(kernel) * in_ch * out_ch);  // [k][ci][co]
  for (int co = 0; co < out_ch; ++co)
    for (int ci = 0; ci < in_ch; ++ci)
      for (int k = 0; k < kernel; ++k)
        wG[(static_cast<std::size_t>(k) * in_ch + ci) * out_ch + co] =
            pw[(static_cast<std::size_t>(co) * in_ch + ci) * kernel + k];

  std::vector<double> goT(static_cast<std::size_t>(t_out) * out_ch);  // [t'][co]
  for (int b = 0; b < batch; ++b) {
    const double* gb = go + static_cast<std::size_t>(b) * out_ch * t_out;
    for (int co = 0; co < out_ch; ++co)
      for (int t = 0; t < t_out; ++t)
        goT[static_cast<std::size_t>(t) * out_ch + co] = gb[static_cast<std::size_t>(co) * t_out + t];
    double* gxb = gx + static_cast<std::size_t>(b) * in_ch * time;

    for (int ci = 0; ci < in_ch; ++ci) {
      double* grow = gxb + static_cast<std::size_t>(ci) * time;
      for (int ti = 0; ti < time; ++ti) {
        double acc = 0;
        for (int k = 0; k < kernel; ++k) {
          int tp = ti - k + pad;
          if (tp < 0 || tp >= t_out) continue;
          acc += dot8(&goT[static_cast<std::size_t>(tp) * out_ch],
                      &wG[(static_cast<std::size_t>(k) * in_ch + ci) * out_ch], out_ch);
        }
        grow[ti] += acc;
      }
    }
  }
}

}  // namespace

Tensor conv1d(const Tensor& x, const Conv1dParams& p) {
  check_conv_args("conv1d", x, p, p.weight.dim(1));
  const int batch = x.dim(0), in_ch = x.dim(1), time = x.dim(2);
  const int out_ch = p.weight.dim(0), kernel = p.weight.dim(2);
  const int stride = p.stride, pad = p.padding;
  const int t_out = (time + 2 * pad - kernel) / stride + 1;

  Tensor out({batch, out_ch, t_out});
  const double* px = x.data();
  const double* pw = p.weight.data();
  const double* pb = p.bias.data();
  double* po = out.data();

  if (stride == 1) {
    conv_forward_s1(px, pw, pb, po, batch, in_ch, time, out_ch, kernel, pad, t_out);
  } else {
    for (int b = 0; b < batch; ++b) {
      for (int co = 0; co < out_ch; ++co) {
        double* orow = po + (static_cast<std::size_t>(b) * out_ch + co) * t_out;
        std::fill(orow, orow + t_out, pb[co]);
        for (int ci = 0; ci < in_ch; ++ci) {
          const double* xrow = px + (static_cast<std::size_t>(b) * in_ch + ci) * time;
          const double* wrow = pw + (static_cast<std::size_t>(co) * in_ch + ci) * kernel;
          for (int k = 0; k < kernel; ++k) {
            const double wv = wrow[k];
            auto [lo, hi] = tap_range(k, pad, stride, time, t_out);
            for (int t = lo; t < hi; ++t)
              orow[t] += wv * xrow[t * stride + k - pad];
          }
        }
      }
    }
  }

  Tensor w = p.weight, bias = p.bias;
  autograd::record("conv1d", {x, w, bias}, out, [x, w, bias, out, stride, pad]() {
    const int batch = x.dim(0), in_ch = x.dim(1), time = x.dim(2);
    const int out_ch = w.dim(0), kernel = w.dim(2);
    const int t_out = out.dim(2);
    const double* go = out.grad_buffer();
    const double* px = x.data();
    const double* pw = w.data();

    if (bias.requires_grad()) {
      double* gb = bias.grad_buffer();
      for (int b = 0; b < batch; ++b)
        for (int co = 0; co < out_ch; ++co) {
          const double* grow = go + (static_cast<std::size_t>(b) * out_ch + co) * t_out;
          double acc = 0.0;
          for (int t = 0; t < t_out; ++t) acc += grow[t];
          gb[co] += acc;
        }
    }
    double* gw = w.requires_grad() ? w.grad_buffer() : nullptr;
    double* gx = x.requires_grad() ? x.grad_buffer() : nullptr;
    if (!gw && !gx) return;
    if (stride == 1) {
      if (gw) conv_backward_w_s1(px, go, gw, batch, in_ch, time, out_ch, kernel, pad, t_out);
      if (gx) conv_backward_x_s1(pw, go, gx, batch, in_ch, time, out_ch, kernel, pad, t_out);
      return;
    }
    for (int b = 0; b < batch; ++b) {
      for (int co = 0; co < out_ch; ++co) {
        const double* grow = go + (static_cast<std::size_t>(b) * out_ch + co) * t_out;
        for (int ci = 0; ci < in_ch; ++ci) {
          const double* xrow = px + (static_cast<std::size_t>(b) * in_ch + ci) * time;
          const std::size_t w_off = (static_cast<std::size_t>(co) * in_ch + ci) * kernel;
          for (int k = 0; k < kernel; ++k) {
            auto [lo, hi] = tap_range(k, pad, stride, time, t_out);
            if (gw) {
              double acc = 0.0;
              for (int t = lo; t < hi; ++t) acc += grow[t] * xrow[t * stride + k - pad];
              gw[w_off + k] += acc;
            }
            if (gx) {
              const double wv = pw[w_off + k];
              double* gxrow = gx + (static_cast<std::size_t>(b) * in_ch + ci) * time;
              for (int t = lo; t < hi; ++t) gxrow[t * stride + k - pad] += wv * grow[t];
            }
          }
        }
      }
    }
  });
  return out;
}

Tensor depthwise_conv1d(const Tensor& x, const Conv1dParams& p) {
  if (p.weight.ndim() == 3 && p.weight.dim(1) != 1)
    throw ShapeError("depthwise_conv1d: weight must be [channels, 1, kernel], got " +
                     shape_to_string(p.weight.shape()));
  check_conv_args("depthwise_conv1d", x, p, p.weight.dim(0));
  const int batch = x.dim(0), channels = x.dim(1), time = x.dim(2);
  const int kernel = p.weight.dim(2);
  const int stride = p.stride, pad = p.padding;
  const int t_out = (time + 2 * pad - kernel) / stride + 1;

  Tensor out({batch, channels, t_out});
  const double* px = x.data();
  const double* pw = p.weight.data();
  const double* pb = p.bias.data();
  double* po = out.data();

  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      double* orow = po + (static_cast<std::size_t>(b) * channels + c) * t_out;
      std::fill(orow, orow + t_out, pb[c]);
      const double* xrow = px + (static_cast<std::size_t>(b) * channels + c) * time;
      const double* wrow = pw + static_cast<std::size_t>(c) * kernel;
      for (int k = 0; k < kernel; ++k) {
        const double wv = wrow[k];
        auto [lo, hi] = tap_range(k, pad, stride, time, t_out);
        if (stride == 1) {
          const double* xs = xrow + k - pad;
          for (int t = lo; t < hi; ++t) orow[t] += wv * xs[t];
        } else {
          for (int t = lo; t < hi; ++t) orow[t] += wv * xrow[t * stride + k - pad];
        }
      }
    }
  }

  Tensor w = p.weight, bias = p.bias;
  autograd::record("depthwise_conv1d", {x, w, bias}, out,
                   [x, w, bias, out, stride, pad]() {
    const int batch = x.dim(0), channels = x.dim(1), time = x.dim(2);
    const int kernel = w.dim(2);
    const int t_out = out.dim(2);
    const double* go = out.grad_buffer();
    const double* px = x.data();
    const double* pw = w.data();
    double* gb = bias.requires_grad() ? bias.grad_buffer() : nullptr;
    double* gw = w.requires_grad() ? w.grad_buffer() : nullptr;
    double* gx = x.requires_grad() ? x.grad_buffer() : nullptr;

    for (int b = 0; b < batch; ++b) {
      for (int c = 0; c < channels; ++c) {
        const double* grow = go + (static_cast<std::size_t>(b) * channels + c) * t_out;
        const double* xrow = px + (static_cast<std::size_t>(b) * channels + c) * time;
        if (gb) {
          double acc = 0.0;
          for (int t = 0; t < t_out; ++t) acc += grow[t];
          gb[c] += acc;
        }
        for (int k = 0; k < kernel && (gw || gx); ++k) {
          auto [lo, hi] = tap_range(k, pad, stride, time, t_out);
          if (gw) {
            double acc = 0.0;
            for (int t = lo; t < hi; ++t) acc += grow[t] * xrow[t * stride + k - pad];
            gw[static_cast<std::size_t>(c) * kernel + k] += acc;
          }
          if (gx) {
            const double wv = pw[static_cast<std::size_t>(c) * kernel + k];
            double* gxrow = gx + (static_cast<std::size_t>(b) * channels + c) * time;
            for (int t = lo; t < hi; ++t) gxrow[t * stride + k - pad] += wv * grow[t];
          }
        }
      }
    }
  });
  return out;
}

Tensor batchnorm1d(const Tensor& x, BatchNorm1dParams& p, Mode mode) {
  expect_3d("batchnorm1d", x);
  const int batch = x.dim(0), channels = x.dim(1), time = x.dim(2);
  if (p.gamma.dim(0) != channels)
    throw ShapeError("batchnorm1d: input has " + std::to_string(channels) +
                     " channels, parameters expect " + std::to_string(p.gamma.dim(0)));
  if (mode == Mode::train && batch < 2)
    throw ContractError("batchnorm1d: train mode needs batch >= 2, got " +
                        std::to_string(batch));

  const std::size_t per_ch = static_cast<std::size_t>(time);
  const std::size_t row = static_cast<std::size_t>(channels) * per_ch;
  const double* px = x.data();
  Tensor out(x.shape());
  double* po = out.data();

  std::vector<double> mean(channels), invstd(channels);
  if (mode == Mode::train) {
    const double n = static_cast<double>(batch) * time;
    for (int c = 0; c < channels; ++c) {
      double sum = 0.0;
      for (int b = 0; b < batch; ++b) {
        const double* xr = px + b * row + c * per_ch;
        for (int t = 0; t < time; ++t) sum += xr[t];
      }
      const double m = sum / n;
      double sq = 0.0;
      for (int b = 0; b < batch; ++b) {
        const double* xr = px + b * row + c * per_ch;
        for (int t = 0; t < time; ++t) {
          double d = xr[t] - m;
          sq += d * d;
        }
      }
      const double var = sq / n;
      mean[c] = m;
      invstd[c] = 1.0 / std::sqrt(var + p.eps);
      p.running_mean.data()[c] = (1.0 - p.momentum) * p.running_mean.data()[c] + p.momentum * m;
      p.running_var.data()[c] = (1.0 - p.momentum) * p.running_var.data()[c] + p.momentum * var;
    }
  } else {
    for (int c = 0; c < channels; ++c) {
      mean[c] = p.running_mean.data()[c];
      invstd[c] = 1.0 / std::sqrt(p.running_var.data()[c] + p.eps);
    }
  }

  const double* pg = p.gamma.data();
  const double* pbeta = p.beta.data();
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      const double* xr = px + b * row + c * per_ch;
      double* orow = po + b * row + c * per_ch;
      const double a = pg[c] * invstd[c];
      const double sh = pbeta[c] - a * mean[c];
      for (int t = 0; t < time; ++t) orow[t] = a * xr[t] + sh;
    }
  }

  Tensor gamma = p.gamma, beta = p.beta;
  if (mode == Mode::train) {
    autograd::record("batchnorm1d", {x, gamma, beta}, out,
                     [x, gamma, beta, out, mean, invstd]() {
      const int batch = x.dim(0), channels = x.dim(1), time = x.dim(2);
      const std::size_t per_ch = static_cast<std::size_t>(time);
      const std::size_t row = static_cast<std::size_t>(channels) * per_ch;
      const double n = static_cast<double>(batch) * time;
      const double* go = out.grad_buffer();
      const double* px = x.data();
      const double* pg = gamma.data();
      double* ggamma = gamma.requires_grad() ? gamma.grad_buffer() : nullptr;
      double* gbeta = beta.requires_grad() ? beta.grad_buffer() : nullptr;
      double* gx = x.requires_grad() ? x.grad_buffer() : nullptr;

      for (int c = 0; c < channels; ++c) {
        const double m = mean[c], is = invstd[c];
        double sum_g = 0.0, sum_gx = 0.0;  // Σgo and Σ(go · xhat)
        for (int b = 0; b < batch; ++b) {
          const double* gr = go + b * row + c * per_ch;
          const double* xr = px + b * row + c * per_ch;
          for (int t = 0; t < time; ++t) {
            sum_g += gr[t];
            sum_gx += gr[t] * (xr[t] - m) * is;
          }
        }
        if (gbeta) gbeta[c] += sum_g;
        if (ggamma) ggamma[c] += sum_gx;
        if (gx) {
          const double a = pg[c] * is / n;
          for (int b = 0; b < batch; ++b) {
            const double* gr = go + b * row + c * per_ch;
            const double* xr = px + b * row + c * per_ch;
            double* gxr = gx + b * row + c * per_ch;
            for (int t = 0; t < time; ++t) {
              double xhat = (xr[t] - m) * is;
              gxr[t] += a * (n * gr[t] - sum_g - xhat * sum_gx);
            }
          }
        }
      }
    });
  } else {
    autograd::record("batchnorm1d", {x, gamma, beta}, out,
                     [x, gamma, beta, out, mean, invstd]() {
      const int batch = x.dim(0), channels = x.dim(1), time = x.dim(2);
      const std::size_t per_ch = static_cast<std::size_t>(time);
      const std::size_t row = static_cast<std::size_t>(channels) * per_ch;
      const double* go = out.grad_buffer();
      const double* px = x.data();
      const double* pg = gamma.data();
      double* ggamma = gamma.requires_grad() ? gamma.grad_buffer() : nullptr;
      double* gbeta = beta.requires_grad() ? beta.grad_buffer() : nullptr;
      double* gx = x.requires_grad() ? x.grad_buffer() : nullptr;

      for (int c = 0; c < channels; ++c) {
        const double m = mean[c], is = invstd[c];
        const double a = pg[c] * is;
        for (int b = 0; b < batch; ++b) {
          const double* gr = go + b * row + c * per_ch;
          const double* xr = px + b * row + c * per_ch;
          if (gx) {
            double* gxr = gx + b * row + c * per_ch;
            for (int t = 0; t < time; ++t) gxr[t] += a * gr[t];
          }
          if (ggamma || gbeta) {
            double sg = 0.0, sgx = 0.0;
            for (int t = 0; t < time; ++t) {
              sg += gr[t];
              sgx += gr[t] * (xr[t] - m) * is;
            }
            if (gbeta) gbeta[c] += sg;
            if (ggamma) ggamma[c] += sgx;
          }
        }
      }
    });
  }
  return out;
}

Tensor maxpool1d(const Tensor& x, int d_pool) {
  expect_3d("maxpool1d", x);
  if (d_pool < 1) throw ContractError("maxpool1d: d_pool must be >= 1");
  const int batch = x.dim(0), channels = x.dim(1), time = x.dim(2);
  const int t_out = time / d_pool;
  Tensor out({batch, channels, t_out});

  const double* px = x.data();
  double* po = out.data();
  // Flat input index of each window's (first) max, for gradient routing.
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  std::size_t rows = static_cast<std::size_t>(batch) * channels;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = px + r * time;
    for (int t = 0; t < t_out; ++t) {
      int start = t * d_pool;
      int best = start;
      for (int j = start + 1; j < start + d_pool; ++j)
        if (xr[j] > xr[best]) best = j;
      po[r * t_out + t] = xr[best];
      (*argmax)[r * t_out + t] = r * time + best;
    }
  }

  autograd::record("maxpool1d", {x}, out, [x, out, argmax]() {
    const double* go = out.grad_buffer();
    double* gx = x.grad_buffer();
    for (std::size_t i = 0; i < out.size(); ++i) gx[(*argmax)[i]] += go[i];
  });
  return out;
}

Tensor global_avgpool(const Tensor& x) {
  expect_3d("global_avgpool", x);
  const int batch = x.dim(0), channels = x.dim(1), time = x.dim(2);
  Tensor out({batch, channels});
  const double* px = x.data();
  double* po = out.data();
  const double inv = 1.0 / time;
  std::size_t rows = static_cast<std::size_t>(batch) * channels;
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* xr = px + r * time;
    for (int t = 0; t < time; ++t) acc += xr[t];
    po[r] = acc * inv;
  }
  autograd::record("global_avgpool", {x}, out, [x, out, rows, time, inv]() {
    const double* go = out.grad_buffer();
    double* gx = x.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = go[r] * inv;
      double* gxr = gx + r * time;
      for (int t = 0; t < time; ++t) gxr[t] += g;
    }
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.ndim() != 2 || W.ndim() != 2 || b.ndim() != 1 || x.dim(1) != W.dim(1) ||
      W.dim(0) != b.dim(0))
    throw ShapeError("linear: incompatible shapes x " + shape_to_string(x.shape()) +
                     ", W " + shape_to_string(W.shape()) + ", b " +
                     shape_to_string(b.shape()));
  const int batch = x.dim(0), in = x.dim(1), outd = W.dim(0);
  Tensor out({batch, outd});
  const double* px = x.data();
  const double* pw = W.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int i = 0; i < batch; ++i) {
    const double* xr = px + static_cast<std::size_t>(i) * in;
    for (int o = 0; o < outd; ++o) {
      const double* wr = pw + static_cast<std::size_t>(o) * in;
      double acc = pb[o];
      for (int j = 0; j < in; ++j) acc += xr[j] * wr[j];
      po[static_cast<std::size_t>(i) * outd + o] = acc;
    }
  }
  autograd::record("linear", {x, W, b}, out, [x, W, b, out]() {
    const int batch = x.dim(0), in = x.dim(1), outd = W.dim(0);
    const double* go = out.grad_buffer();
    const double* px = x.data();
    const double* pw = W.data();
    double* gx = x.requires_grad() ? x.grad_buffer() : nullptr;
    double* gw = W.requires_grad() ? W.grad_buffer() : nullptr;
    double* gb = b.requires_grad() ? b.grad_buffer() : nullptr;
    for (int i = 0; i < batch; ++i) {
      const double* gr = go + static_cast<std::size_t>(i) * outd;
      const double* xr = px + static_cast<std::size_t>(i) * in;
      for (int o = 0; o < outd; ++o) {
        const double g = gr[o];
        if (gb) gb[o] += g;
        if (gx) {
          const double* wr = pw + static_cast<std::size_t>(o) * in;
          double* gxr = gx + static_cast<std::size_t>(i) * in;
          for (int j = 0; j < in; ++j) gxr[j] += g * wr[j];
        }
        if (gw) {
          double* gwr = gw + static_cast<std::size_t>(o) * in;
          for (int j = 0; j < in; ++j) gwr[j] += g * xr[j];
        }
      }
    }
  });
  return out;
}

Tensor residual_block(const Tensor& x, ResidualBlockParams& p, Mode mode) {
  expect_3d("residual_block", x);
  if (x.dim(1) != p.d_in)
    throw ShapeError("residual_block: input has " + std::to_string(x.dim(1)) +
                     " channels, block expects " + std::to_string(p.d_in));
  Tensor h = conv1d(x, p.conv1);
  h = batchnorm1d(h, p.bn1, mode);
  h = relu(h);
  h = conv1d(h, p.conv2);
  h = batchnorm1d(h, p.bn2, mode);
  Tensor skip = conv1d(x, p.identity_conv);
  Tensor y = relu(add(h, skip));
  return maxpool1d(y, p.d_pool);
}

Tensor dwsep_block(const Tensor& x, DwSepBlockParams& p, Mode mode) {
  expect_3d("dwsep_block", x);
  const int in_ch = p.depthwise.weight.dim(0);
  const int out_ch = p.pointwise.weight.dim(0);
  if (x.dim(1) != in_ch)
    throw ShapeError("dwsep_block: input has " + std::to_string(x.dim(1)) +
                     " channels, block expects " + std::to_string(in_ch));
  if (in_ch != out_ch && !p.skip)
    throw ShapeError("dwsep_block: channel change " + std::to_string(in_ch) + " -> " +
                     std::to_string(out_ch) + " requires a skip projection");
  Tensor h = depthwise_conv1d(x, p.depthwise);
  h = batchnorm1d(h, p.bn_dw, mode);
  h = relu(h);
  h = conv1d(h, p.pointwise);
  h = batchnorm1d(h, p.bn_pw, mode);
  Tensor skip = p.skip ? conv1d(x, *p.skip) : x;
  return relu(add(h, skip));
}

Conv1dParams make_conv1d(int in_ch, int out_ch, int kernel, int stride, int padding,
                         Rng& rng) {
  double bound = std::sqrt(1.0 / (static_cast<double>(in_ch) * kernel));
  Conv1dParams p;
  p.weight = Tensor::uniform({out_ch, in_ch, kernel}, -bound, bound, rng, true);
  p.bias = Tensor::uniform({out_ch}, -bound, bound, rng, true);
  p.stride = stride;
  p.padding = padding;
  return p;
}

Conv1dParams make_depthwise_conv1d(int channels, int kernel, int stride, int padding,
                                   Rng& rng) {
  double bound = std::sqrt(1.0 / kernel);
  Conv1dParams p;
  p.weight = Tensor::uniform({channels, 1, kernel}, -bound, bound, rng, true);
  p.bias = Tensor::uniform({channels}, -bound, bound, rng, true);
  p.stride = stride;
  p.padding = padding;
  return p;
}

BatchNorm1dParams make_batchnorm1d(int channels) {
  BatchNorm1dParams p;
  p.gamma = Tensor({channels}, 1.0, true);
  p.beta = Tensor({channels}, 0.0, true);
  p.running_mean = Tensor({channels}, 0.0);
  p.running_var = Tensor({channels}, 1.0);
  return p;
}

ResidualBlockParams make_residual_block(int d_in, int d_out, int d_pool, Rng& rng) {
  ResidualBlockParams p;
  p.d_in = d_in;
  p.d_out = d_out;
  p.d_pool = d_pool;
  p.conv1 = make_conv1d(d_in, d_out, 3, 1, 1, rng);
  p.conv2 = make_conv1d(d_out, d_out, 3, 1, 1, rng);
  p.identity_conv = make_conv1d(d_in, d_out, 1, 1, 0, rng);
  p.bn1 = make_batchnorm1d(d_out);
  p.bn2 = make_batchnorm1d(d_out);
  return p;
}

DwSepBlockParams make_dwsep_block(int in_ch, int out_ch, Rng& rng) {
  DwSepBlockParams p;
  p.depthwise = make_depthwise_conv1d(in_ch, 3, 1, 1, rng);
  p.pointwise = make_conv1d(in_ch, out_ch, 1, 1, 0, rng);
  if (in_ch != out_ch) p.skip = make_conv1d(in_ch, out_ch, 1, 1, 0, rng);
  p.bn_dw = make_batchnorm1d(in_ch);
  p.bn_pw = make_batchnorm1d(out_ch);
  return p;
}

void collect_params(const std::string& prefix, const Conv1dParams& p,
                    NamedTensors& learnable, NamedTensors& state) {
  (void)state;
  learnable.emplace_back(prefix + ".weight", p.weight);
  learnable.emplace_back(prefix + ".bias", p.bias);
}

void collect_params(const std::string& prefix, const BatchNorm1dParams& p,
                    NamedTensors& learnable, NamedTensors& state) {
  learnable.emplace_back(prefix + ".gamma", p.gamma);
  learnable.emplace_back(prefix + ".beta", p.beta);
  state.emplace_back(prefix + ".running_mean", p.running_mean);
  state.emplace_back(prefix + ".running_var", p.running_var);
}

void collect_params(const std::string& prefix, const ResidualBlockParams& p,
                    NamedTensors& learnable, NamedTensors& state) {
  collect_params(prefix + ".conv1", p.conv1, learnable, state);
  collect_params(prefix + ".bn1", p.bn1, learnable, state);
  collect_params(prefix + ".conv2", p.conv2, learnable, state);
  collect_params(prefix + ".bn2", p.bn2, learnable, state);
  collect_params(prefix + ".identity_conv", p.identity_conv, learnable, state);
}

void collect_params(const std::string& prefix, const DwSepBlockParams& p,
                    NamedTensors& learnable, NamedTensors& state) {
  collect_params(prefix + ".depthwise", p.depthwise, learnable, state);
  collect_params(prefix + ".bn_dw", p.bn_dw, learnable, state);
  collect_params(prefix + ".pointwise", p.pointwise, learnable, state);
  collect_params(prefix + ".bn_pw", p.bn_pw, learnable, state);
  if (p.skip) collect_params(prefix + ".skip", *p.skip, learnable, state);
}

}  // namespace fusionact
