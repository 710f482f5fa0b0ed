#include <doctest.h>

#include <cmath>
#include <vector>

#include "fusionact/nn.hpp"
#include "oracles.hpp"

using namespace fusionact;

namespace {

Conv1dParams fixed_conv(Shape wshape, std::vector<double> w, std::vector<double> b,
                        int stride, int pad) {
  Conv1dParams p;
  p.weight = Tensor::from(std::move(wshape), std::move(w));
  p.bias = Tensor::from({p.weight.dim(0)}, std::move(b));
  p.stride = stride;
  p.padding = pad;
  return p;
}

// Running stats chosen so eval-mode normalization is the exact identity
// (variance + eps == 1).
BatchNorm1dParams neutral_bn(int channels) {
  BatchNorm1dParams p = make_batchnorm1d(channels);
  for (int c = 0; c < channels; ++c) p.running_var.data()[c] = 1.0 - p.eps;
  return p;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("conv1d matches hand-worked edge filter") {
  Tensor x = Tensor::from({1, 1, 5}, {1, 2, 3, 4, 5});
  Conv1dParams p = fixed_conv({1, 1, 3}, {1, 0, -1}, {0}, 1, 1);
  Tensor y = conv1d(x, p);
  CHECK(y.shape() == Shape{1, 1, 5});
  CHECK(y.values() == std::vector<double>{-2, -2, -2, -2, 4});
}

TEST_CASE("conv1d with identity kernel reproduces the input") {
  Rng rng(3);
  Tensor x = Tensor::uniform({2, 1, 7}, -1, 1, rng);
  Conv1dParams p = fixed_conv({1, 1, 3}, {0, 1, 0}, {0}, 1, 1);
  CHECK(max_abs_diff(conv1d(x, p).values(), x.values()) == 0.0);
}

TEST_CASE("conv1d rejects malformed calls") {
  Tensor x({2, 3, 8});
  Rng rng(1);
  CHECK_THROWS_AS(conv1d(x, make_conv1d(4, 2, 3, 1, 1, rng)), ShapeError);
  CHECK_THROWS_AS(conv1d(Tensor({3, 8}), make_conv1d(3, 2, 3, 1, 1, rng)), ShapeError);
  CHECK_THROWS_AS(conv1d(Tensor({2, 3, 2}), make_conv1d(3, 2, 5, 1, 1, rng)), ShapeError);
}

TEST_CASE("conv1d and depthwise match the brute-force oracle on random instances") {
  Rng rng(2026);
  for (int trial = 0; trial < 100; ++trial) {
    int batch = 1 + static_cast<int>(rng.below(4));
    int in_ch = 1 + static_cast<int>(rng.below(8));
    int out_ch = 1 + static_cast<int>(rng.below(8));
    int pad = static_cast<int>(rng.below(3));
    int stride = 1 + static_cast<int>(rng.below(3));
    int kernel = 1 + static_cast<int>(rng.below(5));
    int min_time = std::max(1, kernel - 2 * pad);
    int time = min_time + static_cast<int>(rng.below(static_cast<std::size_t>(33 - min_time)));

    Tensor x = Tensor::uniform({batch, in_ch, time}, -2, 2, rng);
    Conv1dParams p = make_conv1d(in_ch, out_ch, kernel, stride, pad, rng);
    Tensor y = conv1d(x, p);
    auto ref = oracles::conv1d(x.values(), batch, in_ch, time, p.weight.values(),
                               out_ch, kernel, p.bias.values(), stride, pad);
    CHECK(y.dim(2) == (time + 2 * pad - kernel) / stride + 1);
    CHECK(max_abs_diff(y.values(), ref) <= 1e-12);

    Conv1dParams dp = make_depthwise_conv1d(in_ch, kernel, stride, pad, rng);
    Tensor dy = depthwise_conv1d(x, dp);
    auto dref = oracles::depthwise_conv1d(x.values(), batch, in_ch, time,
                                          dp.weight.values(), kernel,
                                          dp.bias.values(), stride, pad);
    CHECK(max_abs_diff(dy.values(), dref) <= 1e-12);
  }
}

TEST_CASE("depthwise_conv1d filters channels independently") {
  Tensor x = Tensor::from({1, 2, 4}, {1, 2, 3, 4, 10, 20, 30, 40});
  // Channel 0 smooths, channel 1 differentiates; no crosstalk.
  Conv1dParams p = fixed_conv({2, 1, 3}, {0.5, 0, 0.5, -1, 0, 1}, {0, 0}, 1, 1);
  Tensor y = depthwise_conv1d(x, p);
  CHECK(y.values() == std::vector<double>{1, 2, 3, 1.5, 20, 20, 20, -30});
  CHECK_THROWS_AS(depthwise_conv1d(x, fixed_conv({2, 2, 3}, std::vector<double>(12, 0.0),
                                                 {0, 0}, 1, 1)),
                  ShapeError);
}

TEST_CASE("batchnorm1d train mode normalizes per channel and tracks running stats") {
  Rng rng(5);
  Tensor x = Tensor::uniform({4, 3, 10}, -3, 7, rng);
  BatchNorm1dParams p = make_batchnorm1d(3);
  Tensor y = batchnorm1d(x, p, Mode::train);

  const int n = 4 * 10;
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0, xmean = 0.0, xvar = 0.0;
    for (int b = 0; b < 4; ++b)
      for (int t = 0; t < 10; ++t) {
        mean += y.values()[(b * 3 + c) * 10 + t];
        xmean += x.values()[(b * 3 + c) * 10 + t];
      }
    mean /= n;
    xmean /= n;
    for (int b = 0; b < 4; ++b)
      for (int t = 0; t < 10; ++t) {
        double d = y.values()[(b * 3 + c) * 10 + t] - mean;
        var += d * d;
        double xd = x.values()[(b * 3 + c) * 10 + t] - xmean;
        xvar += xd * xd;
      }
    var /= n;
    xvar /= n;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
    // One momentum-0.1 update from the (0, 1) initialization.
    CHECK(p.running_mean.data()[c] == doctest::Approx(0.1 * xmean).epsilon(1e-12));
    CHECK(p.running_var.data()[c] == doctest::Approx(0.9 + 0.1 * xvar).epsilon(1e-12));
  }
}

TEST_CASE("batchnorm1d eval mode with unit stats is the identity") {
  Rng rng(6);
  Tensor x = Tensor::uniform({2, 3, 5}, -1, 1, rng);
  BatchNorm1dParams p = neutral_bn(3);
  CHECK(max_abs_diff(batchnorm1d(x, p, Mode::eval).values(), x.values()) < 1e-12);
}

TEST_CASE("batchnorm1d maps a constant channel to beta") {
  Tensor x({3, 2, 4}, 5.0);
  BatchNorm1dParams p = make_batchnorm1d(2);
  p.beta.data()[0] = -1.5;
  p.beta.data()[1] = 2.5;
  Tensor y = batchnorm1d(x, p, Mode::train);
  for (int b = 0; b < 3; ++b)
    for (int t = 0; t < 4; ++t) {
      CHECK(y.values()[(b * 2 + 0) * 4 + t] == doctest::Approx(-1.5).epsilon(1e-12));
      CHECK(y.values()[(b * 2 + 1) * 4 + t] == doctest::Approx(2.5).epsilon(1e-12));
    }
}

TEST_CASE("batchnorm1d train mode rejects batches of one") {
  Tensor x({1, 2, 4}, 1.0);
  BatchNorm1dParams p = make_batchnorm1d(2);
  CHECK_THROWS_AS(batchnorm1d(x, p, Mode::train), ContractError);
  CHECK_NOTHROW(batchnorm1d(x, p, Mode::eval));
}

TEST_CASE("batchnorm1d eval mode is batch-size independent") {
  Rng rng(7);
  Tensor x = Tensor::uniform({6, 4, 9}, -2, 2, rng);
  BatchNorm1dParams p = make_batchnorm1d(4);
  // Give the running stats something non-trivial first.
  batchnorm1d(x, p, Mode::train);

  Tensor whole = batchnorm1d(x, p, Mode::eval);
  for (int b = 0; b < 6; ++b) {
    Tensor one({1, 4, 9});
    std::copy(x.data() + b * 36, x.data() + (b + 1) * 36, one.data());
    Tensor y = batchnorm1d(one, p, Mode::eval);
    for (int i = 0; i < 36; ++i)
      CHECK(std::abs(y.values()[i] - whole.values()[b * 36 + i]) < 1e-10);
  }
}

TEST_CASE("maxpool1d takes window maxima and drops the remainder") {
  Tensor x = Tensor::from({1, 1, 4}, {1, 3, 2, 5});
  CHECK(maxpool1d(x, 2).values() == std::vector<double>{3, 5});
  CHECK(maxpool1d(x, 1).values() == x.values());

  Tensor odd = Tensor::from({1, 1, 5}, {1, 3, 2, 5, 99});
  Tensor y = maxpool1d(odd, 2);
  CHECK(y.shape() == Shape{1, 1, 2});
  CHECK(y.values() == std::vector<double>{3, 5});
  CHECK_THROWS_AS(maxpool1d(x, 0), ContractError);
}

TEST_CASE("maxpool1d routes gradient to the first maximum on ties") {
  Tensor x = Tensor::from({1, 1, 4}, {2, 2, 1, 7}, true);
  Graph graph;
  {
    GraphScope scope(graph);
    graph.backward(sum(maxpool1d(x, 2)));
  }
  CHECK(x.grad() == std::vector<double>{1, 0, 0, 1});
}

TEST_CASE("global_avgpool averages over time") {
  Tensor x = Tensor::from({1, 1, 3}, {2, 4, 6});
  CHECK(global_avgpool(x).values() == std::vector<double>{4});

  Tensor c({2, 3, 7}, 1.25);
  Tensor cg = global_avgpool(c);
  for (double v : cg.values()) CHECK(v == doctest::Approx(1.25).epsilon(1e-15));

  Rng rng(8);
  Tensor r = Tensor::uniform({2, 2, 11}, -5, 5, rng);
  Tensor g = global_avgpool(r);
  for (int b = 0; b < 2; ++b)
    for (int ch = 0; ch < 2; ++ch) {
      double s = 0.0;
      for (int t = 0; t < 11; ++t) s += r.values()[(b * 2 + ch) * 11 + t];
      CHECK(std::abs(g.values()[b * 2 + ch] - s / 11.0) <= 1e-12);
    }
}

TEST_CASE("linear computes x W^T + b") {
  Tensor x = Tensor::from({1, 2}, {1, 2});
  Tensor w = Tensor::from({1, 2}, {3, 4});
  Tensor b = Tensor::from({1}, {5});
  CHECK(linear(x, w, b).values() == std::vector<double>{16});

  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor zb({2});
  Tensor v = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK(linear(v, eye, zb).values() == v.values());

  Rng rng(9);
  Tensor rx = Tensor::uniform({4, 7}, -1, 1, rng);
  Tensor rw = Tensor::uniform({5, 7}, -1, 1, rng);
  Tensor rb = Tensor::uniform({5}, -1, 1, rng);
  auto ref = oracles::linear(rx.values(), 4, 7, rw.values(), 5, rb.values());
  CHECK(max_abs_diff(linear(rx, rw, rb).values(), ref) <= 1e-12);
  CHECK_THROWS_AS(linear(rx, Tensor({5, 6}), rb), ShapeError);
}

TEST_CASE("residual_block obeys the shape contract") {
  Rng rng(10);
  ResidualBlockParams p = make_residual_block(3, 5, 2, rng);
  Tensor x = Tensor::uniform({8, 3, 128}, -1, 1, rng);
  Tensor y = residual_block(x, p, Mode::train);
  CHECK(y.shape() == Shape{8, 5, 64});
  CHECK_THROWS_AS(residual_block(Tensor({8, 4, 128}), p, Mode::train), ShapeError);
}

TEST_CASE("residual_block with a dead residual branch is relu of the skip") {
  int ch = 3;
  ResidualBlockParams p;
  p.d_in = ch;
  p.d_out = ch;
  p.d_pool = 1;
  p.conv1 = fixed_conv({ch, ch, 3}, std::vector<double>(ch * ch * 3, 0.0),
                       std::vector<double>(ch, 0.0), 1, 1);
  p.conv2 = p.conv1;
  std::vector<double> eye(ch * ch, 0.0);
  for (int c = 0; c < ch; ++c) eye[c * ch + c] = 1.0;
  p.identity_conv = fixed_conv({ch, ch, 1}, eye, std::vector<double>(ch, 0.0), 1, 0);
  p.bn1 = neutral_bn(ch);
  p.bn2 = neutral_bn(ch);

  Rng rng(11);
  Tensor x = Tensor::uniform({2, ch, 6}, -1, 1, rng);
  Tensor y = residual_block(x, p, Mode::eval);
  Tensor expected = relu(x);
  CHECK(max_abs_diff(y.values(), expected.values()) < 1e-12);
}

TEST_CASE("dwsep_block composes identity pieces into relu(2x)") {
  int ch = 2;
  DwSepBlockParams p;
  p.depthwise = fixed_conv({ch, 1, 3}, {0, 1, 0, 0, 1, 0}, {0, 0}, 1, 1);
  std::vector<double> eye(ch * ch, 0.0);
  for (int c = 0; c < ch; ++c) eye[c * ch + c] = 1.0;
  p.pointwise = fixed_conv({ch, ch, 1}, eye, std::vector<double>(ch, 0.0), 1, 0);
  p.bn_dw = neutral_bn(ch);
  p.bn_pw = neutral_bn(ch);

  Rng rng(12);
  Tensor x = Tensor::uniform({2, ch, 6}, -1, 1, rng);
  Tensor y = dwsep_block(x, p, Mode::eval);
  Tensor expected = relu(add(x, x));
  CHECK(max_abs_diff(y.values(), expected.values()) < 1e-12);
}

TEST_CASE("dwsep_block preserves length and projects the skip on channel change") {
  Rng rng(13);
  DwSepBlockParams p = make_dwsep_block(3, 8, rng);
  REQUIRE(p.skip.has_value());
  Tensor x = Tensor::uniform({4, 3, 128}, -1, 1, rng);
  CHECK(dwsep_block(x, p, Mode::train).shape() == Shape{4, 8, 128});

  DwSepBlockParams same = make_dwsep_block(3, 3, rng);
  CHECK(!same.skip.has_value());
  CHECK(dwsep_block(x, same, Mode::train).shape() == Shape{4, 3, 128});

  DwSepBlockParams broken = make_dwsep_block(3, 8, rng);
  broken.skip.reset();
  CHECK_THROWS_AS(dwsep_block(x, broken, Mode::train), ShapeError);
}

TEST_CASE("every layer passes gradient checks against finite differences") {
  for (unsigned long seed : {21ul, 22ul, 23ul}) {
    Rng rng(seed);
    Tensor x = Tensor::uniform({2, 3, 8}, 0.2, 1.7, rng);

    Conv1dParams cp = make_conv1d(3, 4, 3, 1, 1, rng);
    auto conv_in = [&cp](const Tensor& t) { return sum(conv1d(t, cp)); };
    CHECK(grad_check(conv_in, x, 1e-5) < 1e-4);
    auto conv_w = [&cp, &x](const Tensor& w) {
      Conv1dParams q = cp;
      q.weight = w;
      return sum(mul(conv1d(x, q), conv1d(x, q)));
    };
    CHECK(grad_check(conv_w, cp.weight, 1e-5) < 1e-4);

    Conv1dParams dp = make_depthwise_conv1d(3, 3, 1, 1, rng);
    auto dw_in = [&dp](const Tensor& t) { return sum(mul(depthwise_conv1d(t, dp),
                                                         depthwise_conv1d(t, dp))); };
    CHECK(grad_check(dw_in, x, 1e-5) < 1e-4);

    BatchNorm1dParams bp = make_batchnorm1d(3);
    // A plain sum of squares of normalized output is invariant to the input
    // (it collapses to a function of gamma/beta alone), so weight the
    // elements to give the gradient something to see.
    Tensor cw = Tensor::uniform(x.shape(), 0.5, 1.5, rng);
    auto bn_in = [&bp, &cw](const Tensor& t) {
      Tensor y = batchnorm1d(t, bp, Mode::train);
      return sum(mul(cw, mul(y, y)));
    };
    CHECK(grad_check(bn_in, x, 1e-5) < 1e-4);
    auto bn_gamma = [&bp, &x, &cw](const Tensor& g) {
      BatchNorm1dParams q = bp;
      q.gamma = g;
      Tensor y = batchnorm1d(x, q, Mode::train);
      return sum(mul(cw, mul(y, y)));
    };
    CHECK(grad_check(bn_gamma, bp.gamma, 1e-5) < 1e-4);

    // Inputs spaced so no window has a near-tie; pooling kinks would poison
    // the finite differences.
    Tensor spaced = Tensor::uniform({1, 2, 8}, 0.0, 1.0, rng);
    for (std::size_t i = 0; i < spaced.size(); ++i)
      spaced.data()[i] += 3.0 * static_cast<double>(i % 4);
    auto pool_in = [](const Tensor& t) { return sum(mul(maxpool1d(t, 2), maxpool1d(t, 2))); };
    CHECK(grad_check(pool_in, spaced, 1e-5) < 1e-4);

    auto gap_in = [](const Tensor& t) {
      Tensor y = global_avgpool(t);
      return sum(mul(y, y));
    };
    CHECK(grad_check(gap_in, x, 1e-5) < 1e-4);

    Tensor flat = Tensor::uniform({3, 5}, -1, 1, rng);
    Tensor lw = Tensor::uniform({4, 5}, -1, 1, rng);
    Tensor lb = Tensor::uniform({4}, -1, 1, rng);
    auto lin_in = [&lw, &lb](const Tensor& t) { return sum(mul(linear(t, lw, lb), linear(t, lw, lb))); };
    CHECK(grad_check(lin_in, flat, 1e-5) < 1e-4);
    auto lin_w = [&flat, &lb](const Tensor& w) { return sum(mul(linear(flat, w, lb), linear(flat, w, lb))); };
    CHECK(grad_check(lin_w, lw, 1e-5) < 1e-4);
  }
}

TEST_CASE("composite blocks pass gradient checks on every parameter") {
  Rng rng(31);
  Tensor x = Tensor::uniform({2, 3, 8}, 0.3, 1.9, rng);

  ResidualBlockParams rb = make_residual_block(3, 4, 2, rng);
  auto rb_loss = [&rb](const Tensor& t) { return sum(residual_block(t, rb, Mode::train)); };
  CHECK(grad_check(rb_loss, x, 1e-5) < 1e-4);

  NamedTensors learn, state;
  collect_params("rb", rb, learn, state);
  CHECK(learn.size() == 10);
  CHECK(state.size() == 4);

  // Temporarily rebinds one block member to the probe tensor so grad_check
  // can wiggle it while the rest of the block stays put.
  auto check_rb_param = [&rb, &x](Tensor& slot) {
    auto f = [&rb, &x, &slot](const Tensor& w) {
      Tensor saved = slot;
      slot = w;
      Tensor loss = sum(residual_block(x, rb, Mode::train));
      slot = saved;
      return loss;
    };
    return grad_check(f, slot, 1e-5);
  };
  // A conv bias feeding train-mode batchnorm has identically zero gradient
  // (the batch mean removes any per-channel shift), so relative error there
  // only measures float noise; assert the zero directly instead.
  auto rb_bias_grad = [&rb, &x](Tensor& slot) {
    Tensor probe = slot.clone();
    probe.set_requires_grad(true);
    probe.zero_grad();
    Tensor saved = slot;
    slot = probe;
    Graph graph;
    {
      GraphScope scope(graph);
      graph.backward(sum(residual_block(x, rb, Mode::train)));
    }
    slot = saved;
    double m = 0.0;
    if (probe.has_grad())
      for (double v : probe.grad()) m = std::max(m, std::abs(v));
    return m;
  };

  CHECK(check_rb_param(rb.conv1.weight) < 1e-4);
  CHECK(rb_bias_grad(rb.conv1.bias) < 1e-10);
  CHECK(check_rb_param(rb.conv2.weight) < 1e-4);
  CHECK(rb_bias_grad(rb.conv2.bias) < 1e-10);
  CHECK(check_rb_param(rb.identity_conv.weight) < 1e-4);
  CHECK(check_rb_param(rb.identity_conv.bias) < 1e-4);
  CHECK(check_rb_param(rb.bn1.gamma) < 1e-4);
  CHECK(check_rb_param(rb.bn1.beta) < 1e-4);
  CHECK(check_rb_param(rb.bn2.gamma) < 1e-4);
  CHECK(check_rb_param(rb.bn2.beta) < 1e-4);

  DwSepBlockParams dw = make_dwsep_block(3, 5, rng);
  auto dw_loss = [&dw](const Tensor& t) { return sum(dwsep_block(t, dw, Mode::train)); };
  CHECK(grad_check(dw_loss, x, 1e-5) < 1e-4);

  auto check_dw_param = [&dw, &x](Tensor& slot) {
    auto f = [&dw, &x, &slot](const Tensor& w) {
      Tensor saved = slot;
      slot = w;
      Tensor loss = sum(dwsep_block(x, dw, Mode::train));
      slot = saved;
      return loss;
    };
    return grad_check(f, slot, 1e-5);
  };
  auto dw_bias_grad = [&dw, &x](Tensor& slot) {
    Tensor probe = slot.clone();
    probe.set_requires_grad(true);
    probe.zero_grad();
    Tensor saved = slot;
    slot = probe;
    Graph graph;
    {
      GraphScope scope(graph);
      graph.backward(sum(dwsep_block(x, dw, Mode::train)));
    }
    slot = saved;
    double m = 0.0;
    if (probe.has_grad())
      for (double v : probe.grad()) m = std::max(m, std::abs(v));
    return m;
  };

  CHECK(check_dw_param(dw.depthwise.weight) < 1e-4);
  CHECK(dw_bias_grad(dw.depthwise.bias) < 1e-10);
  CHECK(check_dw_param(dw.pointwise.weight) < 1e-4);
  CHECK(dw_bias_grad(dw.pointwise.bias) < 1e-10);
  CHECK(check_dw_param(dw.skip->weight) < 1e-4);
  CHECK(check_dw_param(dw.skip->bias) < 1e-4);
  CHECK(check_dw_param(dw.bn_dw.gamma) < 1e-4);
  CHECK(check_dw_param(dw.bn_pw.beta) < 1e-4);
}
