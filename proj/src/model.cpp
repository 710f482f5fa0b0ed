#include "fusionact/model.hpp"

#include <cmath>
#include <utility>

#include "fusionact/common.hpp"

namespace fusionact {

namespace {

void check_pathway_config(const PathwayConfig& cfg) {
  if (cfg.block_specs.empty())
    throw ContractError("pathway needs at least one block");
  if (cfg.num_outputs < 1)
    throw ContractError("pathway num_outputs must be >= 1");
  for (std::size_t i = 0; i + 1 < cfg.block_specs.size(); ++i)
    if (cfg.block_specs[i][1] != cfg.block_specs[i + 1][0])
      throw ContractError("pathway blocks do not chain: block " +
                          std::to_string(i) + " ends at " +
                          std::to_string(cfg.block_specs[i][1]) + " but block " +
                          std::to_string(i + 1) + " starts at " +
                          std::to_string(cfg.block_specs[i + 1][0]));
}

void check_guidance_config(const GuidanceConfig& cfg) {
  if (cfg.dwsep_specs.empty())
    throw ContractError("guidance needs at least one block");
  for (std::size_t i = 0; i + 1 < cfg.dwsep_specs.size(); ++i)
    if (cfg.dwsep_specs[i][1] != cfg.dwsep_specs[i + 1][0])
      throw ContractError("guidance blocks do not chain at block " +
                          std::to_string(i));
}

std::pair<Tensor, Tensor> make_head(int d_in, int d_out, Rng& rng) {
  double bound = std::sqrt(1.0 / d_in);
  Tensor w = Tensor::uniform({d_out, d_in}, -bound, bound, rng, true);
  Tensor b = Tensor::uniform({d_out}, -bound, bound, rng, true);
  return {w, b};
}

}  // namespace

bool FusionModel::loaded() const {
  return !class_order.empty() && n_static > 0 &&
         n_static < static_cast<int>(class_order.size()) &&
         !static_params.blocks.empty() && static_params.head_weight.defined() &&
         !dynamic_params.blocks.empty() &&
         dynamic_params.head_weight.defined() &&
         !guidance_params.blocks.empty() &&
         guidance_params.head_weight.defined();
}

PathwayConfig default_pathway_config(int in_channels, int num_outputs) {
  PathwayConfig cfg;
  cfg.block_specs = {{in_channels, 64, 2}, {64, 128, 2}, {128, 256, 2}, {256, 256, 2}};
  cfg.num_outputs = num_outputs;
  return cfg;
}

GuidanceConfig default_guidance_config(int in_channels) {
  GuidanceConfig cfg;
  cfg.dwsep_specs = {{in_channels, 32}, {32, 64}, {64, 64}};
  return cfg;
}

PathwayParams make_pathway(const PathwayConfig& cfg, Rng& rng) {
  check_pathway_config(cfg);
  PathwayParams p;
  for (const auto& s : cfg.block_specs)
    p.blocks.push_back(make_residual_block(s[0], s[1], s[2], rng));
  auto [w, b] = make_head(cfg.block_specs.back()[1], cfg.num_outputs, rng);
  p.head_weight = w;
  p.head_bias = b;
  return p;
}

GuidanceParams make_guidance(const GuidanceConfig& cfg, Rng& rng) {
  check_guidance_config(cfg);
  GuidanceParams p;
  for (const auto& s : cfg.dwsep_specs)
    p.blocks.push_back(make_dwsep_block(s[0], s[1], rng));
  auto [w, b] = make_head(cfg.dwsep_specs.back()[1], 1, rng);
  p.head_weight = w;
  p.head_bias = b;
  return p;
}

FusionModel make_fusion_model(int in_channels, int window_len,
                              std::vector<std::string> class_order,
                              int n_static, Rng& rng) {
  int n = static_cast<int>(class_order.size());
  if (n_static < 1 || n - n_static < 1)
    throw ContractError("class_order must hold at least one static and one dynamic label");
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (class_order[i] == class_order[j])
        throw ContractError("duplicate class label: " + class_order[i]);

  FusionModel m;
  m.static_config = default_pathway_config(in_channels, n_static);
  m.dynamic_config = default_pathway_config(in_channels, n - n_static);
  m.guidance_config = default_guidance_config(in_channels);
  m.static_params = make_pathway(m.static_config, rng);
  m.dynamic_params = make_pathway(m.dynamic_config, rng);
  m.guidance_params = make_guidance(m.guidance_config, rng);
  m.class_order = std::move(class_order);
  m.n_static = n_static;
  m.in_channels = in_channels;
  m.window_len = window_len;
  return m;
}

Tensor pathway_forward(const Tensor& x, PathwayParams& p, Mode mode) {
  Tensor h = x;
  for (auto& block : p.blocks) h = residual_block(h, block, mode);
  Tensor logits = linear(global_avgpool(h), p.head_weight, p.head_bias);
  return softmax(logits, 1);
}

Tensor static_forward(const Tensor& x, FusionModel& m, Mode mode) {
  return pathway_forward(x, m.static_params, mode);
}

Tensor dynamic_forward(const Tensor& x, FusionModel& m, Mode mode) {
  return pathway_forward(x, m.dynamic_params, mode);
}

Tensor guidance_forward(const Tensor& x, FusionModel& m, Mode mode) {
  Tensor h = x;
  for (auto& block : m.guidance_params.blocks) h = dwsep_block(h, block, mode);
  Tensor z = linear(global_avgpool(h), m.guidance_params.head_weight,
                    m.guidance_params.head_bias);
  return sigmoid(z);
}

Tensor fuse(const Tensor& y_s, const Tensor& y_d, const Tensor& g_x) {
  if (y_s.ndim() != 2 || y_d.ndim() != 2)
    throw ShapeError("fuse expects 2-D probability tensors");
  if (g_x.ndim() != 2 || g_x.dim(1) != 1)
    throw ShapeError("fuse gate must be [batch, 1]");
  if (y_s.dim(0) != y_d.dim(0) || y_s.dim(0) != g_x.dim(0))
    throw ShapeError("fuse batch sizes disagree");
  return hconcat(scale_rows(y_s, g_x), scale_rows(y_d, rsub_scalar(1.0, g_x)));
}

Tensor fused_forward(const Tensor& x, FusionModel& m, Mode mode) {
  if (!m.loaded()) throw ContractError("model is not fully initialized");
  if (x.ndim() != 3 || x.dim(1) != m.in_channels || x.dim(2) != m.window_len)
    throw ShapeError("expected input [batch, " + std::to_string(m.in_channels) +
                     ", " + std::to_string(m.window_len) + "], got " +
                     shape_to_string(x.shape()));
  Tensor y_s = static_forward(x, m, mode);
  Tensor y_d = dynamic_forward(x, m, mode);
  if (y_s.dim(1) + y_d.dim(1) != static_cast<int>(m.class_order.size()))
    throw ShapeError("pathway outputs do not cover class_order");
  Tensor g = guidance_forward(x, m, mode);
  return fuse(y_s, y_d, g);
}

Tensor nll_loss(const Tensor& y_pred, const std::vector<int>& labels) {
  if (y_pred.ndim() != 2) throw ShapeError("nll_loss expects [batch, classes]");
  int batch = y_pred.dim(0);
  int classes = y_pred.dim(1);
  if (static_cast<int>(labels.size()) != batch)
    throw ContractError("nll_loss: " + std::to_string(labels.size()) +
                        " labels for batch " + std::to_string(batch));
  for (int i = 0; i < batch; ++i)
    if (labels[i] < 0 || labels[i] >= classes)
      throw ContractError("nll_loss: label " + std::to_string(labels[i]) +
                          " out of range [0, " + std::to_string(classes) + ")");

  constexpr double eps = 1e-12;
  const double* p = y_pred.data();
  double acc = 0;
  for (int i = 0; i < batch; ++i)
    acc -= std::log(p[static_cast<std::size_t>(i) * classes + labels[i]] + eps);
  Tensor out = Tensor::scalar(acc / batch);

  Tensor in = y_pred;
  std::vector<int> idx = labels;
  autograd::record("nll_loss", {y_pred}, out, [in, out, idx, batch, classes]() {
    double go = out.grad()[0];
    double* gp = in.grad_buffer();
    const double* pv = in.data();
    for (int i = 0; i < batch; ++i) {
      std::size_t at = static_cast<std::size_t>(i) * classes + idx[i];
      gp[at] -= go / (batch * (pv[at] + eps));
    }
  });
  return out;
}

std::vector<int> predict_classes(const Tensor& y_pred) {
  if (y_pred.ndim() != 2) throw ShapeError("predict expects [batch, classes]");
  int batch = y_pred.dim(0);
  int classes = y_pred.dim(1);
  const double* p = y_pred.data();
  std::vector<int> out(batch);
  for (int i = 0; i < batch; ++i) {
    const double* row = p + static_cast<std::size_t>(i) * classes;
    int best = 0;
    for (int c = 1; c < classes; ++c)
      if (row[c] > row[best]) best = c;  // ties keep the lower index
    out[i] = best;
  }
  return out;
}

std::string predict(const Tensor& x, FusionModel& m) {
  if (!m.loaded()) throw ContractError("model is not fully initialized");
  if (x.ndim() != 2)
    throw ShapeError("predict expects a single window [channels, time]");
  Tensor batched({1, x.dim(0), x.dim(1)});
  std::copy(x.data(), x.data() + x.size(), batched.data());
  Tensor y = fused_forward(batched, m, Mode::eval);
  return m.class_order[predict_classes(y)[0]];
}

void collect_params(const std::string& prefix, const PathwayParams& p,
                    NamedTensors& learnable, NamedTensors& state) {
  for (std::size_t i = 0; i < p.blocks.size(); ++i)
    collect_params(prefix + ".block" + std::to_string(i), p.blocks[i],
                   learnable, state);
  learnable.emplace_back(prefix + ".head.weight", p.head_weight);
  learnable.emplace_back(prefix + ".head.bias", p.head_bias);
}

void collect_params(const std::string& prefix, const GuidanceParams& p,
                    NamedTensors& learnable, NamedTensors& state) {
  for (std::size_t i = 0; i < p.blocks.size(); ++i)
    collect_params(prefix + ".block" + std::to_string(i), p.blocks[i],
                   learnable, state);
  learnable.emplace_back(prefix + ".head.weight", p.head_weight);
  learnable.emplace_back(prefix + ".head.bias", p.head_bias);
}

void collect_params(const FusionModel& m, NamedTensors& learnable,
                    NamedTensors& state) {
  collect_params("static", m.static_params, learnable, state);
  collect_params("dynamic", m.dynamic_params, learnable, state);
  collect_params("guidance", m.guidance_params, learnable, state);
}

}  // namespace fusionact
