#include "fusionact/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <utility>

#include "fusionact/common.hpp"

namespace fusionact {

namespace {

constexpr int kEvalBatch = 64;

void check_model_data(const FusionModel& m, const Dataset& d) {
  if (!m.loaded()) throw ContractError("model is not fully initialized");
  if (d.windows.empty()) throw ContractError("empty dataset");
  if (d.meta.channels != m.in_channels || d.meta.window_len != m.window_len)
    throw ContractError("dataset geometry [" + std::to_string(d.meta.channels) +
                        ", " + std::to_string(d.meta.window_len) +
                        "] does not match the model");
  if (d.meta.class_order != m.class_order || d.meta.n_static != m.n_static)
    throw ContractError("dataset class order does not match the model");
}

void check_cfg(const TrainConfig& cfg) {
  if (cfg.batch_size < 2)
    throw ContractError("batch_size must be >= 2 (batch statistics)");
  if (!(cfg.lr > 0)) throw ContractError("lr must be positive");
}

int resolve_epochs(const TrainConfig& cfg, int stage_default) {
  int e = cfg.epochs < 0 ? stage_default : cfg.epochs;
  if (e < 1) throw ContractError("epochs must be >= 1");
  return e;
}

// Hold out ~10% of subjects (at least one) for validation.
std::pair<Dataset, Dataset> carve_validation(const Dataset& d,
                                             std::uint64_t seed) {
  std::set<int> subjects;
  for (const Window& w : d.windows) subjects.insert(w.subject);
  int n = static_cast<int>(subjects.size());
  if (n < 2)
    throw ContractError("need at least two subjects to hold out validation");
  int n_val = std::max(1, static_cast<int>(std::lround(0.1 * n)));
  return subject_split(d, n - n_val, seed);
}

bool has_single_label(const Dataset& d) {
  std::set<int> seen;
  for (const Window& w : d.windows) seen.insert(w.label);
  return seen.size() < 2;
}

std::vector<std::vector<double>> snapshot(const NamedTensors& learnable,
                                          const NamedTensors& state) {
  std::vector<std::vector<double>> out;
  out.reserve(learnable.size() + state.size());
  for (const auto& [name, t] : learnable) out.push_back(t.values());
  for (const auto& [name, t] : state) out.push_back(t.values());
  return out;
}

void restore(const std::vector<std::vector<double>>& snap,
             const NamedTensors& learnable, const NamedTensors& state) {
  std::size_t i = 0;
  for (const auto& [name, t] : learnable) {
    Tensor h = t;
    std::copy(snap[i].begin(), snap[i].end(), h.data());
    ++i;
  }
  for (const auto& [name, t] : state) {
    Tensor h = t;
    std::copy(snap[i].begin(), snap[i].end(), h.data());
    ++i;
  }
}

void zero_grads(const NamedTensors& params) {
  for (const auto& [name, t] : params) {
    Tensor h = t;
    h.zero_grad();
  }
}

// Mean per-sample loss and accuracy of `fwd` over the whole split; labels
// shifted down by label_base.  Short final batch is kept (inference mode).
std::pair<double, double> eval_split(
    const Dataset& ds, int label_base,
    const std::function<Tensor(const Tensor&, const std::vector<int>&)>& fwd) {
  std::size_t total = ds.windows.size();
  double loss_sum = 0;
  long correct = 0;
  for (std::size_t start = 0; start < total; start += kEvalBatch) {
    std::size_t n = std::min<std::size_t>(kEvalBatch, total - start);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), static_cast<int>(start));
    auto [x, labels] = make_batch(ds, idx);
    for (int& l : labels) l -= label_base;
    Tensor y = fwd(x, idx);
    loss_sum += nll_loss(y, labels).item() * static_cast<double>(n);
    std::vector<int> preds = predict_classes(y);
    for (std::size_t i = 0; i < n; ++i)
      if (preds[i] == labels[i]) ++correct;
  }
  return {loss_sum / static_cast<double>(total),
          static_cast<double>(correct) / static_cast<double>(total)};
}

// Frozen pathways in inference mode are pure functions of the window, so
// their probability rows are computed once and indexed ever after.
struct ExpertCache {
  int ns = 0, nd = 0;
  std::vector<double> ys;  // [N, ns]
  std::vector<double> yd;  // [N, nd]

  void fill(const Dataset& ds, FusionModel& m) {
    ns = m.n_static;
    nd = m.n_dynamic();
    std::size_t total = ds.windows.size();
    ys.resize(total * ns);
    yd.resize(total * nd);
    for (std::size_t start = 0; start < total; start += kEvalBatch) {
      std::size_t n = std::min<std::size_t>(kEvalBatch, total - start);
      std::vector<int> idx(n);
      std::iota(idx.begin(), idx.end(), static_cast<int>(start));
      auto [x, labels] = make_batch(ds, idx);
      Tensor s = static_forward(x, m, Mode::eval);
      Tensor d = dynamic_forward(x, m, Mode::eval);
      std::copy(s.data(), s.data() + n * ns, ys.data() + start * ns);
      std::copy(d.data(), d.data() + n * nd, yd.data() + start * nd);
    }
  }

  std::pair<Tensor, Tensor> rows(const std::vector<int>& idx) const {
    int n = static_cast<int>(idx.size());
    Tensor s({n, ns}), d({n, nd});
    for (int i = 0; i < n; ++i) {
      std::copy(ys.begin() + static_cast<std::size_t>(idx[i]) * ns,
                ys.begin() + static_cast<std::size_t>(idx[i] + 1) * ns,
                s.data() + static_cast<std::size_t>(i) * ns);
      std::copy(yd.begin() + static_cast<std::size_t>(idx[i]) * nd,
                yd.begin() + static_cast<std::size_t>(idx[i] + 1) * nd,
                d.data() + static_cast<std::size_t>(i) * nd);
    }
    return {s, d};
  }
};

}  // namespace

AdamState::AdamState(const NamedTensors& params) {
  for (const auto& [name, t] : params) {
    m.emplace_back(t.size(), 0.0);
    v.emplace_back(t.size(), 0.0);
  }
}

void adam_step(const NamedTensors& params, AdamState& s, double lr) {
  if (params.size() != s.m.size())
    throw ContractError("optimizer state does not match the parameter list");
  ++s.step;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].second;
    std::size_t n = t.size();
    if (s.m[i].size() != n)
      throw ContractError("parameter " + params[i].first + " changed shape");
    double* p = t.data();
    const double* g = t.has_grad() ? t.grad().data() : nullptr;
    double* mi = s.m[i].data();
    double* vi = s.v[i].data();
    for (std::size_t k = 0; k < n; ++k) {
      double gk = g ? g[k] : 0.0;
      mi[k] = s.beta1 * mi[k] + (1.0 - s.beta1) * gk;
      vi[k] = s.beta2 * vi[k] + (1.0 - s.beta2) * gk * gk;
      p[k] -= lr * (mi[k] / bc1) / (std::sqrt(vi[k] / bc2) + s.eps);
    }
  }
}

double PlateauScheduler::update(double val_loss) {
  if (val_loss < best - 1e-6) {
    best = val_loss;
    stagnant = 0;
  } else if (++stagnant >= patience) {
    lr = std::max(min_lr, lr * factor);
    stagnant = 0;
  }
  return lr;
}

TrainResult train_stage1(FusionModel& m, const Dataset& data, Superclass which,
                         const TrainConfig& cfg) {
  check_model_data(m, data);
  check_cfg(cfg);
  int epochs = resolve_epochs(cfg, 100);
  for (const Window& w : data.windows)
    if (w.superclass != which)
      throw ContractError("subset contains windows of the other superclass");

  const bool is_static = which == Superclass::Static;
  int base = is_static ? 0 : m.n_static;
  PathwayParams& pathway = is_static ? m.static_params : m.dynamic_params;

  TrainResult res;
  res.single_class = has_single_label(data);

  auto [fit, val] = carve_validation(data, cfg.seed);
  std::size_t n_batches = fit.windows.size() / cfg.batch_size;
  if (n_batches == 0)
    throw ContractError("batch size exceeds the training subset");

  NamedTensors learnable, state;
  collect_params(is_static ? "static" : "dynamic", pathway, learnable, state);
  AdamState adam(learnable);
  PlateauScheduler sched(cfg.lr);
  Rng shuffle_rng(cfg.seed);
  zero_grads(learnable);

  std::vector<int> order(fit.windows.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<double>> best_snap;

  auto fwd_eval = [&](const Tensor& x, const std::vector<int>&) {
    return pathway_forward(x, pathway, Mode::eval);
  };

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::vector<int> idx(order.begin() + b * cfg.batch_size,
                           order.begin() + (b + 1) * cfg.batch_size);
      auto [x, labels] = make_batch(fit, idx);
      for (int& l : labels) l -= base;
      Graph g;
      GraphScope scope(g);
      Tensor loss = nll_loss(pathway_forward(x, pathway, Mode::train), labels);
      g.backward(loss);
      adam_step(learnable, adam, sched.lr);
      zero_grads(learnable);
      loss_sum += loss.item();
    }
    auto [val_loss, val_acc] = eval_split(val, base, fwd_eval);
    EpochRow row{epoch, loss_sum / static_cast<double>(n_batches), val_loss,
                 val_acc, sched.lr};
    res.log.push_back(row);
    if (cfg.on_epoch) cfg.on_epoch(row);
    if (val_loss < res.best_val_loss) {
      res.best_val_loss = val_loss;
      res.best_epoch = epoch;
      best_snap = snapshot(learnable, state);
    }
    sched.update(val_loss);
  }
  if (cfg.restore_best && !best_snap.empty())
    restore(best_snap, learnable, state);
  return res;
}

TrainResult train_stage2(FusionModel& m, const Dataset& data,
                         const TrainConfig& cfg) {
  check_model_data(m, data);
  check_cfg(cfg);
  int epochs = resolve_epochs(cfg, 50);

  TrainResult res;
  res.single_class = has_single_label(data);

  auto [fit, val] = carve_validation(data, cfg.seed);
  std::size_t n_batches = fit.windows.size() / cfg.batch_size;
  if (n_batches == 0)
    throw ContractError("batch size exceeds the training subset");

  NamedTensors learnable, state;
  if (cfg.freeze_experts) {
    collect_params("guidance", m.guidance_params, learnable, state);
  } else {
    collect_params(m, learnable, state);
  }
  AdamState adam(learnable);
  PlateauScheduler sched(cfg.lr);
  Rng shuffle_rng(cfg.seed);
  zero_grads(learnable);

  ExpertCache fit_cache, val_cache;
  if (cfg.freeze_experts) {
    fit_cache.fill(fit, m);
    val_cache.fill(val, m);
  }

  std::vector<int> order(fit.windows.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<double>> best_snap;

  auto fwd_eval = [&](const Tensor& x, const std::vector<int>& idx) {
    if (!cfg.freeze_experts) return fused_forward(x, m, Mode::eval);
    auto [ys, yd] = val_cache.rows(idx);
    return fuse(ys, yd, guidance_forward(x, m, Mode::eval));
  };

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::vector<int> idx(order.begin() + b * cfg.batch_size,
                           order.begin() + (b + 1) * cfg.batch_size);
      auto [x, labels] = make_batch(fit, idx);
      Graph g;
      GraphScope scope(g);
      Tensor y;
      if (cfg.freeze_experts) {
        auto [ys, yd] = fit_cache.rows(idx);
        y = fuse(ys, yd, guidance_forward(x, m, Mode::train));
      } else {
        y = fused_forward(x, m, Mode::train);
      }
      Tensor loss = nll_loss(y, labels);
      g.backward(loss);
      adam_step(learnable, adam, sched.lr);
      zero_grads(learnable);
      loss_sum += loss.item();
    }
    auto [val_loss, val_acc] = eval_split(val, 0, fwd_eval);
    EpochRow row{epoch, loss_sum / static_cast<double>(n_batches), val_loss,
                 val_acc, sched.lr};
    res.log.push_back(row);
    if (cfg.on_epoch) cfg.on_epoch(row);
    if (val_loss < res.best_val_loss) {
      res.best_val_loss = val_loss;
      res.best_epoch = epoch;
      best_snap = snapshot(learnable, state);
    }
    sched.update(val_loss);
  }
  if (cfg.restore_best && !best_snap.empty())
    restore(best_snap, learnable, state);
  return res;
}

MetricsReport evaluate(FusionModel& m, const Dataset& test) {
  if (!m.loaded()) throw ContractError("model is not fully initialized");
  if (test.windows.empty()) throw ContractError("empty test set");
  check_model_data(m, test);

  int n = static_cast<int>(m.class_order.size());
  std::size_t total = test.windows.size();
  std::vector<int> preds, truths;
  preds.reserve(total);
  truths.reserve(total);
  for (std::size_t start = 0; start < total; start += kEvalBatch) {
    std::size_t count = std::min<std::size_t>(kEvalBatch, total - start);
    std::vector<int> idx(count);
    std::iota(idx.begin(), idx.end(), static_cast<int>(start));
    auto [x, labels] = make_batch(test, idx);
    std::vector<int> p = predict_classes(fused_forward(x, m, Mode::eval));
    preds.insert(preds.end(), p.begin(), p.end());
    truths.insert(truths.end(), labels.begin(), labels.end());
  }
  return compute_metrics(preds, truths, n);
}

}  // namespace fusionact
