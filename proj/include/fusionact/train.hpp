#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "fusionact/data.hpp"
#include "fusionact/metrics.hpp"
#include "fusionact/model.hpp"

namespace fusionact {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  explicit AdamState(const NamedTensors& params);
};

// Standard bias-corrected Adam update, applied in place.  Gradients are read
// from each tensor; a parameter whose gradient was never produced this step
// is treated as having a zero gradient.
void adam_step(const NamedTensors& params, AdamState& s, double lr);

// Learning-rate reduction on a stalled validation loss.  An epoch counts as
// an improvement when val_loss < best - 1e-6; `patience` stagnant epochs in
// a row multiply lr by `factor`, floored at min_lr.
struct PlateauScheduler {
  double lr;
  double factor = 0.5;
  int patience = 5;
  double min_lr = 1e-5;
  double best = std::numeric_limits<double>::infinity();
  int stagnant = 0;

  explicit PlateauScheduler(double initial_lr) : lr(initial_lr) {}
  double update(double val_loss);
};

// One line of the training log.
struct EpochRow {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double val_loss = 0;
  double val_acc = 0;
  double lr = 0;  // rate in effect during this epoch
};

struct TrainConfig {
  int batch_size = 64;
  int epochs = -1;  // -1 picks the stage default: 100 (stage I), 50 (stage II)
  double lr = 1e-3;
  std::uint64_t seed = 42;
  bool freeze_experts = true;  // stage II: train only the guidance module
  bool restore_best = true;    // leave the model at its best-validation state
  std::function<void(const EpochRow&)> on_epoch;  // optional progress hook
};

struct TrainResult {
  std::vector<EpochRow> log;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool single_class = false;  // the training subset held one distinct label
};

// Stage I: trains one expert pathway alone on its superclass subset.
// Validation is carved out subject-disjointly (10% of subjects, at least
// one); the model is left at the best-validation epoch unless
// cfg.restore_best is off.
TrainResult train_stage1(FusionModel& m, const Dataset& superclass_subset,
                         Superclass which, const TrainConfig& cfg);

// Stage II: trains the gate on fused predictions over the full label set.
// With cfg.freeze_experts the pathways run in inference mode and stay
// bit-identical; their per-window outputs are computed once and reused
// across epochs (they cannot change).
TrainResult train_stage2(FusionModel& m, const Dataset& full_train,
                         const TrainConfig& cfg);

// Fused-model test metrics; batches are internal, evaluation order fixed.
MetricsReport evaluate(FusionModel& m, const Dataset& test);

}  // namespace fusionact
