#include "fusionact/metrics.hpp"

#include <string>

#include "fusionact/common.hpp"

namespace fusionact {

namespace {

std::vector<std::vector<long>> count_matrix(const std::vector<int>& preds,
                                            const std::vector<int>& truths,
                                            int n_classes) {
  if (preds.size() != truths.size())
    throw ContractError("prediction/truth lengths differ");
  if (n_classes < 1) throw ContractError("need at least one class");
  std::vector<std::vector<long>> counts(n_classes,
                                        std::vector<long>(n_classes, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (truths[i] < 0 || truths[i] >= n_classes || preds[i] < 0 ||
        preds[i] >= n_classes)
      throw ContractError("label out of range at sample " + std::to_string(i));
    ++counts[truths[i]][preds[i]];
  }
  return counts;
}

}  // namespace

std::vector<std::vector<double>> confusion_matrix(const std::vector<int>& preds,
                                                  const std::vector<int>& truths,
                                                  int n_classes) {
  auto counts = count_matrix(preds, truths, n_classes);
  std::vector<std::vector<double>> out(n_classes,
                                       std::vector<double>(n_classes, 0.0));
  for (int i = 0; i < n_classes; ++i) {
    long row = 0;
    for (int j = 0; j < n_classes; ++j) row += counts[i][j];
    if (row == 0) continue;
    for (int j = 0; j < n_classes; ++j)
      out[i][j] = static_cast<double>(counts[i][j]) / row;
  }
  return out;
}

MetricsReport compute_metrics(const std::vector<int>& preds,
                              const std::vector<int>& truths, int n_classes) {
  auto counts = count_matrix(preds, truths, n_classes);

  MetricsReport r;
  r.precision.assign(n_classes, 0.0);
  r.recall.assign(n_classes, 0.0);
  r.f1.assign(n_classes, 0.0);
  r.class_present.assign(n_classes, false);

  long correct = 0;
  for (int c = 0; c < n_classes; ++c) correct += counts[c][c];
  r.accuracy = truths.empty() ? 0.0
                              : static_cast<double>(correct) / truths.size();

  for (int c = 0; c < n_classes; ++c) {
    long tp = counts[c][c];
    long truth_c = 0, pred_c = 0;
    for (int j = 0; j < n_classes; ++j) {
      truth_c += counts[c][j];
      pred_c += counts[j][c];
    }
    r.class_present[c] = truth_c > 0;
    if (pred_c > 0) r.precision[c] = static_cast<double>(tp) / pred_c;
    if (truth_c > 0) r.recall[c] = static_cast<double>(tp) / truth_c;
    double pr = r.precision[c] + r.recall[c];
    if (pr > 0) r.f1[c] = 2.0 * r.precision[c] * r.recall[c] / pr;
    r.macro_precision += r.precision[c];
    r.macro_recall += r.recall[c];
    r.macro_f1 += r.f1[c];
  }
  r.macro_precision /= n_classes;
  r.macro_recall /= n_classes;
  r.macro_f1 /= n_classes;

  r.confusion = confusion_matrix(preds, truths, n_classes);
  return r;
}

}  // namespace fusionact
