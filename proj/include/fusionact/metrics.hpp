#pragma once

#include <vector>

namespace fusionact {

// Classification quality summary.  Per-class vectors are indexed by class;
// any precision/recall/F1 whose denominator is zero reports 0.  Macro
// averages run over all classes, absent ones included.
struct MetricsReport {
  double accuracy = 0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  double macro_precision = 0;
  double macro_recall = 0;
  double macro_f1 = 0;
  std::vector<std::vector<double>> confusion;  // row-normalized
  std::vector<bool> class_present;  // false rows of `confusion` are all-zero
};

// Row-normalized confusion: entry (i, j) = count(truth i, pred j) divided by
// count(truth i); rows for classes absent from `truths` stay all-zero.
std::vector<std::vector<double>> confusion_matrix(const std::vector<int>& preds,
                                                  const std::vector<int>& truths,
                                                  int n_classes);

MetricsReport compute_metrics(const std::vector<int>& preds,
                              const std::vector<int>& truths, int n_classes);

}  // namespace fusionact
