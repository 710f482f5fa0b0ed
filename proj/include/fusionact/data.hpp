#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fusionact/common.hpp"
#include "fusionact/tensor.hpp"

namespace fusionact {

enum class Superclass { Static, Dynamic };

// One fixed-length multichannel snippet with its provenance.
struct Window {
  Tensor signal;  // [channels, window_len]
  int label = -1;  // index into the dataset's class_order
  int subject = -1;
  Superclass superclass = Superclass::Static;
};

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;  // floored at 1e-8
};

// Static-block-first label layout plus the input geometry, fixed per corpus.
struct DatasetMeta {
  std::string name;
  std::vector<std::string> class_order;  // abbreviations, static labels first
  std::vector<std::string> full_names;   // parallel to class_order
  int n_static = 0;
  int channels = 0;
  int window_len = 0;
  int train_subjects = 0;  // subjects kept on the training side of a split
};

struct Dataset {
  DatasetMeta meta;
  std::vector<Window> windows;
  // Populated by normalize(); always the training-side statistics.
  ChannelStats stats;

  std::size_t size() const { return windows.size(); }
};

// A continuous recording before windowing (motionsense arrives this way).
struct RecordingStream {
  int subject = -1;
  std::string trial;  // directory name, e.g. "dws_1"
  int label = -1;
  Superclass superclass = Superclass::Static;
  Tensor signal;  // [channels, length]
};

// Registry lookup by corpus name ("ucihar" | "motionsense").
const DatasetMeta& dataset_meta(const std::string& name);

// Reads the published text layout: nine parallel channel files under
// <root>/<split>/Inertial Signals/ with 128 space-separated floats per row,
// plus y_<split>.txt and subject_<split>.txt.  split is "train" or "test".
Dataset load_ucihar(const std::string& root, const std::string& split);

// Discovers <code>_<n>/sub_<k>.csv trees (optionally nested one level under
// A_DeviceMotion_data) and returns one stream per file, ordered by trial
// directory then subject.  Columns are selected by header name: attitude
// (roll, pitch, yaw), gravity xyz, rotation rate xyz, user acceleration xyz.
std::vector<RecordingStream> load_motionsense(const std::string& root);

// Slices a stream into fixed windows; stride = len * (1 - overlap); a
// trailing partial window is dropped.  Short streams yield zero windows.
std::vector<Window> window_stream(const RecordingStream& s, int len = 128,
                                  double overlap = 0.5);

// load_motionsense + window_stream over every stream.
Dataset load_motionsense_windows(const std::string& root);

// Published train/test pair for a corpus: the inertial-signal corpus ships
// explicit split directories; the device-motion corpus is split 16/8 subjects
// by a fixed seeded shuffle so every run sees the same partition.
std::pair<Dataset, Dataset> load_published_split(const std::string& dataset,
                                                 const std::string& root);

// One comma-separated window, rows = channels, columns = window_len.
Tensor read_window_csv(const std::string& path, int channels, int window_len);

// Splits by superclass tag; the pair preserves window order (static, dynamic).
std::pair<Dataset, Dataset> partition_superclass(const Dataset& d);

// Subject-disjoint split: subjects sorted, shuffled by seed, first
// `train_subject_count` go left, the rest right.
std::pair<Dataset, Dataset> subject_split(const Dataset& d,
                                          int train_subject_count,
                                          std::uint64_t seed);

// Per-channel mean/std over every value in d (population std, floor 1e-8).
// Call on training data only; pass the result to normalize() for every split.
ChannelStats compute_stats(const Dataset& d);

// Pure per-channel z-score; the returned dataset records `stats`.
Dataset normalize(const Dataset& d, const ChannelStats& stats);

// Gathers windows[idx] into a training batch: signals stacked to
// [batch, channels, window_len] plus the parallel label list.
std::pair<Tensor, std::vector<int>> make_batch(const Dataset& d,
                                               const std::vector<int>& idx);

}  // namespace fusionact
