#include "fusionact/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>

namespace fs = std::filesystem;

namespace fusionact {

namespace {

// Whitespace-separated floats, one row per line; blank lines skipped.
std::vector<std::vector<double>> read_float_rows(const fs::path& file,
                                                 int expect_cols) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::vector<double> vals;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
      if (p >= end) break;
      double v = 0;
      auto [np, ec] = std::from_chars(p, end, v);
      if (ec != std::errc())
        throw DataError(file.string() + " line " + std::to_string(line_no) +
                        ": malformed number");
      vals.push_back(v);
      p = np;
    }
    if (vals.empty()) continue;
    if (expect_cols > 0 && static_cast<int>(vals.size()) != expect_cols)
      throw DataError(file.string() + " line " + std::to_string(line_no) +
                      ": expected " + std::to_string(expect_cols) +
                      " values, got " + std::to_string(vals.size()));
    rows.push_back(std::move(vals));
  }
  return rows;
}

std::vector<int> read_int_column(const fs::path& file) {
  auto rows = read_float_rows(file, 1);
  std::vector<int> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(static_cast<int>(std::lround(r[0])));
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

int label_index(const DatasetMeta& meta, const std::string& abbrev) {
  for (std::size_t i = 0; i < meta.class_order.size(); ++i)
    if (meta.class_order[i] == abbrev) return static_cast<int>(i);
  throw DataError("label " + abbrev + " not in " + meta.name);
}

Superclass superclass_of(const DatasetMeta& meta, int label) {
  return label < meta.n_static ? Superclass::Static : Superclass::Dynamic;
}

}  // namespace

const DatasetMeta& dataset_meta(const std::string& name) {
  static const DatasetMeta ucihar{
      "ucihar",
      {"SI", "ST", "LA", "WA", "WU", "WD"},
      {"Sitting", "Standing", "Lying", "Walking", "WalkingUpstairs",
       "WalkingDownstairs"},
      3,
      9,
      128,
      21};
  static const DatasetMeta motionsense{
      "motionsense",
      {"SI", "ST", "WD", "WU", "JG", "WA"},
      {"Sitting", "Standing", "WalkingDownstairs", "WalkingUpstairs",
       "Jogging", "Walking"},
      2,
      12,
      128,
      16};
  if (name == "ucihar") return ucihar;
  if (name == "motionsense") return motionsense;
  throw DataError("unknown dataset: " + name);
}

Dataset load_ucihar(const std::string& root, const std::string& split) {
  if (split != "train" && split != "test")
    throw DataError("split must be train or test, got " + split);
  const DatasetMeta& meta = dataset_meta("ucihar");
  const fs::path base = fs::path(root) / split;

  static const char* kChannels[] = {
      "body_acc_x", "body_acc_y", "body_acc_z",
      "total_acc_x", "total_acc_y", "total_acc_z",
      "body_gyro_x", "body_gyro_y", "body_gyro_z"};
  std::vector<std::vector<std::vector<double>>> channels;
  for (const char* name : kChannels)
    channels.push_back(read_float_rows(
        base / "Inertial Signals" / (std::string(name) + "_" + split + ".txt"),
        meta.window_len));

  std::vector<int> ids = read_int_column(base / ("y_" + split + ".txt"));
  std::vector<int> subjects = read_int_column(base / ("subject_" + split + ".txt"));

  std::size_t n = channels[0].size();
  for (const auto& ch : channels)
    if (ch.size() != n)
      throw DataError("channel files under " + base.string() +
                      " disagree on row count");
  if (ids.size() != n || subjects.size() != n)
    throw DataError("label/subject row count does not match signals in " +
                    base.string());

  // published activity ids 1..6 = WA WU WD SI ST LA
  static const int kIdToClass[] = {-1, 3, 4, 5, 0, 1, 2};

  Dataset d;
  d.meta = meta;
  d.windows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] < 1 || ids[i] > 6)
      throw DataError("unknown activity id " + std::to_string(ids[i]) +
                      " at row " + std::to_string(i + 1));
    if (subjects[i] < 1 || subjects[i] > 30)
      throw DataError("subject " + std::to_string(subjects[i]) +
                      " out of range at row " + std::to_string(i + 1));
    Window w;
    w.signal = Tensor({meta.channels, meta.window_len});
    double* out = w.signal.data();
    for (int c = 0; c < meta.channels; ++c)
      std::copy(channels[c][i].begin(), channels[c][i].end(),
                out + static_cast<std::size_t>(c) * meta.window_len);
    w.label = kIdToClass[ids[i]];
    w.subject = subjects[i];
    w.superclass = superclass_of(meta, w.label);
    d.windows.push_back(std::move(w));
  }
  return d;
}

std::vector<RecordingStream> load_motionsense(const std::string& root) {
  const DatasetMeta& meta = dataset_meta("motionsense");
  fs::path base(root);
  if (fs::is_directory(base / "A_DeviceMotion_data"))
    base /= "A_DeviceMotion_data";
  if (!fs::is_directory(base))
    throw DataError("no such directory: " + base.string());

  static const std::pair<const char*, const char*> kCodes[] = {
      {"dws", "WD"}, {"ups", "WU"}, {"wlk", "WA"},
      {"jog", "JG"}, {"sit", "SI"}, {"std", "ST"}};
  static const char* kColumns[] = {
      "attitude.roll", "attitude.pitch", "attitude.yaw",
      "gravity.x", "gravity.y", "gravity.z",
      "rotationRate.x", "rotationRate.y", "rotationRate.z",
      "userAcceleration.x", "userAcceleration.y", "userAcceleration.z"};

  std::vector<std::string> trial_dirs;
  for (const auto& entry : fs::directory_iterator(base)) {
    if (!entry.is_directory()) continue;
    std::string name = entry.path().filename().string();
    std::string code = name.substr(0, name.find('_'));
    for (const auto& [c, lbl] : kCodes)
      if (code == c) {
        trial_dirs.push_back(name);
        break;
      }
  }
  std::sort(trial_dirs.begin(), trial_dirs.end());
  if (trial_dirs.empty())
    throw DataError("no trial directories under " + base.string());

  std::vector<RecordingStream> streams;
  for (const std::string& trial : trial_dirs) {
    std::string code = trial.substr(0, trial.find('_'));
    const char* abbrev = nullptr;
    for (const auto& [c, lbl] : kCodes)
      if (code == c) abbrev = lbl;
    int label = label_index(meta, abbrev);

    std::vector<std::pair<int, fs::path>> files;
    for (const auto& entry : fs::directory_iterator(base / trial)) {
      std::string fname = entry.path().filename().string();
      if (fname.rfind("sub_", 0) != 0 || entry.path().extension() != ".csv")
        continue;
      int subject = 0;
      auto [p, ec] = std::from_chars(fname.data() + 4,
                                     fname.data() + fname.size(), subject);
      if (ec != std::errc()) continue;
      files.emplace_back(subject, entry.path());
    }
    std::sort(files.begin(), files.end());

    for (const auto& [subject, file] : files) {
      std::ifstream in(file);
      if (!in) throw DataError("cannot open " + file.string());
      std::string line;
      if (!std::getline(in, line))
        throw DataError(file.string() + ": empty file");
      std::vector<std::string> header = split_csv_line(line);
      int col_of[12];
      for (int c = 0; c < 12; ++c) {
        auto it = std::find(header.begin(), header.end(), kColumns[c]);
        if (it == header.end())
          throw DataError(file.string() + ": missing column " +
                          kColumns[c]);
        col_of[c] = static_cast<int>(it - header.begin());
      }

      std::vector<std::array<double, 12>> samples;
      int line_no = 1;
      while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        std::vector<std::string> cells = split_csv_line(line);
        std::array<double, 12> row;
        for (int c = 0; c < 12; ++c) {
          if (col_of[c] >= static_cast<int>(cells.size()))
            throw DataError(file.string() + " line " +
                            std::to_string(line_no) + ": missing column " +
                            kColumns[c]);
          const std::string& cell = cells[col_of[c]];
          auto [p, ec] = std::from_chars(cell.data(),
                                         cell.data() + cell.size(), row[c]);
          if (ec != std::errc() || p != cell.data() + cell.size())
            throw DataError(file.string() + " line " +
                            std::to_string(line_no) + ": non-numeric " +
                            kColumns[c]);
        }
        samples.push_back(row);
      }

      RecordingStream s;
      s.subject = subject;
      s.trial = trial;
      s.label = label;
      s.superclass = superclass_of(meta, label);
      int len = static_cast<int>(samples.size());
      s.signal = Tensor({12, len});
      double* out = s.signal.data();
      for (int c = 0; c < 12; ++c)
        for (int t = 0; t < len; ++t)
          out[static_cast<std::size_t>(c) * len + t] = samples[t][c];
      streams.push_back(std::move(s));
    }
  }
  return streams;
}

std::vector<Window> window_stream(const RecordingStream& s, int len,
                                  double overlap) {
  if (len < 1) throw ContractError("window length must be positive");
  if (!(overlap >= 0.0 && overlap < 1.0))
    throw ContractError("overlap must be in [0, 1)");
  int stride = static_cast<int>(std::lround(len * (1.0 - overlap)));
  if (stride < 1)
    throw ContractError("overlap leaves a zero stride for length " +
                        std::to_string(len));

  int channels = s.signal.dim(0);
  int total = s.signal.dim(1);
  const double* sig = s.signal.data();
  std::vector<Window> out;
  for (int off = 0; off + len <= total; off += stride) {
    Window w;
    w.signal = Tensor({channels, len});
    double* dst = w.signal.data();
    for (int c = 0; c < channels; ++c)
      std::copy(sig + static_cast<std::size_t>(c) * total + off,
                sig + static_cast<std::size_t>(c) * total + off + len,
                dst + static_cast<std::size_t>(c) * len);
    w.label = s.label;
    w.subject = s.subject;
    w.superclass = s.superclass;
    out.push_back(std::move(w));
  }
  return out;
}

Dataset load_motionsense_windows(const std::string& root) {
  Dataset d;
  d.meta = dataset_meta("motionsense");
  for (const RecordingStream& s : load_motionsense(root)) {
    std::vector<Window> ws = window_stream(s, d.meta.window_len, 0.5);
    d.windows.insert(d.windows.end(), std::make_move_iterator(ws.begin()),
                     std::make_move_iterator(ws.end()));
  }
  return d;
}

std::pair<Dataset, Dataset> load_published_split(const std::string& dataset,
                                                 const std::string& root) {
  if (dataset == "ucihar")
    return {load_ucihar(root, "train"), load_ucihar(root, "test")};
  if (dataset == "motionsense") {
    Dataset all = load_motionsense_windows(root);
    // fixed partition seed, independent of any run configuration
    return subject_split(all, all.meta.train_subjects, 42);
  }
  throw DataError("unknown dataset: " + dataset);
}

Tensor read_window_csv(const std::string& path, int channels, int window_len) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  Tensor out({channels, window_len});
  std::string line;
  int row = 0, line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (static_cast<int>(cells.size()) != window_len)
      throw DataError(path + " line " + std::to_string(line_no) + ": expected " +
                      std::to_string(window_len) + " values, got " +
                      std::to_string(cells.size()));
    if (row >= channels)
      throw DataError(path + ": expected " + std::to_string(channels) +
                      " rows, got more");
    for (int c = 0; c < window_len; ++c) {
      const std::string& cell = cells[c];
      double v = 0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || p != cell.data() + cell.size())
        throw DataError(path + " line " + std::to_string(line_no) +
                        ": malformed number: " + cell);
      out.data()[static_cast<std::size_t>(row) * window_len + c] = v;
    }
    ++row;
  }
  if (row != channels)
    throw DataError(path + ": expected " + std::to_string(channels) +
                    " rows, got " + std::to_string(row));
  return out;
}

std::pair<Dataset, Dataset> partition_superclass(const Dataset& d) {
  Dataset s, dy;
  s.meta = d.meta;
  s.stats = d.stats;
  dy.meta = d.meta;
  dy.stats = d.stats;
  for (const Window& w : d.windows)
    (w.superclass == Superclass::Static ? s : dy).windows.push_back(w);
  return {std::move(s), std::move(dy)};
}

std::pair<Dataset, Dataset> subject_split(const Dataset& d,
                                          int train_subject_count,
                                          std::uint64_t seed) {
  std::set<int> unique;
  for (const Window& w : d.windows) unique.insert(w.subject);
  std::vector<int> subjects(unique.begin(), unique.end());
  if (train_subject_count < 1 ||
      train_subject_count >= static_cast<int>(subjects.size()))
    throw ContractError("cannot keep " + std::to_string(train_subject_count) +
                        " of " + std::to_string(subjects.size()) +
                        " subjects");
  Rng rng(seed);
  rng.shuffle(subjects);
  std::set<int> left(subjects.begin(), subjects.begin() + train_subject_count);

  Dataset a, b;
  a.meta = d.meta;
  a.stats = d.stats;
  b.meta = d.meta;
  b.stats = d.stats;
  for (const Window& w : d.windows)
    (left.count(w.subject) ? a : b).windows.push_back(w);
  return {std::move(a), std::move(b)};
}

ChannelStats compute_stats(const Dataset& d) {
  if (d.windows.empty()) throw ContractError("no windows to compute stats on");
  int channels = d.meta.channels;
  int len = d.meta.window_len;
  ChannelStats st;
  st.mean.assign(channels, 0.0);
  st.std.assign(channels, 0.0);

  double count = static_cast<double>(d.windows.size()) * len;
  for (const Window& w : d.windows) {
    const double* p = w.signal.data();
    for (int c = 0; c < channels; ++c)
      for (int t = 0; t < len; ++t)
        st.mean[c] += p[static_cast<std::size_t>(c) * len + t];
  }
  for (int c = 0; c < channels; ++c) st.mean[c] /= count;

  for (const Window& w : d.windows) {
    const double* p = w.signal.data();
    for (int c = 0; c < channels; ++c)
      for (int t = 0; t < len; ++t) {
        double dev = p[static_cast<std::size_t>(c) * len + t] - st.mean[c];
        st.std[c] += dev * dev;
      }
  }
  for (int c = 0; c < channels; ++c)
    st.std[c] = std::max(1e-8, std::sqrt(st.std[c] / count));
  return st;
}

Dataset normalize(const Dataset& d, const ChannelStats& stats) {
  int channels = d.meta.channels;
  if (static_cast<int>(stats.mean.size()) != channels ||
      static_cast<int>(stats.std.size()) != channels)
    throw ContractError("stats cover " + std::to_string(stats.mean.size()) +
                        " channels, dataset has " + std::to_string(channels));
  Dataset out;
  out.meta = d.meta;
  out.stats = stats;
  out.windows.reserve(d.windows.size());
  int len = d.meta.window_len;
  for (const Window& w : d.windows) {
    Window nw = w;
    nw.signal = Tensor({channels, len});
    const double* src = w.signal.data();
    double* dst = nw.signal.data();
    for (int c = 0; c < channels; ++c)
      for (int t = 0; t < len; ++t) {
        std::size_t at = static_cast<std::size_t>(c) * len + t;
        dst[at] = (src[at] - stats.mean[c]) / stats.std[c];
      }
    out.windows.push_back(std::move(nw));
  }
  return out;
}

std::pair<Tensor, std::vector<int>> make_batch(const Dataset& d,
                                               const std::vector<int>& idx) {
  if (idx.empty()) throw ContractError("empty batch");
  int channels = d.meta.channels;
  int len = d.meta.window_len;
  Tensor x({static_cast<int>(idx.size()), channels, len});
  std::vector<int> labels;
  labels.reserve(idx.size());
  double* dst = x.data();
  std::size_t stride = static_cast<std::size_t>(channels) * len;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= static_cast<int>(d.windows.size()))
      throw ContractError("batch index " + std::to_string(idx[i]) +
                          " out of range");
    const Window& w = d.windows[idx[i]];
    std::copy(w.signal.data(), w.signal.data() + stride, dst + i * stride);
    labels.push_back(w.label);
  }
  return {std::move(x), labels};
}

}  // namespace fusionact
