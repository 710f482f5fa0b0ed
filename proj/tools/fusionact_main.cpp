// Command-line front end: train / eval / infer / inspect.
//
// Exit codes: 0 success, 2 bad configuration or usage, 3 missing or
// malformed data, 4 incompatible or corrupt checkpoint, 1 anything else.
// Every failure prints exactly one line on stderr: "error[<category>]: ...".

#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fusionact/checkpoint.hpp"
#include "fusionact/config.hpp"
#include "fusionact/data.hpp"
#include "fusionact/train.hpp"

namespace {

using namespace fusionact;

int fail(const char* category, const std::string& msg, int code) {
  std::fprintf(stderr, "error[%s]: %s\n", category, msg.c_str());
  return code;
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const ContractError& e) {
    return fail("config", e.what(), 2);
  } catch (const DataError& e) {
    return fail("data", e.what(), 3);
  } catch (const ShapeError& e) {
    return fail("data", e.what(), 3);
  } catch (const CheckpointError& e) {
    return fail("checkpoint", e.what(), 4);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
}

// A stage-2 expert must come from the same corpus, label layout, geometry,
// and normalization as the run that consumes it.
void check_expert(const FusionModel& ck, const DatasetMeta& meta,
                  const ChannelStats& stats, const std::string& who) {
  if (ck.dataset != meta.name)
    throw CheckpointError(who + " was trained on '" + ck.dataset +
                          "', this run uses '" + meta.name + "'");
  if (ck.class_order != meta.class_order || ck.n_static != meta.n_static)
    throw CheckpointError(who + " has a different class layout");
  if (ck.in_channels != meta.channels || ck.window_len != meta.window_len)
    throw CheckpointError(who + " has a different input geometry");
  if (ck.norm_mean != stats.mean || ck.norm_std != stats.std)
    throw CheckpointError(who + " was trained with different normalization");
}

void check_against_dataset(const FusionModel& ck, const DatasetMeta& meta) {
  if (ck.dataset != meta.name)
    throw CheckpointError("checkpoint was trained on '" + ck.dataset +
                          "', not '" + meta.name + "'");
  if (ck.class_order != meta.class_order || ck.n_static != meta.n_static ||
      ck.in_channels != meta.channels || ck.window_len != meta.window_len)
    throw CheckpointError("checkpoint does not match the dataset layout");
  if (ck.norm_mean.empty())
    throw CheckpointError("checkpoint carries no normalization statistics");
}

int cmd_train(const std::string& config_path, const std::string& stage_flag,
              const std::string& static_ck, const std::string& dynamic_ck) {
  RunConfig cfg = load_config(config_path);
  if (!stage_flag.empty()) cfg.stage = stage_flag;
  bool stage2 = cfg.stage == "2";
  if (stage2 && (static_ck.empty() || dynamic_ck.empty()))
    return fail("usage", "stage 2 requires --static-ck and --dynamic-ck", 2);
  if (!stage2 && !(static_ck.empty() && dynamic_ck.empty()))
    return fail("usage", "only stage 2 accepts expert checkpoints", 2);
  if (cfg.epochs == -1) cfg.epochs = stage2 ? 50 : 100;

  auto [train_raw, test_raw] = load_published_split(cfg.dataset, cfg.root);
  (void)test_raw;
  ChannelStats stats = compute_stats(train_raw);
  Dataset train = normalize(train_raw, stats);
  const DatasetMeta& meta = train.meta;

  TrainConfig tcfg;
  tcfg.batch_size = cfg.batch_size;
  tcfg.epochs = cfg.epochs;
  tcfg.lr = cfg.lr;
  tcfg.seed = cfg.seed;
  tcfg.freeze_experts = cfg.freeze_experts;
  std::printf("epoch,train_loss,val_loss,val_acc,lr\n");
  tcfg.on_epoch = [](const EpochRow& r) {
    std::printf("%d,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss,
                r.val_loss, r.val_acc, r.lr);
    std::fflush(stdout);
  };

  Rng rng(cfg.seed);
  FusionModel m = make_fusion_model(meta.channels, meta.window_len,
                                    meta.class_order, meta.n_static, rng);
  TrainResult res;
  if (!stage2) {
    auto [stat, dyn] = partition_superclass(train);
    bool is_static = cfg.stage == "1-static";
    res = train_stage1(m, is_static ? stat : dyn,
                       is_static ? Superclass::Static : Superclass::Dynamic,
                       tcfg);
  } else {
    FusionModel s = load_checkpoint(static_ck);
    FusionModel d = load_checkpoint(dynamic_ck);
    check_expert(s, meta, stats, "static expert checkpoint");
    check_expert(d, meta, stats, "dynamic expert checkpoint");
    m.static_config = s.static_config;
    m.static_params = s.static_params;
    m.dynamic_config = d.dynamic_config;
    m.dynamic_params = d.dynamic_params;
    res = train_stage2(m, train, tcfg);
  }

  m.dataset = cfg.dataset;
  m.norm_mean = stats.mean;
  m.norm_std = stats.std;
  m.config_echo = echo_config(cfg);
  save_checkpoint(m, cfg.out);

  if (res.single_class) std::printf("note,single-class training subset\n");
  std::printf("best,%d,%.17g,%.17g\n", res.best_epoch, res.best_val_loss,
              res.log[res.best_epoch - 1].val_acc);
  std::printf("saved,%s\n", cfg.out.c_str());
  return 0;
}

int cmd_eval(const std::string& ck_path, const std::string& dataset,
             const std::string& root, const std::string& confusion_out) {
  FusionModel m = load_checkpoint(ck_path);
  if (m.dataset != dataset)
    throw CheckpointError("checkpoint was trained on '" + m.dataset +
                          "', not '" + dataset + "'");
  auto [train_raw, test_raw] = load_published_split(dataset, root);
  (void)train_raw;
  check_against_dataset(m, test_raw.meta);
  Dataset test = normalize(test_raw, ChannelStats{m.norm_mean, m.norm_std});

  MetricsReport r = evaluate(m, test);
  std::printf("accuracy,%.6f\n", r.accuracy);
  std::printf("macro_precision,%.6f\n", r.macro_precision);
  std::printf("macro_recall,%.6f\n", r.macro_recall);
  std::printf("macro_f1,%.6f\n", r.macro_f1);
  std::printf("class,precision,recall,f1,present\n");
  const auto& names = test.meta.class_order;
  for (std::size_t i = 0; i < names.size(); ++i)
    std::printf("%s,%.6f,%.6f,%.6f,%d\n", names[i].c_str(), r.precision[i],
                r.recall[i], r.f1[i], r.class_present[i] ? 1 : 0);

  if (!confusion_out.empty()) {
    std::ofstream os(confusion_out);
    if (!os) throw DataError("cannot write " + confusion_out);
    for (std::size_t j = 0; j < names.size(); ++j)
      os << (j ? "," : "") << names[j];
    os << "\n";
    char buf[32];
    for (const auto& row : r.confusion) {
      for (std::size_t j = 0; j < row.size(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", row[j]);
        os << (j ? "," : "") << buf;
      }
      os << "\n";
    }
  }
  return 0;
}

int cmd_infer(const std::string& ck_path, const std::string& input) {
  FusionModel m = load_checkpoint(ck_path);
  if (m.norm_mean.empty())
    throw CheckpointError("checkpoint carries no normalization statistics");
  Tensor w = read_window_csv(input, m.in_channels, m.window_len);

  Tensor x({1, m.in_channels, m.window_len});
  for (int c = 0; c < m.in_channels; ++c)
    for (int t = 0; t < m.window_len; ++t) {
      std::size_t at = static_cast<std::size_t>(c) * m.window_len + t;
      x.data()[at] = (w.data()[at] - m.norm_mean[c]) / m.norm_std[c];
    }

  Tensor ys = static_forward(x, m, Mode::eval);
  Tensor yd = dynamic_forward(x, m, Mode::eval);
  Tensor g = guidance_forward(x, m, Mode::eval);
  Tensor y = fuse(ys, yd, g);
  int label = predict_classes(y)[0];

  std::printf("label,%s\n", m.class_order[label].c_str());
  std::printf("gate,%.17g\n", g.data()[0]);
  std::printf("probs");
  for (std::size_t i = 0; i < y.size(); ++i) std::printf(",%.17g", y.data()[i]);
  std::printf("\n");
  return 0;
}

int cmd_inspect(const std::string& ck_path) {
  std::printf("%s\n", checkpoint_manifest(load_checkpoint(ck_path)).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-expert residual CNN for wearable activity recognition"};
  app.require_subcommand(1);

  std::string config_path, stage_flag, static_ck, dynamic_ck;
  CLI::App* train = app.add_subcommand("train", "train one stage");
  train->add_option("--config", config_path, "run configuration file")
      ->required();
  train
      ->add_option("--stage", stage_flag,
                   "training stage (overrides the config)")
      ->check(CLI::IsMember({"1-static", "1-dynamic", "2"}));
  train->add_option("--static-ck", static_ck, "trained static expert");
  train->add_option("--dynamic-ck", dynamic_ck, "trained dynamic expert");

  std::string ck_path, dataset, root, confusion_out, input;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score a test split");
  eval_cmd->add_option("--ck", ck_path, "checkpoint to evaluate")->required();
  eval_cmd->add_option("--dataset", dataset, "corpus name")
      ->required()
      ->check(CLI::IsMember({"ucihar", "motionsense"}));
  eval_cmd->add_option("--root", root, "dataset root directory")->required();
  eval_cmd->add_option("--confusion-out", confusion_out,
                       "write the row-normalized confusion matrix here");

  CLI::App* infer = app.add_subcommand("infer", "classify one window");
  infer->add_option("--ck", ck_path, "checkpoint")->required();
  infer->add_option("--input", input, "channels x window CSV")->required();

  CLI::App* inspect = app.add_subcommand("inspect", "print a manifest");
  inspect->add_option("--ck", ck_path, "checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  if (*train)
    return run_guarded(
        [&] { return cmd_train(config_path, stage_flag, static_ck, dynamic_ck); });
  if (*eval_cmd)
    return run_guarded(
        [&] { return cmd_eval(ck_path, dataset, root, confusion_out); });
  if (*infer) return run_guarded([&] { return cmd_infer(ck_path, input); });
  if (*inspect) return run_guarded([&] { return cmd_inspect(ck_path); });
  return fail("usage", "no command given", 2);
}
