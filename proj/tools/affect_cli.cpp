// affect-mtl: train, evaluate, predict, kfold, ensemble, gen-synthetic, split.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <nlohmann/json.hpp>

#include "affect/checkpoint.hpp"
#include "affect/ensemble.hpp"
#include "affect/errors.hpp"
#include "affect/features.hpp"
#include "affect/folds.hpp"
#include "affect/labels.hpp"
#include "affect/synthetic.hpp"
#include "affect/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flags override the config file, which overrides the defaults.
struct ConfigFlags {
  std::string config_file;
  std::optional<std::string> features, labels, pseudo_labels, val_features, val_labels, output_dir;
  std::optional<std::size_t> batch_size, k_folds;
  std::optional<int> epochs, warmup_epochs, fold, eval_every;
  std::optional<double> base_lr;
  std::optional<std::uint64_t> seed;
  bool no_class_weights = false;
  std::optional<std::size_t> n_patches, in_channels, hidden_channels, d_model, heads, ffn_hidden,
      n_blocks;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "JSON run configuration")->check(CLI::ExistingFile);
    app->add_option("--features", features, "training feature container");
    app->add_option("--labels", labels, "training label CSV");
    app->add_option("--pseudo-labels", pseudo_labels, "pseudo-label CSV merged into invalid fields");
    app->add_option("--val-features", val_features, "validation feature container");
    app->add_option("--val-labels", val_labels, "validation label CSV");
    app->add_option("--out", output_dir, "output directory");
    app->add_option("--batch-size", batch_size);
    app->add_option("--epochs", epochs);
    app->add_option("--warmup-epochs", warmup_epochs);
    app->add_option("--lr", base_lr, "base learning rate");
    app->add_option("--seed", seed);
    app->add_option("--fold", fold, "hold out this fold of the training data");
    app->add_option("--k-folds", k_folds);
    app->add_option("--eval-every", eval_every, "evaluate every n epochs (0: last only)");
    app->add_flag("--no-class-weights", no_class_weights);
    app->add_option("--n-patches", n_patches);
    app->add_option("--in-channels", in_channels);
    app->add_option("--hidden-channels", hidden_channels);
    app->add_option("--d-model", d_model);
    app->add_option("--heads", heads);
    app->add_option("--ffn-hidden", ffn_hidden);
    app->add_option("--blocks", n_blocks);
  }

  affect::RunConfig resolve() const {
    affect::RunConfig c;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      try {
        json::parse(in).get_to(c);
      } catch (const json::exception& e) {
        throw affect::ConfigError(config_file + ": " + e.what());
      }
    }
    auto set = [](auto& dst, const auto& src) {
      if (src) dst = *src;
    };
    set(c.features, features);
    set(c.labels, labels);
    set(c.pseudo_labels, pseudo_labels);
    set(c.val_features, val_features);
    set(c.val_labels, val_labels);
    set(c.output_dir, output_dir);
    set(c.batch_size, batch_size);
    set(c.epochs, epochs);
    set(c.warmup_epochs, warmup_epochs);
    set(c.base_lr, base_lr);
    set(c.seed, seed);
    set(c.fold, fold);
    set(c.k_folds, k_folds);
    set(c.eval_every, eval_every);
    if (no_class_weights) c.class_weights = false;
    set(c.model.n_patches, n_patches);
    set(c.model.in_channels, in_channels);
    set(c.model.hidden_channels, hidden_channels);
    set(c.model.d_model, d_model);
    set(c.model.heads, heads);
    set(c.model.ffn_hidden, ffn_hidden);
    set(c.model.n_blocks, n_blocks);
    c.validate();
    if (c.features.empty() || c.labels.empty()) {
      throw affect::ConfigError("--features and --labels are required");
    }
    return c;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw affect::FormatError("failed writing '" + path.string() + "'");
}

std::vector<std::string> run_inputs(const affect::RunConfig& c) {
  return {c.features, c.labels, c.pseudo_labels, c.val_features, c.val_labels};
}

void cmd_train(const ConfigFlags& flags) {
  const auto config = flags.resolve();
  std::vector<std::string> warnings;
  const auto train = affect::load_dataset(config.features, config.labels, config.pseudo_labels,
                                          config.model, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';

  std::optional<affect::Dataset> val;
  affect::Dataset train_part = train;
  if (!config.val_features.empty()) {
    val = affect::load_dataset(config.val_features, config.val_labels, "", config.model);
  } else if (config.fold >= 0) {
    const auto plan = affect::kfold_split(train.features.ids(), config.k_folds, config.seed);
    const auto k = static_cast<std::size_t>(config.fold);
    val = train.subset(plan.members(train.features.ids(), k));
    train_part = train.subset(plan.complement(train.features.ids(), k));
  }
  fs::create_directories(config.output_dir);
  write_text(fs::path(config.output_dir) / "run_config.json", json(config).dump(2) + "\n");
  affect::write_manifest((fs::path(config.output_dir) / "manifest.json").string(), "train",
                         json(config), config.seed, run_inputs(config));
  const auto result = affect::train_model(train_part, val ? &*val : nullptr, config, &std::cout);
  std::cout << "best epoch overall " << result.best.overall << " au " << result.best.au << " expr "
            << result.best.expr << " va " << result.best.va << '\n';
}

void cmd_kfold(const ConfigFlags& flags) {
  const auto config = flags.resolve();
  std::vector<std::string> warnings;
  const auto data = affect::load_dataset(config.features, config.labels, config.pseudo_labels,
                                         config.model, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  fs::create_directories(config.output_dir);
  write_text(fs::path(config.output_dir) / "run_config.json", json(config).dump(2) + "\n");
  affect::write_manifest((fs::path(config.output_dir) / "manifest.json").string(), "kfold",
                         json(config), config.seed, run_inputs(config));
  affect::run_kfold(data, config, &std::cout);
}

struct EvaluateArgs {
  std::string checkpoint, features, labels, out;
  std::size_t batch_size = 64;
};

void cmd_evaluate(const EvaluateArgs& a) {
  const auto params = affect::load_checkpoint(a.checkpoint);
  const auto data = affect::load_dataset(a.features, a.labels, "", params.config);
  const auto report = affect::evaluate(affect::predict(params, data.features, a.batch_size), data.labels);
  const std::string out = a.out.empty() ? a.checkpoint + ".eval.json" : a.out;
  write_text(out, json(report).dump(2) + "\n");
  affect::write_manifest(out + ".manifest.json", "evaluate",
                         {{"checkpoint", a.checkpoint}, {"features", a.features},
                          {"labels", a.labels}, {"batch_size", a.batch_size}},
                         0, {a.checkpoint, a.features, a.labels});
  std::cout << json(report).dump() << '\n';
}

struct PredictArgs {
  std::string checkpoint, features, out;
  std::size_t batch_size = 64;
};

void save_predictions(const std::string& out, const std::vector<affect::PredictionRecord>& preds) {
  if (const auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
  affect::save_prediction_csv(out, preds);
  affect::save_raw_predictions(affect::raw_sidecar_path(out), preds);
}

void cmd_predict(const PredictArgs& a) {
  const auto params = affect::load_checkpoint(a.checkpoint);
  const auto features =
      affect::load_features(a.features, params.config.n_patches, params.config.in_channels);
  save_predictions(a.out, affect::predict(params, features, a.batch_size));
  affect::write_manifest(a.out + ".manifest.json", "predict",
                         {{"checkpoint", a.checkpoint}, {"features", a.features},
                          {"batch_size", a.batch_size}},
                         0, {a.checkpoint, a.features});
  std::cout << "wrote " << features.size() << " rows to " << a.out << '\n';
}

struct EnsembleArgs {
  std::string strategy;
  std::vector<std::string> members;
  std::vector<std::string> runs;
  std::string features, out;
  std::size_t batch_size = 64;
};

// Training run directories; a k-fold root expands to its fold_N runs.
std::vector<fs::path> expand_runs(const std::vector<std::string>& runs) {
  std::vector<fs::path> out;
  for (const auto& r : runs) {
    const fs::path p(r);
    if (fs::exists(p / "train_report.json")) {
      out.push_back(p);
      continue;
    }
    std::size_t k = 0;
    while (fs::exists(p / ("fold_" + std::to_string(k)) / "train_report.json")) {
      out.push_back(p / ("fold_" + std::to_string(k)));
      ++k;
    }
    if (k == 0) throw affect::DataError("'" + r + "' is neither a training run nor a k-fold root");
  }
  return out;
}

class RunPredictor {
 public:
  RunPredictor(std::string features, std::size_t batch_size)
      : features_path_(std::move(features)), batch_size_(batch_size) {}

  // task: "overall", "au", "expr" or "va".
  const affect::PredictionSet& best(const fs::path& run, const std::string& task) {
    std::ifstream in(run / "train_report.json");
    const auto report = json::parse(in);
    const int epoch = report.at("best_epoch").at(task).get<int>();
    std::string ckpt;
    for (const auto& e : report.at("epochs")) {
      if (e.at("epoch").get<int>() == epoch && e.contains("checkpoint")) {
        ckpt = e.at("checkpoint").get<std::string>();
      }
    }
    if (ckpt.empty()) {
      throw affect::DataError(run.string() + ": no checkpoint for best " + task + " epoch");
    }
    auto it = cache_.find(ckpt);
    if (it != cache_.end()) return it->second;
    const auto params = affect::load_checkpoint(ckpt);
    if (!features_) {
      features_ = affect::load_features(features_path_, params.config.n_patches,
                                        params.config.in_channels);
    }
    checkpoints_.push_back(ckpt);
    return cache_.emplace(ckpt, affect::predict(params, *features_, batch_size_)).first->second;
  }

  const std::vector<std::string>& checkpoints() const { return checkpoints_; }

 private:
  std::string features_path_;
  std::size_t batch_size_;
  std::optional<affect::FeatureSet> features_;
  std::map<std::string, affect::PredictionSet> cache_;
  std::vector<std::string> checkpoints_;
};

std::vector<affect::PredictionSet> run_members(affect::EnsembleStrategy s,
                                               const std::vector<fs::path>& runs,
                                               RunPredictor& predictor) {
  using S = affect::EnsembleStrategy;
  auto need = [&](std::size_t n) {
    if (runs.size() != n) {
      throw affect::ConfigError("strategy " + affect::to_string(s) + " needs " + std::to_string(n) +
                                " run directories, got " + std::to_string(runs.size()));
    }
  };
  std::vector<affect::PredictionSet> members;
  switch (s) {
    case S::best_overall:
      need(1);
      members.push_back(predictor.best(runs[0], "overall"));
      break;
    case S::best_per_task:
      need(1);
      for (const char* task : {"au", "expr", "va"}) members.push_back(predictor.best(runs[0], task));
      break;
    case S::kfold_best_overall:
      need(6);
      for (const auto& r : runs) members.push_back(predictor.best(r, "overall"));
      break;
    case S::kfold_best_per_task:
      need(6);
      for (const char* task : {"au", "expr", "va"}) {
        for (const auto& r : runs) members.push_back(predictor.best(r, task));
      }
      break;
    case S::meta: {
      // First run is the full-data run, the remaining six are the folds.
      need(7);
      const std::vector<fs::path> single{runs[0]};
      const std::vector<fs::path> folds(runs.begin() + 1, runs.end());
      for (auto sub : {S::best_overall, S::best_per_task}) {
        members.push_back(affect::ensemble(sub, run_members(sub, single, predictor)));
      }
      for (auto sub : {S::kfold_best_overall, S::kfold_best_per_task}) {
        members.push_back(affect::ensemble(sub, run_members(sub, folds, predictor)));
      }
      break;
    }
  }
  return members;
}

void cmd_ensemble(const EnsembleArgs& a) {
  const auto strategy = affect::parse_ensemble_strategy(a.strategy);
  std::vector<affect::PredictionSet> members;
  std::vector<std::string> inputs;
  if (!a.members.empty() == !a.runs.empty()) {
    throw affect::ConfigError("give exactly one of --members or --runs");
  }
  if (!a.members.empty()) {
    for (const auto& m : a.members) members.push_back(affect::load_raw_predictions(m));
    inputs = a.members;
  } else {
    if (a.features.empty()) throw affect::ConfigError("--runs needs --features");
    RunPredictor predictor(a.features, a.batch_size);
    members = run_members(strategy, expand_runs(a.runs), predictor);
    inputs = predictor.checkpoints();
    inputs.push_back(a.features);
  }
  const auto result = affect::ensemble(strategy, members);
  save_predictions(a.out, result);
  affect::write_manifest(a.out + ".manifest.json", "ensemble",
                         {{"strategy", affect::to_string(strategy)}, {"members", a.members},
                          {"runs", a.runs}, {"features", a.features}},
                         0, inputs);
  std::cout << "wrote " << result.size() << " rows to " << a.out << '\n';
}

struct SyntheticArgs {
  std::size_t n = 256;
  std::uint64_t seed = 0;
  affect::SyntheticOptions options;
  std::string out_features, out_labels;
};

void cmd_gen_synthetic(const SyntheticArgs& a) {
  for (const auto& p : {a.out_features, a.out_labels}) {
    if (const auto parent = fs::path(p).parent_path(); !parent.empty()) fs::create_directories(parent);
  }
  std::vector<affect::LabelRecord> labels;
  labels.reserve(a.n);
  affect::FeatureWriter writer(a.out_features, a.options.n_patches, a.options.n_channels);
  affect::for_each_synthetic(a.n, a.seed, a.options,
                             [&](const affect::LabelRecord& r, std::span<const float> f) {
                               writer.write(r.id, f);
                               labels.push_back(r);
                             });
  writer.close();
  affect::save_labels(a.out_labels, labels);
  affect::write_manifest(a.out_features + ".manifest.json", "gen-synthetic",
                         {{"n", a.n},
                          {"sentinel_fraction", a.options.sentinel_fraction},
                          {"latent_dim", a.options.latent_dim},
                          {"n_patches", a.options.n_patches},
                          {"n_channels", a.options.n_channels},
                          {"noise", a.options.noise},
                          {"n_videos", a.options.n_videos}},
                         a.seed, {});
  std::cout << "wrote " << a.n << " samples to " << a.out_features << " and " << a.out_labels << '\n';
}

struct SplitArgs {
  std::string labels, out;
  std::size_t k = 6;
  std::uint64_t seed = 0;
};

void cmd_split(const SplitArgs& a) {
  const auto labels = affect::load_labels(a.labels);
  std::vector<std::string> ids;
  ids.reserve(labels.size());
  for (const auto& r : labels) ids.push_back(r.id);
  const auto plan = affect::kfold_split(ids, a.k, a.seed);
  json folds = json::array();
  for (std::size_t f = 0; f < a.k; ++f) {
    json members = json::array();
    for (auto i : plan.members(ids, f)) members.push_back(ids[i]);
    folds.push_back({{"fold", f},
                     {"frames", plan.frame_counts[f]},
                     {"videos", plan.video_counts[f]},
                     {"ids", std::move(members)}});
  }
  write_text(a.out, json{{"k", a.k}, {"seed", a.seed}, {"folds", std::move(folds)}}.dump(2) + "\n");
  affect::write_manifest(a.out + ".manifest.json", "split",
                         {{"labels", a.labels}, {"k", a.k}}, a.seed, {a.labels});
  for (std::size_t f = 0; f < a.k; ++f) {
    std::cout << "fold " << f << ": " << plan.video_counts[f] << " videos, " << plan.frame_counts[f]
              << " frames\n";
  }
}

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task affective-behavior head: training, evaluation and ensembling"};
  app.require_subcommand(1);

  ConfigFlags train_flags, kfold_flags;
  auto* train = app.add_subcommand("train", "train one model, checkpointing every epoch");
  train_flags.attach(train);
  auto* kfold = app.add_subcommand("kfold", "video-grouped k-fold cross-validation");
  kfold_flags.attach(kfold);

  EvaluateArgs eval_args;
  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a labeled dataset");
  evaluate->add_option("--checkpoint", eval_args.checkpoint)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--features", eval_args.features)->required();
  evaluate->add_option("--labels", eval_args.labels)->required();
  evaluate->add_option("--out", eval_args.out, "report path (default <checkpoint>.eval.json)");
  evaluate->add_option("--batch-size", eval_args.batch_size);

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "write a prediction CSV and its raw sidecar");
  predict->add_option("--checkpoint", predict_args.checkpoint)->required()->check(CLI::ExistingFile);
  predict->add_option("--features", predict_args.features)->required();
  predict->add_option("--out", predict_args.out)->required();
  predict->add_option("--batch-size", predict_args.batch_size);

  EnsembleArgs ens_args;
  auto* ens = app.add_subcommand("ensemble", "combine member outputs by one of five strategies");
  ens->add_option("--strategy", ens_args.strategy,
                  "best-overall | best-per-task | kfold-best-overall | kfold-best-per-task | meta")
      ->required();
  ens->add_option("--members", ens_args.members, "raw prediction files, in strategy order");
  ens->add_option("--runs", ens_args.runs, "training run or k-fold root directories");
  ens->add_option("--features", ens_args.features, "features to predict when using --runs");
  ens->add_option("--out", ens_args.out)->required();
  ens->add_option("--batch-size", ens_args.batch_size);

  SyntheticArgs syn;
  auto* gen = app.add_subcommand("gen-synthetic", "features and labels from a hidden linear teacher");
  gen->add_option("--n", syn.n)->required();
  gen->add_option("--seed", syn.seed);
  gen->add_option("--sentinel-fraction", syn.options.sentinel_fraction);
  gen->add_option("--latent-dim", syn.options.latent_dim);
  gen->add_option("--n-patches", syn.options.n_patches);
  gen->add_option("--n-channels", syn.options.n_channels);
  gen->add_option("--noise", syn.options.noise);
  gen->add_option("--videos", syn.options.n_videos, "number of videos (0: one per 32 frames)");
  gen->add_option("--out-features", syn.out_features)->required();
  gen->add_option("--out-labels", syn.out_labels)->required();

  SplitArgs split_args;
  auto* split = app.add_subcommand("split", "assign whole videos to k folds");
  split->add_option("--labels", split_args.labels)->required();
  split->add_option("--k", split_args.k);
  split->add_option("--seed", split_args.seed);
  split->add_option("--out", split_args.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*train) cmd_train(train_flags);
    else if (*kfold) cmd_kfold(kfold_flags);
    else if (*evaluate) cmd_evaluate(eval_args);
    else if (*predict) cmd_predict(predict_args);
    else if (*ens) cmd_ensemble(ens_args);
    else if (*gen) cmd_gen_synthetic(syn);
    else if (*split) cmd_split(split_args);
  } catch (const affect::Error& e) {
    return fail(e.kind(), e.what(), 1);
  } catch (const json::exception& e) {
    return fail("format", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
