#include "affect/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include "affect/binary_io.hpp"
#include "affect/checkpoint.hpp"
#include "affect/errors.hpp"
#include "affect/losses.hpp"
#include "affect/optim.hpp"

namespace fs = std::filesystem;

namespace affect {

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("failed writing '" + path.string() + "'");
}

std::string epoch_stem(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%02d", epoch);
  return buf;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace

void RunConfig::validate() const {
  if (epochs <= 0) throw ConfigError("nothing to train: epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (warmup_epochs < 0 || warmup_epochs > epochs) {
    throw ConfigError("warmup_epochs must lie in [0, epochs]");
  }
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("base_lr must be positive");
  if (eval_every < 0) throw ConfigError("eval_every must be non-negative");
  if (fold >= 0 && static_cast<std::size_t>(fold) >= k_folds) {
    throw ConfigError("fold " + std::to_string(fold) + " is outside 0.." + std::to_string(k_folds - 1));
  }
  model.validate();
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"features", c.features},
                     {"labels", c.labels},
                     {"pseudo_labels", c.pseudo_labels},
                     {"val_features", c.val_features},
                     {"val_labels", c.val_labels},
                     {"output_dir", c.output_dir},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"warmup_epochs", c.warmup_epochs},
                     {"base_lr", c.base_lr},
                     {"seed", c.seed},
                     {"fold", c.fold},
                     {"k_folds", c.k_folds},
                     {"eval_every", c.eval_every},
                     {"class_weights", c.class_weights},
                     {"model", c.model}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) j.at(key).get_to(dst);
  };
  get("features", c.features);
  get("labels", c.labels);
  get("pseudo_labels", c.pseudo_labels);
  get("val_features", c.val_features);
  get("val_labels", c.val_labels);
  get("output_dir", c.output_dir);
  get("batch_size", c.batch_size);
  get("epochs", c.epochs);
  get("warmup_epochs", c.warmup_epochs);
  get("base_lr", c.base_lr);
  get("seed", c.seed);
  get("fold", c.fold);
  get("k_folds", c.k_folds);
  get("eval_every", c.eval_every);
  get("class_weights", c.class_weights);
  get("model", c.model);
}

std::string config_hash(const RunConfig& c) {
  return binary::hex64(binary::fnv1a64(nlohmann::json(c).dump()));
}

const char* git_describe() { return AFFECT_GIT_DESCRIBE; }

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{features.subset(indices), {}};
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels.at(i));
  return out;
}

Dataset align_dataset(FeatureSet features, std::span<const LabelRecord> labels) {
  std::unordered_map<std::string, const LabelRecord*> by_id;
  for (const auto& r : labels) {
    if (!by_id.emplace(r.id, &r).second) throw DataError("label file repeats id '" + r.id + "'");
  }
  Dataset out{std::move(features), {}};
  out.labels.reserve(out.features.size());
  std::unordered_set<std::string> seen;
  for (const auto& id : out.features.ids()) {
    if (!seen.insert(id).second) throw DataError("feature container repeats id '" + id + "'");
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("no label for feature record '" + id + "'");
    out.labels.push_back(*it->second);
  }
  return out;
}

Dataset load_dataset(const std::string& features_path, const std::string& labels_path,
                     const std::string& pseudo_path, const ModelConfig& model,
                     std::vector<std::string>* warnings) {
  auto labels = load_labels(labels_path);
  if (!pseudo_path.empty()) {
    auto merged = merge_pseudo_labels(labels, load_labels(pseudo_path));
    labels = std::move(merged.labels);
    if (warnings) {
      warnings->insert(warnings->end(), merged.warnings.begin(), merged.warnings.end());
    }
  }
  return align_dataset(load_features(features_path, model.n_patches, model.in_channels), labels);
}

Tensor<float> batch_features(const FeatureSet& features, std::span<const std::size_t> indices) {
  std::vector<float> values;
  values.reserve(indices.size() * features.record_size());
  for (auto i : indices) {
    const auto r = features.record(i);
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor<float>::from({indices.size() * features.n_patches(), features.n_channels()},
                             std::move(values));
}

std::vector<PredictionRecord> predict(const ModelParams<float>& params, const FeatureSet& features,
                                      std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::unordered_set<std::string> seen;
  for (const auto& id : features.ids()) {
    if (!seen.insert(id).second) throw DataError("duplicate image id '" + id + "'");
  }
  NoGradGuard no_grad;
  std::vector<PredictionRecord> out;
  out.reserve(features.size());
  for (std::size_t start = 0; start < features.size(); start += batch_size) {
    const std::size_t b = std::min(batch_size, features.size() - start);
    std::vector<std::size_t> idx(b);
    std::iota(idx.begin(), idx.end(), start);
    const auto preds = forward(params, batch_features(features, idx), b);
    for (std::size_t i = 0; i < b; ++i) {
      PredictionRecord p;
      p.id = features.ids()[start + i];
      for (std::size_t j = 0; j < kNumAu; ++j) p.au_logits[j] = preds.au_logits.at(i, j);
      for (std::size_t c = 0; c < kNumExpr; ++c) p.expr_logits[c] = preds.expr_logits.at(i, c);
      for (std::size_t k = 0; k < kNumVa; ++k) p.va[k] = preds.va.at(i, k);
      out.push_back(std::move(p));
    }
  }
  return out;
}

double dataset_loss(const ModelParams<float>& params, const Dataset& data,
                    const ClassWeights& weights, std::size_t batch_size) {
  if (data.size() == 0) throw DataError("dataset_loss: empty dataset");
  NoGradGuard no_grad;
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t b = std::min(batch_size, data.size() - start);
    std::vector<std::size_t> idx(b);
    std::iota(idx.begin(), idx.end(), start);
    const auto preds = forward(params, batch_features(data.features, idx), b);
    const std::span<const LabelRecord> labels(data.labels.data() + start, b);
    total += loss_total(preds, labels, weights).total.item();
    ++batches;
  }
  return total / static_cast<double>(batches);
}

void to_json(nlohmann::json& j, const TrainResult& r) {
  auto epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    nlohmann::json row{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"lr", e.lr}};
    if (e.report) row["report"] = *e.report;
    if (!e.checkpoint.empty()) row["checkpoint"] = e.checkpoint;
    epochs.push_back(std::move(row));
  }
  j = nlohmann::json{{"split", r.split},
                     {"steps", r.steps},
                     {"initial_loss", r.initial_loss},
                     {"final_loss", r.final_loss},
                     {"best_epoch", {{"overall", r.best.overall},
                                     {"au", r.best.au},
                                     {"expr", r.best.expr},
                                     {"va", r.best.va}}},
                     {"epochs", std::move(epochs)}};
}

TrainResult train_model(const Dataset& train, const Dataset* val, const RunConfig& config,
                        std::ostream* log) {
  config.validate();
  if (train.size() == 0) throw DataError("training set is empty");
  if (train.features.n_patches() != config.model.n_patches ||
      train.features.n_channels() != config.model.in_channels) {
    throw ShapeError("training features are " + std::to_string(train.features.n_patches()) + "x" +
                     std::to_string(train.features.n_channels()) + ", model expects " +
                     std::to_string(config.model.n_patches) + "x" +
                     std::to_string(config.model.in_channels));
  }
  const Dataset& eval_set = val ? *val : train;
  const bool write = !config.output_dir.empty();
  if (write) fs::create_directories(config.output_dir);

  const ClassWeights weights =
      config.class_weights ? compute_class_weights(train.labels) : ClassWeights::uniform();
  const LrSchedule schedule{config.base_lr, config.warmup_epochs, config.epochs};

  TrainResult result{ModelParams<float>::init(config.model, config.seed), {}, {}, 0.0, 0.0, 0,
                     val ? "val" : "train"};
  auto& params = result.params;
  Adam<float> adam(params.parameters());
  result.initial_loss = dataset_loss(params, train, weights, config.batch_size);
  if (log) *log << "initial loss " << result.initial_loss << '\n';

  const std::size_t n = train.size();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  std::mt19937_64 shuffle_rng(config.seed);
  auto order = iota_indices(n);
  double best_overall = -INFINITY, best_au = -INFINITY, best_expr = -INFINITY, best_va = -INFINITY;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t start = s * config.batch_size;
      const std::size_t b = std::min(config.batch_size, n - start);
      const std::span<const std::size_t> idx(order.data() + start, b);
      std::vector<LabelRecord> labels;
      labels.reserve(b);
      for (auto i : idx) labels.push_back(train.labels[i]);

      const auto preds = forward(params, batch_features(train.features, idx), b);
      const auto loss = loss_total(preds, labels, weights);
      const double value = loss.total.item();
      auto diverged = [&](const std::string& what) {
        std::string last_good = "none";
        for (const auto& e : result.epochs) {
          if (!e.checkpoint.empty()) last_good = e.checkpoint;
        }
        return DivergenceError(what + " at epoch " + std::to_string(epoch + 1) + ", step " +
                               std::to_string(result.steps + 1) + "; last good checkpoint: " +
                               last_good);
      };
      if (!std::isfinite(value)) throw diverged("non-finite loss");
      const double progress =
          (static_cast<double>(result.steps) + 0.5) / static_cast<double>(steps_per_epoch);
      // A batch with no valid label of any kind carries no gradient.
      if (loss.total.requires_grad()) {
        adam.zero_grad();
        backward(loss.total);
        try {
          adam.step(lr_at(schedule, std::min(progress, static_cast<double>(config.epochs))));
        } catch (const DivergenceError&) {
          throw diverged("non-finite gradient");
        }
      }
      loss_sum += value;
      ++result.steps;
    }

    EpochLog entry;
    entry.epoch = epoch + 1;
    entry.train_loss = loss_sum / static_cast<double>(steps_per_epoch);
    entry.lr = lr_at(schedule, static_cast<double>(epoch + 1));
    const bool last = epoch + 1 == config.epochs;
    const bool evaluate_now = last || (config.eval_every > 0 && (epoch + 1) % config.eval_every == 0);
    if (evaluate_now) {
      const auto report = evaluate(predict(params, eval_set.features, config.batch_size),
                                   eval_set.labels);
      entry.report = report;
      if (report.p_mtl > best_overall) best_overall = report.p_mtl, result.best.overall = entry.epoch;
      if (report.p_au > best_au) best_au = report.p_au, result.best.au = entry.epoch;
      if (report.p_expr > best_expr) best_expr = report.p_expr, result.best.expr = entry.epoch;
      if (report.p_va > best_va) best_va = report.p_va, result.best.va = entry.epoch;
      if (write) {
        const auto stem = fs::path(config.output_dir) / epoch_stem(entry.epoch);
        entry.checkpoint = stem.string() + ".ckpt";
        save_checkpoint(entry.checkpoint, params,
                        {{"seed", config.seed}, {"epoch", entry.epoch}, {"steps", result.steps}});
        write_json(stem.string() + ".report.json",
                   {{"epoch", entry.epoch}, {"split", result.split}, {"report", report}});
      }
    }
    if (log) {
      *log << "epoch " << entry.epoch << " loss " << entry.train_loss << " lr " << entry.lr;
      if (entry.report) *log << " p_mtl " << entry.report->p_mtl;
      *log << '\n';
    }
    result.epochs.push_back(std::move(entry));
  }

  result.final_loss = dataset_loss(params, train, weights, config.batch_size);
  if (log) *log << "final loss " << result.final_loss << '\n';
  if (write) write_json(fs::path(config.output_dir) / "train_report.json", result);
  return result;
}

std::string format_fold_table(std::span<const EvalReport> folds, const EvalReport& average) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-8s %8s %8s %8s %8s\n", "Fold", "P_au", "P_expr", "P_va", "P_mtl");
  out += buf;
  auto row = [&](const std::string& name, const EvalReport& r) {
    std::snprintf(buf, sizeof buf, "%-8s %8.4f %8.4f %8.4f %8.4f\n", name.c_str(), r.p_au,
                  r.p_expr, r.p_va, r.p_mtl);
    out += buf;
  };
  for (std::size_t i = 0; i < folds.size(); ++i) row("Fold" + std::to_string(i + 1), folds[i]);
  row("Average", average);
  return out;
}

KFoldResult run_kfold(const Dataset& data, const RunConfig& config, std::ostream* log) {
  config.validate();
  KFoldResult result{kfold_split(data.features.ids(), config.k_folds, config.seed), {}, {}};
  const fs::path root = config.output_dir;
  for (std::size_t k = 0; k < config.k_folds; ++k) {
    const auto val_idx = result.plan.members(data.features.ids(), k);
    const auto train_idx = result.plan.complement(data.features.ids(), k);
    const auto val = data.subset(val_idx);
    const auto train = data.subset(train_idx);
    RunConfig fold_config = config;
    fold_config.fold = static_cast<int>(k);
    fold_config.output_dir = root.empty() ? std::string() : (root / ("fold_" + std::to_string(k))).string();
    if (log) {
      *log << "fold " << k + 1 << "/" << config.k_folds << ": " << train.size() << " train, "
           << val.size() << " val\n";
    }
    const auto run = train_model(train, &val, fold_config, log);
    result.fold_reports.push_back(*run.epochs.at(static_cast<std::size_t>(run.best.overall - 1)).report);
  }
  result.average = fold_aggregate(result.fold_reports);

  if (!root.empty()) {
    nlohmann::json j{{"k", config.k_folds},
                     {"folds", result.fold_reports},
                     {"average", result.average},
                     {"frame_counts", result.plan.frame_counts},
                     {"video_counts", result.plan.video_counts}};
    write_json(root / "kfold_report.json", j);
    std::ofstream table(root / "kfold_table.txt", std::ios::trunc);
    table << format_fold_table(result.fold_reports, result.average);
  }
  if (log) *log << format_fold_table(result.fold_reports, result.average);
  return result;
}

void write_manifest(const std::string& path, const std::string& command,
                    const nlohmann::json& config, std::uint64_t seed,
                    const std::vector<std::string>& inputs) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  auto checksums = nlohmann::json::object();
  for (const auto& path : inputs) {
    if (!path.empty()) checksums[path] = binary::hex64(binary::file_checksum(path));
  }
  write_json(path,
             {{"command", command},
              {"config", config},
              {"config_hash", binary::hex64(binary::fnv1a64(config.dump()))},
              {"seed", seed},
              {"git_describe", git_describe()},
              {"inputs", checksums}});
}

}  // namespace affect
