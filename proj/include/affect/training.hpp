#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affect/features.hpp"
#include "affect/folds.hpp"
#include "affect/labels.hpp"
#include "affect/metrics.hpp"
#include "affect/model.hpp"
#include "affect/predictions.hpp"

namespace affect {

struct RunConfig {
  std::string features;
  std::string labels;
  std::string pseudo_labels;  // optional
  std::string val_features;   // optional; without them the training set is evaluated
  std::string val_labels;
  std::string output_dir = "run";
  std::size_t batch_size = 64;
  int epochs = 6;
  int warmup_epochs = 5;
  double base_lr = 1e-3;
  std::uint64_t seed = 0;
  int fold = -1;  // >= 0: hold out this fold of the training data for validation
  std::size_t k_folds = 6;
  int eval_every = 1;  // evaluate every n epochs; the last epoch is always evaluated
  bool class_weights = true;
  ModelConfig model;

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, RunConfig& c);

/// FNV-1a of the canonical JSON form, as 16 hex digits.
std::string config_hash(const RunConfig& c);

const char* git_describe();

/// Features and labels paired by position.
struct Dataset {
  FeatureSet features;
  std::vector<LabelRecord> labels;

  std::size_t size() const { return labels.size(); }
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// Orders labels to follow the feature records; a feature without a label or a
/// repeated id is a DataError. Labels without features are dropped.
Dataset align_dataset(FeatureSet features, std::span<const LabelRecord> labels);

Dataset load_dataset(const std::string& features_path, const std::string& labels_path,
                     const std::string& pseudo_path, const ModelConfig& model,
                     std::vector<std::string>* warnings = nullptr);

/// Stacks the given records into a (B·n_patches) × n_channels tensor.
Tensor<float> batch_features(const FeatureSet& features, std::span<const std::size_t> indices);

/// Raw outputs for every record, in input order. Repeated ids are rejected.
std::vector<PredictionRecord> predict(const ModelParams<float>& params, const FeatureSet& features,
                                      std::size_t batch_size = 64);

/// Mean of loss_total over consecutive batches in dataset order.
double dataset_loss(const ModelParams<float>& params, const Dataset& data,
                    const ClassWeights& weights, std::size_t batch_size = 64);

struct EpochLog {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;  // mean over the epoch's steps
  double lr = 0.0;          // schedule value at the end of the epoch
  std::optional<EvalReport> report;
  std::string checkpoint;
};

/// 1-based epochs; 0 when nothing was evaluated. Ties go to the earlier epoch.
struct BestEpochs {
  int overall = 0;
  int au = 0;
  int expr = 0;
  int va = 0;
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<EpochLog> epochs;
  BestEpochs best;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::size_t steps = 0;
  std::string split;  // "val" or "train"
};

void to_json(nlohmann::json& j, const TrainResult& r);

/// Adam on warmup-cosine learning rates with per-step fractional progress.
/// With a non-empty output_dir each evaluated epoch leaves epoch_NN.ckpt and
/// epoch_NN.report.json, and train_report.json summarizes the run.
TrainResult train_model(const Dataset& train, const Dataset* val, const RunConfig& config,
                        std::ostream* log = nullptr);

struct KFoldResult {
  FoldPlan plan;
  std::vector<EvalReport> fold_reports;  // each at its run's best overall epoch
  EvalReport average;
};

/// One run per fold under output_dir/fold_N; writes kfold_report.json and
/// kfold_table.txt.
KFoldResult run_kfold(const Dataset& data, const RunConfig& config, std::ostream* log = nullptr);

/// Fold scores as a fixed-width table with an Average row.
std::string format_fold_table(std::span<const EvalReport> folds, const EvalReport& average);

/// Re-run record: command, config, config hash, seed, git describe, and the
/// checksum of every input file.
void write_manifest(const std::string& path, const std::string& command,
                    const nlohmann::json& config, std::uint64_t seed,
                    const std::vector<std::string>& inputs);

}  // namespace affect
