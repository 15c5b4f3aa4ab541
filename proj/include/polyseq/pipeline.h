//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef POLYSEQ_PIPELINE_H_
#define POLYSEQ_PIPELINE_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "polyseq/checkpoint.h"
#include "polyseq/data.h"
#include "polyseq/schema.h"
#include "polyseq/tokenizer.h"
#include "polyseq/training.h"
#include "polyseq/transformer.h"

namespace polyseq {

/// A run description (JSON, "format": 1). Relative paths resolve against
/// the directory of the config file.
struct RunConfig {
  std::string run_id = "run";
  std::filesystem::path schema;
  std::filesystem::path dataset;     // finetune / eval
  std::filesystem::path corpus;      // pretrain: one sequence per line, or CSV
  std::filesystem::path output_dir = "out";
  std::optional<std::filesystem::path> pretrained;
  int max_length = 256;
  int min_count = 1;
  std::uint64_t model_seed = 0;
  std::uint64_t augment_seed = 0;
  bool skip_bad_rows = false;
  nlohmann::json model = nlohmann::json::object();  // ModelConfig sans vocab
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  SplitPlan split;

  /// Throws ConfigError naming the offending key.
  static RunConfig from_json(const nlohmann::json &j,
                             const std::filesystem::path &base_dir);
  static RunConfig load(const std::filesystem::path &path);
};

/// A model restored from a checkpoint, with what it needs to encode input.
struct LoadedModel {
  std::string kind;  // "pretrain" | "finetune"
  ModelConfig config;
  Vocabulary vocab;
  std::optional<DatasetSchema> schema;
  LabelScaler scaler;
  std::unique_ptr<Transformer<float>> model;
};

/// Throws IoError if the file is missing or malformed, StateError if the
/// parameters do not fit the stored model config.
LoadedModel load_model(const std::filesystem::path &path);

/// Tokenizes and encodes; unknown tokens become <unk>.
std::vector<Example> encode_records(const std::vector<PolymerRecord> &records,
                                    const DatasetSchema &schema,
                                    const Vocabulary &vocab, int max_length);

/// Sequences to train on: one assembled sequence per non-empty line, or the
/// records of a CSV file assembled under `schema`.
std::vector<std::string> read_sequences(const std::filesystem::path &path,
                                        const DatasetSchema &schema,
                                        bool skip_bad_rows);

struct PretrainRunResult {
  PretrainResult result;
  std::filesystem::path best_checkpoint;
};

/// Writes epoch_<n>.ckpt, best.ckpt, pretrain.log and pretrain_history.csv
/// under cfg.output_dir.
PretrainRunResult run_pretrain(const RunConfig &cfg, std::ostream *progress);

struct FoldOutcome {
  int fold = 0;
  int best_epoch = 0;
  Metrics metrics;
  std::size_t train_records = 0;       // before augmentation
  std::size_t augmented_records = 0;
  std::size_t test_records = 0;
  std::filesystem::path checkpoint;
};

struct FinetuneRunResult {
  std::vector<FoldOutcome> folds;
  Metrics mean;
  std::filesystem::path metrics_csv;
};

/// Per fold: augment the train split, build or extend the vocabulary,
/// initialize (optionally from cfg.pretrained), finetune, checkpoint.
/// Writes splits.csv, metrics.csv, finetune.log, fold_<k>.ckpt.
FinetuneRunResult run_finetune(const RunConfig &cfg, std::ostream *progress);

/// Metrics of a finetuned checkpoint. When the checkpoint records a fold
/// and the config describes the same split, only that fold's test records
/// are scored; otherwise the whole dataset.
struct EvalRunResult {
  Metrics metrics;
  std::size_t records = 0;
  std::optional<int> fold;
};
EvalRunResult run_eval(const RunConfig &cfg,
                       const std::filesystem::path &checkpoint);

// --- analysis ------------------------------------------------------------------

/// Attention maps of one sequence over its non-pad positions. Layers and
/// heads are 0-based; an empty `layers` means all.
nlohmann::json export_attention(const LoadedModel &loaded,
                                const std::vector<std::string> &tokens,
                                const std::vector<int> &layers);

/// Last hidden layer max-pooled over non-pad positions, one row per example.
std::vector<std::vector<float>> pooled_embeddings(
    const Transformer<float> &model, const std::vector<Example> &examples);

}  // namespace polyseq

#endif  // POLYSEQ_PIPELINE_H_
