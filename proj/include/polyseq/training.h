//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef POLYSEQ_TRAINING_H_
#define POLYSEQ_TRAINING_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "polyseq/optim.h"
#include "polyseq/tokenizer.h"
#include "polyseq/transformer.h"

namespace polyseq {

inline constexpr int kIgnoreIndex = -100;

struct MaskingPolicy {
  double select_prob = 0.15;
  double mask_frac = 0.8;
  double random_frac = 0.1;
  double keep_frac = 0.1;

  /// Throws ConfigError.
  void validate() const;
};

/// round-half-up(select_prob * m), at least 1 when m >= 1.
int masked_count(int maskable, double select_prob);

/// Whether MLM may select this position: a real token other than <s>, </s>.
inline bool is_maskable(int id, int attention) {
  return attention != 0 && id != Vocabulary::kBos && id != Vocabulary::kEos
         && id != Vocabulary::kPad;
}

struct MaskedSequence {
  std::vector<int> input_ids;
  std::vector<int> labels;  // original id at selected positions, else ignore
};

/// Selects positions uniformly without replacement, then draws
/// <mask> / random non-special token / unchanged per selected position.
MaskedSequence apply_masking(std::span<const int> ids,
                             std::span<const int> attention_mask,
                             const MaskingPolicy &policy, int vocab_size,
                             std::mt19937_64 &rng);

/// Mean cross-entropy over positions whose label is not kIgnoreIndex.
/// `logits` is [B, L, V]; throws DegenerateBatch if nothing is selected.
template <class T>
tensor::Tensor<T> mlm_loss(const tensor::Tensor<T> &logits,
                           std::span<const int> labels);

template <class T>
tensor::Tensor<T> regression_loss(const tensor::Tensor<T> &pred,
                                  std::span<const T> labels);

enum class ScheduleKind { kLinear, kCosine };

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::kLinear;
  double warmup_ratio = 0.05;
  long total_steps = 1;

  long warmup_steps() const;
};

/// Linear warmup from 0 to `peak`, then linear decay to 0 or cosine
/// annealing to 0 at total_steps.
double lr_at(long step, const ScheduleConfig &schedule, double peak);

struct LLRDConfig {
  double head_lr = 1e-4;
  double top_layer_lr = 5e-5;
  double decay = 0.9;
};

/// Head parameters (mlm.*, reg.*) at head_lr; encoder layer l (1-based,
/// names are 0-based) of L at top_layer_lr * decay^(L - l); embeddings at
/// top_layer_lr * decay^L. Throws NameError for other names.
template <class T>
std::vector<ParamGroup> build_llrd_groups(const ParamStore<T> &params,
                                          const LLRDConfig &cfg, int n_layers);

struct Metrics {
  double rmse = 0.0;
  double r2 = 0.0;  // NaN when the labels are constant
};

/// Throws std::invalid_argument on empty or mismatched inputs.
Metrics evaluate(std::span<const double> pred, std::span<const double> labels);
Metrics mean_metrics(std::span<const Metrics> folds);

/// One encoded example; `label` is unused for MLM.
struct Example {
  std::vector<int> ids;
  std::vector<int> mask;
  double label = 0.0;
  int record_id = -1;
};

Example make_example(const TokenSequence &seq, double label = 0.0,
                     int record_id = -1);

struct StepLog {
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

// --- pretraining -------------------------------------------------------------

struct PretrainConfig {
  int epochs = 30;
  int batch_size = 200;
  double lr = 5e-5;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double warmup_ratio = 0.05;
  ScheduleKind schedule = ScheduleKind::kLinear;
  double clip_grad_norm = 0.0;
  MaskingPolicy masking;
  bool dynamic_masking = true;
  /// 0 evaluates on the training set itself.
  double val_fraction = 0.2;
  /// Stops after this many optimizer steps when positive.
  long max_steps = 0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static PretrainConfig from_json(const nlohmann::json &j);
};

struct MlmEval {
  double loss = 0.0;
  double accuracy = 0.0;
  long selected = 0;
};

struct PretrainEpoch {
  int epoch = 0;
  long steps = 0;
  double train_loss = 0.0;
  MlmEval val;
};

struct PretrainResult {
  std::vector<PretrainEpoch> epochs;
  std::vector<StepLog> steps;
  int best_epoch = 0;
  std::vector<int> train_indices;
  std::vector<int> val_indices;
};

struct PretrainHooks {
  std::ostream *log = nullptr;
  /// Called after each epoch, before best-model restoration.
  std::function<void(const PretrainEpoch &, const AdamW<float> &)> on_epoch;
};

/// Masked-token loss and accuracy in eval mode (dropout off) with masks
/// drawn from `mask_seed`.
MlmEval evaluate_mlm(const Transformer<float> &model,
                     std::span<const Example> examples,
                     const MaskingPolicy &policy, int batch_size,
                     std::uint64_t mask_seed);

/// Runs MLM training; on return the model holds the weights of the epoch
/// with the lowest validation loss. Throws NumericalError on a non-finite
/// loss.
PretrainResult pretrain(Transformer<float> &model,
                        std::span<const Example> corpus,
                        const PretrainConfig &cfg,
                        const PretrainHooks &hooks = {});

// --- finetuning --------------------------------------------------------------

struct LabelScaler {
  double mean = 0.0;
  double scale = 1.0;

  static LabelScaler fit(std::span<const double> labels);
  double forward(double y) const { return (y - mean) / scale; }
  double inverse(double z) const { return z * scale + mean; }
  nlohmann::json to_json() const { return {{"mean", mean}, {"scale", scale}}; }
  static LabelScaler from_json(const nlohmann::json &j);
};

struct FinetuneConfig {
  int epochs = 20;
  int batch_size = 16;
  LLRDConfig llrd;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double warmup_ratio = 0.05;
  ScheduleKind schedule = ScheduleKind::kCosine;
  double clip_grad_norm = 0.0;
  bool freeze_encoder = false;
  bool standardize_labels = true;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static FinetuneConfig from_json(const nlohmann::json &j);
};

struct FinetuneEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  Metrics eval;
};

struct FinetuneResult {
  std::vector<FinetuneEpoch> epochs;
  std::vector<StepLog> steps;
  int best_epoch = 0;
  Metrics best;
  LabelScaler scaler;
};

/// Predictions in label units (eval mode).
std::vector<double> predict(const Transformer<float> &model,
                            std::span<const Example> examples,
                            const LabelScaler &scaler, int batch_size);

/// Regression finetuning; on return the model holds the weights of the
/// epoch with the lowest eval RMSE.
FinetuneResult finetune(Transformer<float> &model,
                        std::span<const Example> train,
                        std::span<const Example> eval,
                        const FinetuneConfig &cfg,
                        std::ostream *log = nullptr);

/// Packs examples into a [batch, length] grid trimmed to the longest real
/// sequence.
struct PackedBatch {
  std::vector<int> ids;
  std::vector<int> mask;
  std::size_t batch = 0;
  std::size_t length = 0;
};
PackedBatch pack_batch(std::span<const Example> examples,
                       std::span<const int> indices);

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule(const std::string &text);

}  // namespace polyseq

#endif  // POLYSEQ_TRAINING_H_
