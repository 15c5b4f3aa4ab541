//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "polyseq/training.h"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "polyseq/error.h"

namespace polyseq {
namespace {

using nlohmann::json;
namespace ts = tensor;

constexpr double kPi = 3.14159265358979323846;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class JsonReader {
public:
  JsonReader(const json &j, std::string where,
             std::initializer_list<std::string_view> known)
      : j_(j), where_(std::move(where)) {
    if (!j.is_object())
      throw ConfigError(where_ + ": expected an object");
    for (const auto &[key, _]: j.items())
      if (std::find(known.begin(), known.end(), key) == known.end())
        throw ConfigError(where_ + ": unknown key '" + key + "'");
  }

  template <class V>
  void get(const char *key, V &out) const {
    if (!j_.contains(key))
      return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception &) {
      throw ConfigError(where_ + "." + key + ": wrong value type");
    }
  }

  bool has(const char *key) const { return j_.contains(key); }
  const json &at(const char *key) const { return j_.at(key); }

private:
  const json &j_;
  std::string where_;
};

MaskingPolicy masking_from_json(const json &j) {
  JsonReader r(j, "masking", {"select_prob", "mask_frac", "random_frac",
                              "keep_frac"});
  MaskingPolicy p;
  r.get("select_prob", p.select_prob);
  r.get("mask_frac", p.mask_frac);
  r.get("random_frac", p.random_frac);
  r.get("keep_frac", p.keep_frac);
  return p;
}

json masking_to_json(const MaskingPolicy &p) {
  return {{"select_prob", p.select_prob},
          {"mask_frac", p.mask_frac},
          {"random_frac", p.random_frac},
          {"keep_frac", p.keep_frac}};
}

void check_finite(double loss, long step, const char *phase) {
  if (!std::isfinite(loss))
    throw NumericalError(std::string(phase) + ": non-finite loss "
                         + std::to_string(loss) + " at step "
                         + std::to_string(step));
}

void log_step(std::ostream *log, const StepLog &s) {
  if (!log)
    return;
  char buf[96];
  std::snprintf(buf, sizeof buf, "%ld %.9g %.9g\n", s.step, s.lr, s.loss);
  *log << buf;
}

void restore(ParamStore<float> &dst, const ParamStore<float> &src) {
  for (auto &[name, t]: dst) {
    auto from = src.at(name).data();
    std::copy(from.begin(), from.end(), t.data().begin());
  }
}

std::vector<int> shuffled(std::vector<int> v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::shuffle(v.begin(), v.end(), rng);
  return v;
}

// Hidden rows at the selected positions of a packed batch, fed through the
// MLM head.
struct MlmForward {
  ts::Tensor<float> logits;
  std::vector<int> targets;
};

MlmForward mlm_forward(const Transformer<float> &model,
                       const std::vector<MaskedSequence> &masked,
                       std::span<const int> attention, std::size_t length,
                       ForwardContext &ctx) {
  const std::size_t batch = masked.size();
  std::vector<int> ids(batch * length);
  std::vector<int> rows;
  MlmForward out;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < length; ++i) {
      ids[b * length + i] = masked[b].input_ids[i];
      if (masked[b].labels[i] != kIgnoreIndex) {
        rows.push_back(static_cast<int>(b * length + i));
        out.targets.push_back(masked[b].labels[i]);
      }
    }
  }
  if (rows.empty())
    return out;
  auto enc = model.encode(ids, attention, batch, ctx);
  const std::size_t d = static_cast<std::size_t>(model.config().d_model);
  auto flat = ts::reshape(enc.hidden, {batch * length, d});
  auto picked = ts::embedding(flat, std::span<const int>(rows), {rows.size()});
  out.logits = model.mlm_logits(picked, ctx);
  return out;
}

// Masks the examples at `indices`, truncated to the batch length.
std::vector<MaskedSequence> mask_batch(std::span<const Example> examples,
                                       std::span<const int> indices,
                                       std::size_t length,
                                       const MaskingPolicy &policy,
                                       int vocab_size, std::mt19937_64 &rng) {
  std::vector<MaskedSequence> out;
  for (int idx: indices) {
    const Example &ex = examples[static_cast<std::size_t>(idx)];
    std::span<const int> ids(ex.ids.data(), length);
    std::span<const int> mask(ex.mask.data(), length);
    out.push_back(apply_masking(ids, mask, policy, vocab_size, rng));
  }
  return out;
}

std::size_t real_length(const Example &ex) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < ex.mask.size(); ++i)
    if (ex.mask[i])
      n = i + 1;
  return n;
}

}  // namespace

// --- masking -----------------------------------------------------------------

void MaskingPolicy::validate() const {
  if (!(select_prob > 0.0 && select_prob <= 1.0))
    throw ConfigError("masking.select_prob: must be in (0, 1]");
  for (auto [key, v]: {std::pair {"mask_frac", mask_frac},
                       std::pair {"random_frac", random_frac},
                       std::pair {"keep_frac", keep_frac}})
    if (!(v >= 0.0 && v <= 1.0))
      throw ConfigError(std::string("masking.") + key + ": must be in [0, 1]");
  if (std::abs(mask_frac + random_frac + keep_frac - 1.0) > 1e-9)
    throw ConfigError("masking: mask_frac + random_frac + keep_frac must be 1");
}

int masked_count(int maskable, double select_prob) {
  if (maskable <= 0)
    return 0;
  const int k = static_cast<int>(std::floor(select_prob * maskable + 0.5));
  return std::clamp(k, 1, maskable);
}

MaskedSequence apply_masking(std::span<const int> ids,
                             std::span<const int> attention_mask,
                             const MaskingPolicy &policy, int vocab_size,
                             std::mt19937_64 &rng) {
  if (ids.size() != attention_mask.size())
    throw ShapeError("apply_masking: ids and attention mask differ in length");
  MaskedSequence out;
  out.input_ids.assign(ids.begin(), ids.end());
  out.labels.assign(ids.size(), kIgnoreIndex);

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (is_maskable(ids[i], attention_mask[i]))
      candidates.push_back(i);
  const int k =
      masked_count(static_cast<int>(candidates.size()), policy.select_prob);
  for (int j = 0; j < k; ++j) {
    std::uniform_int_distribution<std::size_t> pick(
        static_cast<std::size_t>(j), candidates.size() - 1);
    std::swap(candidates[static_cast<std::size_t>(j)], candidates[pick(rng)]);
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int j = 0; j < k; ++j) {
    const std::size_t pos = candidates[static_cast<std::size_t>(j)];
    out.labels[pos] = ids[pos];
    const double u = unit(rng);
    if (u < policy.mask_frac) {
      out.input_ids[pos] = Vocabulary::kMask;
    } else if (u < policy.mask_frac + policy.random_frac) {
      if (vocab_size > Vocabulary::kNumSpecial) {
        std::uniform_int_distribution<int> token(Vocabulary::kNumSpecial,
                                                 vocab_size - 1);
        out.input_ids[pos] = token(rng);
      }
    }
  }
  return out;
}

template <class T>
ts::Tensor<T> mlm_loss(const ts::Tensor<T> &logits, std::span<const int> labels) {
  if (logits.rank() != 3)
    throw ShapeError("mlm_loss expects [B, L, V] logits, got "
                     + ts::to_string(logits.shape()));
  const auto &s = logits.shape();
  return ts::cross_entropy(ts::reshape(logits, {s[0] * s[1], s[2]}), labels,
                           kIgnoreIndex);
}

template <class T>
ts::Tensor<T> regression_loss(const ts::Tensor<T> &pred,
                              std::span<const T> labels) {
  return ts::mse_loss(pred, labels);
}

// --- schedules -----------------------------------------------------------------

long ScheduleConfig::warmup_steps() const {
  return static_cast<long>(
      std::ceil(warmup_ratio * static_cast<double>(total_steps) - 1e-9));
}

double lr_at(long step, const ScheduleConfig &schedule, double peak) {
  const long warmup = schedule.warmup_steps();
  const long total = schedule.total_steps;
  if (step < warmup)
    return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (total <= warmup)
    return peak;
  const double progress = std::clamp(
      static_cast<double>(step - warmup) / static_cast<double>(total - warmup),
      0.0, 1.0);
  if (schedule.kind == ScheduleKind::kLinear)
    return peak * (1.0 - progress);
  return 0.5 * peak * (1.0 + std::cos(kPi * progress));
}

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::kLinear ? "linear" : "cosine";
}

ScheduleKind parse_schedule(const std::string &text) {
  if (text == "linear")
    return ScheduleKind::kLinear;
  if (text == "cosine")
    return ScheduleKind::kCosine;
  throw ConfigError("schedule: expected linear or cosine, got '" + text + "'");
}

template <class T>
std::vector<ParamGroup> build_llrd_groups(const ParamStore<T> &params,
                                          const LLRDConfig &cfg, int n_layers) {
  std::vector<ParamGroup> groups;
  groups.push_back({"head", cfg.head_lr, {}});
  for (int l = n_layers; l >= 1; --l)
    groups.push_back({"layer." + std::to_string(l),
                      cfg.top_layer_lr * std::pow(cfg.decay, n_layers - l),
                      {}});
  groups.push_back(
      {"embed", cfg.top_layer_lr * std::pow(cfg.decay, n_layers), {}});

  for (const auto &[name, _]: params) {
    if (name.rfind("reg.", 0) == 0 || name.rfind("mlm.", 0) == 0) {
      groups.front().names.push_back(name);
    } else if (name.rfind("embed.", 0) == 0) {
      groups.back().names.push_back(name);
    } else if (auto k = encoder_layer_index(name)) {
      if (*k >= n_layers)
        throw NameError("parameter '" + name + "' names layer "
                        + std::to_string(*k) + " of a "
                        + std::to_string(n_layers) + "-layer encoder");
      groups[static_cast<std::size_t>(n_layers - *k)].names.push_back(name);
    } else {
      throw NameError("cannot place parameter '" + name
                      + "' in a learning-rate group");
    }
  }
  return groups;
}

// --- metrics -----------------------------------------------------------------

Metrics evaluate(std::span<const double> pred, std::span<const double> labels) {
  if (pred.empty() || pred.size() != labels.size())
    throw std::invalid_argument("evaluate: need equal, non-zero lengths");
  const double n = static_cast<double>(labels.size());
  const double mean = std::accumulate(labels.begin(), labels.end(), 0.0) / n;
  double sse = 0.0;
  double sst = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    sse += (pred[i] - labels[i]) * (pred[i] - labels[i]);
    sst += (labels[i] - mean) * (labels[i] - mean);
  }
  Metrics m;
  m.rmse = std::sqrt(sse / n);
  if (sst == 0.0) {
    std::cerr << "warning: all labels are equal; R2 is undefined\n";
    m.r2 = std::numeric_limits<double>::quiet_NaN();
  } else {
    m.r2 = 1.0 - sse / sst;
  }
  return m;
}

Metrics mean_metrics(std::span<const Metrics> folds) {
  Metrics m;
  if (folds.empty())
    return m;
  for (const Metrics &f: folds) {
    m.rmse += f.rmse;
    m.r2 += f.r2;
  }
  m.rmse /= static_cast<double>(folds.size());
  m.r2 /= static_cast<double>(folds.size());
  return m;
}

Example make_example(const TokenSequence &seq, double label, int record_id) {
  return {seq.ids, seq.attention_mask, label, record_id};
}

PackedBatch pack_batch(std::span<const Example> examples,
                       std::span<const int> indices) {
  PackedBatch out;
  out.batch = indices.size();
  for (int i: indices)
    out.length =
        std::max(out.length, real_length(examples[static_cast<std::size_t>(i)]));
  out.ids.reserve(out.batch * out.length);
  out.mask.reserve(out.batch * out.length);
  for (int i: indices) {
    const Example &ex = examples[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < out.length; ++j) {
      out.ids.push_back(j < ex.ids.size() ? ex.ids[j] : Vocabulary::kPad);
      out.mask.push_back(j < ex.mask.size() ? ex.mask[j] : 0);
    }
  }
  return out;
}

// --- pretraining ---------------------------------------------------------------

void PretrainConfig::validate() const {
  if (epochs < 1)
    throw ConfigError("pretrain.epochs: must be positive");
  if (batch_size < 1)
    throw ConfigError("pretrain.batch_size: must be positive");
  if (!(lr >= 0.0))
    throw ConfigError("pretrain.lr: must be non-negative");
  if (!(weight_decay >= 0.0))
    throw ConfigError("pretrain.weight_decay: must be non-negative");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0))
    throw ConfigError("pretrain.warmup_ratio: must be in [0, 1]");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw ConfigError("pretrain.val_fraction: must be in [0, 1)");
  masking.validate();
}

json PretrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps},
          {"warmup_ratio", warmup_ratio},
          {"schedule", to_string(schedule)},
          {"clip_grad_norm", clip_grad_norm},
          {"masking", masking_to_json(masking)},
          {"dynamic_masking", dynamic_masking},
          {"val_fraction", val_fraction},
          {"max_steps", max_steps},
          {"seed", seed}};
}

PretrainConfig PretrainConfig::from_json(const json &j) {
  JsonReader r(j, "pretrain",
               {"epochs", "batch_size", "lr", "weight_decay", "beta1", "beta2",
                "eps", "warmup_ratio", "schedule", "clip_grad_norm", "masking",
                "dynamic_masking", "val_fraction", "max_steps", "seed"});
  PretrainConfig c;
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("lr", c.lr);
  r.get("weight_decay", c.weight_decay);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("eps", c.eps);
  r.get("warmup_ratio", c.warmup_ratio);
  r.get("clip_grad_norm", c.clip_grad_norm);
  r.get("dynamic_masking", c.dynamic_masking);
  r.get("val_fraction", c.val_fraction);
  r.get("max_steps", c.max_steps);
  r.get("seed", c.seed);
  if (r.has("schedule")) {
    std::string s;
    r.get("schedule", s);
    c.schedule = parse_schedule(s);
  }
  if (r.has("masking"))
    c.masking = masking_from_json(r.at("masking"));
  c.validate();
  return c;
}

MlmEval evaluate_mlm(const Transformer<float> &model,
                     std::span<const Example> examples,
                     const MaskingPolicy &policy, int batch_size,
                     std::uint64_t mask_seed) {
  tensor::NoGradGuard no_grad;
  std::mt19937_64 rng(mask_seed);
  MlmEval out;
  double loss_sum = 0.0;
  long correct = 0;
  const int vocab = model.config().vocab_size;
  for (std::size_t start = 0; start < examples.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(examples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<int> idx(end - start);
    std::iota(idx.begin(), idx.end(), static_cast<int>(start));
    const PackedBatch packed = pack_batch(examples, idx);
    auto masked = mask_batch(examples, idx, packed.length, policy, vocab, rng);
    ForwardContext ctx;
    MlmForward fw = mlm_forward(model, masked, packed.mask, packed.length, ctx);
    if (fw.targets.empty())
      continue;
    auto loss = ts::cross_entropy(fw.logits, std::span<const int>(fw.targets),
                                  kIgnoreIndex);
    loss_sum += static_cast<double>(loss.item())
                * static_cast<double>(fw.targets.size());
    const auto logits = fw.logits.data();
    const std::size_t v = static_cast<std::size_t>(vocab);
    for (std::size_t r = 0; r < fw.targets.size(); ++r) {
      const auto row = logits.subspan(r * v, v);
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      correct += best == fw.targets[r];
    }
    out.selected += static_cast<long>(fw.targets.size());
  }
  if (out.selected > 0) {
    out.loss = loss_sum / static_cast<double>(out.selected);
    out.accuracy =
        static_cast<double>(correct) / static_cast<double>(out.selected);
  }
  return out;
}

PretrainResult pretrain(Transformer<float> &model,
                        std::span<const Example> corpus,
                        const PretrainConfig &cfg, const PretrainHooks &hooks) {
  cfg.validate();
  if (corpus.empty())
    throw EmptySplit("pretraining corpus is empty");

  PretrainResult result;
  std::vector<int> all(corpus.size());
  std::iota(all.begin(), all.end(), 0);
  all = shuffled(std::move(all), mix_seed(cfg.seed, 0x5b117));
  std::size_t n_val = 0;
  if (cfg.val_fraction > 0.0) {
    n_val = static_cast<std::size_t>(
        std::llround(cfg.val_fraction * static_cast<double>(corpus.size())));
    n_val = std::max<std::size_t>(n_val, 1);
    if (n_val >= corpus.size())
      throw EmptySplit("pretraining corpus too small for a validation split");
  }
  result.val_indices.assign(all.begin(), all.begin() + static_cast<long>(n_val));
  result.train_indices.assign(all.begin() + static_cast<long>(n_val), all.end());
  std::sort(result.train_indices.begin(), result.train_indices.end());
  std::sort(result.val_indices.begin(), result.val_indices.end());

  std::vector<Example> train;
  std::vector<Example> val;
  for (int i: result.train_indices)
    train.push_back(corpus[static_cast<std::size_t>(i)]);
  for (int i: result.val_indices)
    val.push_back(corpus[static_cast<std::size_t>(i)]);
  if (val.empty())
    val = train;

  const long per_epoch = static_cast<long>(
      (train.size() + static_cast<std::size_t>(cfg.batch_size) - 1)
      / static_cast<std::size_t>(cfg.batch_size));
  ScheduleConfig schedule {cfg.schedule, cfg.warmup_ratio,
                           per_epoch * cfg.epochs};
  if (cfg.max_steps > 0)
    schedule.total_steps = std::min(schedule.total_steps, cfg.max_steps);

  ParamStore<float> &params = model.params();
  AdamW<float> opt({cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay,
                    cfg.clip_grad_norm});
  opt.init(params);
  std::vector<ParamGroup> groups {{"all", 0.0, params.names()}};
  const int vocab = model.config().vocab_size;

  // Static masking draws every example's mask once up front.
  std::vector<MaskedSequence> fixed;
  if (!cfg.dynamic_masking) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x57a7));
    for (const Example &ex: train)
      fixed.push_back(apply_masking(ex.ids, ex.mask, cfg.masking, vocab, rng));
  }

  ParamStore<float> best = params.clone();
  double best_loss = std::numeric_limits<double>::infinity();
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    order = shuffled(std::move(order), mix_seed(cfg.seed, 1000 + epoch));

    double loss_sum = 0.0;
    long loss_count = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps)
        break;
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::span<const int> idx(order.data() + start, end - start);
      const PackedBatch packed = pack_batch(train, idx);

      std::vector<MaskedSequence> masked;
      if (cfg.dynamic_masking) {
        std::mt19937_64 rng(mix_seed(cfg.seed, 0x10000000ULL + static_cast<std::uint64_t>(step)));
        masked = mask_batch(train, idx, packed.length, cfg.masking, vocab, rng);
      } else {
        for (int i: idx) {
          MaskedSequence m = fixed[static_cast<std::size_t>(i)];
          m.input_ids.resize(packed.length);
          m.labels.resize(packed.length);
          masked.push_back(std::move(m));
        }
      }

      ForwardContext ctx {true, cfg.seed, static_cast<std::uint64_t>(step), 0};
      MlmForward fw = mlm_forward(model, masked, packed.mask, packed.length, ctx);
      if (fw.targets.empty())
        continue;  // nothing maskable in this batch
      auto loss = ts::cross_entropy(fw.logits, std::span<const int>(fw.targets),
                                    kIgnoreIndex);
      const double value = static_cast<double>(loss.item());
      check_finite(value, step, "pretrain");

      params.zero_grad();
      ts::backward(loss);
      const double lr = lr_at(step, schedule, cfg.lr);
      groups.front().lr = lr;
      opt.step(params, groups);

      StepLog s {step, lr, value};
      result.steps.push_back(s);
      log_step(hooks.log, s);
      loss_sum += value;
      ++loss_count;
      ++step;
    }
    params.zero_grad();

    PretrainEpoch rec;
    rec.epoch = epoch;
    rec.steps = step;
    rec.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    rec.val = evaluate_mlm(model, val, cfg.masking, cfg.batch_size,
                           mix_seed(cfg.seed, 0xe7a1));
    result.epochs.push_back(rec);
    if (hooks.on_epoch)
      hooks.on_epoch(rec, opt);
    if (rec.val.loss < best_loss) {
      best_loss = rec.val.loss;
      best = params.clone();
      result.best_epoch = epoch;
    }
    if (cfg.max_steps > 0 && step >= cfg.max_steps)
      break;
  }
  restore(params, best);
  return result;
}

// --- finetuning ----------------------------------------------------------------

LabelScaler LabelScaler::fit(std::span<const double> labels) {
  LabelScaler s;
  if (labels.empty())
    return s;
  const double n = static_cast<double>(labels.size());
  s.mean = std::accumulate(labels.begin(), labels.end(), 0.0) / n;
  double var = 0.0;
  for (double y: labels)
    var += (y - s.mean) * (y - s.mean);
  const double sd = std::sqrt(var / n);
  s.scale = sd > 0.0 ? sd : 1.0;
  return s;
}

LabelScaler LabelScaler::from_json(const json &j) {
  JsonReader r(j, "label_scaler", {"mean", "scale"});
  LabelScaler s;
  r.get("mean", s.mean);
  r.get("scale", s.scale);
  return s;
}

void FinetuneConfig::validate() const {
  if (epochs < 1)
    throw ConfigError("finetune.epochs: must be positive");
  if (batch_size < 1)
    throw ConfigError("finetune.batch_size: must be positive");
  if (!(llrd.head_lr >= 0.0) || !(llrd.top_layer_lr >= 0.0))
    throw ConfigError("finetune.llrd: learning rates must be non-negative");
  if (!(llrd.decay > 0.0 && llrd.decay <= 1.0))
    throw ConfigError("finetune.llrd.decay: must be in (0, 1]");
  if (!(weight_decay >= 0.0))
    throw ConfigError("finetune.weight_decay: must be non-negative");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0))
    throw ConfigError("finetune.warmup_ratio: must be in [0, 1]");
}

json FinetuneConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"llrd",
           {{"head_lr", llrd.head_lr},
            {"top_layer_lr", llrd.top_layer_lr},
            {"decay", llrd.decay}}},
          {"weight_decay", weight_decay},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps},
          {"warmup_ratio", warmup_ratio},
          {"schedule", to_string(schedule)},
          {"clip_grad_norm", clip_grad_norm},
          {"freeze_encoder", freeze_encoder},
          {"standardize_labels", standardize_labels},
          {"seed", seed}};
}

FinetuneConfig FinetuneConfig::from_json(const json &j) {
  JsonReader r(j, "finetune",
               {"epochs", "batch_size", "llrd", "weight_decay", "beta1",
                "beta2", "eps", "warmup_ratio", "schedule", "clip_grad_norm",
                "freeze_encoder", "standardize_labels", "seed"});
  FinetuneConfig c;
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("weight_decay", c.weight_decay);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("eps", c.eps);
  r.get("warmup_ratio", c.warmup_ratio);
  r.get("clip_grad_norm", c.clip_grad_norm);
  r.get("freeze_encoder", c.freeze_encoder);
  r.get("standardize_labels", c.standardize_labels);
  r.get("seed", c.seed);
  if (r.has("schedule")) {
    std::string s;
    r.get("schedule", s);
    c.schedule = parse_schedule(s);
  }
  if (r.has("llrd")) {
    JsonReader l(r.at("llrd"), "finetune.llrd",
                 {"head_lr", "top_layer_lr", "decay"});
    l.get("head_lr", c.llrd.head_lr);
    l.get("top_layer_lr", c.llrd.top_layer_lr);
    l.get("decay", c.llrd.decay);
  }
  c.validate();
  return c;
}

std::vector<double> predict(const Transformer<float> &model,
                            std::span<const Example> examples,
                            const LabelScaler &scaler, int batch_size) {
  tensor::NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(examples.size());
  for (std::size_t start = 0; start < examples.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(examples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<int> idx(end - start);
    std::iota(idx.begin(), idx.end(), static_cast<int>(start));
    const PackedBatch packed = pack_batch(examples, idx);
    ForwardContext ctx;
    auto enc = model.encode(packed.ids, packed.mask, packed.batch, ctx);
    auto pred = model.regress(enc.hidden, ctx);
    for (float z: pred.data())
      out.push_back(scaler.inverse(static_cast<double>(z)));
  }
  return out;
}

FinetuneResult finetune(Transformer<float> &model,
                        std::span<const Example> train,
                        std::span<const Example> eval,
                        const FinetuneConfig &cfg, std::ostream *log) {
  cfg.validate();
  if (train.empty())
    throw EmptySplit("finetuning train split is empty");
  if (eval.empty())
    throw EmptySplit("finetuning eval split is empty");

  FinetuneResult result;
  std::vector<double> train_labels;
  for (const Example &ex: train)
    train_labels.push_back(ex.label);
  if (cfg.standardize_labels)
    result.scaler = LabelScaler::fit(train_labels);

  ParamStore<float> &params = model.params();
  std::vector<ParamGroup> groups =
      build_llrd_groups(params, cfg.llrd, model.config().n_layers);
  if (cfg.freeze_encoder)
    groups.erase(std::remove_if(groups.begin(), groups.end(),
                                [](const ParamGroup &g) {
                                  return g.label != "head";
                                }),
                 groups.end());
  std::vector<double> base_lr;
  for (const ParamGroup &g: groups)
    base_lr.push_back(g.lr);

  const long per_epoch = static_cast<long>(
      (train.size() + static_cast<std::size_t>(cfg.batch_size) - 1)
      / static_cast<std::size_t>(cfg.batch_size));
  const ScheduleConfig schedule {cfg.schedule, cfg.warmup_ratio,
                                 per_epoch * cfg.epochs};

  AdamW<float> opt({cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay,
                    cfg.clip_grad_norm});
  opt.init(params);

  std::vector<double> eval_labels;
  for (const Example &ex: eval)
    eval_labels.push_back(ex.label);

  ParamStore<float> best = params.clone();
  double best_rmse = std::numeric_limits<double>::infinity();
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    order = shuffled(std::move(order), mix_seed(cfg.seed, 2000 + epoch));

    double loss_sum = 0.0;
    long batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::span<const int> idx(order.data() + start, end - start);
      const PackedBatch packed = pack_batch(train, idx);
      std::vector<float> targets;
      for (int i: idx)
        targets.push_back(static_cast<float>(
            result.scaler.forward(train[static_cast<std::size_t>(i)].label)));

      ForwardContext ctx {true, cfg.seed, static_cast<std::uint64_t>(step), 0};
      ts::Tensor<float> hidden;
      if (cfg.freeze_encoder) {
        tensor::NoGradGuard no_grad;
        hidden = model.encode(packed.ids, packed.mask, packed.batch, ctx).hidden;
      } else {
        hidden = model.encode(packed.ids, packed.mask, packed.batch, ctx).hidden;
      }
      auto pred = model.regress(hidden, ctx);
      auto loss = regression_loss(pred, std::span<const float>(targets));
      const double value = static_cast<double>(loss.item());
      check_finite(value, step, "finetune");

      params.zero_grad();
      ts::backward(loss);
      const double scale = lr_at(step, schedule, 1.0);
      for (std::size_t g = 0; g < groups.size(); ++g)
        groups[g].lr = base_lr[g] * scale;
      opt.step(params, groups);

      StepLog s {step, groups.front().lr, value};
      result.steps.push_back(s);
      log_step(log, s);
      loss_sum += value;
      ++batches;
      ++step;
    }
    params.zero_grad();

    FinetuneEpoch rec;
    rec.epoch = epoch;
    rec.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    const auto pred = predict(model, eval, result.scaler, cfg.batch_size);
    rec.eval = evaluate(pred, eval_labels);
    result.epochs.push_back(rec);
    if (rec.eval.rmse < best_rmse) {
      best_rmse = rec.eval.rmse;
      best = params.clone();
      result.best_epoch = epoch;
      result.best = rec.eval;
    }
  }
  restore(params, best);
  return result;
}

template ts::Tensor<float> mlm_loss<float>(const ts::Tensor<float> &,
                                           std::span<const int>);
template ts::Tensor<double> mlm_loss<double>(const ts::Tensor<double> &,
                                             std::span<const int>);
template ts::Tensor<float> regression_loss<float>(const ts::Tensor<float> &,
                                                  std::span<const float>);
template ts::Tensor<double> regression_loss<double>(const ts::Tensor<double> &,
                                                    std::span<const double>);
template std::vector<ParamGroup> build_llrd_groups<float>(
    const ParamStore<float> &, const LLRDConfig &, int);
template std::vector<ParamGroup> build_llrd_groups<double>(
    const ParamStore<double> &, const LLRDConfig &, int);

}  // namespace polyseq
