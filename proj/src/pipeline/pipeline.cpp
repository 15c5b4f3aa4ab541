//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "polyseq/pipeline.h"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "polyseq/error.h"
#include "polyseq/io.h"

namespace polyseq {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

fs::path resolve(const fs::path &base, const std::string &p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string fmt(double v) {
  if (std::isnan(v))
    return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

SplitPlan split_from_json(const json &j) {
  if (!j.is_object())
    throw ConfigError("split: expected an object");
  for (const auto &[key, _]: j.items())
    if (key != "kind" && key != "k" && key != "seed" && key != "routes")
      throw ConfigError("split: unknown key '" + key + "'");
  SplitPlan plan;
  try {
    const std::string kind = j.value("kind", std::string("kfold"));
    if (kind == "kfold")
      plan.kind = SplitPlan::Kind::kKFold;
    else if (kind == "holdout")
      plan.kind = SplitPlan::Kind::kHoldout;
    else
      throw ConfigError("split.kind: expected kfold or holdout");
    plan.k = j.value("k", 5);
    plan.seed = j.value("seed", std::uint64_t {0});
    if (j.contains("routes"))
      plan.routes = j.at("routes").get<std::map<std::string, std::string>>();
  } catch (const json::exception &) {
    throw ConfigError("split: wrong value type");
  }
  if (plan.kind == SplitPlan::Kind::kHoldout && plan.routes.empty())
    throw ConfigError("split.routes: holdout needs at least one route");
  return plan;
}

json split_to_json(const SplitPlan &plan) {
  json j;
  j["kind"] = plan.kind == SplitPlan::Kind::kKFold ? "kfold" : "holdout";
  j["k"] = plan.k;
  j["seed"] = plan.seed;
  j["routes"] = plan.routes;
  return j;
}

ModelConfig model_config(const RunConfig &cfg, int vocab_size) {
  ModelConfig mc = ModelConfig::from_json(cfg.model);
  if (!cfg.model.contains("max_length"))
    mc.max_length = cfg.max_length;
  mc.vocab_size = vocab_size;
  mc.validate();
  return mc;
}

std::vector<std::vector<std::string>>
tokenize_all(const std::vector<std::string> &seqs, const DatasetSchema &schema) {
  std::vector<std::vector<std::string>> out;
  out.reserve(seqs.size());
  for (const std::string &s: seqs)
    out.push_back(tokenize(s, schema));
  return out;
}

Checkpoint base_checkpoint(const std::string &kind, const ModelConfig &mc,
                           const Vocabulary &vocab,
                           const DatasetSchema &schema) {
  Checkpoint ckpt;
  ckpt.meta["kind"] = kind;
  ckpt.meta["model_config"] = mc.to_json();
  ckpt.meta["vocab"] = vocab.tokens();
  ckpt.meta["schema"] = schema.to_json();
  return ckpt;
}

}  // namespace

// --- config --------------------------------------------------------------------

RunConfig RunConfig::from_json(const json &j, const fs::path &base_dir) {
  if (!j.is_object())
    throw ConfigError("config: expected a JSON object");
  static const std::vector<std::string> known = {
      "format",       "run_id",      "schema",        "dataset",
      "corpus",       "output_dir",  "pretrained",    "max_length",
      "min_count",    "model_seed",  "augment_seed",  "skip_bad_rows",
      "model",        "pretrain",    "finetune",      "split"};
  for (const auto &[key, _]: j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("config: unknown key '" + key + "'");
  if (!j.contains("format") || !j.at("format").is_number_integer()
      || j.at("format").get<int>() != 1)
    throw ConfigError("format: expected 1");

  RunConfig c;
  auto str = [&](const char *key) -> std::optional<std::string> {
    if (!j.contains(key))
      return std::nullopt;
    if (!j.at(key).is_string())
      throw ConfigError(std::string(key) + ": expected a string");
    return j.at(key).get<std::string>();
  };
  auto integer = [&](const char *key, auto &out) {
    if (!j.contains(key))
      return;
    if (!j.at(key).is_number_integer())
      throw ConfigError(std::string(key) + ": expected an integer");
    out = j.at(key).get<std::decay_t<decltype(out)>>();
  };

  if (auto v = str("run_id"))
    c.run_id = *v;
  if (auto v = str("schema"))
    c.schema = resolve(base_dir, *v);
  if (auto v = str("dataset"))
    c.dataset = resolve(base_dir, *v);
  if (auto v = str("corpus"))
    c.corpus = resolve(base_dir, *v);
  if (auto v = str("output_dir"))
    c.output_dir = resolve(base_dir, *v);
  else
    c.output_dir = base_dir / c.output_dir;
  if (auto v = str("pretrained"))
    c.pretrained = resolve(base_dir, *v);
  integer("max_length", c.max_length);
  integer("min_count", c.min_count);
  integer("model_seed", c.model_seed);
  integer("augment_seed", c.augment_seed);
  if (j.contains("skip_bad_rows")) {
    if (!j.at("skip_bad_rows").is_boolean())
      throw ConfigError("skip_bad_rows: expected a boolean");
    c.skip_bad_rows = j.at("skip_bad_rows").get<bool>();
  }
  if (c.max_length < 2)
    throw ConfigError("max_length: must be at least 2");
  if (c.min_count < 0)
    throw ConfigError("min_count: must be non-negative");

  if (j.contains("model")) {
    c.model = j.at("model");
    ModelConfig::from_json(c.model);  // key check only
    if (c.model.contains("vocab_size"))
      throw ConfigError("model.vocab_size: set from the vocabulary, do not "
                        "configure it");
  }
  if (j.contains("pretrain"))
    c.pretrain = PretrainConfig::from_json(j.at("pretrain"));
  if (j.contains("finetune"))
    c.finetune = FinetuneConfig::from_json(j.at("finetune"));
  if (j.contains("split"))
    c.split = split_from_json(j.at("split"));
  return c;
}

RunConfig RunConfig::load(const fs::path &path) {
  if (!fs::exists(path))
    throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception &e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

// --- model I/O -------------------------------------------------------------------

LoadedModel load_model(const fs::path &path) {
  const Checkpoint ckpt = Checkpoint::load(path);
  auto meta = [&](const char *key) -> const json & {
    auto it = ckpt.meta.find(key);
    if (it == ckpt.meta.end())
      throw IoError("checkpoint " + path.string() + " lacks meta '" + key + "'");
    return it->second;
  };

  LoadedModel out;
  out.kind = meta("kind").get<std::string>();
  out.config = ModelConfig::from_json(meta("model_config"));
  out.vocab = Vocabulary(meta("vocab").get<std::vector<std::string>>());
  if (ckpt.meta.count("schema"))
    out.schema = DatasetSchema::from_json(ckpt.meta.at("schema"));
  if (ckpt.meta.count("label_scaler"))
    out.scaler = LabelScaler::from_json(ckpt.meta.at("label_scaler"));

  HeadSet heads;
  heads.mlm = ckpt.tensors.count("param/mlm.dense.weight") > 0;
  heads.regression = ckpt.tensors.count("param/reg.fc1.weight") > 0;
  out.model = std::make_unique<Transformer<float>>(out.config, heads, 0);
  get_params(ckpt, out.model->params(), true);
  return out;
}

std::vector<Example> encode_records(const std::vector<PolymerRecord> &records,
                                    const DatasetSchema &schema,
                                    const Vocabulary &vocab, int max_length) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const PolymerRecord &r: records) {
    const auto tokens = tokenize(assemble_sequence(r, schema), schema);
    out.push_back(make_example(encode(tokens, vocab, max_length),
                               r.label.value_or(0.0), r.id));
  }
  return out;
}

std::vector<std::string> read_sequences(const fs::path &path,
                                        const DatasetSchema &schema,
                                        bool skip_bad_rows) {
  std::vector<std::string> out;
  if (path.extension() == ".csv") {
    for (const PolymerRecord &r:
         load_dataset(path, schema, {skip_bad_rows, nullptr}))
      out.push_back(assemble_sequence(r, schema));
    return out;
  }
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (!line.empty())
      out.push_back(line);
  }
  return out;
}

// --- runs --------------------------------------------------------------------------

PretrainRunResult run_pretrain(const RunConfig &cfg, std::ostream *progress) {
  if (cfg.corpus.empty())
    throw ConfigError("corpus: required for pretraining");
  const DatasetSchema schema = DatasetSchema::load(cfg.schema);
  const auto seqs = read_sequences(cfg.corpus, schema, cfg.skip_bad_rows);
  const auto tokens = tokenize_all(seqs, schema);
  const auto nan = schema.nan_tokens();
  const Vocabulary vocab = build_vocab(tokens, cfg.min_count, nan);
  const ModelConfig mc = model_config(cfg, vocab.size());
  const int max_len = std::min(cfg.max_length, mc.max_length);

  std::vector<Example> corpus;
  for (const auto &t: tokens)
    corpus.push_back(make_example(encode(t, vocab, max_len)));

  Transformer<float> model(mc, {true, false}, cfg.model_seed);
  std::ostringstream log;
  std::string history = "epoch,steps,train_loss,val_loss,val_accuracy\n";
  const fs::path dir = cfg.output_dir;

  PretrainHooks hooks;
  hooks.log = &log;
  hooks.on_epoch = [&](const PretrainEpoch &e, const AdamW<float> &opt) {
    Checkpoint ckpt = base_checkpoint("pretrain", mc, vocab, schema);
    ckpt.meta["epoch"] = e.epoch;
    ckpt.meta["val_loss"] = e.val.loss;
    ckpt.meta["pretrain_config"] = cfg.pretrain.to_json();
    put_params(ckpt, model.params());
    put_optimizer(ckpt, opt, model.params());
    ckpt.save(dir / ("epoch_" + std::to_string(e.epoch) + ".ckpt"));
    history += std::to_string(e.epoch) + "," + std::to_string(e.steps) + ","
               + fmt(e.train_loss) + "," + fmt(e.val.loss) + ","
               + fmt(e.val.accuracy) + "\n";
    write_file_atomic(dir / "pretrain.log", log.str());
    if (progress)
      *progress << "epoch " << e.epoch << " train_loss " << fmt(e.train_loss)
                << " val_loss " << fmt(e.val.loss) << " val_acc "
                << fmt(e.val.accuracy) << "\n";
  };

  PretrainRunResult out;
  out.result = pretrain(model, corpus, cfg.pretrain, hooks);

  Checkpoint best = base_checkpoint("pretrain", mc, vocab, schema);
  best.meta["epoch"] = out.result.best_epoch;
  best.meta["pretrain_config"] = cfg.pretrain.to_json();
  put_params(best, model.params());
  out.best_checkpoint = dir / "best.ckpt";
  best.save(out.best_checkpoint);
  write_file_atomic(dir / "pretrain.log", log.str());
  write_file_atomic(dir / "pretrain_history.csv", history);
  return out;
}

FinetuneRunResult run_finetune(const RunConfig &cfg, std::ostream *progress) {
  if (cfg.dataset.empty())
    throw ConfigError("dataset: required for finetuning");
  const DatasetSchema schema = DatasetSchema::load(cfg.schema);
  const auto records =
      load_dataset(cfg.dataset, schema, {cfg.skip_bad_rows, progress});
  const auto folds = make_splits(records, cfg.split);
  const fs::path dir = cfg.output_dir;
  write_file_atomic(dir / "splits.csv", splits_to_csv(folds, cfg.split));

  std::optional<Checkpoint> pre;
  std::optional<Vocabulary> pre_vocab;
  std::optional<ModelConfig> pre_config;
  if (cfg.pretrained) {
    if (!fs::exists(*cfg.pretrained))
      throw ConfigError("pretrained: checkpoint not found: "
                        + cfg.pretrained->string());
    pre = Checkpoint::load(*cfg.pretrained);
    pre_vocab = Vocabulary(pre->meta.at("vocab").get<std::vector<std::string>>());
    pre_config = ModelConfig::from_json(pre->meta.at("model_config"));
  }

  const auto nan = schema.nan_tokens();
  std::ostringstream log;
  std::string csv = "run_id,dataset,fold,epoch,split,rmse,r2\n";
  FinetuneRunResult out;
  std::vector<Metrics> fold_metrics;
  for (const Fold &fold: folds) {
    const auto train = select_records(records, fold.train_ids);
    const auto test = select_records(records, fold.test_ids);
    const auto augmented =
        augment_train(train, schema, cfg.augment_seed, progress);

    std::vector<std::vector<std::string>> train_tokens;
    for (const PolymerRecord &r: augmented)
      train_tokens.push_back(tokenize(assemble_sequence(r, schema), schema));
    const Vocabulary vocab =
        pre_vocab ? extend_vocab(*pre_vocab, train_tokens, cfg.min_count, nan)
                  : build_vocab(train_tokens, cfg.min_count, nan);

    ModelConfig mc = pre_config ? *pre_config : model_config(cfg, vocab.size());
    mc.vocab_size = vocab.size();
    const int max_len = std::min(cfg.max_length, mc.max_length);
    const auto train_ex = encode_records(augmented, schema, vocab, max_len);
    const auto test_ex = encode_records(test, schema, vocab, max_len);

    Transformer<float> model(mc, {false, true}, cfg.model_seed);
    if (pre)
      model.load_encoder(*pre);

    log << "# fold " << fold.index << "\n";
    const FinetuneResult res =
        finetune(model, train_ex, test_ex, cfg.finetune, &log);

    Checkpoint ckpt = base_checkpoint("finetune", mc, vocab, schema);
    ckpt.meta["fold"] = fold.index;
    ckpt.meta["split"] = split_to_json(cfg.split);
    ckpt.meta["best_epoch"] = res.best_epoch;
    ckpt.meta["label_scaler"] = res.scaler.to_json();
    ckpt.meta["finetune_config"] = cfg.finetune.to_json();
    ckpt.meta["pretrained"] = cfg.pretrained ? cfg.pretrained->string() : "";
    put_params(ckpt, model.params());
    FoldOutcome fo;
    fo.fold = fold.index;
    fo.best_epoch = res.best_epoch;
    fo.metrics = res.best;
    fo.train_records = train.size();
    fo.augmented_records = augmented.size();
    fo.test_records = test.size();
    fo.checkpoint = dir / ("fold_" + std::to_string(fold.index) + ".ckpt");
    ckpt.save(fo.checkpoint);

    csv += cfg.run_id + "," + schema.name + "," + std::to_string(fold.index)
           + "," + std::to_string(res.best_epoch) + ",test,"
           + fmt(res.best.rmse) + "," + fmt(res.best.r2) + "\n";
    fold_metrics.push_back(res.best);
    out.folds.push_back(fo);
    if (progress)
      *progress << "fold " << fold.index << ": train " << train.size()
                << " (augmented " << augmented.size() << "), test "
                << test.size() << ", best epoch " << res.best_epoch
                << ", rmse " << fmt(res.best.rmse) << ", r2 "
                << fmt(res.best.r2) << "\n";
  }
  out.mean = mean_metrics(fold_metrics);
  csv += cfg.run_id + "," + schema.name + ",mean,,test," + fmt(out.mean.rmse)
         + "," + fmt(out.mean.r2) + "\n";
  out.metrics_csv = dir / "metrics.csv";
  write_file_atomic(out.metrics_csv, csv);
  write_file_atomic(dir / "finetune.log", log.str());
  return out;
}

EvalRunResult run_eval(const RunConfig &cfg, const fs::path &checkpoint) {
  if (!fs::exists(checkpoint))
    throw ConfigError("ckpt: checkpoint not found: " + checkpoint.string());
  if (cfg.dataset.empty())
    throw ConfigError("dataset: required for evaluation");
  const Checkpoint ckpt = Checkpoint::load(checkpoint);
  LoadedModel lm = load_model(checkpoint);
  if (!lm.model->heads().regression)
    throw ConfigError("ckpt: checkpoint has no regression head");
  const DatasetSchema schema =
      cfg.schema.empty() && lm.schema ? *lm.schema
                                      : DatasetSchema::load(cfg.schema);
  const auto records =
      load_dataset(cfg.dataset, schema, {cfg.skip_bad_rows, nullptr});

  EvalRunResult out;
  std::vector<PolymerRecord> chosen = records;
  auto fold_it = ckpt.meta.find("fold");
  auto split_it = ckpt.meta.find("split");
  if (fold_it != ckpt.meta.end() && split_it != ckpt.meta.end()
      && split_it->second == split_to_json(cfg.split)) {
    const int k = fold_it->second.get<int>();
    for (const Fold &f: make_splits(records, cfg.split))
      if (f.index == k) {
        chosen = select_records(records, f.test_ids);
        out.fold = k;
      }
  }
  const int max_len = std::min(cfg.max_length, lm.config.max_length);
  const auto examples = encode_records(chosen, schema, lm.vocab, max_len);
  std::vector<double> labels;
  for (const Example &e: examples)
    labels.push_back(e.label);
  const auto pred = predict(*lm.model, examples, lm.scaler, 64);
  out.metrics = evaluate(pred, labels);
  out.records = chosen.size();
  return out;
}

// --- analysis ------------------------------------------------------------------

json export_attention(const LoadedModel &loaded,
                      const std::vector<std::string> &tokens,
                      const std::vector<int> &layers) {
  const TokenSequence seq =
      encode(tokens, loaded.vocab, loaded.config.max_length);
  std::size_t len = 0;
  for (std::size_t i = 0; i < seq.attention_mask.size(); ++i)
    if (seq.attention_mask[i])
      len = i + 1;
  std::vector<int> ids(seq.ids.begin(), seq.ids.begin() + static_cast<long>(len));
  std::vector<int> mask(len, 1);

  tensor::NoGradGuard no_grad;
  ForwardContext ctx;
  const auto enc = loaded.model->encode(ids, mask, 1, ctx);

  json out;
  out["tokens"] = std::vector<std::string>(
      seq.tokens.begin(), seq.tokens.begin() + static_cast<long>(len));
  out["layers"] = json::array();
  const int n_layers = loaded.config.n_layers;
  std::vector<int> wanted = layers;
  if (wanted.empty())
    for (int l = 0; l < n_layers; ++l)
      wanted.push_back(l);
  for (int l: wanted) {
    if (l < 0 || l >= n_layers)
      throw ConfigError("layers: no layer " + std::to_string(l) + " in a "
                        + std::to_string(n_layers) + "-layer model");
    const auto w = enc.attention[static_cast<std::size_t>(l)].data();
    json lj;
    lj["layer"] = l;
    lj["heads"] = json::array();
    for (int h = 0; h < loaded.config.n_heads; ++h) {
      json matrix = json::array();
      for (std::size_t i = 0; i < len; ++i) {
        std::vector<double> row(len);
        for (std::size_t j = 0; j < len; ++j)
          row[j] = w[(static_cast<std::size_t>(h) * len + i) * len + j];
        matrix.push_back(row);
      }
      json hj;
      hj["head"] = h;
      hj["cls_row"] = matrix[0];
      hj["matrix"] = std::move(matrix);
      lj["heads"].push_back(std::move(hj));
    }
    out["layers"].push_back(std::move(lj));
  }
  return out;
}

std::vector<std::vector<float>> pooled_embeddings(
    const Transformer<float> &model, const std::vector<Example> &examples) {
  tensor::NoGradGuard no_grad;
  const std::size_t d = static_cast<std::size_t>(model.config().d_model);
  std::vector<std::vector<float>> out;
  constexpr std::size_t kBatch = 32;
  for (std::size_t start = 0; start < examples.size(); start += kBatch) {
    std::vector<int> idx;
    for (std::size_t i = start; i < std::min(examples.size(), start + kBatch); ++i)
      idx.push_back(static_cast<int>(i));
    const PackedBatch packed = pack_batch(examples, idx);
    ForwardContext ctx;
    const auto enc = model.encode(packed.ids, packed.mask, packed.batch, ctx);
    const auto h = enc.hidden.data();
    for (std::size_t b = 0; b < packed.batch; ++b) {
      std::vector<float> pooled(d, -std::numeric_limits<float>::infinity());
      for (std::size_t t = 0; t < packed.length; ++t) {
        if (!packed.mask[b * packed.length + t])
          continue;
        for (std::size_t k = 0; k < d; ++k)
          pooled[k] = std::max(pooled[k], h[(b * packed.length + t) * d + k]);
      }
      out.push_back(std::move(pooled));
    }
  }
  return out;
}

}  // namespace polyseq
