//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "polyseq/cli.h"

#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "polyseq/data.h"
#include "polyseq/error.h"
#include "polyseq/io.h"
#include "polyseq/pipeline.h"
#include "polyseq/tokenizer.h"

namespace polyseq::cli {
namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
  if (std::isnan(v))
    return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<int> parse_layers(const std::string &text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty())
      continue;
    try {
      out.push_back(std::stoi(part));
    } catch (const std::exception &) {
      throw ConfigError("layers: '" + part + "' is not a layer index");
    }
  }
  return out;
}

struct Options {
  std::string schema;
  std::string in;
  std::string out;
  std::string vocab;
  std::string config;
  std::string ckpt;
  std::string pretrained;
  std::string output_dir;
  std::string sequence;
  std::string layers;
  std::uint64_t seed = 0;
  bool freeze = false;
};

int cmd_tokenize(const Options &o, std::ostream &out, std::ostream &err) {
  const DatasetSchema schema = DatasetSchema::load(o.schema);
  std::optional<Vocabulary> vocab;
  if (!o.vocab.empty())
    vocab = Vocabulary::load(o.vocab);

  const auto lines = read_sequences(o.in, schema, false);

  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<std::string> tokens;
    try {
      tokens = tokenize(lines[i], schema);
    } catch (const TokenizeError &e) {
      err << "error: " << o.in << ": sequence " << i + 1 << ": " << e.what()
          << "\n";
      return kInputError;
    }
    std::string row;
    for (std::size_t t = 0; t < tokens.size(); ++t)
      row += (t ? " " : "") + tokens[t];
    if (vocab) {
      row += '\t';
      for (std::size_t t = 0; t < tokens.size(); ++t)
        row += (t ? " " : "") + std::to_string(vocab->id(tokens[t]));
    }
    out << row << "\n";
  }
  return kOk;
}

int cmd_augment(const Options &o, std::ostream &, std::ostream &err) {
  const DatasetSchema schema = DatasetSchema::load(o.schema);
  const auto records = load_dataset(o.in, schema, {false, &err});
  const auto augmented = augment_train(records, schema, o.seed, &err);
  write_file_atomic(o.out, records_to_csv(augmented, schema));
  return kOk;
}

RunConfig load_config(const Options &o) {
  RunConfig cfg = RunConfig::load(o.config);
  if (!o.output_dir.empty())
    cfg.output_dir = o.output_dir;
  return cfg;
}

int cmd_pretrain(const Options &o, std::ostream &out, std::ostream &) {
  const RunConfig cfg = load_config(o);
  const auto res = run_pretrain(cfg, &out);
  out << "best epoch " << res.result.best_epoch << ", checkpoint "
      << res.best_checkpoint.string() << "\n";
  return kOk;
}

int cmd_finetune(const Options &o, std::ostream &out, std::ostream &) {
  RunConfig cfg = load_config(o);
  if (o.freeze)
    cfg.finetune.freeze_encoder = true;
  if (!o.pretrained.empty())
    cfg.pretrained = fs::path(o.pretrained);
  const auto res = run_finetune(cfg, &out);
  out << "mean rmse " << fmt(res.mean.rmse) << ", r2 " << fmt(res.mean.r2)
      << ", metrics " << res.metrics_csv.string() << "\n";
  return kOk;
}

int cmd_eval(const Options &o, std::ostream &out, std::ostream &) {
  const RunConfig cfg = load_config(o);
  const auto res = run_eval(cfg, o.ckpt);
  std::string csv = "run_id,dataset,fold,epoch,split,rmse,r2\n";
  csv += cfg.run_id + "," + DatasetSchema::load(cfg.schema).name + ","
         + (res.fold ? std::to_string(*res.fold) : std::string("all"))
         + ",,eval," + fmt(res.metrics.rmse) + "," + fmt(res.metrics.r2)
         + "\n";
  if (!o.out.empty())
    write_file_atomic(o.out, csv);
  out << csv;
  return kOk;
}

LoadedModel load_checkpoint(const std::string &path) {
  if (!fs::exists(path))
    throw ConfigError("ckpt: checkpoint not found: " + path);
  return load_model(path);
}

DatasetSchema schema_for(const Options &o, const LoadedModel &lm) {
  if (!o.schema.empty())
    return DatasetSchema::load(o.schema);
  if (!lm.schema)
    throw ConfigError("schema: checkpoint carries no schema; pass --schema");
  return *lm.schema;
}

int cmd_export_attention(const Options &o, std::ostream &out,
                         std::ostream &) {
  const LoadedModel lm = load_checkpoint(o.ckpt);
  const DatasetSchema schema = schema_for(o, lm);
  std::string sequence = o.sequence;
  if (sequence.empty()) {
    if (o.in.empty())
      throw ConfigError("export-attention: pass --sequence or --in");
    const auto seqs = read_sequences(o.in, schema, false);
    if (seqs.empty())
      throw Error("export-attention: " + o.in + " holds no sequence");
    sequence = seqs.front();
  }
  nlohmann::json j =
      export_attention(lm, tokenize(sequence, schema), parse_layers(o.layers));
  j["sequence"] = sequence;
  const std::string text = j.dump(1) + "\n";
  if (o.out.empty())
    out << text;
  else
    write_file_atomic(o.out, text);
  return kOk;
}

int cmd_export_embeddings(const Options &o, std::ostream &out,
                          std::ostream &) {
  const LoadedModel lm = load_checkpoint(o.ckpt);
  const DatasetSchema schema = schema_for(o, lm);
  const auto seqs = read_sequences(o.in, schema, false);
  std::vector<Example> examples;
  for (std::size_t i = 0; i < seqs.size(); ++i)
    examples.push_back(make_example(
        encode(tokenize(seqs[i], schema), lm.vocab, lm.config.max_length), 0.0,
        static_cast<int>(i)));
  const auto rows = pooled_embeddings(*lm.model, examples);

  std::string csv = "id";
  for (int k = 0; k < lm.config.d_model; ++k)
    csv += ",e" + std::to_string(k);
  csv += "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    csv += std::to_string(i);
    for (float v: rows[i]) {
      char buf[32];
      std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(v));
      csv += buf;
    }
    csv += "\n";
  }
  if (o.out.empty())
    out << csv;
  else
    write_file_atomic(o.out, csv);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string> &args, std::ostream &out,
        std::ostream &err) {
  CLI::App app {"Polymer sequence modeling toolkit", "polyseq"};
  app.require_subcommand(1);
  Options o;

  auto *tok = app.add_subcommand("tokenize", "Tokenize assembled sequences or a dataset CSV");
  tok->add_option("--schema", o.schema, "Dataset schema (JSON)")->required();
  tok->add_option("--in", o.in, "Sequences (one per line) or dataset CSV")->required();
  tok->add_option("--vocab", o.vocab, "Vocabulary file; adds ids");

  auto *aug = app.add_subcommand("augment", "SMILES-enumeration augmentation of a dataset CSV");
  aug->add_option("--schema", o.schema)->required();
  aug->add_option("--in", o.in)->required();
  aug->add_option("--seed", o.seed)->required();
  aug->add_option("--out", o.out)->required();

  auto *pre = app.add_subcommand("pretrain", "Masked-language-model pretraining");
  pre->add_option("--config", o.config)->required();
  pre->add_option("--output-dir", o.output_dir);

  auto *fin = app.add_subcommand("finetune", "Regression finetuning with cross-validation");
  fin->add_option("--config", o.config)->required();
  fin->add_option("--pretrained", o.pretrained, "Pretrained checkpoint");
  fin->add_option("--output-dir", o.output_dir);
  fin->add_flag("--freeze-encoder", o.freeze, "Train the regressor head only");

  auto *ev = app.add_subcommand("eval", "Score a finetuned checkpoint");
  ev->add_option("--config", o.config)->required();
  ev->add_option("--ckpt", o.ckpt)->required();
  ev->add_option("--out", o.out, "Also write the metrics CSV here");

  auto *att = app.add_subcommand("export-attention", "Attention maps of one sequence (JSON)");
  att->add_option("--ckpt", o.ckpt)->required();
  att->add_option("--schema", o.schema);
  att->add_option("--sequence", o.sequence);
  att->add_option("--in", o.in, "Take the first sequence of this file");
  att->add_option("--layers", o.layers, "Comma-separated 0-based layers");
  att->add_option("--out", o.out);

  auto *emb = app.add_subcommand("export-embeddings", "Max-pooled last-layer embeddings (CSV)");
  emb->add_option("--ckpt", o.ckpt)->required();
  emb->add_option("--schema", o.schema);
  emb->add_option("--in", o.in)->required();
  emb->add_option("--out", o.out);

  std::vector<std::string> argv_store {"polyseq"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char *> argv;
  for (std::string &a: argv_store)
    argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (tok->parsed())
      return cmd_tokenize(o, out, err);
    if (aug->parsed())
      return cmd_augment(o, out, err);
    if (pre->parsed())
      return cmd_pretrain(o, out, err);
    if (fin->parsed())
      return cmd_finetune(o, out, err);
    if (ev->parsed())
      return cmd_eval(o, out, err);
    if (att->parsed())
      return cmd_export_attention(o, out, err);
    if (emb->parsed())
      return cmd_export_embeddings(o, out, err);
  } catch (const ConfigError &e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const SchemaError &e) {
    err << "schema error: " << e.what() << "\n";
    return kConfigError;
  } catch (const NumericalError &e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumericalError;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kInputError;
}

}  // namespace polyseq::cli
