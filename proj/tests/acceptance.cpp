//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "json.hpp"
#include "polyseq/checkpoint.h"
#include "polyseq/cli.h"
#include "polyseq/data.h"
#include "polyseq/io.h"
#include "polyseq/optim.h"
#include "polyseq/pipeline.h"
#include "polyseq/smiles.h"
#include "polyseq/tokenizer.h"
#include "polyseq/training.h"
#include "polyseq/transformer.h"
#include "support.h"

namespace polyseq {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using T64 = tensor::Tensor<double>;

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Checker {
public:
  void expect(bool ok, const std::string &what) {
    if (!ok && failures_.size() < 5)
      failures_.push_back(what);
    ok_ = ok_ && ok;
  }
  void note(const std::string &text) {
    notes_ += (notes_.empty() ? "" : "; ") + text;
  }
  Outcome done() const {
    Outcome o {ok_, notes_};
    for (const std::string &f: failures_)
      o.detail += (o.detail.empty() ? "" : "; ") + std::string("failed: ") + f;
    return o;
  }

private:
  bool ok_ = true;
  std::string notes_;
  std::vector<std::string> failures_;
};

std::string num(double v, int precision = 6) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

DatasetSchema plain_schema() {
  DatasetSchema s;
  s.components.push_back({"smiles", {}});
  s.label_column = "value";
  return s;
}

int cli(const std::vector<std::string> &args, std::string *out = nullptr) {
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  if (out)
    *out = o.str();
  if (code != 0) {
    std::cerr << "polyseq";
    for (const std::string &a: args)
      std::cerr << " " << a;
    std::cerr << " exited " << code << ": " << e.str();
  }
  return code;
}

// --- 1: tokenizer ----------------------------------------------------------------

Outcome tokenizer_lossless() {
  Checker c;
  testing::SmilesGenerator gen(1001);
  const DatasetSchema schema = plain_schema();
  std::map<std::string, int> seen;
  for (int i = 0; i < 500; ++i) {
    const auto g = gen.molecule(16, i % 2 == 0, 2);
    std::string text = g.text;
    if (i % 3 == 0)
      text += "$" + std::to_string(i % 97) + ".5$NAN_Tg";
    std::vector<std::string> tokens;
    try {
      tokens = tokenize(text, schema);
    } catch (const Error &e) {
      c.expect(false, text + ": " + e.what());
      continue;
    }
    std::string joined;
    for (const std::string &t: tokens)
      joined += t;
    c.expect(joined == text, "lossless " + text);
    for (const auto &[symbol, count]: g.long_elements) {
      const auto whole = std::count(tokens.begin(), tokens.end(), symbol);
      c.expect(whole == count, symbol + " split in " + text);
      seen[symbol] += count;
    }
  }
  for (const char *symbol: {"Si", "Cl", "Br", "Se", "Na", "Li"}) {
    c.expect(seen[symbol] > 0, std::string("no ") + symbol + " generated");
    c.note(std::string(symbol) + " x" + std::to_string(seen[symbol]));
  }
  c.note("500 strings lossless");
  return c.done();
}

// --- 2: augmentation soundness -------------------------------------------------

Outcome augmentation_sound(const fs::path &scratch) {
  Checker c;
  testing::SmilesGenerator gen(2002);
  std::size_t variants_checked = 0;
  std::string pairs;
  for (int i = 0; i < 200; ++i) {
    const auto g = gen.fragment(15, i % 2 == 0);
    const auto mol = smiles::parse_smiles(g.text).front();
    c.expect(mol.num_atoms() <= 15, "atom budget " + g.text);
    const auto variants = smiles::enumerate_smiles(mol);
    for (const std::string &v: variants) {
      const auto back = smiles::parse_smiles(v);
      c.expect(back.size() == 1 && testing::isomorphic(mol, back.front()),
               g.text + " -> " + v);
      c.expect(smiles::canonicalize(v) == smiles::canonicalize(mol),
               "canonical " + g.text + " -> " + v);
      ++variants_checked;
    }
    if (i < 20)
      pairs += g.text + "\t" + variants.back() + "\n";
  }
  c.note("200 molecules, " + std::to_string(variants_checked)
         + " variants isomorphic");

  // Independent toolkit spot check on 20 pairs.
  const fs::path script =
      testing::source_dir() / "tests" / "toolkit_check" / "verify_with_rdkit.py";
  write_file_atomic(scratch / "pairs.tsv", pairs);
  const std::string cmd = "python3 " + script.string() + " "
                          + (scratch / "pairs.tsv").string() + " > "
                          + (scratch / "rdkit.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::string report = fs::exists(scratch / "rdkit.txt")
                           ? read_file(scratch / "rdkit.txt")
                           : std::string();
  while (!report.empty() && report.back() == '\n')
    report.pop_back();
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  if (code == 2) {
    c.note("RDKit spot check skipped (rdkit unavailable)");
  } else {
    c.expect(code == 0, "RDKit: " + report);
    if (code == 0)
      c.note(report.substr(report.rfind('\n') + 1));
  }
  return c.done();
}

// --- 3: masking ----------------------------------------------------------------

Outcome masking_statistics() {
  Checker c;
  const int vocab = 60;
  std::mt19937_64 data_rng(3003), rng(3004);
  const MaskingPolicy policy;
  long selected = 0, masked = 0, random = 0, kept = 0, positions = 0;
  bool specials_ok = true, counts_ok = true;
  while (selected < 100000) {
    const int body = 1 + static_cast<int>(data_rng() % 60);
    const int pad = static_cast<int>(data_rng() % 8);
    std::vector<int> ids {Vocabulary::kBos}, mask {1};
    for (int i = 0; i < body; ++i) {
      // Mostly ordinary tokens, with the odd <unk>.
      ids.push_back(data_rng() % 50 == 0
                        ? Vocabulary::kUnk
                        : Vocabulary::kNumSpecial
                              + static_cast<int>(data_rng() % (vocab - 5)));
      mask.push_back(1);
    }
    ids.push_back(Vocabulary::kEos);
    mask.push_back(1);
    for (int i = 0; i < pad; ++i) {
      ids.push_back(Vocabulary::kPad);
      mask.push_back(0);
    }
    const auto out = apply_masking(ids, mask, policy, vocab, rng);
    int here = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      ++positions;
      if (out.labels[i] == kIgnoreIndex)
        continue;
      ++here;
      if (!is_maskable(ids[i], mask[i]))
        specials_ok = false;
      if (out.input_ids[i] == Vocabulary::kMask)
        ++masked;
      else if (out.input_ids[i] == ids[i])
        ++kept;
      else
        ++random;
    }
    counts_ok = counts_ok && here == masked_count(body, 0.15);
    selected += here;
  }
  // A random replacement can redraw the original token.
  const double collide = 1.0 / (vocab - Vocabulary::kNumSpecial);
  const double n = static_cast<double>(selected);
  const double fm = masked / n, fr = random / n, fk = kept / n;
  // Expected rates; <unk> originals (2%) can never be redrawn.
  const double er = 0.1 * (1.0 - 0.98 * collide);
  const double ek = 0.1 + 0.1 * 0.98 * collide;
  c.expect(std::abs(fm - 0.8) <= 0.005, "mask fraction " + num(fm));
  c.expect(std::abs(fr - er) <= 0.005, "random fraction " + num(fr));
  c.expect(std::abs(fk - ek) <= 0.005, "keep fraction " + num(fk));
  c.expect(specials_ok, "a special or pad position was selected");
  c.expect(counts_ok, "selected count differs from round(0.15 m)");
  c.note(std::to_string(selected) + " selected of " + std::to_string(positions)
         + " positions; mask/random/keep " + num(fm, 4) + "/" + num(fr, 4) + "/"
         + num(fk, 4) + " (expected 0.8/" + num(er, 4) + "/" + num(ek, 4)
         + ", tol 0.005)");
  return c.done();
}

// --- 4: attention and positional encodings --------------------------------------

Outcome attention_checks() {
  Checker c;
  ModelConfig mc;
  mc.vocab_size = 30;
  mc.d_model = 16;
  mc.n_layers = 2;
  mc.n_heads = 4;
  mc.max_length = 20;
  mc.dropout_hidden = mc.dropout_attn = mc.dropout_regressor = 0.0;
  const Transformer<double> model(mc, {true, false}, 4004);
  std::mt19937_64 rng(4005);
  double worst = 0.0;
  bool pads_zero = true;
  for (int batch = 0; batch < 100; ++batch) {
    const std::size_t b = 1 + rng() % 4, len = 2 + rng() % 18;
    std::vector<int> ids(b * len), mask(b * len);
    for (std::size_t r = 0; r < b; ++r) {
      const std::size_t real = 1 + rng() % len;
      for (std::size_t j = 0; j < len; ++j) {
        mask[r * len + j] = j < real;
        ids[r * len + j] = j < real ? 5 + static_cast<int>(rng() % 25)
                                    : Vocabulary::kPad;
      }
    }
    ForwardContext ctx;
    const auto enc = model.encode(ids, mask, b, ctx);
    for (const auto &w: enc.attention) {
      const auto data = w.data();
      const std::size_t h = static_cast<std::size_t>(mc.n_heads);
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t row = 0; row < h * len; ++row) {
          double total = 0.0;
          for (std::size_t j = 0; j < len; ++j) {
            const double x = data[((r * h * len) + row) * len + j];
            total += x;
            if (!mask[r * len + j] && x != 0.0)
              pads_zero = false;
          }
          worst = std::max(worst, std::abs(total - 1.0));
        }
    }
  }
  c.expect(worst <= 1e-6, "row sum error " + num(worst));
  c.expect(pads_zero, "a padded key received weight");
  c.note("100 batches, max |row sum - 1| " + num(worst, 3));

  // Closed-form positional encodings in long double.
  double pe_err = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int d = 2 * (1 + static_cast<int>(rng() % 384));
    const int pos = static_cast<int>(rng() % 512);
    const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(d));
    const long double angle =
        pos / std::pow(10000.0L, static_cast<long double>(2 * (j / 2)) / d);
    const long double expect = j % 2 == 0 ? std::sin(angle) : std::cos(angle);
    const auto pe = positional_encoding(pos + 1, d);
    pe_err = std::max(pe_err, std::abs(pe[static_cast<std::size_t>(pos) * d + j]
                                       - static_cast<double>(expect)));
  }
  c.expect(pe_err <= 1e-12, "positional encoding error " + num(pe_err));
  c.note("positional encoding max error " + num(pe_err, 3));

  const T64 q({1, 1, 2, 1}, {1.0, 1.0});
  const T64 k({1, 1, 2, 1}, {1.0, -1.0});
  const T64 v({1, 1, 2, 1}, {0.0, 0.0});
  const std::vector<int> mask = {1, 1};
  // Scores are q.k / sqrt(1), i.e. softmax(1, -1).
  const auto att = scaled_dot_product_attention(q, k, v, mask);
  const double a = att.weights.data()[0], b = att.weights.data()[1];
  c.expect(std::abs(a - 0.8808) <= 1e-4 && std::abs(b - 0.1192) <= 1e-4,
           "softmax(1,-1) = " + num(a) + "," + num(b));
  c.note("softmax(1,-1) = [" + num(a, 4) + ", " + num(b, 4) + "]");
  return c.done();
}

// --- 5: gradients ------------------------------------------------------------------

Outcome gradient_check() {
  Checker c;
  ModelConfig mc;
  mc.vocab_size = 20;
  mc.d_model = 8;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.max_length = 6;
  mc.dropout_hidden = mc.dropout_attn = mc.dropout_regressor = 0.0;
  mc.init_std = 0.2;
  Transformer<double> model(mc, {true, true}, 5005);
  const std::vector<int> ids = {0, 7, 4, 12, 1, 2, 0, 9, 15, 11, 18, 1};
  const std::vector<int> mask = {1, 1, 1, 1, 1, 0, 1, 1, 1, 1, 1, 1};
  std::vector<int> labels(12, kIgnoreIndex);
  labels[2] = 8;
  labels[3] = 12;
  labels[8] = 5;
  labels[10] = 19;
  const std::vector<double> targets = {0.4, -1.1};
  auto loss = [&]() {
    ForwardContext ctx;
    const auto enc = model.encode(ids, mask, 2, ctx);
    const auto mlm = mlm_loss(model.mlm_logits(enc.hidden, ctx), labels);
    const auto reg = regression_loss(model.regress(enc.hidden, ctx),
                                     std::span<const double>(targets));
    return tensor::add(mlm, reg);
  };
  model.params().zero_grad();
  tensor::backward(loss());

  // 50 coordinates spread over every tensor, each head included.
  std::vector<std::pair<std::string, std::size_t>> picks;
  const auto names = model.params().names();
  std::mt19937_64 rng(5006);
  for (const char *name: {"mlm.decoder.weight", "mlm.dense.weight", "reg.fc1.weight",
                          "reg.fc2.weight", "reg.fc2.bias"})
    picks.emplace_back(name, rng() % model.params().at(name).numel());
  while (picks.size() < 50) {
    const std::string &name = names[rng() % names.size()];
    picks.emplace_back(name, rng() % model.params().at(name).numel());
  }
  double worst = 0.0;
  for (const auto &[name, i]: picks) {
    auto &t = model.params().at(name);
    const double analytic = t.grad()[i];
    const double saved = t.data()[i];
    const double h = 1e-6 * std::max(1.0, std::abs(saved));
    double plus, minus;
    {
      tensor::NoGradGuard guard;
      t.data()[i] = saved + h;
      plus = loss().item();
      t.data()[i] = saved - h;
      minus = loss().item();
    }
    t.data()[i] = saved;
    const double numeric = (plus - minus) / (2 * h);
    const double rel = std::abs(numeric - analytic)
                       / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    c.expect(rel <= 1e-4, name + "[" + std::to_string(i) + "] rel " + num(rel));
    worst = std::max(worst, rel);
  }
  c.note("50 coordinates, max relative error " + num(worst, 3) + " (tol 1e-4)");
  return c.done();
}

// --- 6: optimizer and schedules --------------------------------------------------

Outcome optimizer_checks() {
  Checker c;
  {
    ParamStore<double> p;
    p.add("w", T64({1}, {0.0})).mutable_grad()[0] = 1.0;
    AdamW<double> opt({0.9, 0.999, 1e-6, 0.0, 0.0});
    opt.init(p);
    opt.step(p, {{"all", 0.1, {"w"}}});
    const double w = p.at("w").data()[0];
    c.expect(std::abs(w + 0.1 / (1.0 + 1e-6)) <= 1e-10, "first step " + num(w, 17));
    c.note("first step " + num(w, 12));
  }
  {
    ParamStore<double> p;
    p.add("w", T64({1}, {1.0}));
    AdamW<double> opt({0.9, 0.999, 1e-6, 0.01, 0.0});
    opt.init(p);
    opt.step(p, {{"all", 0.1, {"w"}}});
    const double w = p.at("w").data()[0];
    c.expect(std::abs(w - 0.999) <= 1e-10, "decay-only step " + num(w, 17));
    c.note("decay-only step " + num(w, 12));
  }
  {
    ParamStore<double> p;
    p.add("embed.tokens.weight", T64({1}, {0.0}));
    for (int l = 0; l < 6; ++l)
      p.add("enc." + std::to_string(l) + ".ffn.fc1.weight", T64({1}, {0.0}));
    p.add("reg.fc2.bias", T64({1}, {0.0}));
    const auto groups = build_llrd_groups(p, {1e-4, 5e-5, 0.9}, 6);
    std::map<std::string, double> lr;
    for (const ParamGroup &g: groups)
      for (const std::string &n: g.names)
        lr[n] = g.lr;
    // Layer l (1-based) at 5e-5 * 0.9^(6 - l), embeddings at 5e-5 * 0.9^6.
    double expect = 5e-5;
    bool exact = lr["reg.fc2.bias"] == 1e-4;
    for (int l = 6; l >= 1; --l) {
      const double got = lr["enc." + std::to_string(l - 1) + ".ffn.fc1.weight"];
      exact = exact && std::abs(got - expect) <= 1e-15 * expect;
      expect *= 0.9;
    }
    exact = exact && std::abs(lr["embed.tokens.weight"] - expect) <= 1e-15 * expect;
    c.expect(exact, "layer-wise learning rates");
    c.note("LLRD L=6 decay 0.9 matches");
  }
  {
    const ScheduleConfig s {ScheduleKind::kCosine, 0.1, 1000};
    const double a = lr_at(0, s, 1e-3), b = lr_at(100, s, 1e-3),
                 m = lr_at(550, s, 1e-3);
    c.expect(a == 0.0, "lr at step 0 " + num(a));
    c.expect(std::abs(b - 1e-3) <= 1e-18, "lr at warmup end " + num(b));
    c.expect(std::abs(m - 5e-4) <= 1e-15, "lr at cosine midpoint " + num(m));
    c.note("lr_at 0/peak/peak/2 = " + num(a) + "/" + num(b) + "/" + num(m));
  }
  return c.done();
}

// --- 7: overfitting and reproducibility --------------------------------------------

std::vector<Example> memorization_set(int n, int vocab, int body,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Example> out;
  for (int i = 0; i < n; ++i) {
    Example ex;
    ex.ids.push_back(Vocabulary::kBos);
    double label = 0.0;
    for (int j = 0; j < body; ++j) {
      const int id = Vocabulary::kNumSpecial
                     + static_cast<int>(rng() % (vocab - Vocabulary::kNumSpecial));
      ex.ids.push_back(id);
      label += (id % 4 == 0 ? 1.0 : -0.3) * (1 + j % 3);
    }
    ex.ids.push_back(Vocabulary::kEos);
    ex.mask.assign(ex.ids.size(), 1);
    ex.label = label;
    ex.record_id = i;
    out.push_back(std::move(ex));
  }
  return out;
}

bool same_params(const ParamStore<float> &a, const ParamStore<float> &b) {
  for (const auto &[name, t]: a) {
    const auto &u = b.at(name);
    if (t.numel() != u.numel()
        || !std::equal(t.data().begin(), t.data().end(), u.data().begin()))
      return false;
  }
  return true;
}

// Sinusoidal positions are added unscaled, so at the library's default
// init_std the token signal is small next to the position signal; the toy
// models below raise init_std.
ModelConfig toy_model(int d_model, double init_std) {
  ModelConfig mc;
  mc.vocab_size = 25;
  mc.d_model = d_model;
  mc.n_layers = 2;
  mc.n_heads = 4;
  mc.d_ff = 2 * d_model;
  mc.max_length = 16;
  mc.init_std = init_std;
  mc.dropout_hidden = mc.dropout_attn = mc.dropout_regressor = 0.0;
  return mc;
}

Outcome overfit_checks() {
  Checker c;
  {
    const ModelConfig mc = toy_model(64, 0.1);
    const auto data = memorization_set(32, 25, 12, 7007);
    PretrainConfig cfg;
    cfg.epochs = 500;
    cfg.max_steps = 500;
    cfg.batch_size = 32;
    cfg.lr = 5e-3;
    cfg.warmup_ratio = 0.05;
    cfg.val_fraction = 0.0;
    cfg.seed = 7008;
    const auto t0 = std::chrono::steady_clock::now();
    Transformer<float> a(mc, {true, false}, 7009);
    const PretrainResult ra = pretrain(a, data, cfg);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double acc = 0.0;
    for (std::uint64_t s = 0; s < 4; ++s)
      acc += evaluate_mlm(a, data, cfg.masking, 32, 7100 + s).accuracy / 4.0;
    c.expect(acc > 0.95, "MLM accuracy " + num(acc));
    c.expect(ra.steps.size() <= 500, "MLM steps " + std::to_string(ra.steps.size()));
    c.expect(secs < 120.0, "MLM run took " + num(secs) + " s");
    Transformer<float> b(mc, {true, false}, 7009);
    pretrain(b, data, cfg);
    c.expect(same_params(a.params(), b.params()), "MLM rerun differs");
    c.note("MLM accuracy " + num(acc, 4) + " after " + std::to_string(ra.steps.size())
           + " steps in " + num(secs, 3) + " s, rerun bit-identical");
  }
  {
    const ModelConfig mc = toy_model(32, 0.5);
    const auto data = memorization_set(16, 25, 10, 7010);
    FinetuneConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 1;
    cfg.llrd = {2e-3, 2e-3, 1.0};
    cfg.weight_decay = 0.0;
    cfg.seed = 7011;
    Transformer<float> a(mc, {false, true}, 7012);
    const FinetuneResult ra = finetune(a, data, data, cfg);
    std::vector<double> labels;
    for (const Example &e: data)
      labels.push_back(e.label);
    const Metrics m = evaluate(predict(a, data, ra.scaler, 16), labels);
    c.expect(m.r2 > 0.99, "train R2 " + num(m.r2));
    Transformer<float> b(mc, {false, true}, 7012);
    finetune(b, data, data, cfg);
    c.expect(same_params(a.params(), b.params()), "regression rerun differs");
    c.note("regression train R2 " + num(m.r2, 5) + " within 20 epochs (best epoch "
           + std::to_string(ra.best_epoch) + "), rerun bit-identical");
  }
  return c.done();
}

// --- 8-10: end to end ---------------------------------------------------------------

struct MetricsRow {
  std::string fold;
  double rmse = 0.0;
  double r2 = 0.0;
};

std::vector<MetricsRow> read_metrics(const fs::path &path) {
  std::vector<MetricsRow> rows;
  const CsvTable t = parse_csv(read_file(path));
  for (const auto &r: t.rows)
    rows.push_back({r.at(2), std::stod(r.at(5)), std::stod(r.at(6))});
  return rows;
}

struct EndToEnd {
  fs::path pretrained;
  fs::path scratch_run;
  fs::path pretrained_run;
  fs::path frozen_run;
  bool ok = false;
};

EndToEnd run_end_to_end(const fs::path &dir) {
  EndToEnd e;
  const fs::path mini = testing::data_dir() / "mini";
  const auto t0 = std::chrono::steady_clock::now();
  if (cli({"pretrain", "--config", (mini / "pretrain.json").string(),
           "--output-dir", (dir / "pretrain").string()}) != 0)
    return e;
  e.pretrained = dir / "pretrain" / "best.ckpt";
  e.scratch_run = dir / "scratch";
  e.pretrained_run = dir / "pretrained";
  e.frozen_run = dir / "frozen";
  if (cli({"finetune", "--config", (mini / "finetune.json").string(),
           "--output-dir", e.scratch_run.string()}) != 0)
    return e;
  if (cli({"finetune", "--config", (mini / "finetune.json").string(),
           "--pretrained", e.pretrained.string(), "--output-dir",
           e.pretrained_run.string()}) != 0)
    return e;
  if (cli({"finetune", "--config", (mini / "finetune.json").string(),
           "--pretrained", e.pretrained.string(), "--freeze-encoder",
           "--output-dir", e.frozen_run.string()}) != 0)
    return e;
  std::cerr << "end-to-end runs took "
            << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                   .count()
            << " s\n";
  e.ok = true;
  return e;
}

Outcome pipeline_checks(const EndToEnd &e) {
  Checker c;
  c.expect(e.ok, "a pipeline stage exited non-zero");
  if (!e.ok)
    return c.done();
  double mean_r2[2] = {0.0, 0.0};
  int which = 0;
  for (const fs::path &run: {e.scratch_run, e.pretrained_run}) {
    const auto rows = read_metrics(run / "metrics.csv");
    int folds = 0;
    bool finite = true, has_mean = false;
    for (const MetricsRow &r: rows) {
      finite = finite && std::isfinite(r.rmse) && std::isfinite(r.r2);
      if (r.fold == "mean") {
        has_mean = true;
        mean_r2[which] = r.r2;
      } else {
        ++folds;
      }
    }
    c.expect(folds == 5 && has_mean, run.filename().string() + ": "
                                         + std::to_string(folds) + " fold rows");
    c.expect(finite, run.filename().string() + ": non-finite metric");
    ++which;
  }
  std::string out;
  const int code = cli({"eval", "--config",
                        (testing::data_dir() / "mini" / "finetune.json").string(),
                        "--ckpt", (e.pretrained_run / "fold_0.ckpt").string()},
                       &out);
  const CsvTable t = parse_csv(code == 0 ? out : "a\n");
  const bool eval_ok = code == 0 && t.rows.size() == 1
                       && std::isfinite(std::stod(t.rows[0].at(5)));
  c.expect(eval_ok, "eval of fold 0");
  c.expect(mean_r2[1] >= mean_r2[0],
           "pretrained mean R2 " + num(mean_r2[1]) + " < scratch " + num(mean_r2[0]));
  c.note("5 folds + mean, all finite; mean R2 pretrained " + num(mean_r2[1], 4)
         + " vs scratch " + num(mean_r2[0], 4) + "; eval fold 0 R2 "
         + (eval_ok ? t.rows[0].at(6) : std::string("n/a")));
  return c.done();
}

Outcome leakage_checks(const EndToEnd &e) {
  Checker c;
  const fs::path mini = testing::data_dir() / "mini";
  const RunConfig cfg = RunConfig::load(mini / "finetune.json");
  const DatasetSchema schema = DatasetSchema::load(cfg.schema);
  const auto records = load_dataset(cfg.dataset, schema);
  const auto folds = make_splits(records, cfg.split);
  c.expect(folds.size() == 5, "fold count");
  std::set<int> all_test;
  for (const Fold &f: folds) {
    const std::set<int> train(f.train_ids.begin(), f.train_ids.end());
    const std::set<int> test(f.test_ids.begin(), f.test_ids.end());
    std::vector<int> both;
    std::set_intersection(train.begin(), train.end(), test.begin(), test.end(),
                          std::back_inserter(both));
    c.expect(both.empty(), "fold " + std::to_string(f.index) + " shares ids");
    // Augmented training records still come only from training ids.
    for (const PolymerRecord &r:
         augment_train(select_records(records, f.train_ids), schema,
                       cfg.augment_seed))
      c.expect(!test.count(r.id), "augmented record from test id "
                                      + std::to_string(r.id));
    all_test.insert(test.begin(), test.end());
  }
  c.expect(all_test.size() == records.size(), "test folds do not cover the data");

  // The run's own split file agrees with the recomputed folds.
  if (e.ok) {
    const CsvTable t = parse_csv(read_file(e.pretrained_run / "splits.csv"));
    std::map<int, int> fold_of;
    for (const auto &r: t.rows)
      fold_of[std::stoi(r.at(0))] = std::stoi(r.at(1));
    for (const Fold &f: folds)
      for (int id: f.test_ids)
        c.expect(fold_of.count(id) && fold_of[id] == f.index,
                 "splits.csv disagrees for record " + std::to_string(id));
  }
  c.note("5 folds over " + std::to_string(records.size())
         + " records, train/test intersections empty, augmentation train-only");
  return c.done();
}

Outcome freeze_checks(const EndToEnd &e) {
  Checker c;
  c.expect(e.ok, "a pipeline stage exited non-zero");
  if (!e.ok)
    return c.done();
  const Checkpoint pre = Checkpoint::load(e.pretrained);
  std::size_t tensors = 0;
  for (int k = 0; k < 5; ++k) {
    const Checkpoint fold =
        Checkpoint::load(e.frozen_run / ("fold_" + std::to_string(k) + ".ckpt"));
    for (const auto &[name, t]: pre.tensors) {
      if (name.rfind("param/embed.", 0) != 0 && name.rfind("param/enc.", 0) != 0)
        continue;
      const auto it = fold.tensors.find(name);
      if (it == fold.tensors.end()) {
        c.expect(false, name + " missing from fold " + std::to_string(k));
        continue;
      }
      // The token table may carry extra rows for tokens new to the fold;
      // the pretrained rows come first.
      const auto &a = t.values;
      const auto &b = it->second.values;
      const bool same =
          b.size() >= a.size() && std::equal(a.begin(), a.end(), b.begin());
      c.expect(same, name + " changed in fold " + std::to_string(k));
      ++tensors;
    }
  }
  const auto frozen = read_metrics(e.frozen_run / "metrics.csv");
  const auto full = read_metrics(e.pretrained_run / "metrics.csv");
  const double fr = frozen.back().r2, fu = full.back().r2;
  c.expect(fr <= fu, "frozen R2 " + num(fr) + " > full " + num(fu));
  c.note(std::to_string(tensors) + " encoder tensors bitwise equal across 5 folds; "
         + "mean R2 frozen " + num(fr, 4) + " <= full " + num(fu, 4));
  return c.done();
}

}  // namespace
}  // namespace polyseq

int main() {
  using namespace polyseq;
  testing::ScratchDir scratch("acceptance");
  std::vector<std::pair<int, std::function<Outcome()>>> criteria;
  criteria.emplace_back(1, tokenizer_lossless);
  criteria.emplace_back(2, [&] { return augmentation_sound(scratch.path()); });
  criteria.emplace_back(3, masking_statistics);
  criteria.emplace_back(4, attention_checks);
  criteria.emplace_back(5, gradient_check);
  criteria.emplace_back(6, optimizer_checks);
  criteria.emplace_back(7, overfit_checks);

  int failed = 0;
  auto report = [&](int n, const Outcome &o) {
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " - "
              << o.detail << std::endl;
    failed += !o.pass;
  };
  auto guarded = [&](int n, const std::function<Outcome()> &f) {
    try {
      report(n, f());
    } catch (const std::exception &e) {
      report(n, {false, std::string("exception: ") + e.what()});
    }
  };
  for (const auto &[n, f]: criteria)
    guarded(n, f);

  EndToEnd e2e;
  try {
    e2e = run_end_to_end(scratch.path());
  } catch (const std::exception &e) {
    std::cerr << "end-to-end run failed: " << e.what() << "\n";
  }
  guarded(8, [&] { return pipeline_checks(e2e); });
  guarded(9, [&] { return leakage_checks(e2e); });
  guarded(10, [&] { return freeze_checks(e2e); });

  std::cout << (failed ? std::to_string(failed) + " criteria failed"
                       : std::string("all criteria passed"))
            << std::endl;
  return failed ? 1 : 0;
}
