//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "polyseq/transformer.h"

#include <cmath>
#include <limits>
#include <random>

#include "polyseq/error.h"

namespace polyseq {
namespace {

using nlohmann::json;
namespace ts = tensor;

template <class V>
void read_field(const json &j, const char *key, V &out) {
  if (!j.contains(key))
    return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception &) {
    throw ConfigError(std::string("model.") + key + ": wrong value type");
  }
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string &key, const std::string &msg) {
    throw ConfigError("model." + key + ": " + msg);
  };
  if (vocab_size <= 0)
    fail("vocab_size", "must be positive");
  if (d_model <= 0)
    fail("d_model", "must be positive");
  if (n_layers <= 0)
    fail("n_layers", "must be positive");
  if (n_heads <= 0 || d_model % n_heads != 0)
    fail("n_heads", "must divide d_model");
  if (d_ff < 0)
    fail("d_ff", "must be non-negative");
  if (max_length < 2)
    fail("max_length", "must be at least 2");
  for (auto [key, p]: {std::pair {"dropout_hidden", dropout_hidden},
                       std::pair {"dropout_attn", dropout_attn},
                       std::pair {"dropout_regressor", dropout_regressor}})
    if (!(p >= 0.0 && p < 1.0))
      fail(key, "must be in [0, 1)");
  if (!(init_std > 0.0))
    fail("init_std", "must be positive");
  if (!(layer_norm_eps > 0.0))
    fail("layer_norm_eps", "must be positive");
}

json ModelConfig::to_json() const {
  return {
      {"vocab_size", vocab_size},
      {"d_model", d_model},
      {"n_layers", n_layers},
      {"n_heads", n_heads},
      {"d_ff", ff_width()},
      {"max_length", max_length},
      {"dropout_hidden", dropout_hidden},
      {"dropout_attn", dropout_attn},
      {"dropout_regressor", dropout_regressor},
      {"positions",
       positions == PositionKind::kSinusoidal ? "sinusoidal" : "learned"},
      {"tie_mlm_decoder", tie_mlm_decoder},
      {"init_std", init_std},
      {"layer_norm_eps", layer_norm_eps},
  };
}

ModelConfig ModelConfig::from_json(const json &j) {
  if (!j.is_object())
    throw ConfigError("model: expected an object");
  static const std::vector<std::string> known = {
      "vocab_size",     "d_model",           "n_layers",     "n_heads",
      "d_ff",           "max_length",        "dropout_hidden",
      "dropout_attn",   "dropout_regressor", "positions",
      "tie_mlm_decoder", "init_std",         "layer_norm_eps"};
  for (const auto &[key, _]: j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("model: unknown key '" + key + "'");

  ModelConfig c;
  read_field(j, "vocab_size", c.vocab_size);
  read_field(j, "d_model", c.d_model);
  read_field(j, "n_layers", c.n_layers);
  read_field(j, "n_heads", c.n_heads);
  read_field(j, "d_ff", c.d_ff);
  read_field(j, "max_length", c.max_length);
  read_field(j, "dropout_hidden", c.dropout_hidden);
  read_field(j, "dropout_attn", c.dropout_attn);
  read_field(j, "dropout_regressor", c.dropout_regressor);
  read_field(j, "tie_mlm_decoder", c.tie_mlm_decoder);
  read_field(j, "init_std", c.init_std);
  read_field(j, "layer_norm_eps", c.layer_norm_eps);
  if (j.contains("positions")) {
    std::string p;
    read_field(j, "positions", p);
    if (p == "sinusoidal")
      c.positions = PositionKind::kSinusoidal;
    else if (p == "learned")
      c.positions = PositionKind::kLearned;
    else
      throw ConfigError("model.positions: expected sinusoidal or learned");
  }
  return c;
}

std::vector<double> positional_encoding(int max_length, int d_model) {
  const std::size_t rows = static_cast<std::size_t>(max_length);
  const std::size_t d = static_cast<std::size_t>(d_model);
  std::vector<double> pe(rows * d);
  for (std::size_t pos = 0; pos < rows; ++pos) {
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t two_i = j - j % 2;
      const double angle =
          static_cast<double>(pos)
          / std::pow(10000.0, static_cast<double>(two_i) / static_cast<double>(d));
      pe[pos * d + j] = j % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

template <class T>
AttentionResult<T> scaled_dot_product_attention(const ts::Tensor<T> &q,
                                                const ts::Tensor<T> &k,
                                                const ts::Tensor<T> &v,
                                                std::span<const int> pad_mask,
                                                double dropout_p,
                                                ForwardContext *ctx) {
  if (q.rank() != 4 || k.shape() != q.shape() || v.shape() != q.shape())
    throw ShapeError("attention expects equal [B, H, L, d_k] inputs, got "
                     + ts::to_string(q.shape()) + ", "
                     + ts::to_string(k.shape()) + ", "
                     + ts::to_string(v.shape()));
  const std::size_t batch = q.shape()[0];
  const std::size_t len = q.shape()[2];
  const std::size_t dk = q.shape()[3];
  if (pad_mask.size() != batch * len)
    throw ShapeError("attention pad mask has " + std::to_string(pad_mask.size())
                     + " entries, expected "
                     + std::to_string(batch * len));

  auto scores = ts::scale(ts::matmul(q, ts::transpose(k, -1, -2)),
                          static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk))));
  std::vector<T> bias(batch * len);
  for (std::size_t i = 0; i < bias.size(); ++i)
    bias[i] = pad_mask[i] ? T(0) : -std::numeric_limits<T>::infinity();
  scores = ts::add(scores, ts::Tensor<T>({batch, 1, 1, len}, std::move(bias)));

  AttentionResult<T> out;
  out.weights = ts::softmax(scores, -1);
  ts::Tensor<T> mixed = out.weights;
  if (ctx && ctx->training && dropout_p > 0.0)
    mixed = ts::dropout(mixed, dropout_p, true, ctx->next_key());
  out.context = ts::matmul(mixed, v);
  return out;
}

template <class T>
Transformer<T>::Transformer(ModelConfig config, HeadSet heads,
                            std::uint64_t seed)
    : config_(std::move(config)), heads_(heads) {
  config_.validate();
  if (config_.positions == PositionKind::kSinusoidal) {
    const auto pe = positional_encoding(config_.max_length, config_.d_model);
    positions_ = Tensor({static_cast<std::size_t>(config_.max_length),
                         static_cast<std::size_t>(config_.d_model)},
                        std::vector<T>(pe.begin(), pe.end()));
  }
  init_params(seed);
}

template <class T>
void Transformer<T>::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, config_.init_std);
  const std::size_t d = static_cast<std::size_t>(config_.d_model);
  const std::size_t ff = static_cast<std::size_t>(config_.ff_width());
  const std::size_t vocab = static_cast<std::size_t>(config_.vocab_size);

  auto random = [&](const std::string &name, ts::Shape shape) {
    std::vector<T> data(ts::numel(shape));
    for (T &x: data)
      x = static_cast<T>(normal(rng));
    params_.add(name, Tensor(std::move(shape), std::move(data)));
  };
  auto constant = [&](const std::string &name, ts::Shape shape, T value) {
    params_.add(name, Tensor::full(std::move(shape), value));
  };
  auto linear = [&](const std::string &prefix, std::size_t in,
                    std::size_t out) {
    random(prefix + ".weight", {in, out});
    constant(prefix + ".bias", {out}, T(0));
  };
  auto norm = [&](const std::string &prefix) {
    constant(prefix + ".weight", {d}, T(1));
    constant(prefix + ".bias", {d}, T(0));
  };

  random("embed.tokens.weight", {vocab, d});
  if (config_.positions == PositionKind::kLearned)
    random("embed.positions.weight",
           {static_cast<std::size_t>(config_.max_length), d});
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";
    linear(p + "attn.q_proj", d, d);
    linear(p + "attn.k_proj", d, d);
    linear(p + "attn.v_proj", d, d);
    linear(p + "attn.out_proj", d, d);
    norm(p + "attn_norm");
    linear(p + "ffn.fc1", d, ff);
    linear(p + "ffn.fc2", ff, d);
    norm(p + "ffn_norm");
  }
  if (heads_.mlm) {
    linear("mlm.dense", d, d);
    norm("mlm.norm");
    if (config_.tie_mlm_decoder)
      constant("mlm.decoder.bias", {vocab}, T(0));
    else
      linear("mlm.decoder", d, vocab);
  }
  if (heads_.regression) {
    linear("reg.fc1", d, d);
    linear("reg.fc2", d, 1);
  }
}

template <class T>
typename Transformer<T>::Tensor
Transformer<T>::linear(const Tensor &x, const std::string &prefix) const {
  return ts::add(ts::matmul(x, params_.at(prefix + ".weight")),
                 params_.at(prefix + ".bias"));
}

template <class T>
typename Transformer<T>::Output
Transformer<T>::encode(std::span<const int> ids, std::span<const int> mask,
                       std::size_t batch, ForwardContext &ctx) const {
  if (batch == 0 || ids.size() % batch != 0 || mask.size() != ids.size())
    throw ShapeError("encode: ids/mask sizes do not form a [batch, length] "
                     "grid");
  const std::size_t len = ids.size() / batch;
  const std::size_t d = static_cast<std::size_t>(config_.d_model);
  const std::size_t heads = static_cast<std::size_t>(config_.n_heads);
  const std::size_t dk = d / heads;
  const T eps = static_cast<T>(config_.layer_norm_eps);
  if (len > static_cast<std::size_t>(config_.max_length))
    throw ShapeError("encode: length " + std::to_string(len)
                     + " exceeds max_length "
                     + std::to_string(config_.max_length));

  Tensor x = ts::embedding(params_.at("embed.tokens.weight"), ids,
                           {batch, len});
  if (config_.positions == PositionKind::kSinusoidal) {
    Tensor pe({len, d}, std::vector<T>(positions_.data().begin(),
                                       positions_.data().begin()
                                           + static_cast<std::ptrdiff_t>(len * d)));
    x = ts::add(x, pe);
  } else {
    std::vector<int> pos(len);
    for (std::size_t i = 0; i < len; ++i)
      pos[i] = static_cast<int>(i);
    x = ts::add(x, ts::embedding(params_.at("embed.positions.weight"),
                                 std::span<const int>(pos), {len}));
  }

  Output out;
  auto split_heads = [&](const Tensor &t) {
    return ts::transpose(ts::reshape(t, {batch, len, heads, dk}), 1, 2);
  };
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";
    auto attn = scaled_dot_product_attention(
        split_heads(linear(x, p + "attn.q_proj")),
        split_heads(linear(x, p + "attn.k_proj")),
        split_heads(linear(x, p + "attn.v_proj")), mask, config_.dropout_attn,
        &ctx);
    out.attention.push_back(attn.weights);
    Tensor merged =
        ts::reshape(ts::transpose(attn.context, 1, 2), {batch, len, d});
    Tensor h = ts::dropout(linear(merged, p + "attn.out_proj"),
                           config_.dropout_hidden, ctx.training,
                           ctx.next_key());
    x = ts::layer_norm(ts::add(x, h), params_.at(p + "attn_norm.weight"),
                       params_.at(p + "attn_norm.bias"), eps);
    Tensor f = linear(ts::gelu(linear(x, p + "ffn.fc1")), p + "ffn.fc2");
    f = ts::dropout(f, config_.dropout_hidden, ctx.training, ctx.next_key());
    x = ts::layer_norm(ts::add(x, f), params_.at(p + "ffn_norm.weight"),
                       params_.at(p + "ffn_norm.bias"), eps);
  }
  out.hidden = x;
  return out;
}

template <class T>
typename Transformer<T>::Tensor
Transformer<T>::mlm_logits(const Tensor &hidden, ForwardContext &) const {
  if (!heads_.mlm)
    throw StateError("model was built without an MLM head");
  const T eps = static_cast<T>(config_.layer_norm_eps);
  Tensor h = ts::gelu(linear(hidden, "mlm.dense"));
  h = ts::layer_norm(h, params_.at("mlm.norm.weight"),
                     params_.at("mlm.norm.bias"), eps);
  if (config_.tie_mlm_decoder)
    return ts::add(
        ts::matmul(h, ts::transpose(params_.at("embed.tokens.weight"), 0, 1)),
        params_.at("mlm.decoder.bias"));
  return linear(h, "mlm.decoder");
}

template <class T>
typename Transformer<T>::Tensor
Transformer<T>::regress(const Tensor &hidden, ForwardContext &ctx) const {
  if (!heads_.regression)
    throw StateError("model was built without a regression head");
  if (hidden.rank() != 3)
    throw ShapeError("regress expects [B, L, d_model], got "
                     + ts::to_string(hidden.shape()));
  Tensor cls = ts::select(hidden, 1, 0);
  cls = ts::dropout(cls, config_.dropout_regressor, ctx.training,
                    ctx.next_key());
  return linear(ts::silu(linear(cls, "reg.fc1")), "reg.fc2");
}

template <class T>
std::vector<std::string> Transformer<T>::encoder_param_names() const {
  std::vector<std::string> out;
  for (const auto &[name, _]: params_)
    if (name.rfind("embed.", 0) == 0 || name.rfind("enc.", 0) == 0)
      out.push_back(name);
  return out;
}

template <class T>
std::vector<std::string> Transformer<T>::load_encoder(const Checkpoint &ckpt) {
  std::vector<std::string> loaded;
  for (const std::string &name: encoder_param_names()) {
    auto it = ckpt.tensors.find("param/" + name);
    if (it == ckpt.tensors.end())
      continue;
    Tensor &t = params_.at(name);
    const StoredTensor &s = it->second;
    const bool same = s.shape == t.shape();
    const bool fewer_rows = name == "embed.tokens.weight" && s.shape.size() == 2
                            && s.shape[1] == t.shape()[1]
                            && s.shape[0] <= t.shape()[0];
    if (!same && !fewer_rows)
      throw StateError("pretrained tensor '" + name + "' has shape "
                       + ts::to_string(s.shape) + ", model expects "
                       + ts::to_string(t.shape()));
    auto data = t.data();
    for (std::size_t i = 0; i < s.values.size(); ++i)
      data[i] = static_cast<T>(s.values[i]);
    loaded.push_back(name);
  }
  return loaded;
}

template AttentionResult<float> scaled_dot_product_attention<float>(
    const ts::Tensor<float> &, const ts::Tensor<float> &,
    const ts::Tensor<float> &, std::span<const int>, double, ForwardContext *);
template AttentionResult<double> scaled_dot_product_attention<double>(
    const ts::Tensor<double> &, const ts::Tensor<double> &,
    const ts::Tensor<double> &, std::span<const int>, double,
    ForwardContext *);
template class Transformer<float>;
template class Transformer<double>;

}  // namespace polyseq
