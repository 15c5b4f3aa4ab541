//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef POLYSEQ_TRANSFORMER_H_
#define POLYSEQ_TRANSFORMER_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "polyseq/checkpoint.h"
#include "polyseq/optim.h"
#include "polyseq/tensor.h"

namespace polyseq {

enum class PositionKind { kSinusoidal, kLearned };

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 768;
  int n_layers = 6;
  int n_heads = 12;
  int d_ff = 0;  // 0 means 4 * d_model
  int max_length = 256;
  double dropout_hidden = 0.1;
  double dropout_attn = 0.1;
  double dropout_regressor = 0.1;
  PositionKind positions = PositionKind::kSinusoidal;
  bool tie_mlm_decoder = false;
  double init_std = 0.02;
  double layer_norm_eps = 1e-5;

  int ff_width() const { return d_ff > 0 ? d_ff : 4 * d_model; }
  int head_width() const { return d_model / n_heads; }

  /// Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys throw ConfigError naming the key; absent keys keep
  /// their defaults.
  static ModelConfig from_json(const nlohmann::json &j);
};

/// [max_length x d_model] row-major:
///   pe[pos][2i]   = sin(pos / 10000^(2i / d_model))
///   pe[pos][2i+1] = cos(pos / 10000^(2i / d_model))
std::vector<double> positional_encoding(int max_length, int d_model);

/// Per-forward dropout bookkeeping: every dropout site draws a fresh op id
/// so masks depend only on (seed, step, site order).
struct ForwardContext {
  bool training = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t next_op = 0;

  tensor::DropoutKey next_key() { return {seed, next_op++, step}; }
};

template <class T>
struct AttentionResult {
  tensor::Tensor<T> context;  // [B, H, L, d_k]
  tensor::Tensor<T> weights;  // [B, H, L, L], before attention dropout
};

/// softmax(Q K^T / sqrt(d_k)) V over [B, H, L, d_k] inputs. Keys whose
/// `pad_mask` entry ([B x L], 1 = real token) is 0 get weight 0.
template <class T>
AttentionResult<T> scaled_dot_product_attention(
    const tensor::Tensor<T> &q, const tensor::Tensor<T> &k,
    const tensor::Tensor<T> &v, std::span<const int> pad_mask,
    double dropout_p = 0.0, ForwardContext *ctx = nullptr);

struct HeadSet {
  bool mlm = true;
  bool regression = false;
};

template <class T>
class Transformer {
public:
  using Tensor = tensor::Tensor<T>;

  struct Output {
    Tensor hidden;                 // [B, L, d_model]
    std::vector<Tensor> attention;  // per layer, [B, H, L, L]
  };

  Transformer(ModelConfig config, HeadSet heads, std::uint64_t seed);

  const ModelConfig &config() const { return config_; }
  const HeadSet &heads() const { return heads_; }
  ParamStore<T> &params() { return params_; }
  const ParamStore<T> &params() const { return params_; }

  /// `ids` and `mask` are [batch x length] row-major.
  Output encode(std::span<const int> ids, std::span<const int> mask,
                std::size_t batch, ForwardContext &ctx) const;

  /// [B, L, V].
  Tensor mlm_logits(const Tensor &hidden, ForwardContext &ctx) const;

  /// Reads hidden[:, 0, :]; returns [B, 1].
  Tensor regress(const Tensor &hidden, ForwardContext &ctx) const;

  /// Names of the embedding and encoder parameters.
  std::vector<std::string> encoder_param_names() const;

  /// Copies embedding/encoder weights from a checkpoint. A token table with
  /// fewer rows than ours fills the leading rows only. Returns the names
  /// touched.
  std::vector<std::string> load_encoder(const Checkpoint &ckpt);

private:
  void init_params(std::uint64_t seed);
  Tensor linear(const Tensor &x, const std::string &prefix) const;

  ModelConfig config_;
  HeadSet heads_;
  ParamStore<T> params_;
  Tensor positions_;  // sinusoidal table, constant
};

}  // namespace polyseq

#endif  // POLYSEQ_TRANSFORMER_H_
