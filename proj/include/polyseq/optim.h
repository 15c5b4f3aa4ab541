//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef POLYSEQ_OPTIM_H_
#define POLYSEQ_OPTIM_H_

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "polyseq/tensor.h"

namespace polyseq {

/// Named model parameters. Every stored tensor requires grad.
template <class T>
class ParamStore {
public:
  using Tensor = tensor::Tensor<T>;

  /// Throws NameError on a duplicate name.
  Tensor &add(const std::string &name, Tensor value);
  /// Throws NameError if absent.
  Tensor &at(std::string_view name);
  const Tensor &at(std::string_view name) const;
  bool contains(std::string_view name) const;
  void erase(std::string_view name);

  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }
  std::size_t num_parameters() const;

  void zero_grad();

  /// Deep copy of every value (grads dropped).
  ParamStore clone() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

private:
  std::map<std::string, Tensor, std::less<>> params_;
};

/// Layer index k of an "enc.<k>." parameter name, or nullopt.
std::optional<int> encoder_layer_index(std::string_view name);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.0;
  /// Global-norm clipping threshold; <= 0 disables.
  double clip_grad_norm = 0.0;
};

struct ParamGroup {
  std::string label;
  double lr = 0.0;
  std::vector<std::string> names;
};

/// Decoupled weight decay Adam:
///   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
/// The update is computed in double regardless of T.
template <class T>
class AdamW {
public:
  explicit AdamW(AdamWOptions options = {}): options_(options) {}

  /// Zero moments for every parameter in `params`.
  void init(const ParamStore<T> &params);

  /// One step over the parameters listed in `groups`; a parameter without a
  /// grad is treated as having zero grad. Throws StateError if a listed
  /// parameter has no moments.
  void step(ParamStore<T> &params, const std::vector<ParamGroup> &groups);

  const AdamWOptions &options() const { return options_; }
  AdamWOptions &options() { return options_; }
  long step_count() const { return step_; }
  void set_step_count(long step) { step_ = step; }

  std::map<std::string, std::vector<double>> &first_moments() { return m_; }
  std::map<std::string, std::vector<double>> &second_moments() { return v_; }
  const std::map<std::string, std::vector<double>> &first_moments() const {
    return m_;
  }
  const std::map<std::string, std::vector<double>> &second_moments() const {
    return v_;
  }

private:
  AdamWOptions options_;
  long step_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

/// L2 norm over the grads of every parameter in `params`.
template <class T>
double grad_norm(const ParamStore<T> &params);

}  // namespace polyseq

#endif  // POLYSEQ_OPTIM_H_
