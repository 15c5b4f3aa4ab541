//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "polyseq/optim.h"

#include <charconv>
#include <cmath>

#include "polyseq/error.h"

namespace polyseq {

template <class T>
typename ParamStore<T>::Tensor &ParamStore<T>::add(const std::string &name,
                                                   Tensor value) {
  if (params_.count(name))
    throw NameError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  return params_.emplace(name, std::move(value)).first->second;
}

template <class T>
typename ParamStore<T>::Tensor &ParamStore<T>::at(std::string_view name) {
  auto it = params_.find(name);
  if (it == params_.end())
    throw NameError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

template <class T>
const typename ParamStore<T>::Tensor &
ParamStore<T>::at(std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end())
    throw NameError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

template <class T>
bool ParamStore<T>::contains(std::string_view name) const {
  return params_.find(name) != params_.end();
}

template <class T>
void ParamStore<T>::erase(std::string_view name) {
  auto it = params_.find(name);
  if (it != params_.end())
    params_.erase(it);
}

template <class T>
std::vector<std::string> ParamStore<T>::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto &[name, _]: params_)
    out.push_back(name);
  return out;
}

template <class T>
std::size_t ParamStore<T>::num_parameters() const {
  std::size_t n = 0;
  for (const auto &[_, t]: params_)
    n += t.numel();
  return n;
}

template <class T>
void ParamStore<T>::zero_grad() {
  for (auto &[_, t]: params_)
    t.zero_grad();
}

template <class T>
ParamStore<T> ParamStore<T>::clone() const {
  ParamStore out;
  for (const auto &[name, t]: params_)
    out.add(name, t.detach());
  return out;
}

std::optional<int> encoder_layer_index(std::string_view name) {
  constexpr std::string_view prefix = "enc.";
  if (name.substr(0, prefix.size()) != prefix)
    return std::nullopt;
  name.remove_prefix(prefix.size());
  const std::size_t dot = name.find('.');
  if (dot == 0 || dot == std::string_view::npos)
    return std::nullopt;
  int index = 0;
  const auto [ptr, ec] = std::from_chars(name.data(), name.data() + dot, index);
  if (ec != std::errc() || ptr != name.data() + dot || index < 0)
    return std::nullopt;
  return index;
}

template <class T>
void AdamW<T>::init(const ParamStore<T> &params) {
  m_.clear();
  v_.clear();
  step_ = 0;
  for (const auto &[name, t]: params) {
    m_[name].assign(t.numel(), 0.0);
    v_[name].assign(t.numel(), 0.0);
  }
}

template <class T>
void AdamW<T>::step(ParamStore<T> &params,
                    const std::vector<ParamGroup> &groups) {
  for (const ParamGroup &g: groups)
    for (const std::string &name: g.names)
      if (!m_.count(name) || !v_.count(name))
        throw StateError("AdamW: no moment state for parameter '" + name
                         + "'");

  double clip = 1.0;
  if (options_.clip_grad_norm > 0.0) {
    const double norm = grad_norm(params);
    if (norm > options_.clip_grad_norm)
      clip = options_.clip_grad_norm / (norm + 1e-12);
  }

  ++step_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (const ParamGroup &g: groups) {
    for (const std::string &name: g.names) {
      auto &p = params.at(name);
      std::vector<double> &m = m_.at(name);
      std::vector<double> &v = v_.at(name);
      if (m.size() != p.numel() || v.size() != p.numel())
        throw StateError("AdamW: moment shape mismatch for '" + name + "'");
      auto data = p.data();
      auto grad = p.grad();
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double gi = grad.empty() ? 0.0 : static_cast<double>(grad[i]) * clip;
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        const double theta = static_cast<double>(data[i]);
        const double update = mhat / (std::sqrt(vhat) + options_.eps)
                              + options_.weight_decay * theta;
        data[i] = static_cast<T>(theta - g.lr * update);
      }
    }
  }
}

template <class T>
double grad_norm(const ParamStore<T> &params) {
  double total = 0.0;
  for (const auto &[_, t]: params)
    for (T g: t.grad())
      total += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(total);
}

template class ParamStore<float>;
template class ParamStore<double>;
template class AdamW<float>;
template class AdamW<double>;
template double grad_norm<float>(const ParamStore<float> &);
template double grad_norm<double>(const ParamStore<double> &);

}  // namespace polyseq
