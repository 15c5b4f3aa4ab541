//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef POLYSEQ_TENSOR_H_
#define POLYSEQ_TENSOR_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace polyseq::tensor {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape &shape);
std::string to_string(const Shape &shape);

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents'.
  std::function<void(Node &)> backward;

  std::vector<T> &grad_buffer() {
    if (grad.empty())
      grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Whether new operations are recorded on the tape (thread-local).
bool grad_enabled();

/// Disables tape recording for its lifetime.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
  bool previous_;
};

/// Dense row-major array with an optional gradient.
///
/// A Tensor is a shared handle: copies alias the same storage and tape node.
/// Operations build a reverse-mode tape that lives as long as the tensors
/// produced by them.
template <class T>
class Tensor {
public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape &shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  /// Size of `axis`; negative axes count from the end.
  std::size_t size(int axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  /// Empty when no gradient has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }

  T item() const;
  /// Copy of the data, cut off from the tape.
  Tensor detach() const;

  const std::shared_ptr<detail::Node<T>> &node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node<T>> node);

private:
  std::shared_ptr<detail::Node<T>> node_;
};

/// Accumulates d(loss)/d(leaf) into every leaf that requires grad. Grads of
/// leaves accumulate across calls until zeroed. Throws GraphError when
/// `loss` is not a single element or does not depend on any such leaf.
template <class T>
void backward(const Tensor<T> &loss);

/// Element-wise with NumPy broadcasting.
template <class T>
Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b);
template <class T>
Tensor<T> sub(const Tensor<T> &a, const Tensor<T> &b);
template <class T>
Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b);
template <class T>
Tensor<T> scale(const Tensor<T> &a, T factor);

/// [..., m, k] x [k, n] or [B..., m, k] x [B..., k, n].
template <class T>
Tensor<T> matmul(const Tensor<T> &a, const Tensor<T> &b);

/// Max-shifted softmax. Entries equal to -inf get weight 0; a slice made
/// only of -inf yields zeros.
template <class T>
Tensor<T> softmax(const Tensor<T> &a, int axis = -1);

/// Normalizes over the last axis with the population variance.
template <class T>
Tensor<T> layer_norm(const Tensor<T> &x, const Tensor<T> &gamma,
                     const Tensor<T> &beta, T eps);
template <class T>
Tensor<T> layer_norm(const Tensor<T> &x, T eps);

/// Exact (erf) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T> &a);
template <class T>
Tensor<T> silu(const Tensor<T> &a);

/// Rows of `table` ([V, D]) gathered into `index_shape` + [D].
template <class T>
Tensor<T> embedding(const Tensor<T> &table, std::span<const int> ids,
                    Shape index_shape);

template <class T>
Tensor<T> transpose(const Tensor<T> &a, int axis0, int axis1);
template <class T>
Tensor<T> reshape(const Tensor<T> &a, Shape shape);
template <class T>
Tensor<T> concat(std::span<const Tensor<T>> parts, int axis);
/// Drops `axis` by picking one index along it.
template <class T>
Tensor<T> select(const Tensor<T> &a, int axis, std::size_t index);

template <class T>
Tensor<T> sum(const Tensor<T> &a);
template <class T>
Tensor<T> mean(const Tensor<T> &a);
/// Reduces (and removes) `axis`.
template <class T>
Tensor<T> sum(const Tensor<T> &a, int axis);
template <class T>
Tensor<T> mean(const Tensor<T> &a, int axis);

/// Counter-based dropout stream coordinates.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t op_id = 0;
  std::uint64_t step = 0;
};

/// Uniform [0, 1) draw for element `index` of the stream `key`.
double dropout_uniform(const DropoutKey &key, std::uint64_t index);

/// Inverted dropout; identity when !training or p == 0.
template <class T>
Tensor<T> dropout(const Tensor<T> &a, double p, bool training,
                  const DropoutKey &key);

/// Mean categorical cross-entropy of `logits` ([N, V]) over rows whose
/// target is not `ignore_index`. Throws DegenerateBatch if there are none.
template <class T>
Tensor<T> cross_entropy(const Tensor<T> &logits, std::span<const int> targets,
                        int ignore_index);

/// Mean squared error against constant targets.
template <class T>
Tensor<T> mse_loss(const Tensor<T> &pred, std::span<const T> targets);

}  // namespace polyseq::tensor

#endif  // POLYSEQ_TENSOR_H_
