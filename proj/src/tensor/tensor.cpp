//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "polyseq/tensor.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>
#include <utility>

#include "polyseq/error.h"

namespace polyseq::tensor {
namespace {

thread_local bool g_grad_enabled = true;

template <class T>
using Node = detail::Node<T>;

template <class T>
using BackwardFn = std::function<void(Node<T> &)>;

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::vector<const Tensor<T> *> inputs,
                      BackwardFn<T> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const Tensor<T> *t: inputs)
      needs_grad = needs_grad || t->requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    for (const Tensor<T> *t: inputs)
      node->parents.push_back(t->node());
    node->backward = std::move(backward_fn);
  }
  return Tensor<T>::from_node(std::move(node));
}

// Grad buffer of parent `i`, or nullptr if it takes no gradient.
template <class T>
T *parent_grad(Node<T> &self, std::size_t i) {
  Node<T> &p = *self.parents[i];
  if (!p.requires_grad)
    return nullptr;
  return p.grad_buffer().data();
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank "
                     + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

std::size_t product(const Shape &shape, std::size_t begin, std::size_t end) {
  std::size_t n = 1;
  for (std::size_t i = begin; i < end; ++i)
    n *= shape[i];
  return n;
}

// --- broadcasting ----------------------------------------------------------

struct Broadcast {
  enum Kind { kSame, kSuffixB, kSuffixA, kGeneral };

  Shape out;
  Kind kind = kSame;
  std::size_t na = 0;
  std::size_t nb = 0;
  std::vector<std::size_t> ia;
  std::vector<std::size_t> ib;

  std::size_t a_index(std::size_t i) const {
    switch (kind) {
    case kSame:
    case kSuffixB:
      return i;
    case kSuffixA:
      return i % na;
    case kGeneral:
      return ia[i];
    }
    return i;
  }

  std::size_t b_index(std::size_t i) const {
    switch (kind) {
    case kSame:
    case kSuffixA:
      return i;
    case kSuffixB:
      return i % nb;
    case kGeneral:
      return ib[i];
    }
    return i;
  }
};

Shape strip_leading_ones(const Shape &s) {
  std::size_t k = 0;
  while (k < s.size() && s[k] == 1)
    ++k;
  return Shape(s.begin() + static_cast<std::ptrdiff_t>(k), s.end());
}

bool is_suffix(const Shape &small, const Shape &big) {
  const Shape s = strip_leading_ones(small);
  if (s.size() > big.size())
    return false;
  return std::equal(s.begin(), s.end(), big.end() - static_cast<std::ptrdiff_t>(s.size()));
}

Broadcast plan_broadcast(const Shape &a, const Shape &b) {
  Broadcast plan;
  plan.na = numel(a);
  plan.nb = numel(b);

  const std::size_t rank = std::max(a.size(), b.size());
  plan.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da =
        i + a.size() >= rank ? a[i + a.size() - rank] : 1;
    const std::size_t db =
        i + b.size() >= rank ? b[i + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast " + to_string(a) + " with "
                       + to_string(b));
    plan.out[i] = std::max(da, db);
  }

  if (a == b) {
    plan.kind = Broadcast::kSame;
  } else if (plan.out == a && is_suffix(b, a)) {
    plan.kind = Broadcast::kSuffixB;
  } else if (plan.out == b && is_suffix(a, b)) {
    plan.kind = Broadcast::kSuffixA;
  } else {
    plan.kind = Broadcast::kGeneral;
    auto strides_for = [&](const Shape &s) {
      std::vector<std::size_t> strides(rank, 0);
      std::size_t stride = 1;
      for (std::size_t k = 0; k < s.size(); ++k) {
        const std::size_t axis = s.size() - 1 - k;
        const std::size_t out_axis = rank - 1 - k;
        strides[out_axis] = s[axis] == 1 ? 0 : stride;
        stride *= s[axis];
      }
      return strides;
    };
    const auto sa = strides_for(a);
    const auto sb = strides_for(b);
    const std::size_t n = numel(plan.out);
    plan.ia.resize(n);
    plan.ib.resize(n);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t offa = 0;
    std::size_t offb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      plan.ia[i] = offa;
      plan.ib[i] = offb;
      for (std::size_t k = rank; k-- > 0;) {
        ++counter[k];
        offa += sa[k];
        offb += sb[k];
        if (counter[k] < plan.out[k])
          break;
        offa -= sa[k] * counter[k];
        offb -= sb[k] * counter[k];
        counter[k] = 0;
      }
    }
  }
  return plan;
}

// Out-index -> in-index map for swapping two axes.
std::vector<std::size_t> transpose_map(const Shape &in, std::size_t ax0,
                                       std::size_t ax1, Shape &out_shape) {
  out_shape = in;
  std::swap(out_shape[ax0], out_shape[ax1]);
  const std::size_t rank = in.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t k = rank; k-- > 1;)
    in_strides[k - 1] = in_strides[k] * in[k];
  std::vector<std::size_t> strides = in_strides;
  std::swap(strides[ax0], strides[ax1]);

  const std::size_t n = numel(in);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = off;
    for (std::size_t k = rank; k-- > 0;) {
      ++counter[k];
      off += strides[k];
      if (counter[k] < out_shape[k])
        break;
      off -= strides[k] * counter[k];
      counter[k] = 0;
    }
  }
  return map;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t numel(const Shape &shape) {
  return product(shape, 0, shape.size());
}

std::string to_string(const Shape &shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0)
      s += ", ";
    s += std::to_string(shape[i]);
  }
  if (shape.size() == 1)
    s += ",";
  return s + ")";
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard(): previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  if (tensor::numel(shape) != data.size())
    throw ShapeError("tensor data has " + std::to_string(data.size())
                     + " elements but shape " + to_string(shape) + " needs "
                     + std::to_string(tensor::numel(shape)));
  node_ = std::make_shared<Node<T>>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = tensor::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape {}, std::vector<T> {value}, requires_grad);
}

template <class T>
std::size_t Tensor<T>::size(int axis) const {
  return node_->shape[normalize_axis(axis, rank())];
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1)
    throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

template <class T>
Tensor<T> Tensor<T>::from_node(std::shared_ptr<detail::Node<T>> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <class T>
void backward(const Tensor<T> &loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw GraphError("backward: loss must be a scalar, got shape "
                     + (loss.defined() ? to_string(loss.shape())
                                       : std::string("<undefined>")));
  if (!loss.requires_grad())
    throw GraphError("backward: loss does not depend on any tensor that "
                     "requires grad");

  // Post-order DFS over the grad-requiring part of the tape.
  std::vector<Node<T> *> order;
  std::unordered_set<Node<T> *> seen;
  std::vector<std::pair<Node<T> *, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto &[node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T> *parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second)
        stack.emplace_back(parent, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (Node<T> *node: order)
    if (node->backward)
      node->grad.assign(node->data.size(), T(0));
  loss.node()->grad_buffer()[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T> *node = *it;
    if (!node->backward)
      continue;
    node->backward(*node);
    std::vector<T>().swap(node->grad);
  }
}

// --- element-wise -----------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b) {
  auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape()));
  const std::size_t n = numel(plan->out);
  std::vector<T> out(n);
  const T *pa = a.data().data();
  const T *pb = b.data().data();
  for (std::size_t i = 0; i < n; ++i)
    out[i] = pa[plan->a_index(i)] + pb[plan->b_index(i)];
  return make_result<T>(plan->out, std::move(out), {&a, &b},
                        [plan](Node<T> &self) {
                          const T *g = self.grad.data();
                          const std::size_t n = self.grad.size();
                          if (T *ga = parent_grad(self, 0))
                            for (std::size_t i = 0; i < n; ++i)
                              ga[plan->a_index(i)] += g[i];
                          if (T *gb = parent_grad(self, 1))
                            for (std::size_t i = 0; i < n; ++i)
                              gb[plan->b_index(i)] += g[i];
                        });
}

template <class T>
Tensor<T> sub(const Tensor<T> &a, const Tensor<T> &b) {
  auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape()));
  const std::size_t n = numel(plan->out);
  std::vector<T> out(n);
  const T *pa = a.data().data();
  const T *pb = b.data().data();
  for (std::size_t i = 0; i < n; ++i)
    out[i] = pa[plan->a_index(i)] - pb[plan->b_index(i)];
  return make_result<T>(plan->out, std::move(out), {&a, &b},
                        [plan](Node<T> &self) {
                          const T *g = self.grad.data();
                          const std::size_t n = self.grad.size();
                          if (T *ga = parent_grad(self, 0))
                            for (std::size_t i = 0; i < n; ++i)
                              ga[plan->a_index(i)] += g[i];
                          if (T *gb = parent_grad(self, 1))
                            for (std::size_t i = 0; i < n; ++i)
                              gb[plan->b_index(i)] -= g[i];
                        });
}

template <class T>
Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b) {
  auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape()));
  const std::size_t n = numel(plan->out);
  std::vector<T> out(n);
  const T *pa = a.data().data();
  const T *pb = b.data().data();
  for (std::size_t i = 0; i < n; ++i)
    out[i] = pa[plan->a_index(i)] * pb[plan->b_index(i)];
  return make_result<T>(
      plan->out, std::move(out), {&a, &b}, [plan](Node<T> &self) {
        const T *g = self.grad.data();
        const std::size_t n = self.grad.size();
        const T *pa = self.parents[0]->data.data();
        const T *pb = self.parents[1]->data.data();
        if (T *ga = parent_grad(self, 0))
          for (std::size_t i = 0; i < n; ++i)
            ga[plan->a_index(i)] += g[i] * pb[plan->b_index(i)];
        if (T *gb = parent_grad(self, 1))
          for (std::size_t i = 0; i < n; ++i)
            gb[plan->b_index(i)] += g[i] * pa[plan->a_index(i)];
      });
}

template <class T>
Tensor<T> scale(const Tensor<T> &a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T &x: out)
    x *= factor;
  return make_result<T>(a.shape(), std::move(out), {&a},
                        [factor](Node<T> &self) {
                          if (T *ga = parent_grad(self, 0))
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                              ga[i] += self.grad[i] * factor;
                        });
}

// --- matmul -----------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T> &a, const Tensor<T> &b) {
  const Shape &sa = a.shape();
  const Shape &sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2)
    throw ShapeError("matmul needs rank >= 2 operands, got " + to_string(sa)
                     + " and " + to_string(sb));
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa[sa.size() - 1];
  const std::size_t k2 = sb[sb.size() - 2];
  const std::size_t n = sb[sb.size() - 1];
  if (k != k2)
    throw ShapeError("matmul inner dimensions differ: " + to_string(sa)
                     + " x " + to_string(sb));
  const bool shared_b = sb.size() == 2;
  if (!shared_b
      && !std::equal(sa.begin(), sa.end() - 2, sb.begin(), sb.end() - 2))
    throw ShapeError("matmul batch dimensions differ: " + to_string(sa)
                     + " x " + to_string(sb));
  if (!shared_b && sa.size() != sb.size())
    throw ShapeError("matmul batch ranks differ: " + to_string(sa) + " x "
                     + to_string(sb));

  const std::size_t batch = product(sa, 0, sa.size() - 2);
  Shape out_shape(sa.begin(), sa.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<T> out(batch * m * n, T(0));
  const T *pa = a.data().data();
  const T *pb = b.data().data();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const T *A = pa + bi * m * k;
    const T *B = pb + (shared_b ? 0 : bi * k * n);
    T *C = out.data() + bi * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      T *crow = C + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = A[i * k + p];
        const T *brow = B + p * n;
        for (std::size_t j = 0; j < n; ++j)
          crow[j] += aip * brow[j];
      }
    }
  }

  return make_result<T>(
      std::move(out_shape), std::move(out), {&a, &b},
      [batch, m, k, n, shared_b](Node<T> &self) {
        const T *g = self.grad.data();
        const T *pa = self.parents[0]->data.data();
        const T *pb = self.parents[1]->data.data();
        T *ga = parent_grad(self, 0);
        T *gb = parent_grad(self, 1);
        for (std::size_t bi = 0; bi < batch; ++bi) {
          const T *G = g + bi * m * n;
          const T *A = pa + bi * m * k;
          const T *B = pb + (shared_b ? 0 : bi * k * n);
          if (ga) {
            T *GA = ga + bi * m * k;
            for (std::size_t i = 0; i < m; ++i) {
              const T *grow = G + i * n;
              for (std::size_t p = 0; p < k; ++p) {
                const T *brow = B + p * n;
                T acc = T(0);
                for (std::size_t j = 0; j < n; ++j)
                  acc += grow[j] * brow[j];
                GA[i * k + p] += acc;
              }
            }
          }
          if (gb) {
            T *GB = gb + (shared_b ? 0 : bi * k * n);
            for (std::size_t i = 0; i < m; ++i) {
              const T *grow = G + i * n;
              for (std::size_t p = 0; p < k; ++p) {
                const T aip = A[i * k + p];
                T *gbrow = GB + p * n;
                for (std::size_t j = 0; j < n; ++j)
                  gbrow[j] += aip * grow[j];
              }
            }
          }
        }
      });
}

// --- softmax / normalization / activations ----------------------------------

template <class T>
Tensor<T> softmax(const Tensor<T> &a, int axis) {
  const Shape &shape = a.shape();
  const std::size_t ax = normalize_axis(axis, shape.size());
  const std::size_t outer = product(shape, 0, ax);
  const std::size_t len = shape[ax];
  const std::size_t inner = product(shape, ax + 1, shape.size());
  const T *x = a.data().data();
  std::vector<T> y(a.numel());

  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < len; ++l)
        mx = std::max(mx, x[base + l * inner]);
      if (mx == -std::numeric_limits<T>::infinity()) {
        for (std::size_t l = 0; l < len; ++l)
          y[base + l * inner] = T(0);
        continue;
      }
      T total = T(0);
      for (std::size_t l = 0; l < len; ++l) {
        const T e = std::exp(x[base + l * inner] - mx);
        y[base + l * inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < len; ++l)
        y[base + l * inner] /= total;
    }
  }

  return make_result<T>(shape, std::move(y), {&a},
                        [outer, len, inner](Node<T> &self) {
                          T *ga = parent_grad(self, 0);
                          if (!ga)
                            return;
                          const T *y = self.data.data();
                          const T *g = self.grad.data();
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t in = 0; in < inner; ++in) {
                              const std::size_t base = o * len * inner + in;
                              T dot = T(0);
                              for (std::size_t l = 0; l < len; ++l)
                                dot += g[base + l * inner] * y[base + l * inner];
                              for (std::size_t l = 0; l < len; ++l) {
                                const std::size_t idx = base + l * inner;
                                ga[idx] += y[idx] * (g[idx] - dot);
                              }
                            }
                          }
                        });
}

template <class T>
Tensor<T> layer_norm(const Tensor<T> &x, const Tensor<T> &gamma,
                     const Tensor<T> &beta, T eps) {
  const Shape &shape = x.shape();
  if (shape.empty())
    throw ShapeError("layer_norm needs rank >= 1");
  const std::size_t d = shape.back();
  if (gamma.shape() != Shape {d} || beta.shape() != Shape {d})
    throw ShapeError("layer_norm: expected gamma/beta of shape "
                     + to_string(Shape {d}) + ", got "
                     + to_string(gamma.shape()) + " / "
                     + to_string(beta.shape()));
  const std::size_t rows = x.numel() / d;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  const T *px = x.data().data();
  const T *pg = gamma.data().data();
  const T *pb = beta.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T *row = px + r * d;
    T mu = T(0);
    for (std::size_t i = 0; i < d; ++i)
      mu += row[i];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t i = 0; i < d; ++i)
      var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (row[i] - mu) * rs;
      (*xhat)[r * d + i] = h;
      out[r * d + i] = h * pg[i] + pb[i];
    }
  }

  return make_result<T>(
      shape, std::move(out), {&x, &gamma, &beta},
      [xhat, rstd, rows, d](Node<T> &self) {
        const T *g = self.grad.data();
        const T *pg = self.parents[1]->data.data();
        T *gx = parent_grad(self, 0);
        T *ggamma = parent_grad(self, 1);
        T *gbeta = parent_grad(self, 2);
        std::vector<T> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T *grow = g + r * d;
          const T *hrow = xhat->data() + r * d;
          if (ggamma)
            for (std::size_t i = 0; i < d; ++i)
              ggamma[i] += grow[i] * hrow[i];
          if (gbeta)
            for (std::size_t i = 0; i < d; ++i)
              gbeta[i] += grow[i];
          if (!gx)
            continue;
          T mean_d = T(0);
          T mean_dh = T(0);
          for (std::size_t i = 0; i < d; ++i) {
            dxhat[i] = grow[i] * pg[i];
            mean_d += dxhat[i];
            mean_dh += dxhat[i] * hrow[i];
          }
          mean_d /= static_cast<T>(d);
          mean_dh /= static_cast<T>(d);
          const T rs = (*rstd)[r];
          for (std::size_t i = 0; i < d; ++i)
            gx[r * d + i] += rs * (dxhat[i] - mean_d - hrow[i] * mean_dh);
        }
      });
}

template <class T>
Tensor<T> layer_norm(const Tensor<T> &x, T eps) {
  if (x.rank() == 0)
    throw ShapeError("layer_norm needs rank >= 1");
  const std::size_t d = x.shape().back();
  return layer_norm(x, Tensor<T>::full({d}, T(1)), Tensor<T>::zeros({d}), eps);
}

template <class T>
Tensor<T> gelu(const Tensor<T> &a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  std::vector<T> out(a.numel());
  const T *x = a.data().data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * T(kInvSqrt2)));
  return make_result<T>(a.shape(), std::move(out), {&a}, [](Node<T> &self) {
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    T *ga = parent_grad(self, 0);
    if (!ga)
      return;
    const T *x = self.parents[0]->data.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T cdf = T(0.5) * (T(1) + std::erf(x[i] * T(kInvSqrt2)));
      const T pdf = T(kInvSqrt2Pi) * std::exp(T(-0.5) * x[i] * x[i]);
      ga[i] += self.grad[i] * (cdf + x[i] * pdf);
    }
  });
}

template <class T>
Tensor<T> silu(const Tensor<T> &a) {
  std::vector<T> out(a.numel());
  const T *x = a.data().data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x[i] / (T(1) + std::exp(-x[i]));
  return make_result<T>(a.shape(), std::move(out), {&a}, [](Node<T> &self) {
    T *ga = parent_grad(self, 0);
    if (!ga)
      return;
    const T *x = self.parents[0]->data.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-x[i]));
      ga[i] += self.grad[i] * s * (T(1) + x[i] * (T(1) - s));
    }
  });
}

// --- indexing / layout -----------------------------------------------------

template <class T>
Tensor<T> embedding(const Tensor<T> &table, std::span<const int> ids,
                    Shape index_shape) {
  if (table.rank() != 2)
    throw ShapeError("embedding table must be rank 2, got "
                     + to_string(table.shape()));
  if (numel(index_shape) != ids.size())
    throw ShapeError("embedding: index shape " + to_string(index_shape)
                     + " does not match " + std::to_string(ids.size())
                     + " ids");
  const std::size_t vocab = table.shape()[0];
  const std::size_t d = table.shape()[1];
  auto rows = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  std::vector<T> out(ids.size() * d);
  const T *w = table.data().data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw ShapeError("embedding id " + std::to_string(ids[i])
                       + " outside table of " + std::to_string(vocab)
                       + " rows");
    std::copy_n(w + static_cast<std::size_t>(ids[i]) * d, d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  Shape out_shape = std::move(index_shape);
  out_shape.push_back(d);
  return make_result<T>(std::move(out_shape), std::move(out), {&table},
                        [rows, d](Node<T> &self) {
                          T *gw = parent_grad(self, 0);
                          if (!gw)
                            return;
                          const T *g = self.grad.data();
                          for (std::size_t i = 0; i < rows->size(); ++i) {
                            T *dst = gw + static_cast<std::size_t>((*rows)[i]) * d;
                            for (std::size_t j = 0; j < d; ++j)
                              dst[j] += g[i * d + j];
                          }
                        });
}

template <class T>
Tensor<T> transpose(const Tensor<T> &a, int axis0, int axis1) {
  const std::size_t ax0 = normalize_axis(axis0, a.rank());
  const std::size_t ax1 = normalize_axis(axis1, a.rank());
  Shape out_shape;
  auto map = std::make_shared<std::vector<std::size_t>>(
      transpose_map(a.shape(), ax0, ax1, out_shape));
  std::vector<T> out(a.numel());
  const T *x = a.data().data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x[(*map)[i]];
  return make_result<T>(std::move(out_shape), std::move(out), {&a},
                        [map](Node<T> &self) {
                          T *ga = parent_grad(self, 0);
                          if (!ga)
                            return;
                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                            ga[(*map)[i]] += self.grad[i];
                        });
}

template <class T>
Tensor<T> reshape(const Tensor<T> &a, Shape shape) {
  if (numel(shape) != a.numel())
    throw ShapeError("cannot reshape " + to_string(a.shape()) + " to "
                     + to_string(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>(std::move(shape), std::move(out), {&a},
                        [](Node<T> &self) {
                          T *ga = parent_grad(self, 0);
                          if (!ga)
                            return;
                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                            ga[i] += self.grad[i];
                        });
}

template <class T>
Tensor<T> concat(std::span<const Tensor<T>> parts, int axis) {
  if (parts.empty())
    throw ShapeError("concat of zero tensors");
  const Shape &first = parts.front().shape();
  const std::size_t ax = normalize_axis(axis, first.size());
  Shape out_shape = first;
  out_shape[ax] = 0;
  std::vector<std::size_t> chunk;
  for (const Tensor<T> &p: parts) {
    const Shape &s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      ok = i == ax || s[i] == first[i];
    if (!ok)
      throw ShapeError("concat along axis " + std::to_string(axis)
                       + ": expected shapes like " + to_string(first)
                       + ", got " + to_string(s));
    out_shape[ax] += s[ax];
    chunk.push_back(product(s, ax, s.size()));
  }
  const std::size_t outer = product(first, 0, ax);
  std::vector<T> out;
  out.reserve(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const T *src = parts[k].data().data() + o * chunk[k];
      out.insert(out.end(), src, src + chunk[k]);
    }

  std::vector<const Tensor<T> *> inputs;
  for (const Tensor<T> &p: parts)
    inputs.push_back(&p);
  return make_result<T>(std::move(out_shape), std::move(out), inputs,
                        [outer, chunk](Node<T> &self) {
                          std::size_t off = 0;
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t k = 0; k < chunk.size(); ++k) {
                              if (T *gp = parent_grad(self, k))
                                for (std::size_t i = 0; i < chunk[k]; ++i)
                                  gp[o * chunk[k] + i] += self.grad[off + i];
                              off += chunk[k];
                            }
                        });
}

template <class T>
Tensor<T> select(const Tensor<T> &a, int axis, std::size_t index) {
  const Shape &shape = a.shape();
  const std::size_t ax = normalize_axis(axis, shape.size());
  if (index >= shape[ax])
    throw ShapeError("select index " + std::to_string(index)
                     + " out of range for axis of size "
                     + std::to_string(shape[ax]));
  const std::size_t outer = product(shape, 0, ax);
  const std::size_t len = shape[ax];
  const std::size_t inner = product(shape, ax + 1, shape.size());
  Shape out_shape = shape;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<T> out(outer * inner);
  const T *x = a.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x + (o * len + index) * inner, inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * inner));
  return make_result<T>(std::move(out_shape), std::move(out), {&a},
                        [outer, len, inner, index](Node<T> &self) {
                          T *ga = parent_grad(self, 0);
                          if (!ga)
                            return;
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t i = 0; i < inner; ++i)
                              ga[(o * len + index) * inner + i] +=
                                  self.grad[o * inner + i];
                        });
}

// --- reductions ------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T> &a) {
  T total = T(0);
  for (T x: a.data())
    total += x;
  return make_result<T>(Shape {}, std::vector<T> {total}, {&a},
                        [](Node<T> &self) {
                          T *ga = parent_grad(self, 0);
                          if (!ga)
                            return;
                          const std::size_t n = self.parents[0]->data.size();
                          for (std::size_t i = 0; i < n; ++i)
                            ga[i] += self.grad[0];
                        });
}

template <class T>
Tensor<T> mean(const Tensor<T> &a) {
  if (a.numel() == 0)
    throw ShapeError("mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
Tensor<T> sum(const Tensor<T> &a, int axis) {
  const Shape &shape = a.shape();
  const std::size_t ax = normalize_axis(axis, shape.size());
  const std::size_t outer = product(shape, 0, ax);
  const std::size_t len = shape[ax];
  const std::size_t inner = product(shape, ax + 1, shape.size());
  Shape out_shape = shape;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<T> out(outer * inner, T(0));
  const T *x = a.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += x[(o * len + l) * inner + i];
  return make_result<T>(std::move(out_shape), std::move(out), {&a},
                        [outer, len, inner](Node<T> &self) {
                          T *ga = parent_grad(self, 0);
                          if (!ga)
                            return;
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t l = 0; l < len; ++l)
                              for (std::size_t i = 0; i < inner; ++i)
                                ga[(o * len + l) * inner + i] +=
                                    self.grad[o * inner + i];
                        });
}

template <class T>
Tensor<T> mean(const Tensor<T> &a, int axis) {
  const std::size_t len = a.size(axis);
  if (len == 0)
    throw ShapeError("mean over an empty axis");
  return scale(sum(a, axis), T(1) / static_cast<T>(len));
}

// --- dropout -----------------------------------------------------------------

double dropout_uniform(const DropoutKey &key, std::uint64_t index) {
  std::uint64_t h = splitmix64(key.seed);
  h = splitmix64(h ^ key.op_id);
  h = splitmix64(h ^ key.step);
  h = splitmix64(h ^ index);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

template <class T>
Tensor<T> dropout(const Tensor<T> &a, double p, bool training,
                  const DropoutKey &key) {
  if (p < 0.0 || p >= 1.0)
    throw Error("dropout probability must be in [0, 1), got "
                + std::to_string(p));
  if (!training || p == 0.0)
    return a;
  auto mask = std::make_shared<std::vector<T>>(a.numel());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> out(a.numel());
  const T *x = a.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T m = dropout_uniform(key, i) < p ? T(0) : keep_scale;
    (*mask)[i] = m;
    out[i] = x[i] * m;
  }
  return make_result<T>(a.shape(), std::move(out), {&a},
                        [mask](Node<T> &self) {
                          T *ga = parent_grad(self, 0);
                          if (!ga)
                            return;
                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                            ga[i] += self.grad[i] * (*mask)[i];
                        });
}

// --- losses ------------------------------------------------------------------

template <class T>
Tensor<T> cross_entropy(const Tensor<T> &logits, std::span<const int> targets,
                        int ignore_index) {
  if (logits.rank() != 2)
    throw ShapeError("cross_entropy expects [N, V] logits, got "
                     + to_string(logits.shape()));
  const std::size_t rows = logits.shape()[0];
  const std::size_t vocab = logits.shape()[1];
  if (targets.size() != rows)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size())
                     + " targets for " + std::to_string(rows) + " rows");

  auto probs = std::make_shared<std::vector<T>>(logits.numel(), T(0));
  auto tgt = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  const T *x = logits.data().data();
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t == ignore_index)
      continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab)
      throw ShapeError("cross_entropy target " + std::to_string(t)
                       + " outside vocabulary of " + std::to_string(vocab));
    const T *row = x + r * vocab;
    const T mx = *std::max_element(row, row + vocab);
    T z = T(0);
    for (std::size_t v = 0; v < vocab; ++v) {
      const T e = std::exp(row[v] - mx);
      (*probs)[r * vocab + v] = e;
      z += e;
    }
    for (std::size_t v = 0; v < vocab; ++v)
      (*probs)[r * vocab + v] /= z;
    total += static_cast<double>(mx + std::log(z) - row[t]);
    ++count;
  }
  if (count == 0)
    throw DegenerateBatch("cross_entropy: every target is ignored");

  const T loss = static_cast<T>(total / static_cast<double>(count));
  return make_result<T>(
      Shape {}, std::vector<T> {loss}, {&logits},
      [probs, tgt, rows, vocab, count, ignore_index](Node<T> &self) {
        T *gl = parent_grad(self, 0);
        if (!gl)
          return;
        const T g = self.grad[0] / static_cast<T>(count);
        for (std::size_t r = 0; r < rows; ++r) {
          const int t = (*tgt)[r];
          if (t == ignore_index)
            continue;
          for (std::size_t v = 0; v < vocab; ++v)
            gl[r * vocab + v] += g * (*probs)[r * vocab + v];
          gl[r * vocab + static_cast<std::size_t>(t)] -= g;
        }
      });
}

template <class T>
Tensor<T> mse_loss(const Tensor<T> &pred, std::span<const T> targets) {
  if (pred.numel() != targets.size() || targets.empty())
    throw ShapeError("mse_loss: " + std::to_string(targets.size())
                     + " targets for prediction of shape "
                     + to_string(pred.shape()));
  auto tgt = std::make_shared<std::vector<T>>(targets.begin(), targets.end());
  const T *p = pred.data().data();
  T total = T(0);
  for (std::size_t i = 0; i < targets.size(); ++i)
    total += (p[i] - targets[i]) * (p[i] - targets[i]);
  const T n = static_cast<T>(targets.size());
  return make_result<T>(Shape {}, std::vector<T> {total / n}, {&pred},
                        [tgt, n](Node<T> &self) {
                          T *gp = parent_grad(self, 0);
                          if (!gp)
                            return;
                          const T *p = self.parents[0]->data.data();
                          const T g = self.grad[0] * T(2) / n;
                          for (std::size_t i = 0; i < tgt->size(); ++i)
                            gp[i] += g * (p[i] - (*tgt)[i]);
                        });
}

// ---------------------------------------------------------------------------

#define POLYSEQ_INSTANTIATE(T)                                                  \
  template class Tensor<T>;                                                     \
  template void backward<T>(const Tensor<T> &);                                 \
  template Tensor<T> add<T>(const Tensor<T> &, const Tensor<T> &);              \
  template Tensor<T> sub<T>(const Tensor<T> &, const Tensor<T> &);              \
  template Tensor<T> mul<T>(const Tensor<T> &, const Tensor<T> &);              \
  template Tensor<T> scale<T>(const Tensor<T> &, T);                            \
  template Tensor<T> matmul<T>(const Tensor<T> &, const Tensor<T> &);           \
  template Tensor<T> softmax<T>(const Tensor<T> &, int);                        \
  template Tensor<T> layer_norm<T>(const Tensor<T> &, const Tensor<T> &,        \
                                   const Tensor<T> &, T);                       \
  template Tensor<T> layer_norm<T>(const Tensor<T> &, T);                       \
  template Tensor<T> gelu<T>(const Tensor<T> &);                                \
  template Tensor<T> silu<T>(const Tensor<T> &);                                \
  template Tensor<T> embedding<T>(const Tensor<T> &, std::span<const int>,      \
                                  Shape);                                       \
  template Tensor<T> transpose<T>(const Tensor<T> &, int, int);                 \
  template Tensor<T> reshape<T>(const Tensor<T> &, Shape);                      \
  template Tensor<T> concat<T>(std::span<const Tensor<T>>, int);                \
  template Tensor<T> select<T>(const Tensor<T> &, int, std::size_t);            \
  template Tensor<T> sum<T>(const Tensor<T> &);                                 \
  template Tensor<T> mean<T>(const Tensor<T> &);                                \
  template Tensor<T> sum<T>(const Tensor<T> &, int);                            \
  template Tensor<T> mean<T>(const Tensor<T> &, int);                           \
  template Tensor<T> dropout<T>(const Tensor<T> &, double, bool,                \
                                const DropoutKey &);                            \
  template Tensor<T> cross_entropy<T>(const Tensor<T> &,                        \
                                      std::span<const int>, int);               \
  template Tensor<T> mse_loss<T>(const Tensor<T> &, std::span<const T>);

POLYSEQ_INSTANTIATE(float)
POLYSEQ_INSTANTIATE(double)

#undef POLYSEQ_INSTANTIATE

}  // namespace polyseq::tensor
