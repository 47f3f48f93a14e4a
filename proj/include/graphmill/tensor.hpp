#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <vector>

#include "graphmill/random.hpp"

namespace graphmill {

using Index = std::int64_t;
using Shape = std::vector<Index>;
using IndexSpan = std::span<const std::int64_t>;

namespace detail {

inline thread_local int no_grad_depth = 0;

inline Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw std::invalid_argument("tensor: negative extent");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

}  // namespace detail

// Disables tape recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

template <typename S>
struct TensorImpl;

// One recorded operation. `inputs` drives the topological walk; the closure
// holds whatever forward values the backward rule needs.
template <typename S>
struct TapeNode {
  const char* op_kind = "";
  std::vector<std::shared_ptr<TensorImpl<S>>> inputs;
  std::function<void(std::span<const S>)> backward;
};

template <typename S>
struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<S>> buf;  // shared so row-prefix views can alias it
  Index size = 0;                       // addressable values; always a prefix of *buf
  bool requires_grad = false;
  std::vector<S> grad;                  // lazily allocated, length == size
  std::shared_ptr<TapeNode<S>> node;    // null for leaves

  std::span<const S> data() const { return {buf->data(), static_cast<std::size_t>(size)}; }
  std::span<S> data_mut() { return {buf->data(), static_cast<std::size_t>(size)}; }

  void accumulate(std::span<const S> g) {
    if (static_cast<Index>(g.size()) != size)
      throw std::logic_error("tensor: gradient size mismatch");
    if (grad.empty()) grad.assign(static_cast<std::size_t>(size), S(0));
    for (Index i = 0; i < size; ++i) grad[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
  }
};

struct BackwardStats {
  std::size_t nodes_visited = 0;
};

// Dense row-major tensor handle with reverse-mode autodiff. Copying the handle
// shares storage; values are immutable once another op has consumed them
// (mutation is reserved for leaf parameters between optimizer steps).
template <typename S>
class Tensor {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double> ||
                    std::is_same_v<S, std::int64_t>,
                "Tensor supports float32, float64 and int64");

 public:
  static constexpr bool is_floating = std::is_floating_point_v<S>;
  using Scalar = S;

  Tensor() : Tensor(Shape{0}) {}

  explicit Tensor(Shape shape) {
    impl_ = std::make_shared<TensorImpl<S>>();
    impl_->size = detail::shape_numel(shape);
    impl_->shape = std::move(shape);
    impl_->buf = std::make_shared<std::vector<S>>(static_cast<std::size_t>(impl_->size), S(0));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, S value) {
    Tensor t(std::move(shape));
    auto d = t.impl_->data_mut();
    std::fill(d.begin(), d.end(), value);
    return t;
  }

  static Tensor scalar(S value) {
    Tensor t{Shape{}};
    t.impl_->buf->front() = value;
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<S> values) {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<S>>();
    t.impl_->size = detail::shape_numel(shape);
    if (t.impl_->size != static_cast<Index>(values.size()))
      throw std::invalid_argument("tensor: data length does not match shape " +
                                  detail::shape_str(shape));
    t.impl_->shape = std::move(shape);
    t.impl_->buf = std::make_shared<std::vector<S>>(std::move(values));
    return t;
  }

  // Uniform in [lo, hi), deterministic for a given stream state.
  static Tensor rand_uniform(Shape shape, double lo, double hi, rng::Stream& stream) {
    static_assert(is_floating, "rand_uniform needs a floating tensor");
    Tensor t(std::move(shape));
    for (S& v : *t.impl_->buf) v = static_cast<S>(stream.next_real(lo, hi));
    return t;
  }

  static Tensor from_parts(Shape shape, std::shared_ptr<std::vector<S>> buf, Index size) {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<S>>();
    t.impl_->shape = std::move(shape);
    t.impl_->size = size;
    t.impl_->buf = std::move(buf);
    return t;
  }

  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  Index numel() const { return impl_->size; }
  Index rows() const { return rank() == 0 ? 1 : impl_->shape[0]; }
  Index row_size() const { return rows() == 0 ? 0 : numel() / rows(); }
  Index cols() const {
    if (rank() != 2) throw std::invalid_argument("tensor: cols() needs rank 2");
    return impl_->shape[1];
  }

  std::span<const S> data() const { return impl_->data(); }
  // Leaf mutation only (parameter init / optimizer steps); never call on a
  // tensor already consumed by a recorded op.
  std::span<S> data_mut() { return impl_->data_mut(); }

  S item() const {
    if (numel() != 1) throw std::invalid_argument("tensor: item() needs a single value");
    return data()[0];
  }
  S at(Index i) const { return data()[static_cast<std::size_t>(check_flat(i))]; }
  S at(Index i, Index j) const {
    if (rank() != 2) throw std::invalid_argument("tensor: at(i,j) needs rank 2");
    return data()[static_cast<std::size_t>(check_flat(i * impl_->shape[1] + j))];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return impl_->node == nullptr; }

  Tensor& set_requires_grad(bool flag) {
    static_assert(is_floating, "int64 tensors never carry gradients");
    if (!is_leaf()) throw std::invalid_argument("tensor: set_requires_grad on non-leaf");
    impl_->requires_grad = flag;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  Tensor grad() const {
    if (impl_->grad.empty())
      throw std::invalid_argument("tensor: no gradient accumulated");
    return Tensor::from_data(impl_->shape, impl_->grad);
  }
  void zero_grad() { impl_->grad.clear(); }

  // Fresh untracked handle over the same storage.
  Tensor detach() const {
    return from_parts(impl_->shape, impl_->buf, impl_->size);
  }

  Tensor clone() const {
    return from_data(impl_->shape, std::vector<S>(data().begin(), data().end()));
  }

  std::shared_ptr<TensorImpl<S>>& impl() { return impl_; }
  const std::shared_ptr<TensorImpl<S>>& impl() const { return impl_; }

 private:
  Index check_flat(Index i) const {
    if (i < 0 || i >= numel()) throw std::out_of_range("tensor: index out of range");
    return i;
  }

  std::shared_ptr<TensorImpl<S>> impl_;
};

namespace detail {

template <typename S>
bool tape_active(std::initializer_list<const Tensor<S>*> ins) {
  if (!grad_enabled()) return false;
  for (const Tensor<S>* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

template <typename S>
void attach_node(Tensor<S>& out, const char* op,
                 std::vector<std::shared_ptr<TensorImpl<S>>> inputs,
                 std::function<void(std::span<const S>)> backward) {
  auto node = std::make_shared<TapeNode<S>>();
  node->op_kind = op;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.impl()->node = std::move(node);
  out.impl()->requires_grad = true;
}

// Trailing-dimension broadcasting: the second operand must be the same shape,
// a suffix of the first shape, or a single value.
inline Index broadcast_block(const Shape& a, const Shape& b, Index b_numel) {
  if (a == b) return b_numel;
  if (b_numel == 1) return 1;
  if (b.size() <= a.size()) {
    bool suffix = true;
    for (std::size_t i = 0; i < b.size(); ++i)
      if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) { suffix = false; break; }
    if (suffix) return b_numel;
  }
  throw std::invalid_argument("tensor: shapes " + shape_str(a) + " and " + shape_str(b) +
                              " are not trailing-broadcast compatible");
}

template <typename S>
using MatMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using MutMatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (trailing broadcast; see DESIGN notes in module docs)
// ---------------------------------------------------------------------------

namespace detail {

enum class BinKind { add, sub, mul };

template <typename S>
Tensor<S> binary_op(BinKind kind, const Tensor<S>& a, const Tensor<S>& b) {
  static_assert(Tensor<S>::is_floating);
  const Index block = broadcast_block(a.shape(), b.shape(), b.numel());
  Tensor<S> out(a.shape());
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.data_mut();
  const Index n = a.numel();
  switch (kind) {
    case BinKind::add:
      for (Index i = 0; i < n; ++i) ov[i] = av[i] + bv[i % block];
      break;
    case BinKind::sub:
      for (Index i = 0; i < n; ++i) ov[i] = av[i] - bv[i % block];
      break;
    case BinKind::mul:
      for (Index i = 0; i < n; ++i) ov[i] = av[i] * bv[i % block];
      break;
  }
  if (tape_active<S>({&a, &b})) {
    auto ai = a.impl();
    auto bi = b.impl();
    const char* name = kind == BinKind::add ? "add" : kind == BinKind::sub ? "sub" : "mul";
    attach_node<S>(out, name, {ai, bi}, [kind, ai, bi, block, n](std::span<const S> g) {
      if (ai->requires_grad) {
        if (kind == BinKind::mul) {
          std::vector<S> da(static_cast<std::size_t>(n));
          auto bd = bi->data();
          for (Index i = 0; i < n; ++i) da[i] = g[i] * bd[i % block];
          ai->accumulate(da);
        } else {
          ai->accumulate(g);
        }
      }
      if (bi->requires_grad) {
        std::vector<S> db(static_cast<std::size_t>(block), S(0));
        const S sign = kind == BinKind::sub ? S(-1) : S(1);
        if (kind == BinKind::mul) {
          auto ad = ai->data();
          for (Index i = 0; i < n; ++i) db[i % block] += g[i] * ad[i];
        } else {
          for (Index i = 0; i < n; ++i) db[i % block] += sign * g[i];
        }
        bi->accumulate(db);
      }
    });
  }
  return out;
}

// Backward factor computed from the *input* values (safe to capture: the node
// already owns its inputs, so no reference cycle arises).
template <typename S, typename Fwd, typename Bwd>
Tensor<S> unary_op(const char* name, const Tensor<S>& x, Fwd fwd, Bwd bwd_from_x) {
  static_assert(Tensor<S>::is_floating);
  Tensor<S> out(x.shape());
  auto xv = x.data();
  auto ov = out.data_mut();
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) ov[i] = fwd(xv[i]);
  if (tape_active<S>({&x})) {
    auto xi = x.impl();
    attach_node<S>(out, name, {xi}, [xi, n, bwd_from_x](std::span<const S> g) {
      if (!xi->requires_grad) return;
      std::vector<S> dx(static_cast<std::size_t>(n));
      auto xd = xi->data();
      for (Index i = 0; i < n; ++i) dx[i] = g[i] * bwd_from_x(xd[i]);
      xi->accumulate(dx);
    });
  }
  return out;
}

// Backward factor computed from the *output* values; a copy is saved in the
// closure rather than the output impl (capturing the impl would form a cycle).
template <typename S, typename Fwd, typename Bwd>
Tensor<S> unary_op_from_y(const char* name, const Tensor<S>& x, Fwd fwd, Bwd bwd_from_y) {
  static_assert(Tensor<S>::is_floating);
  Tensor<S> out(x.shape());
  auto xv = x.data();
  auto ov = out.data_mut();
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) ov[i] = fwd(xv[i]);
  if (tape_active<S>({&x})) {
    auto xi = x.impl();
    std::vector<S> y_saved(out.data().begin(), out.data().end());
    attach_node<S>(out, name, {xi},
                   [xi, n, bwd_from_y, y = std::move(y_saved)](std::span<const S> g) {
                     if (!xi->requires_grad) return;
                     std::vector<S> dx(static_cast<std::size_t>(n));
                     for (Index i = 0; i < n; ++i) dx[i] = g[i] * bwd_from_y(y[i]);
                     xi->accumulate(dx);
                   });
  }
  return out;
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(detail::BinKind::add, a, b);
}
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(detail::BinKind::sub, a, b);
}
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(detail::BinKind::mul, a, b);
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return detail::unary_op(
      "relu", x, [](S v) { return v > S(0) ? v : S(0); },
      [](S v) { return v > S(0) ? S(1) : S(0); });  // subgradient 0 at 0
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  auto stable = [](S v) {
    if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
    const S e = std::exp(v);
    return e / (S(1) + e);
  };
  return detail::unary_op_from_y("sigmoid", x, stable, [](S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  return detail::unary_op_from_y("exp", x, [](S v) { return std::exp(v); },
                                 [](S y) { return y; });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  for (S v : x.data())
    if (!(v > S(0))) throw std::domain_error("log: non-positive input");
  return detail::unary_op("log", x, [](S v) { return std::log(v); },
                          [](S v) { return S(1) / v; });
}

template <typename S>
Tensor<S> neg(const Tensor<S>& x) {
  return detail::unary_op("neg", x, [](S v) { return -v; }, [](S) { return S(-1); });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, double c) {
  const S cs = static_cast<S>(c);
  return detail::unary_op("scale", x, [cs](S v) { return cs * v; },
                          [cs](S) { return cs; });
}

// relu(x) - slope*relu(-x); composed from the primitive set.
template <typename S>
Tensor<S> leaky_relu(const Tensor<S>& x, double slope) {
  return sub(relu(x), scale(relu(neg(x)), slope));
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  static_assert(Tensor<S>::is_floating, "matmul needs a floating dtype");
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: both operands must be rank 2");
  const Index m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw std::invalid_argument("matmul: inner extents disagree, " +
                                detail::shape_str(a.shape()) + " vs " +
                                detail::shape_str(b.shape()));
  Tensor<S> out(Shape{m, n});
  {
    detail::MatMap<S> A(a.data().data(), m, k);
    detail::MatMap<S> B(b.data().data(), k, n);
    detail::MutMatMap<S> C(out.data_mut().data(), m, n);
    C.noalias() = A * B;
  }
  if (detail::tape_active<S>({&a, &b})) {
    auto ai = a.impl();
    auto bi = b.impl();
    detail::attach_node<S>(out, "matmul", {ai, bi}, [ai, bi, m, k, n](std::span<const S> g) {
      detail::MatMap<S> G(g.data(), m, n);
      if (ai->requires_grad) {
        std::vector<S> da(static_cast<std::size_t>(m * k));
        detail::MatMap<S> B(bi->data().data(), k, n);
        detail::MutMatMap<S>(da.data(), m, k).noalias() = G * B.transpose();
        ai->accumulate(da);
      }
      if (bi->requires_grad) {
        std::vector<S> db(static_cast<std::size_t>(k * n));
        detail::MatMap<S> A(ai->data().data(), m, k);
        detail::MutMatMap<S>(db.data(), k, n).noalias() = A.transpose() * G;
        bi->accumulate(db);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Row gather / scatter-style ops
// ---------------------------------------------------------------------------

namespace detail {
inline void check_index_range(IndexSpan index, Index bound, const char* who) {
  for (std::size_t i = 0; i < index.size(); ++i)
    if (index[i] < 0 || index[i] >= bound)
      throw std::out_of_range(std::string(who) + ": index " + std::to_string(index[i]) +
                              " at position " + std::to_string(i) + " outside [0, " +
                              std::to_string(bound) + ")");
}
}  // namespace detail

// Lifts node-level rows into edge-level space; backward scatter-adds.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& src, IndexSpan index) {
  if (src.rank() < 1) throw std::invalid_argument("gather_rows: rank >= 1 required");
  const Index n = src.rows();
  const Index f = src.row_size();
  detail::check_index_range(index, n, "gather_rows");
  Shape out_shape = src.shape();
  out_shape[0] = static_cast<Index>(index.size());
  Tensor<S> out(out_shape);
  auto sv = src.data();
  auto ov = out.data_mut();
  for (std::size_t i = 0; i < index.size(); ++i)
    std::copy_n(sv.data() + index[i] * f, f, ov.data() + static_cast<Index>(i) * f);
  if constexpr (Tensor<S>::is_floating) {
    if (detail::tape_active<S>({&src})) {
      auto si = src.impl();
      std::vector<Index> saved(index.begin(), index.end());
      detail::attach_node<S>(out, "gather_rows", {si},
                             [si, saved = std::move(saved), n, f](std::span<const S> g) {
                               if (!si->requires_grad) return;
                               std::vector<S> ds(static_cast<std::size_t>(n * f), S(0));
                               for (std::size_t i = 0; i < saved.size(); ++i) {
                                 S* dst = ds.data() + saved[i] * f;
                                 const S* gi = g.data() + static_cast<Index>(i) * f;
                                 for (Index j = 0; j < f; ++j) dst[j] += gi[j];
                               }
                               si->accumulate(ds);
                             });
    }
  }
  return out;
}

// Untracked adjoint of gather_rows (the tracked path goes through aggregate()).
template <typename S>
Tensor<S> scatter_add_rows(const Tensor<S>& values, IndexSpan index, Index num_rows) {
  if (values.rows() != static_cast<Index>(index.size()))
    throw std::invalid_argument("scatter_add_rows: row/index length mismatch");
  detail::check_index_range(index, num_rows, "scatter_add_rows");
  const Index f = values.row_size();
  Shape out_shape = values.shape();
  out_shape[0] = num_rows;
  Tensor<S> out(out_shape);
  auto vv = values.data();
  auto ov = out.data_mut();
  for (std::size_t i = 0; i < index.size(); ++i) {
    S* dst = ov.data() + index[i] * f;
    const S* srcp = vv.data() + static_cast<Index>(i) * f;
    for (Index j = 0; j < f; ++j) dst[j] += srcp[j];
  }
  return out;
}

// out.row(i) = x.row(i) * s[i]; differentiable in both arguments.
template <typename S>
Tensor<S> row_scale(const Tensor<S>& x, const Tensor<S>& s) {
  static_assert(Tensor<S>::is_floating);
  const Index n = x.rows();
  const Index f = x.row_size();
  if (s.numel() != n)
    throw std::invalid_argument("row_scale: scale length " + std::to_string(s.numel()) +
                                " != rows " + std::to_string(n));
  Tensor<S> out(x.shape());
  auto xv = x.data();
  auto sv = s.data();
  auto ov = out.data_mut();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < f; ++j) ov[i * f + j] = xv[i * f + j] * sv[i];
  if (detail::tape_active<S>({&x, &s})) {
    auto xi = x.impl();
    auto si = s.impl();
    detail::attach_node<S>(out, "row_scale", {xi, si}, [xi, si, n, f](std::span<const S> g) {
      if (xi->requires_grad) {
        std::vector<S> dx(static_cast<std::size_t>(n * f));
        auto sd = si->data();
        for (Index i = 0; i < n; ++i)
          for (Index j = 0; j < f; ++j) dx[i * f + j] = g[i * f + j] * sd[i];
        xi->accumulate(dx);
      }
      if (si->requires_grad) {
        std::vector<S> ds(static_cast<std::size_t>(n), S(0));
        auto xd = xi->data();
        for (Index i = 0; i < n; ++i)
          for (Index j = 0; j < f; ++j) ds[i] += g[i * f + j] * xd[i * f + j];
        si->accumulate(ds);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  static_assert(Tensor<S>::is_floating);
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Index n = parts[0].rows();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2) throw std::invalid_argument("concat_cols: rank-2 inputs required");
    if (p.rows() != n) throw std::invalid_argument("concat_cols: row counts differ");
    total += p.cols();
  }
  Tensor<S> out(Shape{n, total});
  auto ov = out.data_mut();
  Index off = 0;
  for (const auto& p : parts) {
    const Index f = p.cols();
    auto pv = p.data();
    for (Index i = 0; i < n; ++i)
      std::copy_n(pv.data() + i * f, f, ov.data() + i * total + off);
    off += f;
  }
  bool tracked = false;
  if (grad_enabled())
    for (const auto& p : parts)
      if (p.requires_grad()) tracked = true;
  if (tracked) {
    std::vector<std::shared_ptr<TensorImpl<S>>> impls;
    std::vector<Index> widths;
    for (const auto& p : parts) {
      impls.push_back(p.impl());
      widths.push_back(p.cols());
    }
    auto impls_copy = impls;
    detail::attach_node<S>(out, "concat_cols", std::move(impls),
                           [impls = std::move(impls_copy), widths, n, total](std::span<const S> g) {
                             Index off = 0;
                             for (std::size_t k = 0; k < impls.size(); ++k) {
                               const Index f = widths[k];
                               if (impls[k]->requires_grad) {
                                 std::vector<S> dp(static_cast<std::size_t>(n * f));
                                 for (Index i = 0; i < n; ++i)
                                   std::copy_n(g.data() + i * total + off, f, dp.data() + i * f);
                                 impls[k]->accumulate(dp);
                               }
                               off += f;
                             }
                           });
  }
  return out;
}

template <typename S>
Tensor<S> concat_cols(const Tensor<S>& a, const Tensor<S>& b) {
  return concat_cols(std::vector<Tensor<S>>{a, b});
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, Index begin, Index len) {
  static_assert(Tensor<S>::is_floating);
  if (x.rank() != 2) throw std::invalid_argument("slice_cols: rank-2 input required");
  const Index n = x.rows(), f = x.cols();
  if (begin < 0 || len < 0 || begin + len > f)
    throw std::out_of_range("slice_cols: column range out of bounds");
  Tensor<S> out(Shape{n, len});
  auto xv = x.data();
  auto ov = out.data_mut();
  for (Index i = 0; i < n; ++i)
    std::copy_n(xv.data() + i * f + begin, len, ov.data() + i * len);
  if (detail::tape_active<S>({&x})) {
    auto xi = x.impl();
    detail::attach_node<S>(out, "slice_cols", {xi}, [xi, begin, len, n, f](std::span<const S> g) {
      if (!xi->requires_grad) return;
      std::vector<S> dx(static_cast<std::size_t>(n * f), S(0));
      for (Index i = 0; i < n; ++i)
        std::copy_n(g.data() + i * len, len, dx.data() + i * f + begin);
      xi->accumulate(dx);
    });
  }
  return out;
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, Index begin, Index len) {
  static_assert(Tensor<S>::is_floating);
  if (x.rank() < 1) throw std::invalid_argument("slice_rows: rank >= 1 required");
  const Index n = x.rows(), f = x.row_size();
  if (begin < 0 || len < 0 || begin + len > n)
    throw std::out_of_range("slice_rows: row range out of bounds");
  Shape out_shape = x.shape();
  out_shape[0] = len;
  Tensor<S> out(out_shape);
  std::copy_n(x.data().data() + begin * f, len * f, out.data_mut().data());
  if (detail::tape_active<S>({&x})) {
    auto xi = x.impl();
    detail::attach_node<S>(out, "slice_rows", {xi}, [xi, begin, len, n, f](std::span<const S> g) {
      if (!xi->requires_grad) return;
      std::vector<S> dx(static_cast<std::size_t>(n * f), S(0));
      std::copy_n(g.data(), len * f, dx.data() + begin * f);
      xi->accumulate(dx);
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b) {
  static_assert(Tensor<S>::is_floating);
  if (a.rank() != b.rank() || a.row_size() != b.row_size())
    throw std::invalid_argument("concat_rows: row widths differ");
  const Index na = a.rows(), nb = b.rows(), f = a.row_size();
  Shape out_shape = a.shape();
  out_shape[0] = na + nb;
  Tensor<S> out(out_shape);
  auto ov = out.data_mut();
  std::copy_n(a.data().data(), na * f, ov.data());
  std::copy_n(b.data().data(), nb * f, ov.data() + na * f);
  if (detail::tape_active<S>({&a, &b})) {
    auto ai = a.impl();
    auto bi = b.impl();
    detail::attach_node<S>(out, "concat_rows", {ai, bi}, [ai, bi, na, nb, f](std::span<const S> g) {
      if (ai->requires_grad)
        ai->accumulate(std::span<const S>(g.data(), static_cast<std::size_t>(na * f)));
      if (bi->requires_grad)
        bi->accumulate(std::span<const S>(g.data() + na * f, static_cast<std::size_t>(nb * f)));
    });
  }
  return out;
}

// Zero-copy reshape over the same buffer (contiguity makes this free).
template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (detail::shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor<S> out = Tensor<S>::from_parts(std::move(shape), x.impl()->buf, x.numel());
  if constexpr (Tensor<S>::is_floating) {
    if (detail::tape_active<S>({&x})) {
      auto xi = x.impl();
      detail::attach_node<S>(out, "reshape", {xi}, [xi](std::span<const S> g) {
        if (xi->requires_grad) xi->accumulate(g);
      });
    }
  }
  return out;
}

// Zero-copy view of the first `r` rows. The only non-copying slice in the
// engine; it exists for layer-wise trimming, which slices BFS-ordered batches.
template <typename S>
Tensor<S> prefix_rows_view(const Tensor<S>& x, Index r) {
  if (x.rank() < 1) throw std::invalid_argument("prefix_rows_view: rank >= 1 required");
  if (r < 0 || r > x.rows()) throw std::out_of_range("prefix_rows_view: row count out of range");
  const Index f = x.row_size();
  Shape shape = x.shape();
  shape[0] = r;
  Tensor<S> out = Tensor<S>::from_parts(std::move(shape), x.impl()->buf, r * f);
  if constexpr (Tensor<S>::is_floating) {
    if (detail::tape_active<S>({&x})) {
      auto xi = x.impl();
      const Index full = x.numel();
      detail::attach_node<S>(out, "prefix_rows_view", {xi},
                             [xi, full](std::span<const S> g) {
                               if (!xi->requires_grad) return;
                               std::vector<S> dx(static_cast<std::size_t>(full), S(0));
                               std::copy(g.begin(), g.end(), dx.begin());
                               xi->accumulate(dx);
                             });
    }
  }
  return out;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  static_assert(Tensor<S>::is_floating);
  S total = S(0);
  for (S v : x.data()) total += v;
  Tensor<S> out = Tensor<S>::scalar(total);
  if (detail::tape_active<S>({&x})) {
    auto xi = x.impl();
    const Index n = x.numel();
    detail::attach_node<S>(out, "sum", {xi}, [xi, n](std::span<const S> g) {
      if (!xi->requires_grad) return;
      std::vector<S> dx(static_cast<std::size_t>(n), g[0]);
      xi->accumulate(dx);
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  if (x.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------
// Reverse-mode engine
// ---------------------------------------------------------------------------

// Seeds d(root)=1 and walks the tape in reverse topological order, visiting
// each recorded node exactly once. Leaf gradients accumulate across calls;
// interior gradients are dropped once consumed.
template <typename S>
BackwardStats backward(const Tensor<S>& root) {
  static_assert(Tensor<S>::is_floating, "backward needs a floating root");
  if (root.numel() != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  if (!root.requires_grad())
    throw std::invalid_argument("backward: root does not track gradients");

  using ImplPtr = TensorImpl<S>*;
  std::vector<ImplPtr> order;  // postorder: inputs before consumers
  std::unordered_set<ImplPtr> seen;
  struct Frame {
    ImplPtr impl;
    std::size_t next_child = 0;
  };
  std::vector<Frame> stack{{root.impl().get()}};
  seen.insert(root.impl().get());
  while (!stack.empty()) {
    Frame& fr = stack.back();
    TapeNode<S>* node = fr.impl->node.get();
    const std::size_t n_children = node ? node->inputs.size() : 0;
    if (fr.next_child < n_children) {
      ImplPtr child = node->inputs[fr.next_child++].get();
      if (child->node && !seen.count(child)) {
        seen.insert(child);
        stack.push_back({child});
      }
    } else {
      order.push_back(fr.impl);
      stack.pop_back();
    }
  }

  root.impl()->accumulate(std::vector<S>{S(1)});

  BackwardStats stats;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    ImplPtr impl = *it;
    if (!impl->node) continue;
    std::vector<S> g = std::move(impl->grad);
    impl->grad.clear();
    if (g.empty()) g.assign(static_cast<std::size_t>(impl->size), S(0));
    impl->node->backward(g);
    ++stats.nodes_visited;
  }
  return stats;
}

}  // namespace graphmill
