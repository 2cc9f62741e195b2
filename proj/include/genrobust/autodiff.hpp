#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "genrobust/tensor.hpp"

namespace genrobust {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  std::size_t index = 0;

  const BasicTensor<Scalar>& value() const { return tape->value(index); }
  const Shape& shape() const { return value().shape(); }
};

/// Ordered record of primitive operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so walking the record backwards is a
/// reverse topological order. A tape is owned by one thread and may be replayed
/// backward once; `reset()` clears it for reuse.
template <typename Scalar>
class Tape {
 public:
  using TensorT = BasicTensor<Scalar>;
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(TensorT value) { return push(std::move(value), false, {}, {}); }

  /// Trainable leaf; its gradient is reported by `backward` under `name`.
  Var<Scalar> parameter(const std::string& name, TensorT value) {
    if (param_index_.count(name)) throw ValueError("parameter '" + name + "' recorded twice on one tape");
    auto v = push(std::move(value), true, {}, name);
    param_index_.emplace(name, v.index);
    return v;
  }

  /// The leaf recorded for `name`, if any; lets several forward passes share weights.
  std::optional<Var<Scalar>> find_parameter(const std::string& name) {
    auto it = param_index_.find(name);
    if (it == param_index_.end()) return std::nullopt;
    return Var<Scalar>{this, it->second};
  }

  /// Non-parameter leaf whose gradient is wanted (e.g. an attacked input).
  Var<Scalar> watch(TensorT value) { return push(std::move(value), true, {}, {}); }

  /// Appends the result of a primitive. `backward` is stored only when some input needs a gradient.
  Var<Scalar> record(TensorT value, bool requires_grad, BackwardFn backward, const char* op) {
    require_finite(value, op);
    return push(std::move(value), requires_grad, requires_grad ? std::move(backward) : BackwardFn{}, {});
  }

  const TensorT& value(std::size_t index) const { return nodes_.at(index).value; }
  bool requires_grad(std::size_t index) const { return nodes_[index].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of node `index`, zero-initialised on first access.
  std::span<Scalar> grad_buffer(std::size_t index) {
    auto& node = nodes_[index];
    if (node.grad.empty()) node.grad.assign(node.value.size(), Scalar{0});
    return node.grad;
  }
  std::span<const Scalar> upstream(std::size_t index) const { return nodes_[index].grad; }

  /// Reverse sweep from a scalar loss. Returns gradients for every parameter leaf.
  std::map<std::string, TensorT> backward(Var<Scalar> loss) {
    if (loss.tape != this) throw ValueError("loss belongs to a different tape");
    if (consumed_) throw ValueError("tape already replayed backward; call reset() first");
    if (loss.value().size() != 1) {
      throw ShapeError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
    }
    consumed_ = true;
    std::map<std::string, TensorT> grads;
    if (!nodes_[loss.index].requires_grad) {
      for (const auto& [name, idx] : param_index_) grads.emplace(name, TensorT(nodes_[idx].value.shape()));
      return grads;
    }
    grad_buffer(loss.index)[0] = Scalar{1};
    for (std::size_t i = loss.index + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
      node.backward(*this, i);
    }
    for (const auto& [name, idx] : param_index_) grads.emplace(name, grad(idx));
    for (const auto& [name, g] : grads) require_finite(g, "gradient");
    return grads;
  }

  /// Gradient accumulated at `v` by the last backward sweep (zeros if none reached it).
  TensorT grad(Var<Scalar> v) const { return grad(v.index); }

  void reset() {
    nodes_.clear();
    param_index_.clear();
    consumed_ = false;
  }

 private:
  struct Node {
    TensorT value;
    std::vector<Scalar> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  TensorT grad(std::size_t index) const {
    const auto& node = nodes_.at(index);
    if (node.grad.empty()) return TensorT(node.value.shape());
    return TensorT(node.value.shape(), node.grad);
  }

  Var<Scalar> push(TensorT value, bool requires_grad, BackwardFn backward, const std::string& /*name*/) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(backward)});
    return Var<Scalar>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> param_index_;
  bool consumed_ = false;
};

namespace detail {

template <typename Scalar>
Tape<Scalar>& same_tape(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.tape != b.tape || a.tape == nullptr) throw ValueError("operands recorded on different tapes");
  return *a.tape;
}

template <typename Scalar>
bool any_grad(const Var<Scalar>& a) {
  return a.tape->requires_grad(a.index);
}
template <typename Scalar>
bool any_grad(const Var<Scalar>& a, const Var<Scalar>& b) {
  return a.tape->requires_grad(a.index) || b.tape->requires_grad(b.index);
}

template <typename Scalar>
void require_matrix(const BasicTensor<Scalar>& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + " expects a rank-2 tensor, got " + shape_string(t.shape()));
}

inline void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes, const char* op) {
  if (labels.size() != rows) throw ShapeError(std::string(op) + ": label count does not match batch size");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ValueError(std::string(op) + ": label " + std::to_string(y) + " outside [0," + std::to_string(classes) +
                       ")");
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Row-wise kernels on plain tensors (shared by the taped ops and by evaluation code).

/// Max-subtracted log-softmax of every row of a [B,C] matrix.
template <typename Scalar>
RowMatrix<Scalar> log_softmax_rows(const Eigen::Ref<const RowMatrix<Scalar>>& logits) {
  RowMatrix<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar m = logits.row(r).maxCoeff();
    const Scalar lse = m + std::log((logits.row(r).array() - m).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

template <typename Scalar>
RowMatrix<Scalar> softmax_rows(const Eigen::Ref<const RowMatrix<Scalar>>& logits) {
  RowMatrix<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar m = logits.row(r).maxCoeff();
    auto e = (logits.row(r).array() - m).exp();
    out.row(r) = e / e.sum();
  }
  return out;
}

/// Per-row z_y - max_{i != y} z_i, the runner-up chosen at the lowest index on ties.
template <typename Scalar>
BasicTensor<Scalar> margin_loss(const BasicTensor<Scalar>& logits, std::span<const int> labels) {
  detail::require_matrix(logits, "margin_loss");
  const auto classes = logits.dim(1);
  if (classes < 2) throw ValueError("margin_loss needs at least two classes");
  detail::check_labels(labels, logits.dim(0), classes, "margin_loss");
  BasicTensor<Scalar> out(Shape{logits.dim(0)});
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    auto row = logits.row(r);
    const auto y = static_cast<std::size_t>(labels[r]);
    std::size_t other = (y == 0) ? 1 : 0;
    for (std::size_t j = 0; j < classes; ++j) {
      if (j != y && row[j] > row[other]) other = j;
    }
    out[r] = row[y] - row[other];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable primitives.

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  auto& tape = detail::same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  if (av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul inner extents differ: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  BasicTensor<Scalar> out(Shape{av.dim(0), bv.dim(1)});
  out.matrix().noalias() = av.matrix() * bv.matrix();
  const auto ia = a.index, ib = b.index;
  return tape.record(
      std::move(out), detail::any_grad(a, b),
      [ia, ib](Tape<Scalar>& t, std::size_t self) {
        const auto& A = t.value(ia);
        const auto& B = t.value(ib);
        typename BasicTensor<Scalar>::ConstMap G(t.upstream(self).data(), static_cast<Eigen::Index>(A.dim(0)),
                                                 static_cast<Eigen::Index>(B.dim(1)));
        if (t.requires_grad(ia)) {
          typename BasicTensor<Scalar>::Map GA(t.grad_buffer(ia).data(), static_cast<Eigen::Index>(A.dim(0)),
                                               static_cast<Eigen::Index>(A.dim(1)));
          GA.noalias() += G * B.matrix().transpose();
        }
        if (t.requires_grad(ib)) {
          typename BasicTensor<Scalar>::Map GB(t.grad_buffer(ib).data(), static_cast<Eigen::Index>(B.dim(0)),
                                               static_cast<Eigen::Index>(B.dim(1)));
          GB.noalias() += A.matrix().transpose() * G;
        }
      },
      "matmul");
}

namespace detail {

/// Shared body of elementwise binary ops; `b` may be a rank-0 scalar.
template <typename Scalar, typename Fwd, typename DA, typename DB>
Var<Scalar> elementwise(Var<Scalar> a, Var<Scalar> b, Fwd fwd, DA da, DB db, const char* op) {
  auto& tape = same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  const bool scalar_b = bv.rank() == 0;
  if (!scalar_b && av.shape() != bv.shape()) {
    throw ShapeError(std::string(op) + ": shapes differ " + shape_string(av.shape()) + " vs " +
                     shape_string(bv.shape()));
  }
  BasicTensor<Scalar> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], scalar_b ? bv[0] : bv[i]);
  const auto ia = a.index, ib = b.index;
  return tape.record(
      std::move(out), any_grad(a, b),
      [ia, ib, scalar_b, da, db](Tape<Scalar>& t, std::size_t self) {
        const auto& A = t.value(ia);
        const auto& B = t.value(ib);
        auto g = t.upstream(self);
        if (t.requires_grad(ia)) {
          auto ga = t.grad_buffer(ia);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(A[i], scalar_b ? B[0] : B[i]);
        }
        if (t.requires_grad(ib)) {
          auto gb = t.grad_buffer(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[scalar_b ? 0 : i] += g[i] * db(A[i], scalar_b ? B[0] : B[i]);
        }
      },
      op);
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  return detail::elementwise(
      a, b, [](Scalar x, Scalar y) { return x + y; }, [](Scalar, Scalar) { return Scalar{1}; },
      [](Scalar, Scalar) { return Scalar{1}; }, "add");
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  return detail::elementwise(
      a, b, [](Scalar x, Scalar y) { return x - y; }, [](Scalar, Scalar) { return Scalar{1}; },
      [](Scalar, Scalar) { return Scalar{-1}; }, "sub");
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  return detail::elementwise(
      a, b, [](Scalar x, Scalar y) { return x * y; }, [](Scalar, Scalar y) { return y; },
      [](Scalar x, Scalar) { return x; }, "mul");
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar factor) {
  auto& tape = *a.tape;
  BasicTensor<Scalar> out(a.shape());
  out.vector() = a.value().vector() * factor;
  const auto ia = a.index;
  return tape.record(
      std::move(out), detail::any_grad(a),
      [ia, factor](Tape<Scalar>& t, std::size_t self) {
        auto g = t.upstream(self);
        auto ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
      },
      "scale");
}

/// x + b for every row of x, where b has row_size(x) entries.
template <typename Scalar>
Var<Scalar> add_bias(Var<Scalar> x, Var<Scalar> bias) {
  auto& tape = detail::same_tape(x, bias);
  const auto& xv = x.value();
  const auto& bv = bias.value();
  if (bv.size() != xv.row_size()) throw ShapeError("add_bias: bias length does not match row size");
  BasicTensor<Scalar> out = xv;
  out.matrix().rowwise() += bv.vector().transpose();
  const auto ix = x.index, ib = bias.index;
  return tape.record(
      std::move(out), detail::any_grad(x, bias),
      [ix, ib](Tape<Scalar>& t, std::size_t self) {
        const auto& X = t.value(ix);
        typename BasicTensor<Scalar>::ConstMap G(t.upstream(self).data(), static_cast<Eigen::Index>(X.rows()),
                                                 static_cast<Eigen::Index>(X.row_size()));
        if (t.requires_grad(ix)) {
          typename BasicTensor<Scalar>::Map GX(t.grad_buffer(ix).data(), G.rows(), G.cols());
          GX += G;
        }
        if (t.requires_grad(ib)) {
          Eigen::Map<Vector<Scalar>> GB(t.grad_buffer(ib).data(), G.cols());
          GB += G.colwise().sum().transpose();
        }
      },
      "add_bias");
}

/// Elementwise x * sigmoid(x).
template <typename Scalar>
Var<Scalar> silu(Var<Scalar> x) {
  auto& tape = *x.tape;
  const auto& xv = x.value();
  BasicTensor<Scalar> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const Scalar s = Scalar{1} / (Scalar{1} + std::exp(-xv[i]));
    out[i] = xv[i] * s;
  }
  const auto ix = x.index;
  return tape.record(
      std::move(out), detail::any_grad(x),
      [ix](Tape<Scalar>& t, std::size_t self) {
        const auto& X = t.value(ix);
        auto g = t.upstream(self);
        auto gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const Scalar s = Scalar{1} / (Scalar{1} + std::exp(-X[i]));
          gx[i] += g[i] * s * (Scalar{1} + X[i] * (Scalar{1} - s));
        }
      },
      "silu");
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  auto& tape = *x.tape;
  const auto ix = x.index;
  return tape.record(
      BasicTensor<Scalar>::scalar(x.value().vector().sum()), detail::any_grad(x),
      [ix](Tape<Scalar>& t, std::size_t self) {
        const Scalar g = t.upstream(self)[0];
        for (auto& v : t.grad_buffer(ix)) v += g;
      },
      "sum");
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> x) {
  const auto n = x.value().size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), Scalar{1} / static_cast<Scalar>(n));
}

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Shape shape) {
  auto& tape = *x.tape;
  const auto ix = x.index;
  return tape.record(
      x.value().reshaped(std::move(shape)), detail::any_grad(x),
      [ix](Tape<Scalar>& t, std::size_t self) {
        auto g = t.upstream(self);
        auto gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      },
      "reshape");
}

namespace detail {

struct ConvGeometry {
  std::size_t batch, in_ch, height, width, out_ch, kernel, stride, pad, out_h, out_w;
  std::size_t col_rows() const { return in_ch * kernel * kernel; }
  std::size_t col_cols() const { return out_h * out_w; }
};

/// Unfolds image `b` of x into a [Cin*K*K, Ho*Wo] column matrix.
template <typename Scalar>
void im2col(const ConvGeometry& g, const Scalar* image, RowMatrix<Scalar>& cols) {
  cols.setZero(static_cast<Eigen::Index>(g.col_rows()), static_cast<Eigen::Index>(g.col_cols()));
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const auto r = static_cast<Eigen::Index>((c * g.kernel + ky) * g.kernel + kx);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            cols(r, static_cast<Eigen::Index>(oy * g.out_w + ox)) =
                image[(c * g.height + static_cast<std::size_t>(iy)) * g.width + static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const ConvGeometry& g, const RowMatrix<Scalar>& cols, Scalar* image_grad) {
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const auto r = static_cast<Eigen::Index>((c * g.kernel + ky) * g.kernel + kx);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            image_grad[(c * g.height + static_cast<std::size_t>(iy)) * g.width + static_cast<std::size_t>(ix)] +=
                cols(r, static_cast<Eigen::Index>(oy * g.out_w + ox));
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Direct 2-D convolution. x: [B,Cin,H,W], weight: [Cout,Cin,K,K], bias: [Cout].
template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias, std::size_t stride, std::size_t pad) {
  auto& tape = detail::same_tape(x, weight);
  detail::same_tape(x, bias);
  const auto& xv = x.value();
  const auto& wv = weight.value();
  if (xv.rank() != 4 || wv.rank() != 4) throw ShapeError("conv2d expects rank-4 input and weight");
  if (wv.dim(1) != xv.dim(1) || wv.dim(2) != wv.dim(3)) throw ShapeError("conv2d weight shape mismatch");
  if (bias.value().size() != wv.dim(0)) throw ShapeError("conv2d bias length mismatch");
  if (stride == 0) throw ValueError("conv2d stride must be positive");
  detail::ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), stride, pad, 0, 0};
  if (g.height + 2 * pad < g.kernel || g.width + 2 * pad < g.kernel) throw ShapeError("conv2d kernel larger than input");
  g.out_h = (g.height + 2 * pad - g.kernel) / stride + 1;
  g.out_w = (g.width + 2 * pad - g.kernel) / stride + 1;

  BasicTensor<Scalar> out(Shape{g.batch, g.out_ch, g.out_h, g.out_w});
  typename BasicTensor<Scalar>::ConstMap W(wv.data().data(), static_cast<Eigen::Index>(g.out_ch),
                                           static_cast<Eigen::Index>(g.col_rows()));
  const auto bvec = bias.value().vector();
  RowMatrix<Scalar> cols;
  const auto in_stride = g.in_ch * g.height * g.width;
  const auto out_stride = g.out_ch * g.col_cols();
  for (std::size_t b = 0; b < g.batch; ++b) {
    detail::im2col(g, xv.data().data() + b * in_stride, cols);
    typename BasicTensor<Scalar>::Map O(out.data().data() + b * out_stride, static_cast<Eigen::Index>(g.out_ch),
                                        static_cast<Eigen::Index>(g.col_cols()));
    O.noalias() = W * cols;
    O.colwise() += bvec;
  }

  const auto ix = x.index, iw = weight.index, ib = bias.index;
  const bool needs = detail::any_grad(x, weight) || detail::any_grad(bias);
  return tape.record(
      std::move(out), needs,
      [ix, iw, ib, g](Tape<Scalar>& t, std::size_t self) {
        const auto& X = t.value(ix);
        const auto& Wt = t.value(iw);
        typename BasicTensor<Scalar>::ConstMap Wm(Wt.data().data(), static_cast<Eigen::Index>(g.out_ch),
                                                  static_cast<Eigen::Index>(g.col_rows()));
        auto up = t.upstream(self);
        const auto in_stride = g.in_ch * g.height * g.width;
        const auto out_stride = g.out_ch * g.col_cols();
        const bool gx_needed = t.requires_grad(ix);
        const bool gw_needed = t.requires_grad(iw);
        const bool gb_needed = t.requires_grad(ib);
        RowMatrix<Scalar> cols, dcols;
        for (std::size_t b = 0; b < g.batch; ++b) {
          typename BasicTensor<Scalar>::ConstMap G(up.data() + b * out_stride, static_cast<Eigen::Index>(g.out_ch),
                                                   static_cast<Eigen::Index>(g.col_cols()));
          if (gb_needed) {
            Eigen::Map<Vector<Scalar>> GB(t.grad_buffer(ib).data(), static_cast<Eigen::Index>(g.out_ch));
            GB += G.rowwise().sum();
          }
          if (gw_needed) {
            detail::im2col(g, X.data().data() + b * in_stride, cols);
            typename BasicTensor<Scalar>::Map GW(t.grad_buffer(iw).data(), static_cast<Eigen::Index>(g.out_ch),
                                                 static_cast<Eigen::Index>(g.col_rows()));
            GW.noalias() += G * cols.transpose();
          }
          if (gx_needed) {
            dcols.noalias() = Wm.transpose() * G;
            detail::col2im_add(g, dcols, t.grad_buffer(ix).data() + b * in_stride);
          }
        }
      },
      "conv2d");
}

/// Per-example cross-entropy -log softmax(logits)[label], shape [B].
template <typename Scalar>
Var<Scalar> cross_entropy_rows(Var<Scalar> logits, std::span<const int> labels) {
  auto& tape = *logits.tape;
  const auto& z = logits.value();
  detail::require_matrix(z, "cross_entropy");
  detail::check_labels(labels, z.dim(0), z.dim(1), "cross_entropy");
  const RowMatrix<Scalar> logp = log_softmax_rows<Scalar>(z.matrix());
  BasicTensor<Scalar> out(Shape{z.dim(0)});
  for (std::size_t r = 0; r < z.dim(0); ++r) out[r] = -logp(static_cast<Eigen::Index>(r), labels[r]);
  std::vector<int> y(labels.begin(), labels.end());
  const auto iz = logits.index;
  return tape.record(
      std::move(out), detail::any_grad(logits),
      [iz, y = std::move(y)](Tape<Scalar>& t, std::size_t self) {
        const auto& Z = t.value(iz);
        const RowMatrix<Scalar> p = softmax_rows<Scalar>(Z.matrix());
        auto g = t.upstream(self);
        typename BasicTensor<Scalar>::Map GZ(t.grad_buffer(iz).data(), p.rows(), p.cols());
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
          GZ.row(r) += g[static_cast<std::size_t>(r)] * p.row(r);
          GZ(r, y[static_cast<std::size_t>(r)]) -= g[static_cast<std::size_t>(r)];
        }
      },
      "cross_entropy");
}

/// Mean cross-entropy over the batch.
template <typename Scalar>
Var<Scalar> softmax_cross_entropy(Var<Scalar> logits, std::span<const int> labels) {
  return mean(cross_entropy_rows(logits, labels));
}

/// Per-example KL(softmax(p) || softmax(q)), shape [B].
template <typename Scalar>
Var<Scalar> kl_divergence_rows(Var<Scalar> p_logits, Var<Scalar> q_logits) {
  auto& tape = detail::same_tape(p_logits, q_logits);
  const auto& p = p_logits.value();
  const auto& q = q_logits.value();
  detail::require_matrix(p, "kl_divergence");
  if (p.shape() != q.shape()) {
    throw ShapeError("kl_divergence: shapes differ " + shape_string(p.shape()) + " vs " + shape_string(q.shape()));
  }
  const RowMatrix<Scalar> logp = log_softmax_rows<Scalar>(p.matrix());
  const RowMatrix<Scalar> logq = log_softmax_rows<Scalar>(q.matrix());
  BasicTensor<Scalar> out(Shape{p.dim(0)});
  for (Eigen::Index r = 0; r < logp.rows(); ++r) {
    out[static_cast<std::size_t>(r)] = (logp.row(r).array().exp() * (logp.row(r) - logq.row(r)).array()).sum();
  }
  const auto ip = p_logits.index, iq = q_logits.index;
  return tape.record(
      std::move(out), detail::any_grad(p_logits, q_logits),
      [ip, iq](Tape<Scalar>& t, std::size_t self) {
        const auto& P = t.value(ip);
        const auto& Q = t.value(iq);
        const RowMatrix<Scalar> logp = log_softmax_rows<Scalar>(P.matrix());
        const RowMatrix<Scalar> logq = log_softmax_rows<Scalar>(Q.matrix());
        auto g = t.upstream(self);
        for (Eigen::Index r = 0; r < logp.rows(); ++r) {
          const Scalar gr = g[static_cast<std::size_t>(r)];
          const auto prob_p = logp.row(r).array().exp();
          const auto diff = (logp.row(r) - logq.row(r)).array();
          if (t.requires_grad(ip)) {
            const Scalar kl = (prob_p * diff).sum();
            typename BasicTensor<Scalar>::Map GP(t.grad_buffer(ip).data(), logp.rows(), logp.cols());
            GP.row(r).array() += gr * prob_p * (diff - kl);
          }
          if (t.requires_grad(iq)) {
            typename BasicTensor<Scalar>::Map GQ(t.grad_buffer(iq).data(), logq.rows(), logq.cols());
            GQ.row(r).array() += gr * (logq.row(r).array().exp() - prob_p);
          }
        }
      },
      "kl_divergence");
}

/// Mean over the batch of KL(softmax(p) || softmax(q)).
template <typename Scalar>
Var<Scalar> kl_divergence(Var<Scalar> p_logits, Var<Scalar> q_logits) {
  return mean(kl_divergence_rows(p_logits, q_logits));
}

/// Per-example margin z_y - max_{i != y} z_i, shape [B].
template <typename Scalar>
Var<Scalar> margin_rows(Var<Scalar> logits, std::span<const int> labels) {
  auto& tape = *logits.tape;
  const auto& z = logits.value();
  BasicTensor<Scalar> out = margin_loss(z, labels);
  std::vector<std::pair<int, int>> picks(z.dim(0));
  for (std::size_t r = 0; r < z.dim(0); ++r) {
    auto row = z.row(r);
    const auto y = static_cast<std::size_t>(labels[r]);
    std::size_t other = (y == 0) ? 1 : 0;
    for (std::size_t j = 0; j < z.dim(1); ++j) {
      if (j != y && row[j] > row[other]) other = j;
    }
    picks[r] = {labels[r], static_cast<int>(other)};
  }
  const auto iz = logits.index;
  const auto cols = z.dim(1);
  return tape.record(
      std::move(out), detail::any_grad(logits),
      [iz, cols, picks = std::move(picks)](Tape<Scalar>& t, std::size_t self) {
        auto g = t.upstream(self);
        auto gz = t.grad_buffer(iz);
        for (std::size_t r = 0; r < picks.size(); ++r) {
          gz[r * cols + static_cast<std::size_t>(picks[r].first)] += g[r];
          gz[r * cols + static_cast<std::size_t>(picks[r].second)] -= g[r];
        }
      },
      "margin");
}

/// Per-example z_target - z_label, shape [B]; the targeted attack objective.
template <typename Scalar>
Var<Scalar> targeted_margin_rows(Var<Scalar> logits, std::span<const int> labels, std::span<const int> targets) {
  auto& tape = *logits.tape;
  const auto& z = logits.value();
  detail::require_matrix(z, "targeted_margin");
  detail::check_labels(labels, z.dim(0), z.dim(1), "targeted_margin");
  detail::check_labels(targets, z.dim(0), z.dim(1), "targeted_margin");
  BasicTensor<Scalar> out(Shape{z.dim(0)});
  for (std::size_t r = 0; r < z.dim(0); ++r) out[r] = z.row(r)[targets[r]] - z.row(r)[labels[r]];
  std::vector<int> y(labels.begin(), labels.end());
  std::vector<int> tg(targets.begin(), targets.end());
  const auto iz = logits.index;
  const auto cols = z.dim(1);
  return tape.record(
      std::move(out), detail::any_grad(logits),
      [iz, cols, y = std::move(y), tg = std::move(tg)](Tape<Scalar>& t, std::size_t self) {
        auto g = t.upstream(self);
        auto gz = t.grad_buffer(iz);
        for (std::size_t r = 0; r < y.size(); ++r) {
          gz[r * cols + static_cast<std::size_t>(tg[r])] += g[r];
          gz[r * cols + static_cast<std::size_t>(y[r])] -= g[r];
        }
      },
      "targeted_margin");
}

}  // namespace genrobust
