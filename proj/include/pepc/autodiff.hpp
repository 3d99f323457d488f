// include/pepc/autodiff.hpp

// Copyright 2026  The pepc authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef PEPC_AUTODIFF_HPP
#define PEPC_AUTODIFF_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "pepc/errors.hpp"
#include "pepc/rng.hpp"
#include "pepc/tensor.hpp"

namespace pepc {

class Tape;

// Handle to a node on a gradient tape.  Cheap to copy; owns nothing.
struct Value {
  Tape* tape = nullptr;
  int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& tensor() const;
  const Tensor& grad() const;
  bool requires_grad() const;
};

// Single-threaded reverse-mode gradient tape.  Nodes are appended in forward
// order, which is a valid topological order, so one reverse sweep suffices.
class Tape {
 public:
  struct Node {
    Tensor val;
    Tensor grad;  // allocated (zeros) iff requires_grad
    bool requires_grad = false;
    std::function<void(Tape&, const Tensor&)> back;  // (tape, upstream grad)
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value leaf(Tensor t, bool requires_grad = false) {
    ensure_finite(t, "leaf");
    return emplace(std::move(t), requires_grad, nullptr);
  }

  Value emplace(Tensor val, bool requires_grad, std::function<void(Tape&, const Tensor&)> back) {
    Node n;
    n.val = std::move(val);
    n.requires_grad = requires_grad;
    if (requires_grad) {
      n.grad.shape = n.val.shape;
      n.grad.data.assign(n.val.data.size(), 0.0);
    }
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Value{this, int32_t(nodes_.size()) - 1};
  }

  Node& node(int32_t id) { return nodes_[size_t(id)]; }
  const Node& node(int32_t id) const { return nodes_[size_t(id)]; }

  size_t size() const { return nodes_.size(); }

  const Tensor& value(const Value& v) const { return node(v.id).val; }

  const Tensor& grad(const Value& v) const {
    const Node& n = node(v.id);
    if (!n.requires_grad) throw ConfigError("grad requested for a node that does not require it");
    return n.grad;
  }

  // Accumulate into a node's grad buffer if it participates in the backward
  // pass; silently ignored otherwise.
  void accumulate(int32_t id, const Tensor& contrib) {
    Node& n = node(id);
    if (!n.requires_grad) return;
    for (size_t i = 0; i < contrib.data.size(); ++i) n.grad.data[i] += contrib.data[i];
  }

  double* grad_data(int32_t id) {
    Node& n = node(id);
    return n.requires_grad ? n.grad.data.data() : nullptr;
  }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.  Each
  // node's grad is populated exactly once per call, accumulating across
  // fan-out within the graph.
  void backward(const Value& loss) {
    if (backward_done_) throw ConfigError("backward already ran on this tape");
    if (loss.tape != this) throw ConfigError("loss value belongs to a different tape");
    Node& ln = node(loss.id);
    if (ln.val.numel() != 1) throw DimError("backward requires a scalar loss");
    if (!ln.requires_grad) throw ConfigError("loss does not depend on any parameter");
    backward_done_ = true;
    ln.grad.data[0] = 1.0;
    for (int32_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[size_t(i)];
      if (n.requires_grad && n.back) n.back(*this, n.grad);
    }
  }

 private:
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Value::tensor() const { return tape->value(*this); }
inline const Tensor& Value::grad() const { return tape->grad(*this); }
inline bool Value::requires_grad() const { return tape->node(id).requires_grad; }

namespace detail {

inline Tape& same_tape(const Value& a, const Value& b) {
  if (a.tape != b.tape) throw ConfigError("values belong to different tapes");
  return *a.tape;
}

inline bool any_requires(std::initializer_list<Value> vs) {
  for (const Value& v : vs)
    if (v.requires_grad()) return true;
  return false;
}

// out += alpha * op(A) * op(B) with optional transposes; plain loops are
// plenty at desk scale.
inline void gemm_acc(bool ta, bool tb, const Tensor& A, const Tensor& B, Tensor& out, double alpha = 1.0) {
  int64_t M = ta ? A.shape[1] : A.shape[0];
  int64_t K = ta ? A.shape[0] : A.shape[1];
  int64_t Kb = tb ? B.shape[1] : B.shape[0];
  int64_t N = tb ? B.shape[0] : B.shape[1];
  if (K != Kb)
    throw DimError(cat("matmul: inner dimensions disagree: ", shape_str(A.shape), (ta ? "^T" : ""), " vs ",
                       shape_str(B.shape), (tb ? "^T" : "")));
  if (out.shape[0] != M || out.shape[1] != N) throw DimError("matmul: bad output shape");
  for (int64_t i = 0; i < M; ++i) {
    for (int64_t k = 0; k < K; ++k) {
      double a = ta ? A.at(k, i) : A.at(i, k);
      if (a == 0.0) continue;
      a *= alpha;
      const double* brow = tb ? nullptr : &B.data[size_t(k * N)];
      double* orow = &out.data[size_t(i * N)];
      if (!tb) {
        for (int64_t j = 0; j < N; ++j) orow[j] += a * brow[j];
      } else {
        for (int64_t j = 0; j < N; ++j) orow[j] += a * B.at(j, k);
      }
    }
  }
}

inline void require_rank(const Value& v, int64_t r, const char* op) {
  if (v.tensor().rank() != r)
    throw DimError(cat(op, ": expected rank-", r, " tensor, got ", shape_str(v.tensor().shape)));
}

// Inserts a node and wires a backward closure that receives this node's own
// accumulated gradient.
template <class BackFn>
Value make_op(Tape& t, Tensor out, bool requires_grad, const char* op, BackFn&& fn) {
  ensure_finite(out, op);
  if (!requires_grad) return t.emplace(std::move(out), false, nullptr);
  return t.emplace(std::move(out), true, std::forward<BackFn>(fn));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise / structural ops
// ---------------------------------------------------------------------------

inline Value add(const Value& a, const Value& b) {
  Tape& t = detail::same_tape(a, b);
  ensure_same_shape(a.tensor(), b.tensor(), "add");
  Tensor out = a.tensor();
  const Tensor& bt = b.tensor();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bt.data[i];
  int32_t ai = a.id, bi = b.id;
  return detail::make_op(t, std::move(out), detail::any_requires({a, b}), "add",
                         [ai, bi](Tape& tp, const Tensor& g) {
                           tp.accumulate(ai, g);
                           tp.accumulate(bi, g);
                         });
}

inline Value elementwise_mul(const Value& a, const Value& b) {
  Tape& t = detail::same_tape(a, b);
  ensure_same_shape(a.tensor(), b.tensor(), "elementwise_mul");
  Tensor out = a.tensor();
  const Tensor& bt = b.tensor();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bt.data[i];
  int32_t ai = a.id, bi = b.id;
  return detail::make_op(t, std::move(out), detail::any_requires({a, b}), "elementwise_mul",
                         [ai, bi](Tape& tp, const Tensor& g) {
                           if (double* ga = tp.grad_data(ai)) {
                             const Tensor& bv = tp.node(bi).val;
                             for (size_t i = 0; i < g.data.size(); ++i) ga[i] += g.data[i] * bv.data[i];
                           }
                           if (double* gb = tp.grad_data(bi)) {
                             const Tensor& av = tp.node(ai).val;
                             for (size_t i = 0; i < g.data.size(); ++i) gb[i] += g.data[i] * av.data[i];
                           }
                         });
}

inline Value scale(const Value& a, double c) {
  Tensor out = a.tensor();
  for (double& x : out.data) x *= c;
  int32_t ai = a.id;
  return detail::make_op(*a.tape, std::move(out), a.requires_grad(), "scale", [ai, c](Tape& tp, const Tensor& g) {
    if (double* ga = tp.grad_data(ai))
      for (size_t i = 0; i < g.data.size(); ++i) ga[i] += c * g.data[i];
  });
}

inline Value sum(const Value& a) {
  double s = 0.0;
  for (double x : a.tensor().data) s += x;
  int32_t ai = a.id;
  return detail::make_op(*a.tape, Tensor::scalar(s), a.requires_grad(), "sum", [ai](Tape& tp, const Tensor& g) {
    if (double* ga = tp.grad_data(ai)) {
      size_t n = tp.node(ai).val.data.size();
      for (size_t i = 0; i < n; ++i) ga[i] += g.data[0];
    }
  });
}

inline Value reshape(const Value& a, Shape s) {
  if (shape_numel(s) != a.tensor().numel())
    throw DimError(detail::cat("reshape: numel mismatch ", shape_str(a.tensor().shape), " -> ", shape_str(s)));
  Tensor out = a.tensor();
  out.shape = std::move(s);
  int32_t ai = a.id;
  return detail::make_op(*a.tape, std::move(out), a.requires_grad(), "reshape", [ai](Tape& tp, const Tensor& g) {
    if (double* ga = tp.grad_data(ai))
      for (size_t i = 0; i < g.data.size(); ++i) ga[i] += g.data[i];
  });
}

inline Value sigmoid(const Value& a) {
  Tensor out = a.tensor();
  for (double& x : out.data) x = 1.0 / (1.0 + std::exp(-x));
  int32_t ai = a.id;
  return detail::make_op(*a.tape, std::move(out), a.requires_grad(), "sigmoid",
                         [ai, self = int32_t(a.tape->size())](Tape& tp, const Tensor& g) {
                           if (double* ga = tp.grad_data(ai)) {
                             const Tensor& s = tp.node(self).val;
                             for (size_t i = 0; i < g.data.size(); ++i)
                               ga[i] += g.data[i] * s.data[i] * (1.0 - s.data[i]);
                           }
                         });
}

inline Value relu(const Value& a) {
  Tensor out = a.tensor();
  for (double& x : out.data) x = x > 0.0 ? x : 0.0;
  int32_t ai = a.id;
  return detail::make_op(*a.tape, std::move(out), a.requires_grad(), "relu", [ai](Tape& tp, const Tensor& g) {
    if (double* ga = tp.grad_data(ai)) {
      const Tensor& x = tp.node(ai).val;
      for (size_t i = 0; i < g.data.size(); ++i)
        if (x.data[i] > 0.0) ga[i] += g.data[i];
    }
  });
}

// Hard gate: 1 where x >= 0, 0 where x < 0.  Backward is straight-through
// (upstream gradient passes unchanged).
inline Value heaviside_ste(const Value& a) {
  Tensor out = a.tensor();
  for (double& x : out.data) x = x >= 0.0 ? 1.0 : 0.0;
  int32_t ai = a.id;
  return detail::make_op(*a.tape, std::move(out), a.requires_grad(), "heaviside_ste",
                         [ai](Tape& tp, const Tensor& g) {
                           if (double* ga = tp.grad_data(ai))
                             for (size_t i = 0; i < g.data.size(); ++i) ga[i] += g.data[i];
                         });
}

// Identity forward; backward multiplies the upstream gradient by -lambda.
inline Value grad_reverse(const Value& a, double lambda) {
  if (!(lambda > 0.0)) throw ConfigError(detail::cat("grad_reverse: lambda must be positive, got ", lambda));
  Tensor out = a.tensor();
  int32_t ai = a.id;
  return detail::make_op(*a.tape, std::move(out), a.requires_grad(), "grad_reverse",
                         [ai, lambda](Tape& tp, const Tensor& g) {
                           if (double* ga = tp.grad_data(ai))
                             for (size_t i = 0; i < g.data.size(); ++i) ga[i] += -lambda * g.data[i];
                         });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

inline Value matmul(const Value& a, const Value& b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const Tensor& A = a.tensor();
  const Tensor& B = b.tensor();
  if (A.shape[1] != B.shape[0])
    throw DimError(detail::cat("matmul: inner dimensions disagree: ", shape_str(A.shape), " vs ", shape_str(B.shape)));
  Tensor out({A.shape[0], B.shape[1]});
  detail::gemm_acc(false, false, A, B, out);
  int32_t ai = a.id, bi = b.id;
  return detail::make_op(t, std::move(out), detail::any_requires({a, b}), "matmul",
                         [ai, bi](Tape& tp, const Tensor& g) {
                           if (tp.grad_data(ai))  // dA = g * B^T
                             detail::gemm_acc(false, true, g, tp.node(bi).val, tp.node(ai).grad);
                           if (tp.grad_data(bi))  // dB = A^T * g
                             detail::gemm_acc(true, false, tp.node(ai).val, g, tp.node(bi).grad);
                         });
}

inline Value transpose(const Value& a) {
  detail::require_rank(a, 2, "transpose");
  const Tensor& A = a.tensor();
  Tensor out({A.shape[1], A.shape[0]});
  for (int64_t i = 0; i < A.shape[0]; ++i)
    for (int64_t j = 0; j < A.shape[1]; ++j) out.at(j, i) = A.at(i, j);
  int32_t ai = a.id;
  return detail::make_op(*a.tape, std::move(out), a.requires_grad(), "transpose", [ai](Tape& tp, const Tensor& g) {
    if (tp.grad_data(ai)) {
      Tensor& ga = tp.node(ai).grad;
      for (int64_t i = 0; i < g.shape[0]; ++i)
        for (int64_t j = 0; j < g.shape[1]; ++j) ga.at(j, i) += g.at(i, j);
    }
  });
}

// Zeroes the main diagonal; diagonal entries receive no gradient.
inline Value zero_diag(const Value& a) {
  detail::require_rank(a, 2, "zero_diag");
  const Tensor& A = a.tensor();
  if (A.shape[0] != A.shape[1]) throw DimError(detail::cat("zero_diag: square matrix required, got ", shape_str(A.shape)));
  Tensor out = A;
  for (int64_t i = 0; i < A.shape[0]; ++i) out.at(i, i) = 0.0;
  int32_t ai = a.id;
  return detail::make_op(*a.tape, std::move(out), a.requires_grad(), "zero_diag", [ai](Tape& tp, const Tensor& g) {
    if (tp.grad_data(ai)) {
      Tensor& ga = tp.node(ai).grad;
      for (int64_t i = 0; i < g.shape[0]; ++i)
        for (int64_t j = 0; j < g.shape[1]; ++j)
          if (i != j) ga.at(i, j) += g.at(i, j);
    }
  });
}

// x[M x H] * W[H x D] + b[D] broadcast over rows.
inline Value linear(const Value& x, const Value& w, const Value& b) {
  Tape& t = detail::same_tape(x, w);
  detail::same_tape(x, b);
  detail::require_rank(x, 2, "linear");
  detail::require_rank(w, 2, "linear");
  detail::require_rank(b, 1, "linear");
  const Tensor& X = x.tensor();
  const Tensor& W = w.tensor();
  const Tensor& B = b.tensor();
  if (X.shape[1] != W.shape[0])
    throw DimError(detail::cat("linear: input width ", X.shape[1], " vs weight rows ", W.shape[0]));
  if (W.shape[1] != B.shape[0])
    throw DimError(detail::cat("linear: weight cols ", W.shape[1], " vs bias length ", B.shape[0]));
  Tensor out({X.shape[0], W.shape[1]});
  for (int64_t i = 0; i < out.shape[0]; ++i)
    for (int64_t j = 0; j < out.shape[1]; ++j) out.at(i, j) = B[j];
  detail::gemm_acc(false, false, X, W, out);
  int32_t xi = x.id, wi = w.id, bi = b.id;
  return detail::make_op(t, std::move(out), detail::any_requires({x, w, b}), "linear",
                         [xi, wi, bi](Tape& tp, const Tensor& g) {
                           if (tp.grad_data(xi)) detail::gemm_acc(false, true, g, tp.node(wi).val, tp.node(xi).grad);
                           if (tp.grad_data(wi)) detail::gemm_acc(true, false, tp.node(xi).val, g, tp.node(wi).grad);
                           if (double* gb = tp.grad_data(bi)) {
                             for (int64_t i = 0; i < g.shape[0]; ++i)
                               for (int64_t j = 0; j < g.shape[1]; ++j) gb[j] += g.at(i, j);
                           }
                         });
}

// ---------------------------------------------------------------------------
// Sequence ops (time axis = rows)
// ---------------------------------------------------------------------------

// Cross-correlation along the time axis with zero same-padding, so the output
// has the same number of frames as the input for any T >= 1 (including
// sequences shorter than the kernel).  kernel is [W x C_in x C_out].
inline Value conv1d(const Value& x, const Value& kernel, const Value& bias) {
  Tape& t = detail::same_tape(x, kernel);
  detail::same_tape(x, bias);
  detail::require_rank(x, 2, "conv1d");
  detail::require_rank(kernel, 3, "conv1d");
  detail::require_rank(bias, 1, "conv1d");
  const Tensor& X = x.tensor();
  const Tensor& K = kernel.tensor();
  const Tensor& B = bias.tensor();
  const int64_t T = X.shape[0], Cin = X.shape[1];
  const int64_t W = K.shape[0], Cout = K.shape[2];
  if (T < 1) throw DimError("conv1d: empty sequence");
  if (K.shape[1] != Cin)
    throw DimError(detail::cat("conv1d: kernel input channels ", K.shape[1], " vs sequence channels ", Cin));
  if (B.shape[0] != Cout) throw DimError(detail::cat("conv1d: bias length ", B.shape[0], " vs output channels ", Cout));
  const int64_t pad_left = (W - 1) / 2;
  Tensor out({T, Cout});
  for (int64_t tt = 0; tt < T; ++tt)
    for (int64_t co = 0; co < Cout; ++co) out.at(tt, co) = B[co];
  for (int64_t tt = 0; tt < T; ++tt) {
    for (int64_t w = 0; w < W; ++w) {
      int64_t s = tt + w - pad_left;
      if (s < 0 || s >= T) continue;
      const double* xrow = &X.data[size_t(s * Cin)];
      double* orow = &out.data[size_t(tt * Cout)];
      const double* krow = &K.data[size_t(w * Cin * Cout)];
      for (int64_t ci = 0; ci < Cin; ++ci) {
        double xv = xrow[ci];
        if (xv == 0.0) continue;
        const double* kk = &krow[ci * Cout];
        for (int64_t co = 0; co < Cout; ++co) orow[co] += xv * kk[co];
      }
    }
  }
  int32_t xi = x.id, ki = kernel.id, bi = bias.id;
  return detail::make_op(
      t, std::move(out), detail::any_requires({x, kernel, bias}), "conv1d",
      [xi, ki, bi, T, Cin, W, Cout, pad_left](Tape& tp, const Tensor& g) {
        const Tensor& X = tp.node(xi).val;
        const Tensor& K = tp.node(ki).val;
        double* gx = tp.grad_data(xi);
        double* gk = tp.grad_data(ki);
        double* gb = tp.grad_data(bi);
        if (gb) {
          for (int64_t tt = 0; tt < T; ++tt)
            for (int64_t co = 0; co < Cout; ++co) gb[co] += g.at(tt, co);
        }
        for (int64_t tt = 0; tt < T; ++tt) {
          const double* grow = &g.data[size_t(tt * Cout)];
          for (int64_t w = 0; w < W; ++w) {
            int64_t s = tt + w - pad_left;
            if (s < 0 || s >= T) continue;
            const double* xrow = &X.data[size_t(s * Cin)];
            const double* krow = &K.data[size_t(w * Cin * Cout)];
            for (int64_t ci = 0; ci < Cin; ++ci) {
              double xv = xrow[ci];
              const double* kk = &krow[ci * Cout];
              double acc_x = 0.0;
              for (int64_t co = 0; co < Cout; ++co) {
                double gv = grow[co];
                if (gk) gk[size_t((w * Cin + ci) * Cout + co)] += xv * gv;
                acc_x += kk[co] * gv;
              }
              if (gx) gx[size_t(s * Cin + ci)] += acc_x;
            }
          }
        }
      });
}

// Per-channel mean over the time axis: [T x C] -> [C].
inline Value mean_over_time(const Value& x) {
  detail::require_rank(x, 2, "mean_over_time");
  const Tensor& X = x.tensor();
  const int64_t T = X.shape[0], C = X.shape[1];
  if (T < 1) throw DimError("mean_over_time: empty sequence");
  Tensor out({C});
  for (int64_t tt = 0; tt < T; ++tt)
    for (int64_t c = 0; c < C; ++c) out[c] += X.at(tt, c);
  for (int64_t c = 0; c < C; ++c) out[c] /= double(T);
  int32_t xi = x.id;
  return detail::make_op(*x.tape, std::move(out), x.requires_grad(), "mean_over_time",
                         [xi, T, C](Tape& tp, const Tensor& g) {
                           if (double* gx = tp.grad_data(xi)) {
                             for (int64_t tt = 0; tt < T; ++tt)
                               for (int64_t c = 0; c < C; ++c) gx[size_t(tt * C + c)] += g.data[size_t(c)] / double(T);
                           }
                         });
}

// Per-channel max over the time axis: [T x C] -> [C].  Gradient routes to the
// lowest time index among ties.
inline Value max_over_time(const Value& x) {
  detail::require_rank(x, 2, "max_over_time");
  const Tensor& X = x.tensor();
  const int64_t T = X.shape[0], C = X.shape[1];
  if (T < 1) throw DimError("max_over_time: empty sequence");
  Tensor out({C});
  std::vector<int64_t> argmax(size_t(C), 0);
  for (int64_t c = 0; c < C; ++c) out[c] = X.at(0, c);
  for (int64_t tt = 1; tt < T; ++tt) {
    for (int64_t c = 0; c < C; ++c) {
      double v = X.at(tt, c);
      if (v > out[c]) {
        out[c] = v;
        argmax[size_t(c)] = tt;
      }
    }
  }
  int32_t xi = x.id;
  return detail::make_op(*x.tape, std::move(out), x.requires_grad(), "max_over_time",
                         [xi, C, argmax = std::move(argmax)](Tape& tp, const Tensor& g) {
                           if (double* gx = tp.grad_data(xi)) {
                             for (int64_t c = 0; c < C; ++c)
                               gx[size_t(argmax[size_t(c)] * C + c)] += g.data[size_t(c)];
                           }
                         });
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

namespace detail {

inline Value apply_mask(const Value& x, std::vector<double> mask, const char* op) {
  Tensor out = x.tensor();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask[i];
  int32_t xi = x.id;
  return make_op(*x.tape, std::move(out), x.requires_grad(), op,
                 [xi, mask = std::move(mask)](Tape& tp, const Tensor& g) {
                   if (double* gx = tp.grad_data(xi))
                     for (size_t i = 0; i < g.data.size(); ++i) gx[i] += g.data[i] * mask[i];
                 });
}

}  // namespace detail

// Inverted dropout: zeroes entries with probability p and scales survivors by
// 1/(1-p), so eval mode is the exact identity (the input value is returned
// unchanged, no node added).
inline Value dropout(const Value& x, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw ConfigError(detail::cat("dropout: p must be in [0, 1), got ", p));
  if (!training || p == 0.0) return x;
  const double keep = 1.0 / (1.0 - p);
  std::vector<double> mask(x.tensor().data.size());
  for (double& m : mask) m = rng.bernoulli(p) ? 0.0 : keep;
  return detail::apply_mask(x, std::move(mask), "dropout");
}

// Channel dropout on a [T x C] sequence: zeroes whole channels across time.
inline Value channel_dropout(const Value& x, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw ConfigError(detail::cat("channel_dropout: p must be in [0, 1), got ", p));
  detail::require_rank(x, 2, "channel_dropout");
  if (!training || p == 0.0) return x;
  const Tensor& X = x.tensor();
  const int64_t T = X.shape[0], C = X.shape[1];
  const double keep = 1.0 / (1.0 - p);
  std::vector<double> channel(static_cast<size_t>(C));
  for (double& m : channel) m = rng.bernoulli(p) ? 0.0 : keep;
  std::vector<double> mask(static_cast<size_t>(T * C));
  for (int64_t tt = 0; tt < T; ++tt)
    for (int64_t c = 0; c < C; ++c) mask[size_t(tt * C + c)] = channel[size_t(c)];
  return detail::apply_mask(x, std::move(mask), "channel_dropout");
}

// ---------------------------------------------------------------------------
// Row selection / assembly
// ---------------------------------------------------------------------------

inline Value select_rows(const Value& x, std::vector<int64_t> rows) {
  detail::require_rank(x, 2, "select_rows");
  const Tensor& X = x.tensor();
  const int64_t D = X.shape[1];
  Tensor out({int64_t(rows.size()), D});
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= X.shape[0])
      throw DimError(detail::cat("select_rows: row ", rows[r], " out of range [0, ", X.shape[0], ")"));
    for (int64_t c = 0; c < D; ++c) out.at(int64_t(r), c) = X.at(rows[r], c);
  }
  int32_t xi = x.id;
  return detail::make_op(*x.tape, std::move(out), x.requires_grad(), "select_rows",
                         [xi, D, rows = std::move(rows)](Tape& tp, const Tensor& g) {
                           if (double* gx = tp.grad_data(xi)) {
                             for (size_t r = 0; r < rows.size(); ++r)
                               for (int64_t c = 0; c < D; ++c)
                                 gx[size_t(rows[r] * D + c)] += g.at(int64_t(r), c);
                           }
                         });
}

// Stacks rank-1 values of equal length into a [N x D] matrix.
inline Value concat_rows(const std::vector<Value>& parts) {
  if (parts.empty()) throw DimError("concat_rows: no rows");
  Tape& t = *parts[0].tape;
  const int64_t D = parts[0].tensor().numel();
  bool rg = false;
  for (const Value& p : parts) {
    detail::same_tape(parts[0], p);
    detail::require_rank(p, 1, "concat_rows");
    if (p.tensor().numel() != D) throw DimError("concat_rows: rows have different lengths");
    rg = rg || p.requires_grad();
  }
  Tensor out({int64_t(parts.size()), D});
  for (size_t r = 0; r < parts.size(); ++r)
    for (int64_t c = 0; c < D; ++c) out.at(int64_t(r), c) = parts[r].tensor()[c];
  std::vector<int32_t> ids(parts.size());
  for (size_t r = 0; r < parts.size(); ++r) ids[r] = parts[r].id;
  return detail::make_op(t, std::move(out), rg, "concat_rows",
                         [D, ids = std::move(ids)](Tape& tp, const Tensor& g) {
                           for (size_t r = 0; r < ids.size(); ++r) {
                             if (double* gp = tp.grad_data(ids[r]))
                               for (int64_t c = 0; c < D; ++c) gp[size_t(c)] += g.at(int64_t(r), c);
                           }
                         });
}

// Rowwise L2 normalization with an epsilon floor on the norm.  A row with an
// exactly zero norm is rejected rather than silently clamped: it means a dead
// embedding upstream.
inline Value normalize_rows(const Value& x, double eps = 1e-8) {
  detail::require_rank(x, 2, "normalize_rows");
  const Tensor& X = x.tensor();
  const int64_t M = X.shape[0], D = X.shape[1];
  Tensor out({M, D});
  std::vector<double> denom(static_cast<size_t>(M));
  for (int64_t r = 0; r < M; ++r) {
    double sq = 0.0;
    for (int64_t c = 0; c < D; ++c) sq += X.at(r, c) * X.at(r, c);
    double norm = std::sqrt(sq);
    if (norm == 0.0) throw NumericError(detail::cat("normalize_rows: degenerate zero-norm row ", r));
    denom[size_t(r)] = std::max(norm, eps);
    for (int64_t c = 0; c < D; ++c) out.at(r, c) = X.at(r, c) / denom[size_t(r)];
  }
  int32_t xi = x.id;
  return detail::make_op(
      *x.tape, std::move(out), x.requires_grad(), "normalize_rows",
      [xi, M, D, eps, denom = std::move(denom), self = int32_t(x.tape->size())](Tape& tp, const Tensor& g) {
        if (double* gx = tp.grad_data(xi)) {
          const Tensor& U = tp.node(self).val;  // normalized rows
          for (int64_t r = 0; r < M; ++r) {
            double d = denom[size_t(r)];
            if (d <= eps) {  // floored: out = x / eps, a plain linear map
              for (int64_t c = 0; c < D; ++c) gx[size_t(r * D + c)] += g.at(r, c) / d;
              continue;
            }
            double dot = 0.0;
            for (int64_t c = 0; c < D; ++c) dot += U.at(r, c) * g.at(r, c);
            for (int64_t c = 0; c < D; ++c) gx[size_t(r * D + c)] += (g.at(r, c) - U.at(r, c) * dot) / d;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Mean over the batch of -log softmax(logits)[label], stabilized by rowwise
// max subtraction.
inline Value cross_entropy(const Value& logits, const std::vector<int64_t>& labels) {
  detail::require_rank(logits, 2, "cross_entropy");
  const Tensor& L = logits.tensor();
  const int64_t B = L.shape[0], N = L.shape[1];
  if (B < 1) throw DimError("cross_entropy: empty batch");
  if (int64_t(labels.size()) != B)
    throw DimError(detail::cat("cross_entropy: ", labels.size(), " labels for batch of ", B));
  for (int64_t i = 0; i < B; ++i)
    if (labels[size_t(i)] < 0 || labels[size_t(i)] >= N)
      throw ConfigError(detail::cat("cross_entropy: label ", labels[size_t(i)], " out of range [0, ", N, ")"));
  Tensor probs({B, N});
  double loss = 0.0;
  for (int64_t i = 0; i < B; ++i) {
    double mx = L.at(i, 0);
    for (int64_t j = 1; j < N; ++j) mx = std::max(mx, L.at(i, j));
    double z = 0.0;
    for (int64_t j = 0; j < N; ++j) {
      double e = std::exp(L.at(i, j) - mx);
      probs.at(i, j) = e;
      z += e;
    }
    for (int64_t j = 0; j < N; ++j) probs.at(i, j) /= z;
    loss += std::log(z) - (L.at(i, labels[size_t(i)]) - mx);
  }
  loss /= double(B);
  int32_t li = logits.id;
  return detail::make_op(*logits.tape, Tensor::scalar(loss), logits.requires_grad(), "cross_entropy",
                         [li, B, N, labels, probs = std::move(probs)](Tape& tp, const Tensor& g) {
                           if (double* gl = tp.grad_data(li)) {
                             double s = g.data[0] / double(B);
                             for (int64_t i = 0; i < B; ++i)
                               for (int64_t j = 0; j < N; ++j) {
                                 double delta = (j == labels[size_t(i)]) ? 1.0 : 0.0;
                                 gl[size_t(i * N + j)] += s * (probs.at(i, j) - delta);
                               }
                           }
                         });
}

}  // namespace pepc

#endif  // PEPC_AUTODIFF_HPP
