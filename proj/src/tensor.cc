// niesr/tensor.cc

// Copyright 2026  The NIESR Authors

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

#include "niesr/tensor.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

namespace niesr {

namespace {

std::atomic<uint64_t> g_tape_counter{1};

int shape_numel(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) {
    NIESR_CHECK(d >= 0, ShapeError, "negative dimension " << d);
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// C[m×n] += A[m×k] · B[k×n]
void mm_nn_accum(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m×k] += G[m×n] · B[k×n]ᵀ
void mm_nt_accum(const double* g, const double* b, double* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* grow = g + static_cast<size_t>(i) * n;
    double* crow = c + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* brow = b + static_cast<size_t>(p) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// C[k×n] += A[m×k]ᵀ · G[m×n]
void mm_tn_accum(const double* a, const double* g, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    const double* grow = g + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

enum class BroadcastKind { kNone, kRightTrailing, kLeftTrailing };

// Shapes equal, or one operand's trailing dim is 1 and all leading dims match.
BroadcastKind broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return BroadcastKind::kNone;
  auto trailing_one_of = [](const Tensor& big, const Tensor& small) {
    if (big.rank() != small.rank() || big.rank() == 0) return false;
    const int r = big.rank();
    for (int i = 0; i < r - 1; ++i)
      if (big.dim(i) != small.dim(i)) return false;
    return small.dim(r - 1) == 1;
  };
  if (trailing_one_of(a, b)) return BroadcastKind::kRightTrailing;
  if (trailing_one_of(b, a)) return BroadcastKind::kLeftTrailing;
  NIESR_THROW(ShapeError, op << ": incompatible shapes " << shape_str(a.shape())
                             << " vs " << shape_str(b.shape()));
}

}  // namespace

// --- Tensor -----------------------------------------------------------------

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(
          static_cast<size_t>(shape_numel(shape_)), fill)) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(std::move(data))) {
  NIESR_CHECK(static_cast<size_t>(shape_numel(shape_)) == data_->size(), ShapeError,
              "shape " << shape_str(shape_) << " does not match data size "
                       << data_->size());
}

double Tensor::item() const {
  NIESR_CHECK(numel() == 1, ShapeError,
              "item() on non-scalar tensor of shape " << shape_str(shape_));
  return (*data_)[0];
}

// --- Tape -------------------------------------------------------------------

Tape::Tape() : id_(g_tape_counter.fetch_add(1)) {}

void check_finite(const char* op, const std::vector<double>& data) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      NIESR_THROW(NonFiniteError, "op '" << op << "' produced a non-finite value");
    }
  }
}

Tensor Tape::leaf(const Tensor& value) {
  Tensor t = value;
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{"leaf", t.numel(), nullptr});
  return t;
}

Tensor Tape::emit(const char* op, std::vector<int> shape, std::vector<double> data,
                  BackwardFn backward) {
  check_finite(op, data);
  Tensor t(std::move(shape), std::move(data));
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{op, t.numel(), std::move(backward)});
  return t;
}

void Tape::backward(const Tensor& loss) {
  NIESR_CHECK(loss.numel() == 1, Error, "backward requires a scalar loss");
  NIESR_CHECK(loss.tape() == this && loss.node() >= 0, Error,
              "backward: loss is not on this tape");
  // One independent pass; results fold into the persistent buffers so that
  // repeated calls accumulate.
  std::vector<std::vector<double>> pass(nodes_.size());
  pass_ = &pass;
  pass[static_cast<size_t>(loss.node())].assign(1, 1.0);
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    auto& g = pass[static_cast<size_t>(i)];
    if (g.empty()) continue;
    const Node& node = nodes_[static_cast<size_t>(i)];
    if (node.backward) node.backward(g, *this);
  }
  pass_ = nullptr;
  if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (pass[i].empty()) continue;
    auto& dst = grads_[i];
    if (dst.empty()) {
      dst = std::move(pass[i]);
    } else {
      for (size_t j = 0; j < dst.size(); ++j) dst[j] += pass[i][j];
    }
  }
}

const std::vector<double>* Tape::grad(const Tensor& t) const {
  if (t.tape() != this || t.node() < 0) return nullptr;
  const size_t idx = static_cast<size_t>(t.node());
  if (idx >= grads_.size() || grads_[idx].empty()) return nullptr;
  return &grads_[idx];
}

std::vector<double>& Tape::grad_buffer(int node) {
  NIESR_CHECK(pass_ != nullptr, Error, "grad_buffer outside of backward pass");
  auto& g = (*pass_)[static_cast<size_t>(node)];
  if (g.empty()) g.assign(static_cast<size_t>(nodes_[static_cast<size_t>(node)].numel), 0.0);
  return g;
}

void Tape::zero_grad() { grads_.clear(); }

Tape* common_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (t->tape() == nullptr) continue;
    if (tape == nullptr) {
      tape = t->tape();
    } else {
      NIESR_CHECK(tape == t->tape(), Error, "operands live on different tapes");
    }
  }
  return tape;
}

// --- Op implementations ----------------------------------------------------

namespace {

// Finalizes an op result: attaches to `tape` when non-null, else returns a
// plain tensor (still scanned for non-finite values).
Tensor finish(const char* op, Tape* tape, std::vector<int> shape,
              std::vector<double> data, Tape::BackwardFn backward) {
  if (tape == nullptr) {
    check_finite(op, data);
    return Tensor(std::move(shape), std::move(data));
  }
  return tape->emit(op, std::move(shape), std::move(data), std::move(backward));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  NIESR_CHECK(a.rank() == 2 && b.rank() == 2, ShapeError,
              "matmul requires rank-2 operands, got " << shape_str(a.shape())
                                                      << " and " << shape_str(b.shape()));
  NIESR_CHECK(a.dim(1) == b.dim(0), ShapeError,
              "matmul: inner dimensions differ, " << shape_str(a.shape()) << " vs "
                                                  << shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  mm_nn_accum(a.data().data(), b.data().data(), out.data(), m, k, n);

  Tape* tape = common_tape({&a, &b});
  const int an = a.node(), bn = b.node();
  return finish("matmul", tape, {m, n}, std::move(out),
                [a, b, an, bn, m, k, n](const std::vector<double>& g, Tape& t) {
                  if (an >= 0) mm_nt_accum(g.data(), b.data().data(),
                                           t.grad_buffer(an).data(), m, n, k);
                  if (bn >= 0) mm_tn_accum(a.data().data(), g.data(),
                                           t.grad_buffer(bn).data(), m, k, n);
                });
}

namespace {

Tensor binary_op(const char* name, const Tensor& a, const Tensor& b,
                 double (*fwd)(double, double),
                 // d out / d a and d out / d b at (a_i, b_i)
                 double (*da)(double, double), double (*db)(double, double)) {
  const BroadcastKind bk = broadcast_kind(a, b, name);
  const int n = std::max(a.numel(), b.numel());
  const int last = bk == BroadcastKind::kNone
                       ? 1
                       : (bk == BroadcastKind::kRightTrailing ? a.dim(a.rank() - 1)
                                                              : b.dim(b.rank() - 1));
  auto bidx = [bk, last](int i) { return bk == BroadcastKind::kNone ? i : i / last; };

  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> out(static_cast<size_t>(n));
  if (bk == BroadcastKind::kLeftTrailing) {
    for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fwd(av[static_cast<size_t>(i / last)], bv[static_cast<size_t>(i)]);
  } else {
    for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fwd(av[static_cast<size_t>(i)], bv[static_cast<size_t>(bidx(i))]);
  }

  Tape* tape = common_tape({&a, &b});
  const int an = a.node(), bn = b.node();
  std::vector<int> out_shape = (a.numel() >= b.numel()) ? a.shape() : b.shape();
  return finish(name, tape, std::move(out_shape), std::move(out),
                [a, b, an, bn, bk, last, n, da, db](const std::vector<double>& g, Tape& t) {
                  const auto& av = a.data();
                  const auto& bv = b.data();
                  if (an >= 0) {
                    auto& ga = t.grad_buffer(an);
                    for (int i = 0; i < n; ++i) {
                      const int ia = bk == BroadcastKind::kLeftTrailing ? i / last : i;
                      const int ib = bk == BroadcastKind::kRightTrailing ? i / last : i;
                      ga[static_cast<size_t>(ia)] += g[static_cast<size_t>(i)] *
                          da(av[static_cast<size_t>(ia)], bv[static_cast<size_t>(ib)]);
                    }
                  }
                  if (bn >= 0) {
                    auto& gb = t.grad_buffer(bn);
                    for (int i = 0; i < n; ++i) {
                      const int ia = bk == BroadcastKind::kLeftTrailing ? i / last : i;
                      const int ib = bk == BroadcastKind::kRightTrailing ? i / last : i;
                      gb[static_cast<size_t>(ib)] += g[static_cast<size_t>(i)] *
                          db(av[static_cast<size_t>(ia)], bv[static_cast<size_t>(ib)]);
                    }
                  }
                });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

namespace {

Tensor unary_op(const char* name, const Tensor& t, double (*fwd)(double),
                double (*deriv)(double)) {
  const int n = t.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const auto& tv = t.data();
  for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fwd(tv[static_cast<size_t>(i)]);

  Tape* tape = common_tape({&t});
  const int tn = t.node();
  return finish(name, tape, t.shape(), std::move(out),
                [t, tn, n, deriv](const std::vector<double>& g, Tape& tp) {
                  if (tn < 0) return;
                  auto& gt = tp.grad_buffer(tn);
                  const auto& tv = t.data();
                  for (int i = 0; i < n; ++i)
                    gt[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] *
                        deriv(tv[static_cast<size_t>(i)]);
                });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor tanh(const Tensor& t) {
  return unary_op(
      "tanh", t, [](double x) { return std::tanh(x); },
      [](double x) {
        const double y = std::tanh(x);
        return 1.0 - y * y;
      });
}

Tensor sigmoid(const Tensor& t) {
  return unary_op(
      "sigmoid", t, [](double x) { return stable_sigmoid(x); },
      [](double x) {
        const double y = stable_sigmoid(x);
        return y * (1.0 - y);
      });
}

Tensor exp(const Tensor& t) {
  return unary_op(
      "exp", t, [](double x) { return std::exp(x); },
      [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& t) {
  return unary_op(
      "log", t, [](double x) { return std::log(x); },
      [](double x) { return 1.0 / x; });
}

Tensor scale(const Tensor& t, double c) {
  const int n = t.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const auto& tv = t.data();
  for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = c * tv[static_cast<size_t>(i)];
  Tape* tape = common_tape({&t});
  const int tn = t.node();
  return finish("scale", tape, t.shape(), std::move(out),
                [tn, n, c](const std::vector<double>& g, Tape& tp) {
                  if (tn < 0) return;
                  auto& gt = tp.grad_buffer(tn);
                  for (int i = 0; i < n; ++i) gt[static_cast<size_t>(i)] += c * g[static_cast<size_t>(i)];
                });
}

Tensor add_rowvec(const Tensor& m, const Tensor& r) {
  NIESR_CHECK(m.rank() == 2 && r.rank() == 1 && m.dim(1) == r.dim(0), ShapeError,
              "add_rowvec: shapes " << shape_str(m.shape()) << " and "
                                    << shape_str(r.shape()));
  const int rows = m.dim(0), cols = m.dim(1);
  std::vector<double> out(m.data());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      out[static_cast<size_t>(i) * cols + j] += r.data()[static_cast<size_t>(j)];
  Tape* tape = common_tape({&m, &r});
  const int mn = m.node(), rn = r.node();
  return finish("add_rowvec", tape, m.shape(), std::move(out),
                [mn, rn, rows, cols](const std::vector<double>& g, Tape& tp) {
                  if (mn >= 0) {
                    auto& gm = tp.grad_buffer(mn);
                    for (size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
                  }
                  if (rn >= 0) {
                    auto& gr = tp.grad_buffer(rn);
                    for (int i = 0; i < rows; ++i)
                      for (int j = 0; j < cols; ++j)
                        gr[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * cols + j];
                  }
                });
}

Tensor sum(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.data()) acc += v;
  Tape* tape = common_tape({&t});
  const int tn = t.node();
  const int n = t.numel();
  return finish("sum", tape, {}, {acc},
                [tn, n](const std::vector<double>& g, Tape& tp) {
                  if (tn < 0) return;
                  auto& gt = tp.grad_buffer(tn);
                  for (int i = 0; i < n; ++i) gt[static_cast<size_t>(i)] += g[0];
                });
}

Tensor pick(const Tensor& t, int flat_index) {
  NIESR_CHECK(flat_index >= 0 && flat_index < t.numel(), ShapeError,
              "pick: index " << flat_index << " out of range for " << t.numel()
                             << " elements");
  Tape* tape = common_tape({&t});
  const int tn = t.node();
  return finish("pick", tape, {}, {t.data()[static_cast<size_t>(flat_index)]},
                [tn, flat_index](const std::vector<double>& g, Tape& tp) {
                  if (tn < 0) return;
                  tp.grad_buffer(tn)[static_cast<size_t>(flat_index)] += g[0];
                });
}

Tensor row(const Tensor& m, int r) {
  NIESR_CHECK(m.rank() == 2, ShapeError, "row: tensor must be rank 2");
  NIESR_CHECK(r >= 0 && r < m.dim(0), ShapeError,
              "row: index " << r << " out of range for " << m.dim(0) << " rows");
  const int cols = m.dim(1);
  std::vector<double> out(m.data().begin() + static_cast<size_t>(r) * cols,
                          m.data().begin() + static_cast<size_t>(r + 1) * cols);
  Tape* tape = common_tape({&m});
  const int mn = m.node();
  return finish("row", tape, {cols}, std::move(out),
                [mn, r, cols](const std::vector<double>& g, Tape& tp) {
                  if (mn < 0) return;
                  auto& gm = tp.grad_buffer(mn);
                  for (int j = 0; j < cols; ++j)
                    gm[static_cast<size_t>(r) * cols + j] += g[static_cast<size_t>(j)];
                });
}

Tensor slice_rows(const Tensor& m, int start, int n) {
  NIESR_CHECK(m.rank() == 2, ShapeError, "slice_rows: tensor must be rank 2");
  NIESR_CHECK(start >= 0 && n >= 0 && start + n <= m.dim(0), ShapeError,
              "slice_rows: range [" << start << ", " << start + n
                                    << ") out of bounds for " << m.dim(0) << " rows");
  const int cols = m.dim(1);
  std::vector<double> out(m.data().begin() + static_cast<size_t>(start) * cols,
                          m.data().begin() + static_cast<size_t>(start + n) * cols);
  Tape* tape = common_tape({&m});
  const int mn = m.node();
  return finish("slice_rows", tape, {n, cols}, std::move(out),
                [mn, start, cols](const std::vector<double>& g, Tape& tp) {
                  if (mn < 0) return;
                  auto& gm = tp.grad_buffer(mn);
                  const size_t off = static_cast<size_t>(start) * cols;
                  for (size_t i = 0; i < g.size(); ++i) gm[off + i] += g[i];
                });
}

Tensor softmax(const Tensor& v, const std::vector<uint8_t>* mask) {
  NIESR_CHECK(v.rank() == 1, ShapeError, "softmax expects a rank-1 tensor");
  const int n = v.dim(0);
  NIESR_CHECK(mask == nullptr || static_cast<int>(mask->size()) == n, ShapeError,
              "softmax: mask size mismatch");
  auto live = [mask](int i) { return mask == nullptr || (*mask)[static_cast<size_t>(i)] != 0; };

  NIESR_CHECK(n > 0, ShapeError, "softmax on empty input");
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i)
    if (live(i)) mx = std::max(mx, v.data()[static_cast<size_t>(i)]);
  NIESR_CHECK(std::isfinite(mx), Error, "softmax: all entries masked");

  std::vector<double> out(static_cast<size_t>(n), 0.0);
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!live(i)) continue;
    out[static_cast<size_t>(i)] = std::exp(v.data()[static_cast<size_t>(i)] - mx);
    z += out[static_cast<size_t>(i)];
  }
  for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] /= z;

  Tape* tape = common_tape({&v});
  const int vn = v.node();
  std::vector<uint8_t> saved_mask = mask ? *mask : std::vector<uint8_t>();
  // Save outputs for the backward Jacobian.
  std::vector<double> y = out;
  return finish("softmax", tape, v.shape(), std::move(out),
                [vn, n, y = std::move(y), saved_mask = std::move(saved_mask)](
                    const std::vector<double>& g, Tape& tp) {
                  if (vn < 0) return;
                  auto& gv = tp.grad_buffer(vn);
                  double dot = 0.0;
                  for (int i = 0; i < n; ++i) dot += g[static_cast<size_t>(i)] * y[static_cast<size_t>(i)];
                  for (int i = 0; i < n; ++i) {
                    if (!saved_mask.empty() && saved_mask[static_cast<size_t>(i)] == 0) continue;
                    gv[static_cast<size_t>(i)] += y[static_cast<size_t>(i)] * (g[static_cast<size_t>(i)] - dot);
                  }
                });
}

namespace {

void check_concat_shapes(const std::vector<Tensor>& parts, int axis) {
  NIESR_CHECK(!parts.empty(), ShapeError, "concat of zero tensors");
  NIESR_CHECK(axis == 0 || axis == 1, ShapeError, "concat: axis must be 0 or 1");
  const int r = parts[0].rank();
  NIESR_CHECK(r == 1 || r == 2, ShapeError, "concat supports rank 1 or 2");
  NIESR_CHECK(axis < r, ShapeError, "concat: axis " << axis << " out of range for rank " << r);
  for (const Tensor& p : parts) {
    NIESR_CHECK(p.rank() == r, ShapeError, "concat: mixed ranks");
    for (int d = 0; d < r; ++d) {
      if (d == axis) continue;
      NIESR_CHECK(p.dim(d) == parts[0].dim(d), ShapeError,
                  "concat: non-concat dimension " << d << " differs");
    }
  }
}

}  // namespace

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  check_concat_shapes(parts, axis);
  const int r = parts[0].rank();

  std::vector<const Tensor*> ptrs;
  for (const Tensor& p : parts) ptrs.push_back(&p);
  Tape* tape = nullptr;
  for (const Tensor& p : parts) {
    Tape* pt = common_tape({&p});
    if (pt != nullptr) {
      NIESR_CHECK(tape == nullptr || tape == pt, Error, "operands live on different tapes");
      tape = pt;
    }
  }

  std::vector<int> out_shape = parts[0].shape();
  out_shape[static_cast<size_t>(axis)] = 0;
  for (const Tensor& p : parts) out_shape[static_cast<size_t>(axis)] += p.dim(axis);

  std::vector<double> out;
  out.reserve(static_cast<size_t>(shape_numel(out_shape)));
  if (axis == 0 || r == 1) {
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  } else {
    const int rows = out_shape[0];
    for (int i = 0; i < rows; ++i) {
      for (const Tensor& p : parts) {
        const int c = p.dim(1);
        out.insert(out.end(), p.data().begin() + static_cast<size_t>(i) * c,
                   p.data().begin() + static_cast<size_t>(i + 1) * c);
      }
    }
  }

  std::vector<Tensor> saved = parts;
  return finish("concat", tape, std::move(out_shape), std::move(out),
                [saved = std::move(saved), axis, r](const std::vector<double>& g, Tape& tp) {
                  if (axis == 0 || r == 1) {
                    size_t off = 0;
                    for (const Tensor& p : saved) {
                      const size_t n = static_cast<size_t>(p.numel());
                      if (p.node() >= 0) {
                        auto& gp = tp.grad_buffer(p.node());
                        for (size_t i = 0; i < n; ++i) gp[i] += g[off + i];
                      }
                      off += n;
                    }
                  } else {
                    int total_cols = 0;
                    for (const Tensor& p : saved) total_cols += p.dim(1);
                    const int rows = saved[0].dim(0);
                    int col_off = 0;
                    for (const Tensor& p : saved) {
                      const int c = p.dim(1);
                      if (p.node() >= 0) {
                        auto& gp = tp.grad_buffer(p.node());
                        for (int i = 0; i < rows; ++i)
                          for (int j = 0; j < c; ++j)
                            gp[static_cast<size_t>(i) * c + j] +=
                                g[static_cast<size_t>(i) * total_cols + col_off + j];
                      }
                      col_off += c;
                    }
                  }
                });
}

std::vector<Tensor> split(const Tensor& t, const std::vector<int>& sizes, int axis) {
  NIESR_CHECK(axis == 0 || axis == 1, ShapeError, "split: axis must be 0 or 1");
  const int r = t.rank();
  NIESR_CHECK(r == 1 || r == 2, ShapeError, "split supports rank 1 or 2");
  NIESR_CHECK(axis < r, ShapeError, "split: axis out of range");
  int total = 0;
  for (int s : sizes) {
    NIESR_CHECK(s >= 0, ShapeError, "split: negative size");
    total += s;
  }
  NIESR_CHECK(total == t.dim(axis), ShapeError,
              "split: sizes sum to " << total << " but axis has " << t.dim(axis));

  Tape* tape = common_tape({&t});
  const int tn = t.node();
  std::vector<Tensor> outs;
  int off = 0;
  for (int s : sizes) {
    std::vector<int> shape = t.shape();
    shape[static_cast<size_t>(axis)] = s;
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    if (axis == 0 || r == 1) {
      const int inner = (r == 2) ? t.dim(1) : 1;
      std::copy(t.data().begin() + static_cast<size_t>(off) * inner,
                t.data().begin() + static_cast<size_t>(off + s) * inner, data.begin());
      const int start = off, len = s;
      outs.push_back(finish("split", tape, std::move(shape), std::move(data),
                            [tn, start, len, inner](const std::vector<double>& g, Tape& tp) {
                              if (tn < 0) return;
                              auto& gt = tp.grad_buffer(tn);
                              const size_t base = static_cast<size_t>(start) * inner;
                              for (size_t i = 0; i < static_cast<size_t>(len) * inner; ++i)
                                gt[base + i] += g[i];
                            }));
    } else {
      const int rows = t.dim(0), cols = t.dim(1);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < s; ++j)
          data[static_cast<size_t>(i) * s + j] = t.data()[static_cast<size_t>(i) * cols + off + j];
      const int start = off, len = s;
      outs.push_back(finish("split", tape, std::move(shape), std::move(data),
                            [tn, start, len, rows, cols](const std::vector<double>& g, Tape& tp) {
                              if (tn < 0) return;
                              auto& gt = tp.grad_buffer(tn);
                              for (int i = 0; i < rows; ++i)
                                for (int j = 0; j < len; ++j)
                                  gt[static_cast<size_t>(i) * cols + start + j] +=
                                      g[static_cast<size_t>(i) * len + j];
                            }));
    }
    off += s;
  }
  return outs;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  NIESR_CHECK(!rows.empty(), ShapeError, "stack_rows of zero tensors");
  const int d = rows[0].numel();
  for (const Tensor& r : rows) {
    NIESR_CHECK(r.rank() == 1 && r.numel() == d, ShapeError,
                "stack_rows: rows must be rank-1 of equal size");
  }
  Tape* tape = nullptr;
  for (const Tensor& r : rows) {
    Tape* rt = common_tape({&r});
    if (rt != nullptr) {
      NIESR_CHECK(tape == nullptr || tape == rt, Error, "operands live on different tapes");
      tape = rt;
    }
  }
  std::vector<double> out;
  out.reserve(rows.size() * static_cast<size_t>(d));
  for (const Tensor& r : rows) out.insert(out.end(), r.data().begin(), r.data().end());
  std::vector<int> node_ids;
  for (const Tensor& r : rows) node_ids.push_back(r.node());
  return finish("stack_rows", tape, {static_cast<int>(rows.size()), d}, std::move(out),
                [node_ids = std::move(node_ids), d](const std::vector<double>& g, Tape& tp) {
                  for (size_t i = 0; i < node_ids.size(); ++i) {
                    if (node_ids[i] < 0) continue;
                    auto& gr = tp.grad_buffer(node_ids[i]);
                    for (int j = 0; j < d; ++j)
                      gr[static_cast<size_t>(j)] += g[i * static_cast<size_t>(d) + static_cast<size_t>(j)];
                  }
                });
}

Tensor transpose(const Tensor& m) {
  NIESR_CHECK(m.rank() == 2, ShapeError, "transpose: tensor must be rank 2");
  const int rows = m.dim(0), cols = m.dim(1);
  std::vector<double> out(static_cast<size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      out[static_cast<size_t>(j) * rows + i] = m.data()[static_cast<size_t>(i) * cols + j];
  Tape* tape = common_tape({&m});
  const int mn = m.node();
  return finish("transpose", tape, {cols, rows}, std::move(out),
                [mn, rows, cols](const std::vector<double>& g, Tape& tp) {
                  if (mn < 0) return;
                  auto& gm = tp.grad_buffer(mn);
                  for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < cols; ++j)
                      gm[static_cast<size_t>(i) * cols + j] += g[static_cast<size_t>(j) * rows + i];
                });
}

Tensor conv1d(const Tensor& signal, const Tensor& kernels) {
  // Accept [L] or [L×1] signals.
  NIESR_CHECK(signal.rank() == 1 || (signal.rank() == 2 && signal.dim(1) == 1), ShapeError,
              "conv1d: signal must be [L] or [L×1], got " << shape_str(signal.shape()));
  NIESR_CHECK(kernels.rank() == 2, ShapeError, "conv1d: kernels must be [K×C]");
  const int len = signal.dim(0);
  NIESR_CHECK(len > 0, ShapeError, "conv1d: empty signal");
  const int k = kernels.dim(0), c = kernels.dim(1);
  // Even kernel widths behave as if one zero tap were appended; only the
  // center offset changes.
  const int k_eff = (k % 2 == 0) ? k + 1 : k;
  const int center = k_eff / 2;

  std::vector<double> out(static_cast<size_t>(len) * c, 0.0);
  const auto& sv = signal.data();
  const auto& kv = kernels.data();
  for (int t = 0; t < len; ++t) {
    for (int tap = 0; tap < k; ++tap) {
      const int src = t + tap - center;
      if (src < 0 || src >= len) continue;
      const double s = sv[static_cast<size_t>(src)];
      if (s == 0.0) continue;
      for (int ch = 0; ch < c; ++ch)
        out[static_cast<size_t>(t) * c + ch] += s * kv[static_cast<size_t>(tap) * c + ch];
    }
  }

  Tape* tape = common_tape({&signal, &kernels});
  const int sn = signal.node(), kn = kernels.node();
  return finish("conv1d", tape, {len, c}, std::move(out),
                [signal, kernels, sn, kn, len, k, c, center](const std::vector<double>& g, Tape& tp) {
                  const auto& sv = signal.data();
                  const auto& kv = kernels.data();
                  if (sn >= 0) {
                    auto& gs = tp.grad_buffer(sn);
                    for (int t = 0; t < len; ++t)
                      for (int tap = 0; tap < k; ++tap) {
                        const int src = t + tap - center;
                        if (src < 0 || src >= len) continue;
                        double acc = 0.0;
                        for (int ch = 0; ch < c; ++ch)
                          acc += g[static_cast<size_t>(t) * c + ch] * kv[static_cast<size_t>(tap) * c + ch];
                        gs[static_cast<size_t>(src)] += acc;
                      }
                  }
                  if (kn >= 0) {
                    auto& gk = tp.grad_buffer(kn);
                    for (int t = 0; t < len; ++t)
                      for (int tap = 0; tap < k; ++tap) {
                        const int src = t + tap - center;
                        if (src < 0 || src >= len) continue;
                        const double s = sv[static_cast<size_t>(src)];
                        if (s == 0.0) continue;
                        for (int ch = 0; ch < c; ++ch)
                          gk[static_cast<size_t>(tap) * c + ch] += s * g[static_cast<size_t>(t) * c + ch];
                      }
                  }
                });
}

Tensor dropout_apply(const Tensor& t, double rate, bool training, Rng& rng) {
  NIESR_CHECK(rate >= 0.0 && rate < 1.0, Error,
              "dropout rate must be in [0, 1), got " << rate);
  if (!training || rate == 0.0) {
    // Identity; still a distinct tape node so gradients route cleanly.
    Tape* tape = common_tape({&t});
    const int tn = t.node();
    if (tape == nullptr) return t;
    return tape->emit("dropout", t.shape(), t.data(),
                      [tn](const std::vector<double>& g, Tape& tp) {
                        if (tn < 0) return;
                        auto& gt = tp.grad_buffer(tn);
                        for (size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
                      });
  }
  const int n = t.numel();
  const double keep = 1.0 - rate;
  std::vector<double> mask(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    mask[static_cast<size_t>(i)] = (rng.uniform() < rate) ? 0.0 : 1.0 / keep;
  std::vector<double> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = t.data()[static_cast<size_t>(i)] * mask[static_cast<size_t>(i)];
  Tape* tape = common_tape({&t});
  const int tn = t.node();
  return finish("dropout", tape, t.shape(), std::move(out),
                [tn, mask = std::move(mask)](const std::vector<double>& g, Tape& tp) {
                  if (tn < 0) return;
                  auto& gt = tp.grad_buffer(tn);
                  for (size_t i = 0; i < g.size(); ++i) gt[i] += g[i] * mask[i];
                });
}

Tensor reshape(const Tensor& t, std::vector<int> shape) {
  NIESR_CHECK(shape_numel(shape) == t.numel(), ShapeError,
              "reshape: " << shape_str(t.shape()) << " to " << shape_str(shape)
                          << " changes element count");
  Tape* tape = common_tape({&t});
  const int tn = t.node();
  return finish("reshape", tape, std::move(shape), t.data(),
                [tn](const std::vector<double>& g, Tape& tp) {
                  if (tn < 0) return;
                  auto& gt = tp.grad_buffer(tn);
                  for (size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
                });
}

Tensor matvec(const Tensor& a, const Tensor& x) {
  NIESR_CHECK(a.rank() == 2 && x.rank() == 1 && a.dim(1) == x.dim(0), ShapeError,
              "matvec: shapes " << shape_str(a.shape()) << " and " << shape_str(x.shape()));
  const int m = a.dim(0), k = a.dim(1);
  std::vector<double> out(static_cast<size_t>(m), 0.0);
  const auto& av = a.data();
  const auto& xv = x.data();
  for (int i = 0; i < m; ++i) {
    const double* arow = av.data() + static_cast<size_t>(i) * k;
    double acc = 0.0;
    for (int j = 0; j < k; ++j) acc += arow[j] * xv[static_cast<size_t>(j)];
    out[static_cast<size_t>(i)] = acc;
  }
  Tape* tape = common_tape({&a, &x});
  const int an = a.node(), xn = x.node();
  return finish("matvec", tape, {m}, std::move(out),
                [a, x, an, xn, m, k](const std::vector<double>& g, Tape& tp) {
                  if (an >= 0) {
                    auto& ga = tp.grad_buffer(an);
                    const auto& xv = x.data();
                    for (int i = 0; i < m; ++i) {
                      const double gi = g[static_cast<size_t>(i)];
                      if (gi == 0.0) continue;
                      double* garow = ga.data() + static_cast<size_t>(i) * k;
                      for (int j = 0; j < k; ++j) garow[j] += gi * xv[static_cast<size_t>(j)];
                    }
                  }
                  if (xn >= 0) {
                    auto& gx = tp.grad_buffer(xn);
                    const auto& av = a.data();
                    for (int i = 0; i < m; ++i) {
                      const double gi = g[static_cast<size_t>(i)];
                      if (gi == 0.0) continue;
                      const double* arow = av.data() + static_cast<size_t>(i) * k;
                      for (int j = 0; j < k; ++j) gx[static_cast<size_t>(j)] += gi * arow[j];
                    }
                  }
                });
}

// --- Gradient checking ------------------------------------------------------

double check_gradient(const std::function<Tensor(Tape&, const Tensor&)>& f,
                      const Tensor& point, double eps, int sample_coords, Rng* rng,
                      double rel_floor) {
  std::vector<double> analytic(static_cast<size_t>(point.numel()), 0.0);
  {
    Tape tape;
    Tensor leaf = tape.leaf(point);
    Tensor loss = f(tape, leaf);
    NIESR_CHECK(loss.numel() == 1, Error, "check_gradient: f must be scalar-valued");
    NIESR_CHECK(std::isfinite(loss.item()), NonFiniteError,
                "check_gradient: f is non-finite at the point");
    tape.backward(loss);
    if (const auto* g = tape.grad(leaf)) analytic = *g;
  }

  auto eval_at = [&f](const Tensor& p) {
    Tape tape;
    Tensor leaf = tape.leaf(p);
    const double v = f(tape, leaf).item();
    NIESR_CHECK(std::isfinite(v), NonFiniteError,
                "check_gradient: f is non-finite at a perturbed point");
    return v;
  };

  std::vector<int> coords;
  if (sample_coords > 0 && sample_coords < point.numel()) {
    NIESR_CHECK(rng != nullptr, Error, "check_gradient: sampling requires an rng");
    for (int i = 0; i < sample_coords; ++i) coords.push_back(rng->uniform_int(point.numel()));
    std::sort(coords.begin(), coords.end());
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  } else {
    coords.resize(static_cast<size_t>(point.numel()));
    std::iota(coords.begin(), coords.end(), 0);
  }

  double max_rel = 0.0;
  for (int c : coords) {
    Tensor plus(point.shape(), point.data());
    Tensor minus(point.shape(), point.data());
    plus.mutable_data()[static_cast<size_t>(c)] += eps;
    minus.mutable_data()[static_cast<size_t>(c)] -= eps;
    const double numeric = (eval_at(plus) - eval_at(minus)) / (2.0 * eps);
    const double a = analytic[static_cast<size_t>(c)];
    const double denom = std::max({rel_floor, std::abs(a), std::abs(numeric)});
    max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
  }
  return max_rel;
}

}  // namespace niesr
