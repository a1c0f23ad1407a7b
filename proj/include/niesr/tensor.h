// niesr/tensor.h

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

#ifndef NIESR_TENSOR_H_
#define NIESR_TENSOR_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "niesr/common.h"
#include "niesr/rng.h"

namespace niesr {

class Tape;

// Row-major f64 value array, optionally attached to a tape node. Copies are
// cheap handles sharing the underlying buffer.
class Tensor {
 public:
  Tensor() : data_(std::make_shared<std::vector<double>>()) {}
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int numel() const { return static_cast<int>(data_->size()); }

  const std::vector<double>& data() const { return *data_; }
  std::vector<double>& mutable_data() { return *data_; }

  double operator[](int flat) const { return (*data_)[static_cast<size_t>(flat)]; }
  // Value of a scalar (numel-1) tensor.
  double item() const;

  bool requires_grad() const { return node_ >= 0; }
  int node() const { return node_; }
  Tape* tape() const { return tape_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  friend class Tape;
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// Append-only reverse-mode tape. Node order is topological by construction;
// backward() walks it once in reverse.
class Tape {
 public:
  // Accumulates gradients of the node's inputs given the node's own gradient.
  using BackwardFn = std::function<void(const std::vector<double>& out_grad, Tape& tape)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers `value` as a differentiable leaf (e.g. a parameter).
  Tensor leaf(const Tensor& value);

  // Appends a node computed by an op. `data` is scanned for non-finite values
  // and the op name is reported if any are found.
  Tensor emit(const char* op, std::vector<int> shape, std::vector<double> data,
              BackwardFn backward);

  // Reverse sweep from a scalar loss. Repeated calls accumulate into the
  // existing gradient buffers.
  void backward(const Tensor& loss);

  // Gradient of a tensor on this tape, or nullptr if none was produced.
  const std::vector<double>* grad(const Tensor& t) const;

  // Gradient buffer for a node, created zero-filled on demand. For use by
  // backward functions.
  std::vector<double>& grad_buffer(int node);

  void zero_grad();

  size_t num_nodes() const { return nodes_.size(); }
  uint64_t id() const { return id_; }

 private:
  struct Node {
    const char* op;
    int numel;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  // Buffers of the in-flight backward pass; folded into grads_ afterwards.
  std::vector<std::vector<double>>* pass_ = nullptr;
  uint64_t id_;
};

// --- Op helpers -------------------------------------------------------------

// Tape shared by the given tensors; nullptr if none is attached. Throws if two
// distinct tapes are mixed.
Tape* common_tape(std::initializer_list<const Tensor*> ts);

// Throws NonFiniteError naming `op` if data holds a NaN or Inf.
void check_finite(const char* op, const std::vector<double>& data);

// --- Primitive ops ----------------------------------------------------------

// Matrix product [m×k]·[k×n] → [m×n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise binary ops. Shapes must be equal, or one operand may have a
// trailing dimension of 1 which is broadcast across the other's trailing dim.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Elementwise unary ops.
Tensor tanh(const Tensor& t);
Tensor sigmoid(const Tensor& t);
Tensor exp(const Tensor& t);
Tensor log(const Tensor& t);

// Multiply by a compile-time constant.
Tensor scale(const Tensor& t, double c);

// Adds a row vector [n] to every row of [m×n].
Tensor add_rowvec(const Tensor& m, const Tensor& r);

// Sum of all elements → scalar.
Tensor sum(const Tensor& t);

// Single element by flat index → scalar.
Tensor pick(const Tensor& t, int flat_index);

// Row r of a matrix → [cols]. Also the embedding lookup.
Tensor row(const Tensor& m, int r);

// Rows [start, start+n) of a matrix → [n×cols].
Tensor slice_rows(const Tensor& m, int start, int n);

// Stable masked softmax over a vector. Masked entries (mask[i]==0) are exactly
// zero in the output. Throws if every entry is masked.
Tensor softmax(const Tensor& v, const std::vector<uint8_t>* mask = nullptr);

// Concatenate along axis 0 or 1 (rank 1 or 2 tensors).
Tensor concat(const std::vector<Tensor>& parts, int axis);

// Inverse of concat: split into chunks of the given sizes along axis.
std::vector<Tensor> split(const Tensor& t, const std::vector<int>& sizes, int axis);

// Assemble a matrix [n×d] from n rank-1 rows of size d.
Tensor stack_rows(const std::vector<Tensor>& rows);

// Rank-2 transpose.
Tensor transpose(const Tensor& m);

// Same-length zero-padded cross-correlation of a 1-D signal [L] with C kernels
// [K×C] → [L×C]. Even K is padded to the next odd width with a zero tap.
Tensor conv1d(const Tensor& signal, const Tensor& kernels);

// Inverted dropout: at training time each element is zeroed with probability
// `rate` and survivors are scaled by 1/(1-rate); in eval mode the identity.
Tensor dropout_apply(const Tensor& t, double rate, bool training, Rng& rng);

// View with a new shape (same element count). Data is shared.
Tensor reshape(const Tensor& t, std::vector<int> shape);

// [m×k]·[k] → [m].
Tensor matvec(const Tensor& a, const Tensor& x);

// --- Gradient checking ------------------------------------------------------

// Central-difference check of d f / d point against the tape gradient.
// `f` must build a scalar loss from the (tape-attached) point tensor.
// Returns the max over checked coordinates of
//   |analytic - numeric| / max(|analytic|, |numeric|, rel_floor).
// If sample_coords > 0 only that many coordinates are checked, sampled with
// `rng` (which must then be non-null).
double check_gradient(const std::function<Tensor(Tape&, const Tensor&)>& f,
                      const Tensor& point, double eps = 1e-5,
                      int sample_coords = 0, Rng* rng = nullptr,
                      double rel_floor = 1e-2);

}  // namespace niesr

#endif  // NIESR_TENSOR_H_
