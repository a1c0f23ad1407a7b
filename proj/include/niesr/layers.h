// niesr/layers.h

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

#ifndef NIESR_LAYERS_H_
#define NIESR_LAYERS_H_

#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "niesr/tensor.h"

namespace niesr {

class ParamSet;

// Which adversarial player a parameter belongs to. Models without the
// two-player game put everything in P1.
enum class Player { kP1, kP2 };

// A named trainable tensor. Obtain the tape-attached view through use(); the
// same parameter used twice on one tape shares a single leaf node so
// gradients accumulate.
class Param {
 public:
  Param(std::string name, Tensor value, Player player, ParamSet* owner)
      : name_(std::move(name)), value_(std::move(value)), player_(player), owner_(owner) {}

  // Leaf on `tape` (or a plain constant view when tape is null). Records the
  // read when the owning set is tracing accesses.
  Tensor use(Tape* tape);

  const std::string& name() const { return name_; }
  Player player() const { return player_; }
  Tensor& value() { return value_; }
  const Tensor& value() const { return value_; }

  // Marks an optimizer write; recorded when the owning set traces writes.
  void note_write();

 private:
  std::string name_;
  Tensor value_;
  Player player_;
  ParamSet* owner_;
  uint64_t cached_tape_id_ = 0;
  Tensor cached_leaf_;
};

// Named collection of trainable tensors partitioned into players, with
// optional read/write access tracing.
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet&) = delete;
  ParamSet& operator=(const ParamSet&) = delete;

  std::shared_ptr<Param> create(const std::string& name, Tensor init, Player player);
  std::shared_ptr<Param> find(const std::string& name) const;  // nullptr if absent
  const std::vector<std::shared_ptr<Param>>& items() const { return items_; }
  std::vector<std::shared_ptr<Param>> player_params(Player p) const;
  size_t total_elements() const;

  void start_read_trace();
  std::set<std::string> stop_read_trace();
  void start_write_trace();
  std::set<std::string> stop_write_trace();

  void note_read(const std::string& name);
  void note_write(const std::string& name);

 private:
  std::vector<std::shared_ptr<Param>> items_;
  bool tracing_reads_ = false;
  bool tracing_writes_ = false;
  std::set<std::string> reads_;
  std::set<std::string> writes_;
};

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
Tensor uniform_init(std::vector<int> shape, int fan_in, Rng& rng);

// Single LSTM cell. Gate order in the stacked weights is
// (input, forget, cell, output); the forget-gate bias starts at 1.
struct LstmCell {
  LstmCell(ParamSet& params, const std::string& prefix, int input_dim, int hidden_dim,
           Player player, Rng& rng);

  // One recurrence step: gates from x and h_prev, new cell and hidden state.
  std::pair<Tensor, Tensor> step(Tape* tape, const Tensor& x, const Tensor& h_prev,
                                 const Tensor& c_prev) const;

  int input_dim;
  int hidden_dim;
  std::shared_ptr<Param> wx;  // [4H×I]
  std::shared_ptr<Param> wh;  // [4H×H]
  std::shared_ptr<Param> b;   // [4H]
};

// Bidirectional LSTM over a sequence. Produces [T×2H]; frames at or beyond
// `length` are exactly zero and receive no gradient.
struct Blstm {
  Blstm(ParamSet& params, const std::string& prefix, int input_dim, int hidden_dim,
        Player player, Rng& rng);

  Tensor forward(Tape* tape, const Tensor& seq, int length) const;

  LstmCell fwd;
  LstmCell bwd;
};

// Projects pairs of consecutive frames to single frames, halving the
// sequence length. Odd-length inputs are zero-padded to even first.
struct Subsample {
  Subsample(ParamSet& params, const std::string& prefix, int frame_dim, int out_dim,
            Player player, Rng& rng);

  Tensor apply(Tape* tape, const Tensor& seq) const;

  int frame_dim;
  int out_dim;
  std::shared_ptr<Param> proj;  // [out×2·frame]
  std::shared_ptr<Param> bias;  // [out]
};

// Doubles sequence length: a BLSTM over the fused frames, each output frame
// split into two halves, each half sent through the shared projection.
struct Upsample {
  Upsample(ParamSet& params, const std::string& prefix, int input_dim, int lstm_dim,
           int out_dim, Player player, Rng& rng);

  Tensor apply(Tape* tape, const Tensor& fused) const;

  int out_dim;
  Blstm blstm;
  std::shared_ptr<Param> proj;  // [out×H]
  std::shared_ptr<Param> bias;  // [out]
};

// Affine map on the trailing dimension of a rank-1 or rank-2 input.
struct Linear {
  Linear(ParamSet& params, const std::string& prefix, int input_dim, int output_dim,
         Player player, Rng& rng);

  Tensor apply(Tape* tape, const Tensor& x) const;

  int input_dim;
  int output_dim;
  std::shared_ptr<Param> w;  // [O×I]
  std::shared_ptr<Param> b;  // [O]
};

// Identity forward; backward multiplies the incoming gradient by -scale.
Tensor gradient_reversal(const Tensor& x, double scale = 1.0);

}  // namespace niesr

#endif  // NIESR_LAYERS_H_
