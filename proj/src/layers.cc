// niesr/layers.cc

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

#include "niesr/layers.h"

#include <algorithm>
#include <cmath>

namespace niesr {

// --- Param / ParamSet --------------------------------------------------------

Tensor Param::use(Tape* tape) {
  if (owner_ != nullptr) owner_->note_read(name_);
  if (tape == nullptr) return value_;
  if (cached_tape_id_ == tape->id()) return cached_leaf_;
  cached_leaf_ = tape->leaf(value_);
  cached_tape_id_ = tape->id();
  return cached_leaf_;
}

void Param::note_write() {
  if (owner_ != nullptr) owner_->note_write(name_);
  // The cached leaf aliases value_, but its tape is stale after an update.
  cached_tape_id_ = 0;
  cached_leaf_ = Tensor();
}

std::shared_ptr<Param> ParamSet::create(const std::string& name, Tensor init, Player player) {
  NIESR_CHECK(find(name) == nullptr, Error, "duplicate parameter name '" << name << "'");
  auto p = std::make_shared<Param>(name, std::move(init), player, this);
  items_.push_back(p);
  return p;
}

std::shared_ptr<Param> ParamSet::find(const std::string& name) const {
  for (const auto& p : items_)
    if (p->name() == name) return p;
  return nullptr;
}

std::vector<std::shared_ptr<Param>> ParamSet::player_params(Player pl) const {
  std::vector<std::shared_ptr<Param>> out;
  for (const auto& p : items_)
    if (p->player() == pl) out.push_back(p);
  return out;
}

size_t ParamSet::total_elements() const {
  size_t n = 0;
  for (const auto& p : items_) n += static_cast<size_t>(p->value().numel());
  return n;
}

void ParamSet::start_read_trace() {
  tracing_reads_ = true;
  reads_.clear();
}

std::set<std::string> ParamSet::stop_read_trace() {
  tracing_reads_ = false;
  return std::move(reads_);
}

void ParamSet::start_write_trace() {
  tracing_writes_ = true;
  writes_.clear();
}

std::set<std::string> ParamSet::stop_write_trace() {
  tracing_writes_ = false;
  return std::move(writes_);
}

void ParamSet::note_read(const std::string& name) {
  if (tracing_reads_) reads_.insert(name);
}

void ParamSet::note_write(const std::string& name) {
  if (tracing_writes_) writes_.insert(name);
}

Tensor uniform_init(std::vector<int> shape, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  return t;
}

// --- LstmCell -----------------------------------------------------------------

LstmCell::LstmCell(ParamSet& params, const std::string& prefix, int input, int hidden,
                   Player player, Rng& rng)
    : input_dim(input), hidden_dim(hidden) {
  wx = params.create(prefix + ".wx", uniform_init({4 * hidden, input}, input, rng), player);
  wh = params.create(prefix + ".wh", uniform_init({4 * hidden, hidden}, hidden, rng), player);
  Tensor bias({4 * hidden}, 0.0);
  // forget-gate bias = 1
  for (int i = hidden; i < 2 * hidden; ++i) bias.mutable_data()[static_cast<size_t>(i)] = 1.0;
  b = params.create(prefix + ".b", std::move(bias), player);
}

std::pair<Tensor, Tensor> LstmCell::step(Tape* tape, const Tensor& x, const Tensor& h_prev,
                                         const Tensor& c_prev) const {
  NIESR_CHECK(x.rank() == 1 && x.dim(0) == input_dim, ShapeError,
              "lstm step: input has size " << x.numel() << ", expected " << input_dim);
  NIESR_CHECK(h_prev.numel() == hidden_dim && c_prev.numel() == hidden_dim, ShapeError,
              "lstm step: state size mismatch");
  Tensor gates = add(add(matvec(wx->use(tape), x), matvec(wh->use(tape), h_prev)),
                     b->use(tape));
  auto parts = split(gates, {hidden_dim, hidden_dim, hidden_dim, hidden_dim}, 0);
  Tensor i = sigmoid(parts[0]);
  Tensor f = sigmoid(parts[1]);
  Tensor g = niesr::tanh(parts[2]);
  Tensor o = sigmoid(parts[3]);
  Tensor c = add(mul(f, c_prev), mul(i, g));
  Tensor h = mul(o, niesr::tanh(c));
  return {h, c};
}

// --- Blstm --------------------------------------------------------------------

Blstm::Blstm(ParamSet& params, const std::string& prefix, int input, int hidden,
             Player player, Rng& rng)
    : fwd(params, prefix + ".fwd", input, hidden, player, rng),
      bwd(params, prefix + ".bwd", input, hidden, player, rng) {}

Tensor Blstm::forward(Tape* tape, const Tensor& seq, int length) const {
  NIESR_CHECK(seq.rank() == 2, ShapeError, "blstm: sequence must be [T×I]");
  const int total = seq.dim(0);
  NIESR_CHECK(length > 0, ShapeError, "blstm: zero-length sequence");
  NIESR_CHECK(length <= total, ShapeError,
              "blstm: length " << length << " exceeds " << total << " frames");
  const int hidden = fwd.hidden_dim;

  std::vector<Tensor> fwd_h(static_cast<size_t>(length));
  {
    Tensor h({hidden}, 0.0), c({hidden}, 0.0);
    for (int t = 0; t < length; ++t) {
      auto hc = fwd.step(tape, row(seq, t), h, c);
      h = hc.first;
      c = hc.second;
      fwd_h[static_cast<size_t>(t)] = h;
    }
  }
  std::vector<Tensor> bwd_h(static_cast<size_t>(length));
  {
    Tensor h({hidden}, 0.0), c({hidden}, 0.0);
    for (int t = length - 1; t >= 0; --t) {
      auto hc = bwd.step(tape, row(seq, t), h, c);
      h = hc.first;
      c = hc.second;
      bwd_h[static_cast<size_t>(t)] = h;
    }
  }

  std::vector<Tensor> rows;
  rows.reserve(static_cast<size_t>(total));
  for (int t = 0; t < length; ++t)
    rows.push_back(concat({fwd_h[static_cast<size_t>(t)], bwd_h[static_cast<size_t>(t)]}, 0));
  // Padding frames: exact zeros off the tape, so they receive no gradient.
  for (int t = length; t < total; ++t) rows.push_back(Tensor({2 * hidden}, 0.0));
  return stack_rows(rows);
}

// --- Subsample ------------------------------------------------------------------

Subsample::Subsample(ParamSet& params, const std::string& prefix, int frame, int out,
                     Player player, Rng& rng)
    : frame_dim(frame), out_dim(out) {
  proj = params.create(prefix + ".proj", uniform_init({out, 2 * frame}, 2 * frame, rng), player);
  bias = params.create(prefix + ".bias", Tensor({out}, 0.0), player);
}

Tensor Subsample::apply(Tape* tape, const Tensor& seq) const {
  NIESR_CHECK(seq.rank() == 2 && seq.dim(1) == frame_dim, ShapeError,
              "subsample: expected [T×" << frame_dim << "]");
  const int total = seq.dim(0);
  NIESR_CHECK(total > 0, ShapeError, "subsample: empty sequence");
  Tensor p = proj->use(tape);
  Tensor bv = bias->use(tape);
  std::vector<Tensor> outs;
  outs.reserve(static_cast<size_t>((total + 1) / 2));
  for (int i = 0; 2 * i < total; ++i) {
    Tensor first = row(seq, 2 * i);
    Tensor pair = (2 * i + 1 < total)
                      ? concat({first, row(seq, 2 * i + 1)}, 0)
                      : concat({first, Tensor({frame_dim}, 0.0)}, 0);
    outs.push_back(add(matvec(p, pair), bv));
  }
  return stack_rows(outs);
}

// --- Upsample -------------------------------------------------------------------

Upsample::Upsample(ParamSet& params, const std::string& prefix, int input, int lstm_dim,
                   int out, Player player, Rng& rng)
    : out_dim(out),
      blstm(params, prefix + ".blstm", input, lstm_dim, player, rng) {
  proj = params.create(prefix + ".proj", uniform_init({out, lstm_dim}, lstm_dim, rng), player);
  bias = params.create(prefix + ".bias", Tensor({out}, 0.0), player);
}

Tensor Upsample::apply(Tape* tape, const Tensor& fused) const {
  const int len = fused.dim(0);
  Tensor states = blstm.forward(tape, fused, len);  // [L×2H]
  const int wide = states.dim(1);
  NIESR_CHECK(wide % 2 == 0, ShapeError, "upsample: frame vector size must be even");
  const int half = wide / 2;
  Tensor p = proj->use(tape);
  Tensor bv = bias->use(tape);
  std::vector<Tensor> outs;
  outs.reserve(static_cast<size_t>(2 * len));
  for (int i = 0; i < len; ++i) {
    auto halves = split(row(states, i), {half, half}, 0);
    outs.push_back(add(matvec(p, halves[0]), bv));
    outs.push_back(add(matvec(p, halves[1]), bv));
  }
  return stack_rows(outs);
}

// --- Linear ---------------------------------------------------------------------

Linear::Linear(ParamSet& params, const std::string& prefix, int input, int output,
               Player player, Rng& rng)
    : input_dim(input), output_dim(output) {
  w = params.create(prefix + ".w", uniform_init({output, input}, input, rng), player);
  b = params.create(prefix + ".b", Tensor({output}, 0.0), player);
}

Tensor Linear::apply(Tape* tape, const Tensor& x) const {
  Tensor wt = w->use(tape);
  Tensor bv = b->use(tape);
  if (x.rank() == 1) {
    NIESR_CHECK(x.dim(0) == input_dim, ShapeError,
                "linear: input size " << x.dim(0) << ", expected " << input_dim);
    return add(matvec(wt, x), bv);
  }
  NIESR_CHECK(x.rank() == 2 && x.dim(1) == input_dim, ShapeError,
              "linear: input shape mismatch, trailing dim must be " << input_dim);
  return add_rowvec(matmul(x, transpose(wt)), bv);
}

// --- Gradient reversal ------------------------------------------------------------

Tensor gradient_reversal(const Tensor& x, double scale) {
  NIESR_CHECK(scale > 0.0, Error, "gradient_reversal: scale must be positive");
  Tape* tape = common_tape({&x});
  if (tape == nullptr) return x;
  const int xn = x.node();
  return tape->emit("gradient_reversal", x.shape(), x.data(),
                    [xn, scale](const std::vector<double>& g, Tape& tp) {
                      if (xn < 0) return;
                      auto& gx = tp.grad_buffer(xn);
                      for (size_t i = 0; i < g.size(); ++i) gx[i] -= scale * g[i];
                    });
}

}  // namespace niesr
