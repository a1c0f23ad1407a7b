// niesr/attention.cc

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

#include "niesr/attention.h"

namespace niesr {

AttentionParams::AttentionParams(ParamSet& params, const std::string& prefix, int attn,
                                 int state, int enc, int ch, int kernel, Player player,
                                 Rng& rng)
    : attn_dim(attn), state_dim(state), enc_dim(enc), channels(ch), kernel_size(kernel) {
  w = params.create(prefix + ".w", uniform_init({attn}, attn, rng), player);
  b = params.create(prefix + ".b", Tensor({attn}, 0.0), player);
  W = params.create(prefix + ".W", uniform_init({attn, state}, state, rng), player);
  V = params.create(prefix + ".V", uniform_init({attn, enc}, enc, rng), player);
  U = params.create(prefix + ".U", uniform_init({attn, ch}, ch, rng), player);
  F = params.create(prefix + ".F", uniform_init({kernel, ch}, kernel, rng), player);
}

Tensor attention_energies(const AttentionParams& p, Tape* tape, const Tensor& state,
                          const Tensor& enc, const Tensor& alpha_prev,
                          const std::vector<uint8_t>* mask) {
  NIESR_CHECK(enc.rank() == 2 && enc.dim(1) == p.enc_dim, ShapeError,
              "attention: encoder frames must be [L×" << p.enc_dim << "]");
  const int len = enc.dim(0);
  NIESR_CHECK(len > 0, ShapeError, "attention over zero encoder frames");
  NIESR_CHECK(alpha_prev.numel() == len, ShapeError,
              "attention: alignment size " << alpha_prev.numel() << " != " << len);

  // W s_i + b, shared across frames.
  Tensor state_part = add(matvec(p.W->use(tape), state), p.b->use(tape));
  // V h_j for every frame: [L×A].
  Tensor content = matmul(enc, transpose(p.V->use(tape)));
  // U (F*alpha)_j for every frame: [L×A].
  Tensor smoothed = conv1d(alpha_prev, p.F->use(tape));
  Tensor location = matmul(smoothed, transpose(p.U->use(tape)));
  Tensor pre = niesr::tanh(add_rowvec(add(content, location), state_part));
  Tensor energies = matvec(pre, p.w->use(tape));

  if (mask != nullptr) {
    Tensor keep({len});
    Tensor sentinel({len});
    for (int j = 0; j < len; ++j) {
      const bool live = (*mask)[static_cast<size_t>(j)] != 0;
      keep.mutable_data()[static_cast<size_t>(j)] = live ? 1.0 : 0.0;
      sentinel.mutable_data()[static_cast<size_t>(j)] = live ? 0.0 : -1e9;
    }
    energies = add(mul(energies, keep), sentinel);
  }
  return energies;
}

std::pair<Tensor, Tensor> attention_context(Tape* tape, const Tensor& energies,
                                            const Tensor& enc,
                                            const std::vector<uint8_t>* mask) {
  (void)tape;
  Tensor alpha = softmax(energies, mask);
  Tensor context = matvec(transpose(enc), alpha);
  return {alpha, context};
}

DecoderParams::DecoderParams(ParamSet& params, const std::string& prefix, int embed_dim,
                             int enc, int lstm_d, int attn_dim, int channels,
                             int kernel_size, int vocab, Player player, Rng& rng)
    : lstm_dim(lstm_d),
      enc_dim(enc),
      vocab_size(vocab),
      lstm(params, prefix + ".lstm", embed_dim + enc, lstm_d, player, rng),
      attn(params, prefix + ".attn", attn_dim, lstm_d, enc, channels, kernel_size,
           player, rng),
      char_dist(params, prefix + ".chardist", lstm_d + enc, vocab, player, rng) {
  NIESR_CHECK(vocab > 0, ShapeError, "decoder: vocabulary size must be positive");
}

DecoderState DecoderParams::initial_state(int enc_len,
                                          const std::vector<uint8_t>* mask) const {
  DecoderState st;
  st.s_h = Tensor({lstm_dim}, 0.0);
  st.s_c = Tensor({lstm_dim}, 0.0);
  st.c_prev = Tensor({enc_dim}, 0.0);
  // Uniform alignment over the valid frames.
  Tensor alpha({enc_len}, 0.0);
  int valid = 0;
  for (int j = 0; j < enc_len; ++j)
    if (mask == nullptr || (*mask)[static_cast<size_t>(j)] != 0) ++valid;
  NIESR_CHECK(valid > 0, Error, "decoder: no valid encoder frames");
  for (int j = 0; j < enc_len; ++j)
    if (mask == nullptr || (*mask)[static_cast<size_t>(j)] != 0)
      alpha.mutable_data()[static_cast<size_t>(j)] = 1.0 / valid;
  st.alpha_prev = alpha;
  return st;
}

std::pair<Tensor, DecoderState> decoder_step(const DecoderParams& p, Tape* tape,
                                             const Tensor& y_prev_embed,
                                             const DecoderState& state,
                                             const Tensor& enc,
                                             const std::vector<uint8_t>* mask) {
  Tensor lstm_in = concat({y_prev_embed, state.c_prev}, 0);
  auto [s_h, s_c] = p.lstm.step(tape, lstm_in, state.s_h, state.s_c);
  Tensor energies = attention_energies(p.attn, tape, s_h, enc, state.alpha_prev, mask);
  auto [alpha, context] = attention_context(tape, energies, enc, mask);
  Tensor logits = p.char_dist.apply(tape, concat({s_h, context}, 0));
  Tensor dist = softmax(logits);
  DecoderState next{s_h, s_c, alpha, context};
  return {dist, next};
}

}  // namespace niesr
