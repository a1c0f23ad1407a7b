// niesr/attention.h

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

#ifndef NIESR_ATTENTION_H_
#define NIESR_ATTENTION_H_

#include <string>
#include <utility>
#include <vector>

#include "niesr/layers.h"

namespace niesr {

// Parameters of the hybrid location-aware content-based attention. Energies
// depend on the decoder state, the encoder frames, and the previous alignment
// smoothed by a learned convolution.
struct AttentionParams {
  AttentionParams(ParamSet& params, const std::string& prefix, int attn_dim,
                  int state_dim, int enc_dim, int channels, int kernel_size,
                  Player player, Rng& rng);

  int attn_dim;
  int state_dim;
  int enc_dim;
  int channels;
  int kernel_size;
  std::shared_ptr<Param> w;  // [A]
  std::shared_ptr<Param> b;  // [A]
  std::shared_ptr<Param> W;  // [A×S]
  std::shared_ptr<Param> V;  // [A×H]
  std::shared_ptr<Param> U;  // [A×C]
  std::shared_ptr<Param> F;  // [K×C]
};

// Per-frame attention energies over L encoder frames. Masked frames receive a
// -1e9 additive sentinel so no gradient reaches them through the energies.
// `mask` may be null (all frames valid).
Tensor attention_energies(const AttentionParams& p, Tape* tape, const Tensor& state,
                          const Tensor& enc, const Tensor& alpha_prev,
                          const std::vector<uint8_t>* mask);

// Alignment (masked softmax of the energies, exact zeros on masked frames)
// and attention context c = sum_j alpha_j h_j.
std::pair<Tensor, Tensor> attention_context(Tape* tape, const Tensor& energies,
                                            const Tensor& enc,
                                            const std::vector<uint8_t>* mask);

// State threaded through decoder steps.
struct DecoderState {
  Tensor s_h;         // transducer LSTM hidden
  Tensor s_c;         // transducer LSTM cell
  Tensor alpha_prev;  // [L], sums to 1 over valid frames
  Tensor c_prev;      // attention context
};

// Attention-equipped decoder: input LSTM over [y_embed, c_prev], attention
// over the encoder frames, character distribution from [s_i, c_i].
struct DecoderParams {
  DecoderParams(ParamSet& params, const std::string& prefix, int embed_dim,
                int enc_dim, int lstm_dim, int attn_dim, int channels,
                int kernel_size, int vocab_size, Player player, Rng& rng);

  DecoderState initial_state(int enc_len, const std::vector<uint8_t>* mask) const;

  int lstm_dim;
  int enc_dim;
  int vocab_size;
  LstmCell lstm;
  AttentionParams attn;
  Linear char_dist;
};

// One teacher-forced or free-running decoder step. Returns the next-character
// distribution (sums to 1 over the vocabulary) and the updated state.
std::pair<Tensor, DecoderState> decoder_step(const DecoderParams& p, Tape* tape,
                                             const Tensor& y_prev_embed,
                                             const DecoderState& state,
                                             const Tensor& enc,
                                             const std::vector<uint8_t>* mask);

}  // namespace niesr

#endif  // NIESR_ATTENTION_H_
