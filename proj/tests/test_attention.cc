// tests/test_attention.cc

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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "niesr/attention.h"
#include "test_util.h"

using namespace niesr;
using testutil::param_grad_max_rel_err;
using testutil::random_tensor;

namespace {

void zero_params(ParamSet& ps) {
  for (auto& p : ps.items())
    for (auto& v : p->value().mutable_data()) v = 0.0;
}

Tensor uniform_alpha(int len) { return Tensor({len}, 1.0 / len); }

}  // namespace

TEST_CASE("energies are content-independent with zero params") {
  ParamSet ps;
  Rng rng(1);
  AttentionParams attn(ps, "a", 3, 2, 4, 2, 3, Player::kP1, rng);
  zero_params(ps);
  Tensor enc = random_tensor({5, 4}, rng);
  Tensor state = random_tensor({2}, rng);
  Tensor e = attention_energies(attn, nullptr, state, enc, uniform_alpha(5), nullptr);
  REQUIRE(e.numel() == 5);
  for (double v : e.data()) CHECK(v == e.data()[0]);
}

TEST_CASE("zero w makes every energy zero regardless of inputs") {
  ParamSet ps;
  Rng rng(2);
  AttentionParams attn(ps, "a", 3, 2, 4, 2, 3, Player::kP1, rng);
  for (auto& v : attn.w->value().mutable_data()) v = 0.0;
  Tensor enc = random_tensor({4, 4}, rng);
  Tensor state = random_tensor({2}, rng);
  Tensor e = attention_energies(attn, nullptr, state, enc, uniform_alpha(4), nullptr);
  for (double v : e.data()) CHECK(v == 0.0);
}

TEST_CASE("hand-computed two-frame scalar attention") {
  ParamSet ps;
  Rng rng(3);
  // A=1, S=1, H=1, C=1, K=1
  AttentionParams attn(ps, "a", 1, 1, 1, 1, 1, Player::kP1, rng);
  attn.w->value() = Tensor({1}, {0.7});
  attn.b->value() = Tensor({1}, {0.1});
  attn.W->value() = Tensor({1, 1}, {0.5});
  attn.V->value() = Tensor({1, 1}, {-0.4});
  attn.U->value() = Tensor({1, 1}, {0.9});
  attn.F->value() = Tensor({1, 1}, {0.3});

  const double s = 0.6, h1 = 1.2, h2 = -0.8, a1 = 0.25, a2 = 0.75;
  Tensor enc({2, 1}, {h1, h2});
  Tensor alpha({2}, {a1, a2});
  Tensor e = attention_energies(attn, nullptr, Tensor({1}, {s}), enc, alpha, nullptr);

  // K=1 means the convolution is a pointwise scaling by the single tap.
  const double e1 = 0.7 * std::tanh(0.5 * s - 0.4 * h1 + 0.9 * (0.3 * a1) + 0.1);
  const double e2 = 0.7 * std::tanh(0.5 * s - 0.4 * h2 + 0.9 * (0.3 * a2) + 0.1);
  CHECK(e.data()[0] == doctest::Approx(e1).epsilon(1e-12));
  CHECK(e.data()[1] == doctest::Approx(e2).epsilon(1e-12));
}

TEST_CASE("attention context") {
  Rng rng(5);
  Tensor enc = random_tensor({2, 3}, rng);

  SUBCASE("equal energies average the frames") {
    Tensor e({2}, {1.7, 1.7});
    auto [alpha, c] = attention_context(nullptr, e, enc, nullptr);
    CHECK(alpha.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(alpha.data()[1] == doctest::Approx(0.5).epsilon(1e-12));
    for (int d = 0; d < 3; ++d) {
      const double mean = 0.5 * (enc.data()[static_cast<size_t>(d)] +
                                 enc.data()[static_cast<size_t>(3 + d)]);
      CHECK(c.data()[static_cast<size_t>(d)] == doctest::Approx(mean).epsilon(1e-12));
    }
  }

  SUBCASE("single unmasked frame takes all the mass") {
    Tensor e({2}, {0.3, 5.0});
    std::vector<uint8_t> mask{1, 0};
    auto [alpha, c] = attention_context(nullptr, e, enc, &mask);
    CHECK(alpha.data()[0] == 1.0);
    CHECK(alpha.data()[1] == 0.0);
    for (int d = 0; d < 3; ++d)
      CHECK(c.data()[static_cast<size_t>(d)] == doctest::Approx(enc.data()[static_cast<size_t>(d)]));
  }

  SUBCASE("alignment sums to one on random inputs") {
    for (int trial = 0; trial < 5; ++trial) {
      Tensor e = random_tensor({7}, rng, -3, 3);
      Tensor frames = random_tensor({7, 3}, rng);
      auto [alpha, c] = attention_context(nullptr, e, frames, nullptr);
      double total = 0.0;
      for (double v : alpha.data()) total += v;
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }

  SUBCASE("all-masked throws") {
    Tensor e({2}, {0.0, 0.0});
    std::vector<uint8_t> none{0, 0};
    CHECK_THROWS_AS(attention_context(nullptr, e, enc, &none), Error);
  }
}

TEST_CASE("decoder step: distribution contract and uniformity at zero params") {
  ParamSet ps;
  Rng rng(7);
  const int vocab = 6;
  DecoderParams dec(ps, "dec", 3, 4, 3, 3, 2, 3, vocab, Player::kP1, rng);
  Tensor enc = random_tensor({5, 4}, rng);
  Tensor embed = random_tensor({3}, rng);

  DecoderState st = dec.initial_state(5, nullptr);
  auto [dist, next] = decoder_step(dec, nullptr, embed, st, enc, nullptr);
  double total = 0.0;
  for (double v : dist.data()) total += v;
  CHECK(std::abs(total - 1.0) < 1e-12);
  CHECK(dist.numel() == vocab);

  zero_params(ps);
  auto [udist, unext] = decoder_step(dec, nullptr, embed, st, enc, nullptr);
  for (double v : udist.data()) CHECK(v == doctest::Approx(1.0 / vocab).epsilon(1e-12));
}

TEST_CASE("decoder step: three-step teacher-forced unroll gradcheck") {
  ParamSet ps;
  Rng rng(11);
  DecoderParams dec(ps, "dec", 2, 4, 3, 3, 2, 3, 5, Player::kP1, rng);
  Tensor enc = random_tensor({4, 4}, rng);
  std::vector<Tensor> embeds = {random_tensor({2}, rng), random_tensor({2}, rng),
                                random_tensor({2}, rng)};
  const int targets[3] = {1, 4, 0};

  auto loss_fn = [&](Tape& tape) {
    DecoderState st = dec.initial_state(4, nullptr);
    Tensor loss = Tensor::scalar(0.0);
    for (int i = 0; i < 3; ++i) {
      auto [dist, next] = decoder_step(dec, &tape, embeds[static_cast<size_t>(i)], st, enc, nullptr);
      loss = add(loss, scale(niesr::log(pick(dist, targets[i])), -1.0));
      st = next;
    }
    return loss;
  };
  CHECK(param_grad_max_rel_err(loss_fn, ps.items(), 1e-5) < 1e-4);

  // and through the encoder frames
  double err = check_gradient(
      [&](Tape& tape, const Tensor& frames) {
        DecoderState st = dec.initial_state(4, nullptr);
        Tensor loss = Tensor::scalar(0.0);
        for (int i = 0; i < 3; ++i) {
          auto [dist, next] = decoder_step(dec, &tape, embeds[static_cast<size_t>(i)], st, frames, nullptr);
          loss = add(loss, scale(niesr::log(pick(dist, targets[i])), -1.0));
          st = next;
        }
        return loss;
      },
      enc, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("masked encoder frames cannot influence the decoder") {
  ParamSet ps;
  Rng rng(13);
  DecoderParams dec(ps, "dec", 2, 3, 3, 3, 2, 3, 5, Player::kP1, rng);
  const int len = 5;
  std::vector<uint8_t> mask{1, 1, 1, 0, 0};
  Tensor enc = random_tensor({len, 3}, rng);
  Tensor embed = random_tensor({2}, rng);

  auto run = [&](const Tensor& frames) {
    DecoderState st = dec.initial_state(len, &mask);
    std::vector<double> outputs;
    for (int i = 0; i < 2; ++i) {
      auto [dist, next] = decoder_step(dec, nullptr, embed, st, frames, &mask);
      outputs.insert(outputs.end(), dist.data().begin(), dist.data().end());
      outputs.insert(outputs.end(), next.alpha_prev.data().begin(), next.alpha_prev.data().end());
      st = next;
    }
    return outputs;
  };

  Tensor perturbed(enc.shape(), enc.data());
  perturbed.mutable_data()[3 * 3 + 1] += 10.0;  // inside masked frame 3
  perturbed.mutable_data()[4 * 3 + 2] -= 5.0;   // inside masked frame 4
  CHECK(run(enc) == run(perturbed));
}

TEST_CASE("zero conv kernels degrade to pure content attention") {
  ParamSet ps;
  Rng rng(17);
  DecoderParams dec(ps, "dec", 2, 3, 3, 3, 2, 3, 5, Player::kP1, rng);
  for (auto& v : dec.attn.F->value().mutable_data()) v = 0.0;

  const int len = 4;
  Tensor enc = random_tensor({len, 3}, rng);
  Tensor state = random_tensor({3}, rng);

  // Resampling the previous alignment must not change the energies.
  Tensor a1({len}, {0.1, 0.2, 0.3, 0.4});
  Tensor a2({len}, {0.7, 0.1, 0.1, 0.1});
  Tensor e1 = attention_energies(dec.attn, nullptr, state, enc, a1, nullptr);
  Tensor e2 = attention_energies(dec.attn, nullptr, state, enc, a2, nullptr);
  CHECK(e1.data() == e2.data());
}

TEST_CASE("initial decoder state distributes alignment over valid frames") {
  ParamSet ps;
  Rng rng(19);
  DecoderParams dec(ps, "dec", 2, 3, 3, 3, 2, 3, 5, Player::kP1, rng);
  std::vector<uint8_t> mask{1, 0, 1, 0};
  DecoderState st = dec.initial_state(4, &mask);
  CHECK(st.alpha_prev.data() == std::vector<double>{0.5, 0.0, 0.5, 0.0});
  for (double v : st.c_prev.data()) CHECK(v == 0.0);
}
