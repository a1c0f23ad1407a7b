// tests/test_util.h

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

#ifndef NIESR_TESTS_TEST_UTIL_H_
#define NIESR_TESTS_TEST_UTIL_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "niesr/layers.h"
#include "niesr/tensor.h"

namespace niesr {
namespace testutil {

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

// Finite-difference check of d loss / d param for a loss that reads the
// parameter through Param::use on the tape it is given. When
// sample_coords > 0, only that many coordinates per parameter are checked.
inline double param_grad_max_rel_err(
    const std::function<Tensor(Tape&)>& loss_fn,
    const std::vector<std::shared_ptr<Param>>& params, double eps = 1e-5,
    int sample_coords = 0, Rng* rng = nullptr, double rel_floor = 1e-2) {
  double worst = 0.0;
  for (const auto& param : params) {
    std::vector<double> analytic(static_cast<size_t>(param->value().numel()), 0.0);
    {
      Tape tape;
      Tensor loss = loss_fn(tape);
      tape.backward(loss);
      Tensor leaf = param->use(&tape);
      if (const auto* g = tape.grad(leaf)) analytic = *g;
    }
    std::vector<int> coords;
    if (sample_coords > 0 && sample_coords < param->value().numel()) {
      for (int i = 0; i < sample_coords; ++i)
        coords.push_back(rng->uniform_int(param->value().numel()));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    } else {
      coords.resize(static_cast<size_t>(param->value().numel()));
      for (size_t i = 0; i < coords.size(); ++i) coords[i] = static_cast<int>(i);
    }
    auto& data = param->value().mutable_data();
    for (int c : coords) {
      const double saved = data[static_cast<size_t>(c)];
      data[static_cast<size_t>(c)] = saved + eps;
      double fp;
      {
        Tape tape;
        fp = loss_fn(tape).item();
      }
      data[static_cast<size_t>(c)] = saved - eps;
      double fm;
      {
        Tape tape;
        fm = loss_fn(tape).item();
      }
      data[static_cast<size_t>(c)] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[static_cast<size_t>(c)];
      const double denom = std::max({rel_floor, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace testutil
}  // namespace niesr

#endif  // NIESR_TESTS_TEST_UTIL_H_
