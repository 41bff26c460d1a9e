#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "uspg/tape.hpp"

namespace uspg::testing {

inline Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t{s};
  for (int i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

/// Builds a scalar loss from tape-registered copies of `inputs`.
using LossBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

struct FdResult {
  double max_rel = 0.0;
  int checked = 0;
};

/// Central-difference check of every input coordinate against tape gradients.
/// Relative error uses max(|fd|, |analytic|, floor) as the denominator.
inline FdResult fd_check(const std::vector<Tensor>& inputs, const LossBuilder& build,
                         double eps = 1e-5, double denom_floor = 1e-6) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& x : inputs) vars.push_back(tape.param(x));
  tape.backward(build(tape, vars));

  auto eval = [&](size_t p, int i, double delta) {
    std::vector<Tensor> in = inputs;
    in[p][i] += delta;
    Tape t2;
    std::vector<Var> vs;
    for (const Tensor& x : in) vs.push_back(t2.param(x));
    return t2.value(build(t2, vs)).item();
  };

  FdResult r;
  for (size_t p = 0; p < inputs.size(); ++p) {
    const Tensor& g = tape.grad(vars[p]);
    for (int i = 0; i < g.size(); ++i) {
      const double fd = (eval(p, i, eps) - eval(p, i, -eps)) / (2.0 * eps);
      const double rel = std::fabs(fd - g[i]) /
                         std::max({std::fabs(fd), std::fabs(g[i]), denom_floor});
      r.max_rel = std::max(r.max_rel, rel);
      ++r.checked;
    }
  }
  return r;
}

}  // namespace uspg::testing
