#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "beliefnet/nn.hpp"
#include "beliefnet/tape.hpp"

namespace testutil {

using beliefnet::Rng;
namespace ad = beliefnet::ad;

// Relative error with a small floor so near-zero gradient pairs compare on
// an absolute scale.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-2});
}

// Central-difference gradient check of `value()` against the analytic grads
// already accumulated in each Param::grad. Returns the worst relative error.
inline double fd_check_store(ad::ParamStore& store, const std::function<double()>& value,
                             double eps = 1e-5) {
  double worst = 0.0;
  for (const auto& p : store.all()) {
    for (size_t i = 0; i < p->value.size(); ++i) {
      double save = p->value[i];
      p->value[i] = save + eps;
      double hi = value();
      p->value[i] = save - eps;
      double lo = value();
      p->value[i] = save;
      double fd = (hi - lo) / (2.0 * eps);
      double analytic = i < p->grad.size() ? p->grad[i] : 0.0;
      worst = std::max(worst, rel_err(analytic, fd));
    }
  }
  return worst;
}

inline void fill_random(ad::Param& p, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (double& v : p.value) v = rng.uniform(lo, hi);
}

// Random values bounded away from zero, for inputs feeding kinked ops.
inline void fill_random_away_from_zero(ad::Param& p, Rng& rng, double min_mag = 0.1,
                                       double max_mag = 1.0) {
  for (double& v : p.value) {
    double mag = rng.uniform(min_mag, max_mag);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
}

// Worst finite-difference error over every differentiable op kind, exercised
// on random small tensors across `seeds` seeds. Shared by the unit suite and
// the acceptance gate.
double op_gradient_suite(int seeds);

}  // namespace testutil
