#pragma once

#include <functional>
#include <string>

#include "milkit/param_store.hpp"

namespace milkit {

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  int coords_checked = 0;
  double tol = 0.0;
};

// Scalar objective over a ParamStore. When fill_grads is true the callee must
// leave its tape gradient in the store's grad slots.
using Objective = std::function<double(ParamStore&, bool fill_grads)>;

// Central finite differences (f(p+eps)-f(p-eps))/(2 eps) against the tape
// gradient, per coordinate. Tensors larger than max_coords_per_param are
// checked on a random coordinate subset. Relative error per coordinate is
// |a-f| / (|a| + |f| + 1e-8).
GradCheckReport grad_check(const Objective& fn, ParamStore& params, double eps, double tol,
                           int max_coords_per_param, Rng& rng);

}  // namespace milkit
