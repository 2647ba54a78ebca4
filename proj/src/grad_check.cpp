#include "milkit/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace milkit {

GradCheckReport grad_check(const Objective& fn, ParamStore& params, double eps, double tol,
                           int max_coords_per_param, Rng& rng) {
  if (eps <= 0.0) throw InputError("grad_check: eps must be positive");
  GradCheckReport report;
  report.tol = tol;

  params.zero_grads();
  const double base = fn(params, true);
  if (!std::isfinite(base)) throw Error("grad_check: objective returned a non-finite value");

  // Snapshot the analytic gradient before finite-difference evaluations
  // overwrite the slots.
  std::map<std::string, Tensor> analytic;
  for (const auto& [name, slot] : params) analytic.emplace(name, slot.grad);

  for (auto& [name, slot] : params) {
    const std::size_t n = slot.value.size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords_per_param > 0 && n > static_cast<std::size_t>(max_coords_per_param)) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(max_coords_per_param));
    }
    for (std::size_t idx : coords) {
      const double saved = slot.value.at(idx);
      slot.value.at(idx) = saved + eps;
      const double up = fn(params, false);
      slot.value.at(idx) = saved - eps;
      const double down = fn(params, false);
      slot.value.at(idx) = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw Error("grad_check: non-finite objective while perturbing " + name);
      const double fd = (up - down) / (2.0 * eps);
      const double an = analytic.at(name).at(idx);
      const double abs_err = std::fabs(an - fd);
      const double rel_err = abs_err / (std::fabs(an) + std::fabs(fd) + 1e-8);
      ++report.coords_checked;
      if (rel_err > report.max_rel_err) {
        report.max_rel_err = rel_err;
        report.max_abs_err = abs_err;
        report.worst_param = name;
        report.worst_index = idx;
      }
    }
  }
  params.zero_grads();
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace milkit
