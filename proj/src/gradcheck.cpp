#include "stsam/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "stsam/rng.hpp"

namespace stsam {

GradCheckReport finite_diff_check(const std::function<double()>& f,
                                  std::span<Tensor* const> params, double step,
                                  std::size_t coords_per_tensor,
                                  std::uint64_t seed) {
  if (!(step > 0)) throw std::invalid_argument("finite_diff_check: step <= 0");
  std::mt19937_64 rng(seed);
  GradCheckReport report;
  for (Tensor* param : params) {
    auto values = param->values_mut();
    const auto analytic = param->grad();
    for (std::size_t c = 0; c < coords_per_tensor; ++c) {
      const std::size_t idx = static_cast<std::size_t>(
          bounded_u64(rng, static_cast<std::uint64_t>(values.size())));
      const real_t saved = values[idx];
      values[idx] = saved + static_cast<real_t>(step);
      const double f_plus = f();
      values[idx] = saved - static_cast<real_t>(step);
      const double f_minus = f();
      values[idx] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        report.finite = false;
        report.max_rel_err = std::numeric_limits<double>::infinity();
        return report;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double a =
          analytic.empty() ? 0.0 : static_cast<double>(analytic[idx]);
      const double denom =
          std::max({std::abs(a), std::abs(numeric), 1e-12});
      report.max_rel_err =
          std::max(report.max_rel_err, std::abs(numeric - a) / denom);
      ++report.coords;
    }
  }
  return report;
}

}  // namespace stsam
