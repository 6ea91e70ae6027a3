#pragma once

// Central finite differences, kept independent of every library gradient path.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace fd {

/// d f / d x_i by central differences, perturbing `x` in place and restoring it.
inline std::vector<double> gradient(std::span<double> x, const std::function<double()>& f,
                                    double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Fourth-order central stencil. Rounding noise scales with eps / h, so the
/// larger default step resolves gradients whose norm is near 1e-5.
inline std::vector<double> gradient4(std::span<double> x, const std::function<double()>& f,
                                     double h = 1e-4) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    double v[4];
    const double steps[4] = {2.0, 1.0, -1.0, -2.0};
    for (int k = 0; k < 4; ++k) {
      x[i] = saved + steps[k] * h;
      v[k] = f();
    }
    x[i] = saved;
    g[i] = (-v[0] + 8.0 * v[1] - 8.0 * v[2] + v[3]) / (12.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor)
inline double relative_error(std::span<const double> a, std::span<const double> b,
                             double floor = 1e-8) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace fd
