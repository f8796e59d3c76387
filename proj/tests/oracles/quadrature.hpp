#pragma once

// Adaptive Simpson quadrature and central differences for test oracles.

#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

namespace detail {
inline double simpson(const std::function<double(double)>& f, double a, double b, double eps,
                      double fa, double fm, double fb, double whole, int depth) {
  const double m = 0.5 * (a + b);
  const double flm = f(0.5 * (a + m)), frm = f(0.5 * (m + b));
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * eps) {
    return left + right + (left + right - whole) / 15.0;
  }
  return simpson(f, a, m, eps / 2, fa, flm, fm, left, depth - 1) +
         simpson(f, m, b, eps / 2, fm, frm, fb, right, depth - 1);
}
}  // namespace detail

inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double eps = 1e-11) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  return detail::simpson(f, a, b, eps, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), 40);
}

inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = x[i];
    x[i] = s + h;
    const double up = f(x);
    x[i] = s - h;
    const double dn = f(x);
    x[i] = s;
    g[i] = (up - dn) / (2 * h);
  }
  return g;
}

}  // namespace oracle
