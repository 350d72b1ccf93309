#include "takeup/quadrature.hpp"

#include "takeup/types.hpp"

#include <algorithm>
#include <cmath>

namespace takeup {

double simpson(const std::function<double(double)>& f, double a, double b, int panels) {
  if (panels < 1) throw input_error("simpson: panels must be >= 1");
  if (a == b) return 0.0;
  const int n = 2 * panels;  // half-step count; nodes 0..n
  const double h = (b - a) / n;
  double s_odd = 0.0, s_even = 0.0;
  for (int i = 1; i < n; ++i) {
    const double x = a + h * i;
    if (i & 1)
      s_odd += f(x);
    else
      s_even += f(x);
  }
  return (h / 3.0) * (f(a) + f(b) + 4.0 * s_odd + 2.0 * s_even);
}

double integrate(const std::function<double(double)>& f, double a, double b) {
  if (a == b) return 0.0;
  constexpr int kStartPanels = 2048;
  constexpr int kMaxPanels = 65536;
  constexpr double kRelTol = 1e-9;
  double prev = simpson(f, a, b, kStartPanels);
  for (int panels = 2 * kStartPanels; panels <= kMaxPanels; panels *= 2) {
    const double cur = simpson(f, a, b, panels);
    const double scale = std::max({1.0, std::fabs(cur), std::fabs(prev)});
    if (std::fabs(cur - prev) < kRelTol * scale) return cur;
    prev = cur;
  }
  throw numerical_error("integrate: Simpson refinement did not settle by 65536 panels");
}

}  // namespace takeup
