#pragma once

#include <functional>

namespace takeup {

/// Composite Simpson rule with a fixed panel count (panels >= 1).
double simpson(const std::function<double(double)>& f, double a, double b, int panels);

/// Simpson quadrature with refinement: starts at 2048 panels and doubles until
/// two successive values agree to 1e-9 relative (typically one doubling).
/// Throws numerical_error if agreement is not reached by 65536 panels.
double integrate(const std::function<double(double)>& f, double a, double b);

}  // namespace takeup
