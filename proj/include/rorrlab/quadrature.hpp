#ifndef RORRLAB_QUADRATURE_HPP
#define RORRLAB_QUADRATURE_HPP

#include <functional>

namespace rorrlab {

struct QuadratureResult {
  double value = 0.0;
  double error_estimate = 0.0;
  int intervals = 0;
};

// Adaptive 7/15-point Gauss-Kronrod on [a, b]. Subdivides until each
// piece's Kronrod-Gauss difference is within its share of `tolerance`;
// throws NumericError when max_depth is exhausted.
QuadratureResult integrate(const std::function<double(double)>& f, double a, double b,
                           double tolerance = 1e-10, int max_depth = 40);

}  // namespace rorrlab

#endif
