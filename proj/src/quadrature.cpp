#include "rorrlab/quadrature.hpp"

#include "rorrlab/error.hpp"

#include <array>
#include <cmath>

namespace rorrlab {

namespace {

constexpr std::array<double, 8> kKronrodNodes = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};

constexpr std::array<double, 8> kKronrodWeights = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};

// Gauss weights for the odd-indexed Kronrod nodes (0.949.., 0.741.., 0.405.., 0).
constexpr std::array<double, 4> kGaussWeights = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

std::pair<double, double> kronrod15(const std::function<double(double)>& f, double a, double b) {
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  const double fc = f(mid);
  double kronrod = kKronrodWeights[7] * fc;
  double gauss = kGaussWeights[3] * fc;
  for (std::size_t i = 0; i < 7; ++i) {
    const double dx = half * kKronrodNodes[i];
    const double pair = f(mid - dx) + f(mid + dx);
    kronrod += kKronrodWeights[i] * pair;
    if (i % 2 == 1) gauss += kGaussWeights[i / 2] * pair;
  }
  return {kronrod * half, std::abs((kronrod - gauss) * half)};
}

void refine(const std::function<double(double)>& f, double a, double b, double tolerance,
            int depth, QuadratureResult& acc) {
  const auto [value, err] = kronrod15(f, a, b);
  if (err <= tolerance || (b - a) <= 1e-300) {
    acc.value += value;
    acc.error_estimate += err;
    ++acc.intervals;
    return;
  }
  if (depth == 0) {
    throw NumericError("simlab", "quadrature did not converge on [" + std::to_string(a) + ", " +
                                     std::to_string(b) + "]");
  }
  const double mid = 0.5 * (a + b);
  refine(f, a, mid, 0.5 * tolerance, depth - 1, acc);
  refine(f, mid, b, 0.5 * tolerance, depth - 1, acc);
}

}  // namespace

QuadratureResult integrate(const std::function<double(double)>& f, double a, double b,
                           double tolerance, int max_depth) {
  QuadratureResult acc;
  refine(f, a, b, tolerance, max_depth, acc);
  if (!std::isfinite(acc.value)) throw NumericError("simlab", "quadrature produced a non-finite value");
  return acc;
}

}  // namespace rorrlab
