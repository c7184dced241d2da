#ifndef RORRLAB_TESTS_PLM_HPP
#define RORRLAB_TESTS_PLM_HPP

#include "rorrlab/dataset.hpp"

#include <cstdint>

namespace rorrlab::testing {

// Y = a + b T + 2 sin(pi x1) + x2^2 + e, with x1, x2 ~ U(0, 1) and
// T | x ~ Poisson(exp(0.3 + 1.2 x1 + 0.5 x2)).
struct PlmOptions {
  Index n = 1000;
  std::uint64_t seed = 1;
  double intercept = 0.5;
  double slope = 1.5;
  double noise_sd = 1.0;
};

ObservationTable confounded_plm(const PlmOptions& options);

double plm_g(double x1, double x2);
double plm_h(double x1, double x2);

}  // namespace rorrlab::testing

#endif
