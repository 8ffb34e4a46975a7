#include "coxfrail/quadrature.hpp"

#include "coxfrail/error.hpp"

#include <cmath>

namespace coxfrail {

QuadratureRule gauss_hermite(int order) {
  if (order < 1) throw_input("Gauss-Hermite order must be positive");
  constexpr double kEps = 1e-15;
  constexpr double kPiM4 = 0.7511255444649425;  // pi^(-1/4)
  constexpr int kMaxIt = 100;

  const int n = order;
  QuadratureRule rule{Vector(n), Vector(n)};
  const int m = (n + 1) / 2;
  double z = 0.0;
  for (int i = 0; i < m; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
    } else if (i == 1) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * rule.nodes(0);
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * rule.nodes(1);
    } else {
      z = 2.0 * z - rule.nodes(i - 2);
    }
    double pp = 0.0;
    int it = 0;
    for (; it < kMaxIt; ++it) {
      // Orthonormal Hermite recurrence.
      double p1 = kPiM4;
      double p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= kEps * std::max(1.0, std::abs(z))) break;
    }
    if (it == kMaxIt) throw_numerical("Gauss-Hermite root iteration did not converge");
    rule.nodes(i) = z;
    rule.nodes(n - 1 - i) = -z;
    rule.weights(i) = 2.0 / (pp * pp);
    rule.weights(n - 1 - i) = rule.weights(i);
  }
  return rule;
}

}  // namespace coxfrail
