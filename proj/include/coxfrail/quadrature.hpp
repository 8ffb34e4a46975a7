#pragma once

#include "coxfrail/data_model.hpp"

namespace coxfrail {

struct QuadratureRule {
  Vector nodes;
  Vector weights;
};

// Gauss-Hermite rule for integrals of the form  int exp(-x^2) f(x) dx.
QuadratureRule gauss_hermite(int order);

}  // namespace coxfrail
