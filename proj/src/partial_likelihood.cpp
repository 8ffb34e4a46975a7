#include "coxfrail/partial_likelihood.hpp"

#include "coxfrail/error.hpp"
#include "coxfrail/quadrature.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace coxfrail {

namespace {

constexpr double kGammaFloor = 1e-10;

void check_dims(const ModelParams& params, const SurvivalDataset& data, const FrailtyState& frailty) {
  if (params.beta.size() != data.n_fixed())
    throw_input("beta has length " + std::to_string(params.beta.size()) + ", data has " +
                std::to_string(data.n_fixed()) + " covariates");
  if (frailty.n_clusters() != data.n_clusters() || frailty.b.cols() != data.n_frailty())
    throw_input("frailty state does not match the dataset dimensions");
  if (params.gamma.dim() != data.n_frailty())
    throw_input("frailty parameter dimension does not match the frailty design");
}

void check_interior(const FrailtyParam& gamma) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gamma.sigma(), Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < kGammaFloor)
    throw_numerical("frailty variance at the boundary of the parameter space");
}

}  // namespace

double log_frailty_density(const FrailtyParam& gamma, const Eigen::Ref<const Vector>& b) {
  const Eigen::Index f = gamma.dim();
  if (b.size() != f) throw_input("frailty vector length does not match its distribution");
  constexpr double kLog2Pi = 1.8378770664093453;
  if (f == 1) {
    const double v = gamma.sigma()(0, 0);
    return -0.5 * (kLog2Pi + std::log(v) + b(0) * b(0) / v);
  }
  Eigen::LLT<Matrix> llt(gamma.sigma());
  if (llt.info() != Eigen::Success) throw_numerical("frailty covariance is not positive definite");
  const Vector y = llt.matrixL().solve(b);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(f) * kLog2Pi + logdet + y.squaredNorm());
}

double log_frailty_prior(const FrailtyParam& gamma, const FrailtyState& frailty) {
  const Eigen::Index f = gamma.dim();
  if (frailty.b.cols() != f) throw_input("frailty state does not match its distribution");
  constexpr double kLog2Pi = 1.8378770664093453;
  const auto n = static_cast<double>(frailty.n_clusters());
  Eigen::LLT<Matrix> llt(gamma.sigma());
  if (llt.info() != Eigen::Success) throw_numerical("frailty covariance is not positive definite");
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const Matrix y = llt.matrixL().solve(frailty.b.transpose());
  return -0.5 * (n * (static_cast<double>(f) * kLog2Pi + logdet) + y.squaredNorm());
}

Matrix frailty_moment(const FrailtyState& frailty) {
  return frailty.b.transpose() * frailty.b;
}

Vector frailty_offsets(const SurvivalDataset& data, const FrailtyState& frailty) {
  if (frailty.n_clusters() != data.n_clusters() || frailty.b.cols() != data.n_frailty())
    throw_input("frailty state does not match the dataset dimensions");
  Vector out(static_cast<Eigen::Index>(data.n_individuals()));
  const auto& w = data.w();
  for (std::size_t i = 0; i < data.n_clusters(); ++i) {
    const auto bi = frailty.b.row(static_cast<Eigen::Index>(i));
    for (std::size_t j = data.cluster_begin(i); j < data.cluster_end(i); ++j) {
      const auto r = static_cast<Eigen::Index>(j);
      out(r) = w.row(r).dot(bi);
    }
  }
  return out;
}

CoxDerivatives cox_partial(const SurvivalDataset& data, const RiskSetIndex& index,
                           const Vector& beta, const Vector& offset, int order) {
  const Eigen::Index nb = data.n_fixed();
  const auto n = static_cast<Eigen::Index>(data.n_individuals());
  if (beta.size() != nb || offset.size() != n) throw_input("cox_partial: dimension mismatch");
  const auto& z = data.z();

  Vector eta = offset;
  if (nb > 0) eta.noalias() += z * beta;

  CoxDerivatives out;
  if (order >= 1) out.grad = Vector::Zero(nb);
  if (order >= 2) out.hess = Matrix::Zero(nb, nb);

  // Running sums scaled by exp(-m), m = max eta seen so far in the risk set.
  double m = -std::numeric_limits<double>::infinity();
  double s0 = 0.0;
  Vector s1 = Vector::Zero(nb);
  Matrix s2 = Matrix::Zero(nb, nb);

  auto e = static_cast<long>(index.n_event_times()) - 1;
  for (std::size_t p = data.n_individuals(); p-- > 0;) {
    const auto j = static_cast<Eigen::Index>(index.order[p]);
    const double x = eta(j);
    if (x > m) {
      if (s0 > 0.0) {
        const double sc = std::exp(m - x);
        s0 *= sc;
        if (order >= 1) s1 *= sc;
        if (order >= 2) s2 *= sc;
      }
      m = x;
    }
    const double r = std::exp(x - m);
    s0 += r;
    if (order >= 1) {
      for (Eigen::Index a = 0; a < nb; ++a) {
        const double za = r * z(j, a);
        s1(a) += za;
        if (order >= 2)
          for (Eigen::Index c = 0; c <= a; ++c) s2(a, c) += za * z(j, c);
      }
    }
    while (e >= 0 && index.risk_start[static_cast<std::size_t>(e)] == p) {
      const auto ue = static_cast<std::size_t>(e);
      const auto d = static_cast<double>(index.n_deaths(ue));
      for (std::size_t k : index.events_at(ue)) {
        const auto kk = static_cast<Eigen::Index>(k);
        out.value += eta(kk);
        if (order >= 1) out.grad += z.row(kk).transpose();
      }
      out.value -= d * (std::log(s0) + m);
      if (order >= 1) {
        const Vector zbar = s1 / s0;
        out.grad -= d * zbar;
        if (order >= 2) {
          for (Eigen::Index a = 0; a < nb; ++a)
            for (Eigen::Index c = 0; c <= a; ++c)
              out.hess(a, c) -= d * (s2(a, c) / s0 - zbar(a) * zbar(c));
        }
      }
      --e;
    }
  }
  if (order >= 2) out.hess = out.hess.selfadjointView<Eigen::Lower>();
  return out;
}

LogLikParts log_complete_partial(const ModelParams& params, const SurvivalDataset& data,
                                 const RiskSetIndex& index, const FrailtyState& frailty) {
  check_dims(params, data, frailty);
  LogLikParts parts;
  parts.prior_term = log_frailty_prior(params.gamma, frailty);
  parts.partial_term =
      cox_partial(data, index, params.beta, frailty_offsets(data, frailty), 0).value;
  parts.total = parts.partial_term + parts.prior_term;
  return parts;
}

Vector grad_beta(const ModelParams& params, const SurvivalDataset& data,
                 const RiskSetIndex& index, const FrailtyState& frailty) {
  check_dims(params, data, frailty);
  return cox_partial(data, index, params.beta, frailty_offsets(data, frailty), 1).grad;
}

Vector grad_gamma_from_moment(const FrailtyParam& gamma, const Matrix& moment, double n_clusters) {
  check_interior(gamma);
  const Matrix inv = gamma.sigma().inverse();
  const Matrix isi = inv * moment * inv;
  const auto basis = covariance_basis(gamma.kind(), gamma.dim());
  Vector g(static_cast<Eigen::Index>(basis.size()));
  for (std::size_t a = 0; a < basis.size(); ++a) {
    const auto& ea = basis[a];
    g(static_cast<Eigen::Index>(a)) =
        -0.5 * n_clusters * (inv.cwiseProduct(ea)).sum() + 0.5 * (isi.cwiseProduct(ea)).sum();
  }
  return g;
}

Matrix hessian_gamma_from_moment(const FrailtyParam& gamma, const Matrix& moment, double n_clusters) {
  check_interior(gamma);
  const Matrix inv = gamma.sigma().inverse();
  const auto basis = covariance_basis(gamma.kind(), gamma.dim());
  const auto c = static_cast<Eigen::Index>(basis.size());
  std::vector<Matrix> ie;
  for (const auto& ea : basis) ie.push_back(inv * ea);
  const Matrix is = inv * moment;
  Matrix h(c, c);
  for (Eigen::Index a = 0; a < c; ++a) {
    for (Eigen::Index b = 0; b <= a; ++b) {
      const Matrix ab = ie[static_cast<std::size_t>(a)] * ie[static_cast<std::size_t>(b)];
      const Matrix ba = ie[static_cast<std::size_t>(b)] * ie[static_cast<std::size_t>(a)];
      const double v = 0.5 * n_clusters * ab.trace() - 0.5 * ((ab * is).trace() + (ba * is).trace());
      h(a, b) = v;
      h(b, a) = v;
    }
  }
  return h;
}

Vector grad_gamma(const ModelParams& params, const FrailtyState& frailty) {
  if (frailty.b.cols() != params.gamma.dim()) throw_input("grad_gamma: dimension mismatch");
  return grad_gamma_from_moment(params.gamma, frailty_moment(frailty),
                                static_cast<double>(frailty.n_clusters()));
}

Matrix hessian_gamma(const ModelParams& params, const FrailtyState& frailty) {
  if (frailty.b.cols() != params.gamma.dim()) throw_input("hessian_gamma: dimension mismatch");
  return hessian_gamma_from_moment(params.gamma, frailty_moment(frailty),
                                   static_cast<double>(frailty.n_clusters()));
}

Vector score_theta(const ModelParams& params, const SurvivalDataset& data,
                   const RiskSetIndex& index, const FrailtyState& frailty) {
  Vector out(params.size());
  out << grad_beta(params, data, index, frailty), grad_gamma(params, frailty);
  return out;
}

Matrix hessian_theta(const ModelParams& params, const SurvivalDataset& data,
                     const RiskSetIndex& index, const FrailtyState& frailty) {
  check_dims(params, data, frailty);
  const Eigen::Index nb = params.beta.size();
  const Eigen::Index c = params.gamma.n_params();
  Matrix h = Matrix::Zero(nb + c, nb + c);
  h.topLeftCorner(nb, nb) =
      cox_partial(data, index, params.beta, frailty_offsets(data, frailty), 2).hess;
  h.bottomRightCorner(c, c) = hessian_gamma(params, frailty);
  return h;
}

double log_marginal_partial_oracle(const ModelParams& params, const SurvivalDataset& data,
                                   const RiskSetIndex& index, int quad_order) {
  const Eigen::Index f = data.n_frailty();
  const auto n_clusters = static_cast<Eigen::Index>(data.n_clusters());
  const Eigen::Index dims = n_clusters * f;
  if (dims > 6) throw_input("oracle scale exceeded");
  if (params.beta.size() != data.n_fixed() || params.gamma.dim() != f)
    throw_input("oracle: dimension mismatch");

  const QuadratureRule rule = gauss_hermite(quad_order);
  const Vector log_w = rule.weights.array().log();
  Eigen::LLT<Matrix> llt(params.gamma.sigma());
  if (llt.info() != Eigen::Success) throw_numerical("frailty covariance is not positive definite");
  const Matrix scale = std::numbers::sqrt2 * llt.matrixL().toDenseMatrix();

  std::vector<int> digit(static_cast<std::size_t>(dims), 0);
  FrailtyState b = FrailtyState::zeros(data.n_clusters(), f);
  double acc_max = -std::numeric_limits<double>::infinity();
  double acc = 0.0;  // sum exp(term - acc_max)
  while (true) {
    double lw = 0.0;
    for (Eigen::Index i = 0; i < n_clusters; ++i) {
      Vector x(f);
      for (Eigen::Index a = 0; a < f; ++a) {
        const int q = digit[static_cast<std::size_t>(i * f + a)];
        x(a) = rule.nodes(q);
        lw += log_w(q);
      }
      b.b.row(i) = (scale * x).transpose();
    }
    const double term =
        lw + cox_partial(data, index, params.beta, frailty_offsets(data, b), 0).value;
    if (term > acc_max) {
      acc = acc * std::exp(acc_max - term) + 1.0;
      acc_max = term;
    } else {
      acc += std::exp(term - acc_max);
    }
    std::size_t pos = 0;
    while (pos < digit.size() && ++digit[pos] == quad_order) digit[pos++] = 0;
    if (pos == digit.size()) break;
  }
  return acc_max + std::log(acc) - 0.5 * static_cast<double>(dims) * std::log(std::numbers::pi);
}

}  // namespace coxfrail
