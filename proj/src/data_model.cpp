#include "coxfrail/data_model.hpp"

#include "coxfrail/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace coxfrail {

SurvivalDataset::SurvivalDataset(std::vector<Cluster> clusters) : clusters_(std::move(clusters)) {
  if (clusters_.empty()) throw_input("dataset has no clusters");
  Eigen::Index nb = -1;
  Eigen::Index nf = -1;
  std::size_t n = 0;
  for (const auto& c : clusters_) {
    if (c.individuals.empty()) throw_input("cluster '" + c.id + "' is empty");
    for (const auto& ind : c.individuals) {
      if (!std::isfinite(ind.time) || ind.time <= 0.0)
        throw_input("cluster '" + c.id + "': observed times must be finite and positive");
      if (ind.status != 0 && ind.status != 1)
        throw_input("cluster '" + c.id + "': status must be 0 or 1");
      if (nb < 0) nb = ind.z.size();
      if (nf < 0) nf = ind.w.size();
      if (ind.z.size() != nb || ind.w.size() != nf)
        throw_input("cluster '" + c.id + "': covariate dimensions differ between individuals");
      if (!ind.z.allFinite() || !ind.w.allFinite())
        throw_input("cluster '" + c.id + "': non-finite covariate");
    }
    n += c.individuals.size();
  }
  if (nf < 1) throw_input("frailty design must have at least one column");

  offsets_.reserve(clusters_.size() + 1);
  cluster_of_.reserve(n);
  times_.reserve(n);
  status_.reserve(n);
  z_.resize(static_cast<Eigen::Index>(n), nb);
  w_.resize(static_cast<Eigen::Index>(n), nf);
  offsets_.push_back(0);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < clusters_.size(); ++i) {
    for (const auto& ind : clusters_[i].individuals) {
      times_.push_back(ind.time);
      status_.push_back(ind.status);
      cluster_of_.push_back(i);
      if (nb > 0) z_.row(row) = ind.z.transpose();
      w_.row(row) = ind.w.transpose();
      n_events_ += static_cast<std::size_t>(ind.status);
      ++row;
    }
    offsets_.push_back(times_.size());
  }
}

SurvivalDataset with_frailty_design(const SurvivalDataset& data, FrailtyDesign design) {
  std::vector<Cluster> clusters = data.clusters();
  for (auto& c : clusters) {
    for (auto& ind : c.individuals) {
      if (design == FrailtyDesign::Shared) {
        ind.w = Vector::Ones(1);
      } else {
        ind.w.resize(2);
        ind.w << 1.0, ind.z.sum();
      }
    }
  }
  return SurvivalDataset(std::move(clusters));
}

// ---------------------------------------------------------------------------

FrailtyParam FrailtyParam::scalar(double variance) {
  if (!std::isfinite(variance) || variance <= 0.0)
    throw_input("frailty variance must be finite and positive");
  return FrailtyParam(Kind::ScalarVariance, Matrix::Constant(1, 1, variance));
}

FrailtyParam FrailtyParam::covariance(const Matrix& sigma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() < 1)
    throw_input("frailty covariance must be a non-empty square matrix");
  if (!sigma.allFinite()) throw_input("frailty covariance has non-finite entries");
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + sigma.cwiseAbs().maxCoeff()))
    throw_input("frailty covariance must be symmetric");
  Matrix sym = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() <= 0.0)
    throw_input("frailty covariance must be positive definite");
  return FrailtyParam(Kind::Covariance, std::move(sym));
}

FrailtyParam FrailtyParam::from_vector(Kind kind, Eigen::Index dim, const Vector& values) {
  if (kind == Kind::ScalarVariance) {
    if (values.size() != 1) throw_input("scalar frailty parameter expects one value");
    return scalar(values(0));
  }
  if (values.size() != dim * (dim + 1) / 2)
    throw_input("covariance parameter vector has the wrong length");
  Matrix sigma(dim, dim);
  Eigen::Index p = 0;
  for (Eigen::Index j = 0; j < dim; ++j) sigma(j, j) = values(p++);
  for (Eigen::Index j = 0; j < dim; ++j)
    for (Eigen::Index k = j + 1; k < dim; ++k) {
      sigma(j, k) = values(p);
      sigma(k, j) = values(p);
      ++p;
    }
  return covariance(sigma);
}

Eigen::Index FrailtyParam::n_params() const {
  return kind_ == Kind::ScalarVariance ? 1 : dim() * (dim() + 1) / 2;
}

double FrailtyParam::variance() const {
  if (kind_ != Kind::ScalarVariance) throw_input("variance() requires a scalar frailty parameter");
  return sigma_(0, 0);
}

Vector FrailtyParam::to_vector() const {
  Vector out(n_params());
  if (kind_ == Kind::ScalarVariance) {
    out(0) = sigma_(0, 0);
    return out;
  }
  Eigen::Index p = 0;
  for (Eigen::Index j = 0; j < dim(); ++j) out(p++) = sigma_(j, j);
  for (Eigen::Index j = 0; j < dim(); ++j)
    for (Eigen::Index k = j + 1; k < dim(); ++k) out(p++) = sigma_(j, k);
  return out;
}

std::vector<std::string> FrailtyParam::names() const {
  if (kind_ == Kind::ScalarVariance) return {"gamma"};
  std::vector<std::string> out;
  for (Eigen::Index j = 0; j < dim(); ++j) out.push_back("sigma" + std::to_string(j) + std::to_string(j));
  for (Eigen::Index j = 0; j < dim(); ++j)
    for (Eigen::Index k = j + 1; k < dim(); ++k)
      out.push_back("sigma" + std::to_string(j) + std::to_string(k));
  return out;
}

std::vector<Matrix> covariance_basis(FrailtyParam::Kind kind, Eigen::Index dim) {
  std::vector<Matrix> basis;
  if (kind == FrailtyParam::Kind::ScalarVariance) {
    basis.push_back(Matrix::Ones(1, 1));
    return basis;
  }
  for (Eigen::Index j = 0; j < dim; ++j) {
    Matrix e = Matrix::Zero(dim, dim);
    e(j, j) = 1.0;
    basis.push_back(std::move(e));
  }
  for (Eigen::Index j = 0; j < dim; ++j)
    for (Eigen::Index k = j + 1; k < dim; ++k) {
      Matrix e = Matrix::Zero(dim, dim);
      e(j, k) = 1.0;
      e(k, j) = 1.0;
      basis.push_back(std::move(e));
    }
  return basis;
}

Vector ModelParams::to_vector() const {
  Vector out(size());
  out << beta, gamma.to_vector();
  return out;
}

ModelParams ModelParams::from_vector(const Vector& theta, Eigen::Index n_beta,
                                     FrailtyParam::Kind kind, Eigen::Index dim) {
  ModelParams p;
  p.beta = theta.head(n_beta);
  p.gamma = FrailtyParam::from_vector(kind, dim, theta.tail(theta.size() - n_beta));
  return p;
}

std::vector<std::string> ModelParams::names() const {
  std::vector<std::string> out;
  for (Eigen::Index j = 0; j < beta.size(); ++j) out.push_back("beta" + std::to_string(j + 1));
  for (auto& s : gamma.names()) out.push_back(s);
  return out;
}

// ---------------------------------------------------------------------------

RiskSetIndex build_risk_index(const SurvivalDataset& data) {
  if (data.n_events() == 0) throw_input("no events");
  const std::size_t n = data.n_individuals();
  RiskSetIndex idx;
  idx.order.resize(n);
  std::iota(idx.order.begin(), idx.order.end(), std::size_t{0});
  const auto& t = data.times();
  std::stable_sort(idx.order.begin(), idx.order.end(),
                   [&](std::size_t a, std::size_t b) { return t[a] < t[b]; });

  std::size_t pos = 0;
  while (pos < n) {
    std::size_t end = pos;
    const double tp = t[idx.order[pos]];
    while (end < n && t[idx.order[end]] == tp) ++end;
    bool any_event = false;
    for (std::size_t q = pos; q < end; ++q) {
      if (data.status(idx.order[q]) == 1) {
        if (!any_event) {
          idx.event_times.push_back(tp);
          idx.risk_start.push_back(pos);
          idx.event_offsets.push_back(idx.event_members.size());
          any_event = true;
        }
        idx.event_members.push_back(idx.order[q]);
      }
    }
    pos = end;
  }
  idx.event_offsets.push_back(idx.event_members.size());

  idx.n_event_times_before.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    idx.n_event_times_before[j] = static_cast<std::size_t>(
        std::upper_bound(idx.event_times.begin(), idx.event_times.end(), t[j]) -
        idx.event_times.begin());
  }
  return idx;
}

double linear_predictor(const ModelParams& params, const FrailtyState& frailty,
                        const SurvivalDataset& data, std::size_t cluster, std::size_t individual) {
  if (cluster >= data.n_clusters() || individual >= data.cluster_size(cluster))
    throw_input("linear_predictor: index out of range");
  if (params.beta.size() != data.n_fixed() || frailty.b.cols() != data.n_frailty() ||
      frailty.n_clusters() != data.n_clusters())
    throw_input("linear_predictor: dimension mismatch");
  const std::size_t j = data.cluster_begin(cluster) + individual;
  const auto r = static_cast<Eigen::Index>(j);
  const auto c = static_cast<Eigen::Index>(cluster);
  double eta = data.w().row(r).dot(frailty.b.row(c));
  if (data.n_fixed() > 0) eta += data.z().row(r).dot(params.beta.transpose());
  return eta;
}

}  // namespace coxfrail
