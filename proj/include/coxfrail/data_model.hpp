#pragma once

// Observed-data and parameter types shared by every estimation routine.

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace coxfrail {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Individual {
  double time = 0.0;
  int status = 0;  // 1 = event observed, 0 = censored
  Vector z;        // fixed-effect covariates (length b)
  Vector w;        // frailty design (length f)
};

struct Cluster {
  std::string id;
  std::vector<Individual> individuals;
};

// Clustered right-censored survival data. Validated on construction and
// immutable afterwards; individuals are also stored flat, contiguous by
// cluster, for the likelihood kernels.
class SurvivalDataset {
 public:
  explicit SurvivalDataset(std::vector<Cluster> clusters);

  std::size_t n_clusters() const { return clusters_.size(); }
  std::size_t n_individuals() const { return times_.size(); }
  std::size_t n_events() const { return n_events_; }
  Eigen::Index n_fixed() const { return z_.cols(); }
  Eigen::Index n_frailty() const { return w_.cols(); }

  const std::vector<Cluster>& clusters() const { return clusters_; }

  std::size_t cluster_begin(std::size_t i) const { return offsets_[i]; }
  std::size_t cluster_end(std::size_t i) const { return offsets_[i + 1]; }
  std::size_t cluster_size(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }
  std::size_t cluster_of(std::size_t j) const { return cluster_of_[j]; }

  double time(std::size_t j) const { return times_[j]; }
  int status(std::size_t j) const { return status_[j]; }
  const std::vector<double>& times() const { return times_; }
  const std::vector<int>& statuses() const { return status_; }
  const RowMatrix& z() const { return z_; }
  const RowMatrix& w() const { return w_; }

 private:
  std::vector<Cluster> clusters_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> cluster_of_;
  std::vector<double> times_;
  std::vector<int> status_;
  RowMatrix z_;
  RowMatrix w_;
  std::size_t n_events_ = 0;
};

enum class FrailtyDesign {
  Shared,      // W_ij = 1: one random intercept per cluster
  Correlated,  // W_ij = (1, sum_k Z_ijk): random intercept plus a random slope
               // added to every regression coefficient
};

// Copy of `data` with the frailty design replaced.
SurvivalDataset with_frailty_design(const SurvivalDataset& data, FrailtyDesign design);

// Distribution parameter of the Gaussian frailty: a scalar variance (f = 1)
// or a full covariance matrix. The parameter vector for a covariance is the
// diagonal followed by the upper off-diagonal entries row by row, so for
// f = 2 it is (sigma0^2, sigma1^2, sigma01).
class FrailtyParam {
 public:
  enum class Kind { ScalarVariance, Covariance };

  static FrailtyParam scalar(double variance);
  static FrailtyParam covariance(const Matrix& sigma);
  static FrailtyParam from_vector(Kind kind, Eigen::Index dim, const Vector& values);

  Kind kind() const { return kind_; }
  Eigen::Index dim() const { return sigma_.rows(); }
  Eigen::Index n_params() const;
  const Matrix& sigma() const { return sigma_; }
  double variance() const;

  Vector to_vector() const;
  std::vector<std::string> names() const;

 private:
  FrailtyParam(Kind kind, Matrix sigma) : kind_(kind), sigma_(std::move(sigma)) {}

  Kind kind_;
  Matrix sigma_;
};

// Unit matrices E_a with dSigma/dp_a = E_a, in parameter-vector order.
std::vector<Matrix> covariance_basis(FrailtyParam::Kind kind, Eigen::Index dim);

struct ModelParams {
  Vector beta;
  FrailtyParam gamma = FrailtyParam::scalar(1.0);

  Eigen::Index size() const { return beta.size() + gamma.n_params(); }
  Vector to_vector() const;
  static ModelParams from_vector(const Vector& theta, Eigen::Index n_beta,
                                 FrailtyParam::Kind kind, Eigen::Index dim);
  std::vector<std::string> names() const;
};

// Latent frailties: row i holds b_i.
struct FrailtyState {
  Matrix b;

  static FrailtyState zeros(std::size_t n_clusters, Eigen::Index dim) {
    return FrailtyState{Matrix::Zero(static_cast<Eigen::Index>(n_clusters), dim)};
  }
  std::size_t n_clusters() const { return static_cast<std::size_t>(b.rows()); }
};

// Risk sets at the distinct event times. Individuals are sorted by time, so
// the risk set of an event time is a suffix of `order`.
struct RiskSetIndex {
  std::vector<std::size_t> order;          // individuals by ascending time
  std::vector<double> event_times;         // distinct event times, ascending
  std::vector<std::size_t> risk_start;     // first position in `order` at risk
  std::vector<std::size_t> event_offsets;  // events of time e: event_members[offsets[e]..offsets[e+1])
  std::vector<std::size_t> event_members;
  std::vector<std::size_t> n_event_times_before;  // per individual: #event times <= own time

  std::size_t n_event_times() const { return event_times.size(); }
  std::size_t n_deaths(std::size_t e) const { return event_offsets[e + 1] - event_offsets[e]; }
  std::span<const std::size_t> at_risk(std::size_t e) const {
    return std::span<const std::size_t>(order).subspan(risk_start[e]);
  }
  std::span<const std::size_t> events_at(std::size_t e) const {
    return std::span<const std::size_t>(event_members)
        .subspan(event_offsets[e], event_offsets[e + 1] - event_offsets[e]);
  }
};

RiskSetIndex build_risk_index(const SurvivalDataset& data);

// Z_ij . beta + W_ij . b_i
double linear_predictor(const ModelParams& params, const FrailtyState& frailty,
                        const SurvivalDataset& data, std::size_t cluster, std::size_t individual);

}  // namespace coxfrail
