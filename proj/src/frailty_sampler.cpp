#include "coxfrail/frailty_sampler.hpp"

#include "coxfrail/error.hpp"
#include "coxfrail/partial_likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace coxfrail {

Vector McmcConfig::sd_for(Eigen::Index dim) const {
  if (proposal_sd.size() == 0) return Vector::Constant(dim, 0.5);
  if (proposal_sd.size() != dim) throw_input("proposal_sd length does not match the frailty dimension");
  if ((proposal_sd.array() <= 0.0).any()) throw_input("proposal_sd must be positive");
  return proposal_sd;
}

GaussianLogDensity::GaussianLogDensity(const Matrix& sigma) {
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success) throw_numerical("frailty covariance is not positive definite");
  precision_ = llt.solve(Matrix::Identity(sigma.rows(), sigma.cols()));
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  constant_ = -0.5 * (static_cast<double>(sigma.rows()) * 1.8378770664093453 + logdet);
}

double GaussianLogDensity::operator()(const Eigen::Ref<const Vector>& b) const {
  return constant_ - 0.5 * b.dot(precision_ * b);
}

// ---------------------------------------------------------------------------

ClusterUpdateCache::ClusterUpdateCache(const SurvivalDataset& data, const RiskSetIndex& index)
    : data_(data), index_(index) {
  const auto& upper = index.n_event_times_before;
  member_offsets_.push_back(0);
  for (std::size_t c = 0; c < data.n_clusters(); ++c) {
    const std::size_t start = members_.size();
    for (std::size_t j = data.cluster_begin(c); j < data.cluster_end(c); ++j) members_.push_back(j);
    std::stable_sort(members_.begin() + static_cast<std::ptrdiff_t>(start), members_.end(),
                     [&](std::size_t a, std::size_t b) { return upper[a] < upper[b]; });
    member_offsets_.push_back(members_.size());
  }
  const std::size_t n_times = index.n_event_times();
  deaths_.resize(n_times);
  for (std::size_t e = 0; e < n_times; ++e) deaths_[e] = static_cast<double>(index.n_deaths(e));
  s0_.resize(n_times);
  log_s0_.resize(n_times);
  cand_s0_.resize(n_times);
  cand_log_.resize(n_times);
  u_.resize(data.n_individuals());
  std::size_t largest = 0;
  for (std::size_t c = 0; c < data.n_clusters(); ++c) largest = std::max(largest, data.cluster_size(c));
  cand_deta_.resize(largest);
  cand_du_.resize(largest);
  suffix_.resize(largest + 1);
}

void ClusterUpdateCache::reset(const Vector& beta, const Matrix& frailty) {
  beta_ = beta;
  b_ = frailty;
  eta_ = frailty_offsets(data_, FrailtyState{b_});
  if (data_.n_fixed() > 0) eta_.noalias() += data_.z() * beta_;
  if (!eta_.allFinite()) throw_numerical("non-finite linear predictor");
  shift_ = eta_.maxCoeff();
  for (Eigen::Index j = 0; j < eta_.size(); ++j) u_[static_cast<std::size_t>(j)] = std::exp(eta_(j) - shift_);

  exact_mode_ = false;
  double sum = 0.0;
  auto e = static_cast<long>(index_.n_event_times()) - 1;
  for (std::size_t p = data_.n_individuals(); p-- > 0;) {
    sum += u_[index_.order[p]];
    while (e >= 0 && index_.risk_start[static_cast<std::size_t>(e)] == p) {
      const auto ue = static_cast<std::size_t>(e);
      s0_[ue] = sum;
      log_s0_[ue] = std::log(sum);
      if (!(sum > std::numeric_limits<double>::min())) exact_mode_ = true;
      --e;
    }
  }
}

double ClusterUpdateCache::log_partial() const {
  if (exact_mode_) {
    Vector offset = eta_;
    if (data_.n_fixed() > 0) offset.noalias() -= data_.z() * beta_;
    return cox_partial(data_, index_, beta_, offset, 0).value;
  }
  double v = 0.0;
  for (std::size_t e = 0; e < index_.n_event_times(); ++e) {
    for (std::size_t k : index_.events_at(e)) v += eta_(static_cast<Eigen::Index>(k));
    v -= deaths_[e] * (log_s0_[e] + shift_);
  }
  return v;
}

double ClusterUpdateCache::exact_delta(std::size_t cluster, const Eigen::Ref<const Vector>& b_new) {
  FrailtyState current{b_};
  FrailtyState candidate{b_};
  candidate.b.row(static_cast<Eigen::Index>(cluster)) = b_new.transpose();
  const double now = cox_partial(data_, index_, beta_, frailty_offsets(data_, current), 0).value;
  const double next = cox_partial(data_, index_, beta_, frailty_offsets(data_, candidate), 0).value;
  cand_exact_ = true;
  return next - now;
}

double ClusterUpdateCache::propose(std::size_t cluster, const Eigen::Ref<const Vector>& b_new) {
  cand_cluster_ = cluster;
  cand_b_ = b_new;
  cand_exact_ = false;
  if (exact_mode_) return exact_delta(cluster, b_new);

  const Vector delta = b_new - b_.row(static_cast<Eigen::Index>(cluster)).transpose();
  const std::size_t begin = member_offsets_[cluster];
  const std::size_t m = member_offsets_[cluster + 1] - begin;
  const auto& upper = index_.n_event_times_before;
  const auto& w = data_.w();

  double event_part = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t j = members_[begin + k];
    const double deta = w.row(static_cast<Eigen::Index>(j)).dot(delta);
    cand_deta_[k] = deta;
    cand_du_[k] = u_[j] * std::expm1(deta);
    if (data_.status(j) == 1) event_part += deta;
  }
  suffix_[m] = 0.0;
  for (std::size_t k = m; k-- > 0;) suffix_[k] = suffix_[k + 1] + cand_du_[k];

  cand_span_ = m > 0 ? upper[members_[begin + m - 1]] : 0;
  double denom_part = 0.0;
  std::size_t k = 0;
  for (std::size_t e = 0; e < cand_span_; ++e) {
    while (k < m && upper[members_[begin + k]] <= e) ++k;
    const double s = s0_[e] + suffix_[k];
    if (!(s > std::numeric_limits<double>::min()) || !std::isfinite(s)) return exact_delta(cluster, b_new);
    cand_s0_[e] = s;
    cand_log_[e] = std::log(s);
    denom_part += deaths_[e] * (cand_log_[e] - log_s0_[e]);
  }
  return event_part - denom_part;
}

void ClusterUpdateCache::accept() {
  if (cand_exact_) {
    Matrix next = b_;
    next.row(static_cast<Eigen::Index>(cand_cluster_)) = cand_b_.transpose();
    reset(beta_, next);
    return;
  }
  const std::size_t begin = member_offsets_[cand_cluster_];
  const std::size_t m = member_offsets_[cand_cluster_ + 1] - begin;
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t j = members_[begin + k];
    eta_(static_cast<Eigen::Index>(j)) += cand_deta_[k];
    u_[j] += cand_du_[k];
  }
  std::copy_n(cand_s0_.begin(), cand_span_, s0_.begin());
  std::copy_n(cand_log_.begin(), cand_span_, log_s0_.begin());
  b_.row(static_cast<Eigen::Index>(cand_cluster_)) = cand_b_.transpose();
}

// ---------------------------------------------------------------------------

FrailtySampler::FrailtySampler(const SurvivalDataset& data, const RiskSetIndex& index)
    : data_(data), cache_(data, index) {}

McmcDiagnostics FrailtySampler::sweep(FrailtyState& state, const Vector& beta, const FrailtyParam& gamma,
                                      const McmcConfig& cfg, Rng& rng) {
  const Eigen::Index f = data_.n_frailty();
  if (state.n_clusters() != data_.n_clusters() || state.b.cols() != f || gamma.dim() != f)
    throw_input("mh_sweep: frailty state does not match the dataset");
  if (cfg.n_inner < 1) throw_input("n_inner must be at least 1");
  const Vector sd = cfg.sd_for(f);
  const GaussianLogDensity log_g(gamma.sigma());

  cache_.reset(beta, state.b);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector current(f);
  Vector candidate(f);

  McmcDiagnostics diag;
  for (int s = 0; s < cfg.n_inner; ++s) {
    for (std::size_t c = 0; c < data_.n_clusters(); ++c) {
      current = cache_.frailty().row(static_cast<Eigen::Index>(c)).transpose();
      for (Eigen::Index a = 0; a < f; ++a) candidate(a) = current(a) + sd(a) * normal(rng);
      ++diag.steps;
      const double log_ratio = cache_.propose(c, candidate) + log_g(candidate) - log_g(current);
      if (!std::isfinite(log_ratio)) continue;
      if (log_ratio >= 0.0 || std::log(unif(rng)) < log_ratio) {
        cache_.accept();
        ++diag.accepted;
      }
    }
  }
  state.b = cache_.frailty();
  diag.accept_rate = diag.steps ? static_cast<double>(diag.accepted) / static_cast<double>(diag.steps) : 0.0;
  return diag;
}

std::pair<FrailtyState, McmcDiagnostics> mh_sweep(const FrailtyState& state, const ModelParams& params,
                                                  const SurvivalDataset& data, const RiskSetIndex& index,
                                                  const McmcConfig& cfg, Rng& rng) {
  FrailtySampler sampler(data, index);
  FrailtyState next = state;
  const McmcDiagnostics diag = sampler.sweep(next, params.beta, params.gamma, cfg, rng);
  return {std::move(next), diag};
}

McmcConfig adapt_proposal(const McmcDiagnostics& diag, McmcConfig cfg) {
  if (!cfg.adapt || diag.steps == 0) return cfg;
  const double factor = std::exp(cfg.adapt_gain * (diag.accept_rate - cfg.target_accept));
  if (cfg.proposal_sd.size() == 0) throw_input("adapt_proposal: proposal_sd must be set");
  cfg.proposal_sd *= factor;
  return cfg;
}

}  // namespace coxfrail
