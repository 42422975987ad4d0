#include "interfere/mixed_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "interfere/error.hpp"
#include "interfere/learners.hpp"
#include "interfere/parallel.hpp"

namespace interfere {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_rule(const QuadratureRule& rule, double sigma2) {
  if (std::abs(rule.sigma2 - sigma2) > 1e-12 * std::max(1.0, sigma2)) {
    throw Error(ErrorCode::InvalidArgument,
                "quadrature rule targets variance " + std::to_string(rule.sigma2) +
                    ", model has " + std::to_string(sigma2));
  }
}

void check_query(const Matrix& x, const IntVector& z, const Vector& beta) {
  if (x.rows() != z.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                std::to_string(x.rows()) + " covariate rows vs " +
                    std::to_string(z.size()) + " treatments");
  }
  if (x.cols() != beta.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "covariate dimension " + std::to_string(x.cols()) +
                    " vs coefficient length " + std::to_string(beta.size()));
  }
}

// log prod_j P(Z_j = z_j | eta_j + v)
double log_conditional(const Vector& eta, const IntVector& z, double v) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < eta.size(); ++j) {
    s -= z(j) ? log1pexp(-(eta(j) + v)) : log1pexp(eta(j) + v);
  }
  return s;
}

// Per-cluster value and gradient in (beta, log sd). Nodes are standard
// Normal; the random effect at node k is sd * std_nodes(k).
double cluster_value_gradient(const Matrix& x, const IntVector& z, const Vector& beta,
                              double sd, const QuadratureRule& standard,
                              Eigen::Ref<Vector> gradient) {
  const Vector eta = x * beta;
  const int k_count = sd > 0.0 ? standard.size() : 1;
  Vector log_terms(k_count);
  for (int k = 0; k < k_count; ++k) {
    const double v = sd > 0.0 ? sd * standard.std_nodes(k) : 0.0;
    const double w = sd > 0.0 ? standard.weights(k) : 1.0;
    log_terms(k) = std::log(w) + log_conditional(eta, z, v);
  }
  const double total = log_sum_exp(std::span<const double>(log_terms.data(), k_count));
  gradient.setZero();
  const Vector zd = z.cast<double>();
  for (int k = 0; k < k_count; ++k) {
    const double posterior = std::exp(log_terms(k) - total);
    const double t = sd > 0.0 ? standard.std_nodes(k) : 0.0;
    Vector residual = zd;
    for (Eigen::Index j = 0; j < eta.size(); ++j) residual(j) -= expit(eta(j) + sd * t);
    gradient.head(beta.size()).noalias() += posterior * (x.transpose() * residual);
    gradient(beta.size()) += posterior * sd * t * residual.sum();
  }
  return total;
}

struct Optimum {
  Vector theta;
  double value = kNegInf;
  Vector gradient;
  int iterations = 0;
  bool converged = false;
  bool hit_floor = false;
};

double max_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

Matrix fd_hessian(const MarginalLikelihood& lik, const Vector& theta) {
  const Eigen::Index m = theta.size();
  Matrix h(m, m);
  Vector gp(m), gm(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    const double step = 1e-4 * std::max(1.0, std::abs(theta(a)));
    Vector tp = theta, tm = theta;
    tp(a) += step;
    tm(a) -= step;
    lik.value_and_gradient(tp, gp);
    lik.value_and_gradient(tm, gm);
    h.col(a) = (gp - gm) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

// Maximizes lik from theta0: BFGS with Armijo backtracking, then Newton
// polishing once the line search can no longer resolve progress.
Optimum maximize(const MarginalLikelihood& lik, Vector theta, const MixedOptions& opt) {
  const Eigen::Index m = theta.size();
  const Eigen::Index sd_index = m - 1;
  Optimum out;
  Vector grad(m);
  double value = lik.value_and_gradient(theta, grad);
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::NonFiniteLikelihood, "at the starting values");
  }
  Matrix inv_hessian = Matrix::Identity(m, m);  // of the negated objective
  bool scaled = false;
  int iter = 0;

  auto finish = [&](bool converged) {
    out.theta = theta;
    out.value = value;
    out.gradient = grad;
    out.iterations = iter;
    out.converged = converged;
    return out;
  };
  auto check_bounds = [&] {
    if (theta.head(m - 1).size() && max_norm(theta.head(m - 1)) > 1e3) {
      throw Error(ErrorCode::SeparationDetected,
                  "fixed-effect coefficients diverge past 1e3");
    }
  };

  // BFGS phase. neg_grad = gradient of -lik.
  for (; iter < opt.max_iterations; ++iter) {
    if (max_norm(grad) < opt.gradient_tolerance) return finish(true);
    if (theta(sd_index) < opt.log_sd_floor) {
      out.hit_floor = true;
      return finish(false);
    }
    const Vector neg_grad = -grad;
    Vector direction = -inv_hessian * neg_grad;
    if (direction.dot(neg_grad) >= 0.0) {
      inv_hessian.setIdentity();
      direction = grad;
    }
    const double longest = max_norm(direction);
    if (longest > 2.0) direction *= 2.0 / longest;

    const double slope = direction.dot(grad);
    double step = 1.0;
    Vector candidate(m), candidate_grad(m);
    double candidate_value = kNegInf;
    bool accepted = false;
    for (int h = 0; h < 40; ++h, step *= 0.5) {
      candidate = theta + step * direction;
      candidate_value = lik.value_and_gradient(candidate, candidate_grad);
      if (std::isfinite(candidate_value) &&
          candidate_value >= value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;

    const Vector s = candidate - theta;
    const Vector y = grad - candidate_grad;  // change in the negated gradient
    const double sy = s.dot(y);
    if (sy > 1e-14) {
      if (!scaled) {
        inv_hessian = (sy / y.dot(y)) * Matrix::Identity(m, m);
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Matrix left = Matrix::Identity(m, m) - rho * s * y.transpose();
      inv_hessian = left * inv_hessian * left.transpose() + rho * s * s.transpose();
    }
    theta = candidate;
    grad = candidate_grad;
    value = candidate_value;
    check_bounds();
  }

  // Newton polish: the objective is flat to working precision here, so a
  // step is accepted when it lowers the gradient norm without a material
  // drop in the objective.
  for (int polish = 0; polish < 50 && iter < opt.max_iterations; ++polish, ++iter) {
    if (max_norm(grad) < opt.gradient_tolerance) return finish(true);
    if (theta(sd_index) < opt.log_sd_floor) {
      out.hit_floor = true;
      return finish(false);
    }
    const Matrix neg_hessian = -fd_hessian(lik, theta);
    Eigen::LDLT<Matrix> ldlt(neg_hessian);
    Vector direction;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() &&
        (ldlt.vectorD().array() > 0.0).all()) {
      direction = ldlt.solve(grad);
    } else {
      direction = grad;
    }
    const double noise = 1e-10 * (1.0 + std::abs(value));
    double step = 1.0;
    bool accepted = false;
    Vector candidate(m), candidate_grad(m);
    for (int h = 0; h < 30; ++h, step *= 0.5) {
      candidate = theta + step * direction;
      const double candidate_value = lik.value_and_gradient(candidate, candidate_grad);
      if (std::isfinite(candidate_value) && candidate_value >= value - noise &&
          (candidate_value > value || max_norm(candidate_grad) < max_norm(grad))) {
        theta = candidate;
        grad = candidate_grad;
        value = candidate_value;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    check_bounds();
  }
  return finish(max_norm(grad) < opt.gradient_tolerance);
}

}  // namespace

double conditional_prob(const Eigen::Ref<const Vector>& x, double v,
                        const Vector& beta, double offset) {
  return expit(x.dot(beta) + offset + v);
}

double log_cluster_prob_eta(const Vector& eta, const IntVector& z,
                            const QuadratureRule& rule) {
  if (eta.size() != z.size()) {
    throw Error(ErrorCode::DimensionMismatch, "linear predictor vs treatment length");
  }
  Vector log_terms(rule.size());
  for (int k = 0; k < rule.size(); ++k) {
    log_terms(k) = std::log(rule.weights(k)) + log_conditional(eta, z, rule.nodes(k));
  }
  return log_sum_exp(std::span<const double>(log_terms.data(), log_terms.size()));
}

double log_cluster_prob(const CpsQuery& query, const MixedModelFit& fit,
                        const QuadratureRule& rule) {
  check_query(query.covariates, query.treatments, fit.beta);
  check_rule(rule, fit.sigma2_v);
  return log_cluster_prob_eta(query.covariates * fit.beta, query.treatments, rule);
}

double cluster_prob(const CpsQuery& query, const MixedModelFit& fit,
                    const QuadratureRule& rule, int max_cluster_size) {
  if (query.treatments.size() > max_cluster_size) {
    throw Error(ErrorCode::ClusterTooLarge,
                "cluster size " + std::to_string(query.treatments.size()) +
                    " exceeds " + std::to_string(max_cluster_size) +
                    "; use log_cluster_prob");
  }
  return std::exp(log_cluster_prob(query, fit, rule));
}

double marginal_loglik(const Study& study, const Vector& beta, double sigma2_v,
                       const QuadratureRule& rule, int threads) {
  check_rule(rule, sigma2_v);
  std::vector<double> terms(study.clusters.size());
  parallel_for(terms.size(), threads, [&](std::size_t i) {
    const Cluster& c = study.clusters[i];
    const Matrix x = c.covariate_matrix();
    const IntVector z = c.treatments();
    check_query(x, z, beta);
    terms[i] = log_cluster_prob_eta(x * beta, z, rule);
  });
  const double total = pairwise_sum(terms);
  if (!std::isfinite(total)) {
    throw Error(ErrorCode::NonFiniteLikelihood, "marginal log-likelihood");
  }
  return total;
}

MarginalLikelihood::MarginalLikelihood(std::vector<Matrix> covariates,
                                       std::vector<IntVector> treatments,
                                       int quadrature_nodes, int threads)
    : x_(std::move(covariates)),
      z_(std::move(treatments)),
      nodes_(quadrature_nodes),
      threads_(threads) {
  if (x_.size() != z_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "covariate and treatment cluster counts");
  }
  p_ = x_.empty() ? 0 : static_cast<int>(x_.front().cols());
  for (std::size_t i = 0; i < x_.size(); ++i) {
    if (x_[i].rows() != z_[i].size() || x_[i].cols() != p_) {
      throw Error(ErrorCode::DimensionMismatch, "cluster " + std::to_string(i));
    }
  }
  if (nodes_ < 1) throw Error(ErrorCode::InvalidNodeCount, std::to_string(nodes_));
}

MarginalLikelihood::MarginalLikelihood(const Study& study, int quadrature_nodes,
                                       int threads)
    : nodes_(quadrature_nodes), threads_(threads) {
  for (const auto& c : study.clusters) {
    x_.push_back(c.covariate_matrix());
    z_.push_back(c.treatments());
    x_.back().conservativeResize(Eigen::NoChange, study.p);
  }
  p_ = study.p;
  if (nodes_ < 1) throw Error(ErrorCode::InvalidNodeCount, std::to_string(nodes_));
}

double MarginalLikelihood::value(const Vector& theta) const {
  Vector unused(theta.size());
  return value_and_gradient(theta, unused);
}

double MarginalLikelihood::value_and_gradient(const Vector& theta,
                                              Vector& gradient) const {
  if (theta.size() != p_ + 1) {
    throw Error(ErrorCode::DimensionMismatch, "parameter vector length");
  }
  const Vector beta = theta.head(p_);
  const double sd = std::exp(theta(p_));
  const QuadratureRule standard = gauss_hermite_rule(nodes_, 1.0);
  const std::size_t count = x_.size();
  std::vector<double> values(count);
  Matrix grads(p_ + 1, static_cast<Eigen::Index>(count));
  parallel_for(count, threads_, [&](std::size_t i) {
    values[i] = cluster_value_gradient(x_[i], z_[i], beta, sd, standard,
                                       grads.col(static_cast<Eigen::Index>(i)));
  });
  gradient.resize(p_ + 1);
  std::vector<double> row(count);
  for (int a = 0; a <= p_; ++a) {
    for (std::size_t i = 0; i < count; ++i) row[i] = grads(a, static_cast<Eigen::Index>(i));
    gradient(a) = pairwise_sum(row);
  }
  return pairwise_sum(values);
}

MixedModelFit fit_mixed(const Study& study, const MixedOptions& options) {
  if (study.cluster_count() < 2) {
    throw Error(ErrorCode::TooFewClusters,
                std::to_string(study.cluster_count()) + " clusters, need >= 2");
  }
  return fit_mixed(MarginalLikelihood(study, options.quadrature_nodes, options.threads),
                   options);
}

MixedModelFit fit_mixed(const MarginalLikelihood& likelihood, const MixedOptions& options) {
  const auto& xs = likelihood.covariates();
  const auto& zs = likelihood.treatments();
  if (xs.size() < 2) {
    throw Error(ErrorCode::TooFewClusters, std::to_string(xs.size()) + " clusters");
  }
  const int p = likelihood.covariate_count();
  int n = 0;
  for (const auto& z : zs) n += static_cast<int>(z.size());
  Matrix x(n, p);
  IntVector z(n);
  int row = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    x.middleRows(row, xs[i].rows()) = xs[i];
    z.segment(row, zs[i].size()) = zs[i];
    row += static_cast<int>(zs[i].size());
  }
  const int treated = z.sum();
  if (treated == 0 || treated == n) {
    throw Error(ErrorCode::SeparationDetected, "only one treatment level present");
  }
  const LogisticFit start = fit_logistic(x, z);

  MixedModelFit best;
  best.loglik = kNegInf;
  best.quadrature_nodes = options.quadrature_nodes;
  int total_iterations = 0;
  bool any_floor = false;
  for (double sd0 : options.start_sd) {
    Vector theta(p + 1);
    theta.head(p) = start.beta;
    theta(p) = std::log(sd0);
    const Optimum opt = maximize(likelihood, theta, options);
    total_iterations += opt.iterations;
    any_floor = any_floor || opt.hit_floor;
    if (opt.hit_floor) continue;
    if (opt.value > best.loglik || (opt.converged && !best.converged &&
                                    opt.value >= best.loglik - 1e-9)) {
      best.beta = opt.theta.head(p);
      best.sigma2_v = std::exp(2.0 * opt.theta(p));
      best.loglik = opt.value;
      best.converged = opt.converged;
      best.grad_norm = max_norm(opt.gradient);
      best.boundary = false;
    }
  }

  // The sigma_v -> 0 boundary: the likelihood there is the plain logistic
  // likelihood, maximized by the logistic solution.
  const bool interior_ok = best.converged && best.loglik >= start.loglik - 1e-9;
  if (!interior_ok && (any_floor || start.loglik >= best.loglik)) {
    best.beta = start.beta;
    best.sigma2_v = 0.0;
    best.loglik = start.loglik;
    best.converged = start.converged;
    best.grad_norm = start.grad_norm;
    best.boundary = true;
  }
  best.iterations = total_iterations;
  if (!best.converged) {
    throw Error(ErrorCode::NotConverged,
                "no start reached gradient max-norm " +
                    std::to_string(options.gradient_tolerance) + " (best " +
                    std::to_string(best.grad_norm) + ")");
  }
  return best;
}

Vector poisson_binomial(const Vector& p) {
  const Eigen::Index m = p.size();
  Vector pmf = Vector::Zero(m + 1);
  pmf(0) = 1.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    for (Eigen::Index g = k + 1; g >= 1; --g) {
      pmf(g) = pmf(g) * (1.0 - p(k)) + pmf(g - 1) * p(k);
    }
    pmf(0) *= 1.0 - p(k);
  }
  return pmf;
}

double poisson_binomial_pmf(const Vector& p, int g) {
  if (g < 0 || g > p.size()) {
    throw Error(ErrorCode::InvalidExposureLevel,
                "count " + std::to_string(g) + " outside 0.." + std::to_string(p.size()));
  }
  return poisson_binomial(p)(g);
}

double exposure_joint_prob_eta(const Vector& eta, int unit, int z, int g,
                               const QuadratureRule& rule) {
  const int n = static_cast<int>(eta.size());
  if (unit < 0 || unit >= n) {
    throw Error(ErrorCode::IndexOutOfRange,
                "unit " + std::to_string(unit) + " in cluster of size " + std::to_string(n));
  }
  if (g < 0 || g > n - 1) {
    throw Error(ErrorCode::InvalidExposureLevel,
                "peer count " + std::to_string(g) + " outside 0.." + std::to_string(n - 1));
  }
  if (z != 0 && z != 1) {
    throw Error(ErrorCode::NonBinaryTreatment, "exposure treatment " + std::to_string(z));
  }
  Vector peers(n - 1);
  double total = 0.0;
  for (int k = 0; k < rule.size(); ++k) {
    const double v = rule.nodes(k);
    for (int j = 0, slot = 0; j < n; ++j) {
      if (j != unit) peers(slot++) = expit(eta(j) + v);
    }
    const double own = expit(eta(unit) + v);
    total += rule.weights(k) * (z ? own : 1.0 - own) * poisson_binomial(peers)(g);
  }
  return total;
}

double exposure_joint_prob(const Matrix& covariates, int unit, int z, int g,
                           const MixedModelFit& fit, const QuadratureRule& rule) {
  if (covariates.cols() != fit.beta.size()) {
    throw Error(ErrorCode::DimensionMismatch, "covariate dimension vs coefficients");
  }
  check_rule(rule, fit.sigma2_v);
  return exposure_joint_prob_eta(covariates * fit.beta, unit, z, g, rule);
}

}  // namespace interfere
