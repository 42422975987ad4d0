#ifndef INTERFERE_MIXED_MODEL_HPP
#define INTERFERE_MIXED_MODEL_HPP

#include <vector>

#include "interfere/core.hpp"
#include "interfere/quadrature.hpp"
#include "interfere/study.hpp"

namespace interfere {

/// Mixed effects logistic model P(Z_ij = 1 | X_ij, V_i) = expit(X_ij'beta + V_i),
/// V_i ~ N(0, sigma2_v), with V_i integrated out.
struct MixedModelFit {
  Vector beta;
  double sigma2_v = 0.0;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Max-norm of the gradient in the (beta, log sigma_v) parameterization.
  double grad_norm = 0.0;
  /// The likelihood is maximized on the boundary sigma_v -> 0; sigma2_v is
  /// reported as exactly 0 and beta is the plain logistic solution.
  bool boundary = false;
  int quadrature_nodes = kDefaultQuadratureNodes;
};

/// A cluster's covariates (n_i x p) and treatment vector.
struct CpsQuery {
  Matrix covariates;
  IntVector treatments;
};

struct MixedOptions {
  int quadrature_nodes = kDefaultQuadratureNodes;
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;
  /// Starting values of sigma_v (not sigma_v^2) for the multi-start.
  std::vector<double> start_sd{0.25, 1.0};
  /// log sigma_v below this is treated as the sigma_v = 0 boundary.
  double log_sd_floor = -7.0;
  int threads = 1;
};

/// Default cap on n_i for cluster_prob; larger clusters need log_cluster_prob.
inline constexpr int kMaxCpsClusterSize = 30;

double conditional_prob(const Eigen::Ref<const Vector>& x, double v,
                        const Vector& beta, double offset = 0.0);

/// log P(Z_i = z | eta) = log int prod_j expit(eta_j + v)^z_j (1 - ...)^(1 - z_j)
/// phi(v; 0, rule.sigma2) dv, where eta is the per-unit linear predictor.
double log_cluster_prob_eta(const Vector& eta, const IntVector& z,
                            const QuadratureRule& rule);

double cluster_prob(const CpsQuery& query, const MixedModelFit& fit,
                    const QuadratureRule& rule,
                    int max_cluster_size = kMaxCpsClusterSize);
double log_cluster_prob(const CpsQuery& query, const MixedModelFit& fit,
                        const QuadratureRule& rule);

double marginal_loglik(const Study& study, const Vector& beta, double sigma2_v,
                       const QuadratureRule& rule, int threads = 1);

/// Marginal log-likelihood over a fixed set of clusters, as a function of
/// theta = (beta, log sigma_v). Holds copies of the cluster data so it can
/// be evaluated repeatedly by an optimizer.
class MarginalLikelihood {
 public:
  MarginalLikelihood(std::vector<Matrix> covariates, std::vector<IntVector> treatments,
                     int quadrature_nodes, int threads = 1);
  explicit MarginalLikelihood(const Study& study,
                              int quadrature_nodes = kDefaultQuadratureNodes,
                              int threads = 1);

  int parameter_count() const { return p_ + 1; }
  int covariate_count() const { return p_; }
  double value(const Vector& theta) const;
  /// Returns the value and writes the analytic gradient in theta.
  double value_and_gradient(const Vector& theta, Vector& gradient) const;

  const std::vector<Matrix>& covariates() const { return x_; }
  const std::vector<IntVector>& treatments() const { return z_; }

 private:
  std::vector<Matrix> x_;
  std::vector<IntVector> z_;
  int p_ = 0;
  int nodes_;
  int threads_;
};

/// Maximum likelihood over (beta, log sigma_v) by BFGS, finished with
/// Newton steps on a finite-difference Hessian of the analytic gradient.
MixedModelFit fit_mixed(const Study& study, const MixedOptions& options = {});
MixedModelFit fit_mixed(const MarginalLikelihood& likelihood,
                        const MixedOptions& options = {});

/// Full pmf of a sum of independent Bernoulli(p_k); entry g is P(sum = g).
Vector poisson_binomial(const Vector& p);
double poisson_binomial_pmf(const Vector& p, int g);

/// P(Z_ij = z, sum_{j' != j} Z_ij' = g | X_i) under the fitted model.
double exposure_joint_prob_eta(const Vector& eta, int unit, int z, int g,
                               const QuadratureRule& rule);
double exposure_joint_prob(const Matrix& covariates, int unit, int z, int g,
                           const MixedModelFit& fit, const QuadratureRule& rule);

}  // namespace interfere

#endif  // INTERFERE_MIXED_MODEL_HPP
