#ifndef INTERFERE_SEMIPARAMETRIC_HPP
#define INTERFERE_SEMIPARAMETRIC_HPP

#include <string>
#include <vector>

#include "interfere/crossfit.hpp"
#include "interfere/error.hpp"
#include "interfere/mixed_model.hpp"
#include "interfere/quadrature.hpp"
#include "interfere/study.hpp"

namespace interfere {

/// h(f) = int expit(f + v) phi(v; 0, rule.sigma2) dv: the marginal propensity
/// implied by conditional score f. Strictly increasing, h(0) = 1/2.
double marginalize_f(double f, const QuadratureRule& rule);
/// h'(f) = int expit(f + v) (1 - expit(f + v)) phi dv.
double marginalize_f_derivative(double f, const QuadratureRule& rule);

/// Solves h(f) = ehat by bisection on [-40, 40] with safeguarded Newton
/// steps; stops once the bracket (or the last step) is narrower than tol.
double invert_integral_equation(double ehat, const QuadratureRule& rule,
                                double tol = 1e-12);

struct SigmaUpdate {
  double sigma2_v = 0.0;
  double gamma = 1.0;
  bool boundary = false;
};

/// Mixed model P(Z_ij = 1 | f_ij, V_i) = expit(gamma f_ij + V_i) fitted by
/// maximum likelihood; f_values align with Study::clusters.
SigmaUpdate update_sigma(const Study& study, const std::vector<Vector>& f_values,
                         double start_sigma2, const MixedOptions& options = {});

struct SemiparamOptions {
  int quadrature_nodes = kDefaultQuadratureNodes;
  double tolerance = 1e-6;
  int max_iterations = 100;
  double initial_sigma2 = 1.0;
  double fallback_sigma2 = 0.25;
  double inversion_tolerance = 1e-12;
  int threads = 1;
};

struct SemiparamFit {
  std::vector<std::string> cluster_ids;
  std::vector<std::vector<std::int64_t>> unit_ids;
  std::vector<Vector> f_values;
  double sigma2_v = 0.0;
  std::vector<double> gamma_trace;
  std::vector<double> sigma2_trace;
  /// Product of all absorbed loadings: f = loading * h^{-1}(ehat).
  double loading = 1.0;
  int iterations = 0;
  bool converged = false;
  int quadrature_nodes = kDefaultQuadratureNodes;

  /// f for the cluster, or nullptr.
  const Vector* find(const std::string& cluster_id) const;
};

/// Thrown when the outer loop fails to converge; carries the last attempt.
class SemiparamNotConverged : public Error {
 public:
  SemiparamNotConverged(const std::string& detail, SemiparamFit fit)
      : Error(ErrorCode::NotConverged, detail), fit_(std::move(fit)) {}
  const SemiparamFit& fit() const { return fit_; }

 private:
  SemiparamFit fit_;
};

/// Alternates f <- loading * h^{-1}(ehat; sigma2) and (sigma2, gamma) <-
/// update_sigma(f), absorbing gamma into the loading, until both the
/// variance change and |gamma - 1| fall below the tolerance.
SemiparamFit fit_semiparametric(const Study& study, const OutOfFoldScores& ehat,
                                const SemiparamOptions& options = {});

/// Cluster probability of treatment vector z with per-unit success
/// probability expit(f_ij + v). Throws MissingFValue if the cluster is unknown.
double semiparam_cluster_prob(const Cluster& cluster, const IntVector& z,
                              const SemiparamFit& fit, const QuadratureRule& rule);

/// f at a covariate point outside the training study, from the learner's
/// marginal estimate at the fitted variance.
double extrapolate_f(double ehat, const SemiparamFit& fit);

}  // namespace interfere

#endif  // INTERFERE_SEMIPARAMETRIC_HPP
