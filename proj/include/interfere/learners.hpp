#ifndef INTERFERE_LEARNERS_HPP
#define INTERFERE_LEARNERS_HPP

#include <memory>
#include <string>
#include <vector>

#include "interfere/core.hpp"

namespace interfere {

/// A fitted marginal propensity model e(x) = P(Z = 1 | X = x). Predictions
/// are clamped to [kPropensityEps, 1 - kPropensityEps]. Implementations are
/// immutable and safe for concurrent predict().
class FittedLearner {
 public:
  virtual ~FittedLearner() = default;
  virtual double predict(const Eigen::Ref<const Vector>& x) const = 0;
  /// One prediction per row of x.
  Vector predict_rows(const Matrix& x) const;
};

class PropensityLearner {
 public:
  virtual ~PropensityLearner() = default;
  /// x is n x p, z has length n with entries in {0, 1}.
  virtual std::unique_ptr<FittedLearner> fit(const Matrix& x,
                                             const IntVector& z) const = 0;
  virtual std::string name() const = 0;
};

// ---------------------------------------------------------------------------
// Logistic regression (no implicit intercept; append a constant column).

struct LogisticOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;  // max-norm of the score
  double beta_bound = 1e3;           // |beta| past this means separation
  int max_halvings = 40;
};

struct LogisticFit {
  Vector beta;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;
  /// Log-likelihood after each accepted IRLS step, starting at beta = 0.
  std::vector<double> loglik_trace;
};

double logistic_loglik(const Matrix& x, const IntVector& z, const Vector& beta);
/// Gradient of logistic_loglik with respect to beta.
Vector logistic_score(const Matrix& x, const IntVector& z, const Vector& beta);

/// Maximum likelihood by IRLS (Newton) with step-halving. Throws
/// SeparationDetected, RankDeficient or NotConverged.
LogisticFit fit_logistic(const Matrix& x, const IntVector& z,
                         const LogisticOptions& options = {});

class LogisticLearner final : public PropensityLearner {
 public:
  explicit LogisticLearner(LogisticOptions options = {}) : options_(options) {}
  std::unique_ptr<FittedLearner> fit(const Matrix& x,
                                     const IntVector& z) const override;
  std::string name() const override { return "logistic"; }

 private:
  LogisticOptions options_;
};

// ---------------------------------------------------------------------------
// Nadaraya-Watson kernel smoother with a Gaussian product kernel.

struct KernelOptions {
  /// Multiplier on the normal-reference bandwidth of every coordinate.
  double bandwidth_scale = 1.0;
  int min_observations = 20;
};

class KernelSmoother final : public FittedLearner {
 public:
  KernelSmoother(Matrix x, Vector z, Vector bandwidth);
  double predict(const Eigen::Ref<const Vector>& x) const override;
  /// Zero entries mark coordinates with no spread; they are ignored.
  const Vector& bandwidth() const { return bandwidth_; }

 private:
  Matrix x_;
  Vector z_;
  Vector bandwidth_;
};

/// Bandwidth h_d = scale * sd_d * (4 / (d + 2))^(1 / (d + 4)) * n^(-1 / (d + 4))
/// over the d coordinates with non-zero spread.
std::unique_ptr<KernelSmoother> fit_nonparametric(const Matrix& x,
                                                  const IntVector& z,
                                                  const KernelOptions& options = {});

class KernelLearner final : public PropensityLearner {
 public:
  explicit KernelLearner(KernelOptions options = {}) : options_(options) {}
  std::unique_ptr<FittedLearner> fit(const Matrix& x,
                                     const IntVector& z) const override;
  std::string name() const override { return "kernel"; }

 private:
  KernelOptions options_;
};

/// "logistic" or "kernel"; throws InvalidArgument otherwise.
std::unique_ptr<PropensityLearner> make_learner(const std::string& name);

}  // namespace interfere

#endif  // INTERFERE_LEARNERS_HPP
