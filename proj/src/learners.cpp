#include "interfere/learners.hpp"

#include <cmath>
#include <string>

#include "interfere/error.hpp"

namespace interfere {

namespace {

void check_inputs(const Matrix& x, const IntVector& z) {
  if (x.rows() != z.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "design has " + std::to_string(x.rows()) + " rows, treatment has " +
                    std::to_string(z.size()));
  }
  for (int i = 0; i < z.size(); ++i) {
    if (z(i) != 0 && z(i) != 1) {
      throw Error(ErrorCode::NonBinaryTreatment, "treatment entry " + std::to_string(i));
    }
  }
}

class FittedLogistic final : public FittedLearner {
 public:
  explicit FittedLogistic(Vector beta) : beta_(std::move(beta)) {}
  double predict(const Eigen::Ref<const Vector>& x) const override {
    return clamp_probability(expit(x.dot(beta_)));
  }

 private:
  Vector beta_;
};

}  // namespace

Vector FittedLearner::predict_rows(const Matrix& x) const {
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = predict(x.row(i).transpose());
  return out;
}

double logistic_loglik(const Matrix& x, const IntVector& z, const Vector& beta) {
  const Vector eta = x * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    ll -= z(i) ? log1pexp(-eta(i)) : log1pexp(eta(i));
  }
  return ll;
}

Vector logistic_score(const Matrix& x, const IntVector& z, const Vector& beta) {
  const Vector p = expit(x * beta);
  return x.transpose() * (z.cast<double>() - p);
}

LogisticFit fit_logistic(const Matrix& x, const IntVector& z,
                         const LogisticOptions& options) {
  check_inputs(x, z);
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  LogisticFit fit;
  fit.beta = Vector::Zero(p);
  if (p == 0) {
    fit.loglik = logistic_loglik(x, z, fit.beta);
    fit.converged = true;
    return fit;
  }
  const int treated = z.sum();
  if (treated == 0 || treated == n) {
    throw Error(ErrorCode::SeparationDetected,
                "only one treatment level present; the MLE is at infinity");
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  if (qr.rank() < p) {
    throw Error(ErrorCode::RankDeficient,
                "design rank " + std::to_string(qr.rank()) + " < " + std::to_string(p));
  }

  const Vector zd = z.cast<double>();
  double ll = logistic_loglik(x, z, fit.beta);
  fit.loglik_trace.push_back(ll);
  for (int iter = 0; iter <= options.max_iterations; ++iter) {
    const Vector prob = expit(x * fit.beta);
    const Vector score = x.transpose() * (zd - prob);
    fit.grad_norm = score.cwiseAbs().maxCoeff();
    fit.iterations = iter;
    fit.loglik = ll;
    if (fit.grad_norm < options.gradient_tolerance) {
      fit.converged = true;
      return fit;
    }
    if (iter == options.max_iterations) break;
    if (ll > -1e-8 * static_cast<double>(n)) {
      throw Error(ErrorCode::SeparationDetected,
                  "log-likelihood saturates at 0 (perfect prediction)");
    }

    const Vector w = prob.array() * (1.0 - prob.array());
    const Matrix info = x.transpose() * w.asDiagonal() * x;
    Eigen::LDLT<Matrix> ldlt(info);
    Vector step = ldlt.solve(score);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) step = score;

    // Near the optimum the change in log-likelihood is below rounding
    // noise; a step is then accepted when it shrinks the score instead.
    const double noise = 1e-12 * (1.0 + std::abs(ll));
    double scale = 1.0;
    Vector candidate;
    double candidate_ll = -INFINITY;
    bool accepted = false;
    for (int h = 0; h <= options.max_halvings; ++h, scale *= 0.5) {
      candidate = fit.beta + scale * step;
      candidate_ll = logistic_loglik(x, z, candidate);
      if (candidate_ll > ll) {
        accepted = true;
        break;
      }
      if (candidate_ll >= ll - noise &&
          logistic_score(x, z, candidate).cwiseAbs().maxCoeff() < fit.grad_norm) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    fit.beta = candidate;
    ll = candidate_ll;
    fit.loglik_trace.push_back(ll);
    if (fit.beta.cwiseAbs().maxCoeff() > options.beta_bound) {
      throw Error(ErrorCode::SeparationDetected,
                  "coefficients diverge past " + std::to_string(options.beta_bound));
    }
  }
  fit.loglik = ll;
  const Vector score = logistic_score(x, z, fit.beta);
  fit.grad_norm = score.cwiseAbs().maxCoeff();
  if (fit.grad_norm < options.gradient_tolerance) {
    fit.converged = true;
    return fit;
  }
  throw Error(ErrorCode::NotConverged,
              "IRLS stopped after " + std::to_string(fit.iterations) +
                  " iterations with score max-norm " + std::to_string(fit.grad_norm));
}

std::unique_ptr<FittedLearner> LogisticLearner::fit(const Matrix& x,
                                                    const IntVector& z) const {
  return std::make_unique<FittedLogistic>(fit_logistic(x, z, options_).beta);
}

KernelSmoother::KernelSmoother(Matrix x, Vector z, Vector bandwidth)
    : x_(std::move(x)), z_(std::move(z)), bandwidth_(std::move(bandwidth)) {}

double KernelSmoother::predict(const Eigen::Ref<const Vector>& x) const {
  const Eigen::Index n = x_.rows();
  Vector log_w = Vector::Zero(n);
  for (Eigen::Index d = 0; d < x_.cols(); ++d) {
    if (bandwidth_(d) == 0.0) continue;
    const double inv_h = 1.0 / bandwidth_(d);
    log_w.array() -= 0.5 * ((x_.col(d).array() - x(d)) * inv_h).square();
  }
  const double top = log_w.maxCoeff();
  const Vector w = (log_w.array() - top).exp();
  return clamp_probability(w.dot(z_) / w.sum());
}

std::unique_ptr<KernelSmoother> fit_nonparametric(const Matrix& x,
                                                  const IntVector& z,
                                                  const KernelOptions& options) {
  check_inputs(x, z);
  const Eigen::Index n = x.rows();
  if (n < options.min_observations) {
    throw Error(ErrorCode::TooFewObservations,
                std::to_string(n) + " observations, need " +
                    std::to_string(options.min_observations));
  }
  Vector sd(x.cols());
  int active = 0;
  for (Eigen::Index d = 0; d < x.cols(); ++d) {
    const double mean = x.col(d).mean();
    sd(d) = std::sqrt((x.col(d).array() - mean).square().sum() / (n - 1));
    if (sd(d) > 0.0) ++active;
  }
  const double factor = std::pow(4.0 / (active + 2), 1.0 / (active + 4)) *
                        std::pow(static_cast<double>(n), -1.0 / (active + 4));
  Vector bandwidth = options.bandwidth_scale * factor * sd;
  return std::make_unique<KernelSmoother>(x, z.cast<double>(), std::move(bandwidth));
}

std::unique_ptr<FittedLearner> KernelLearner::fit(const Matrix& x,
                                                  const IntVector& z) const {
  return fit_nonparametric(x, z, options_);
}

std::unique_ptr<PropensityLearner> make_learner(const std::string& name) {
  if (name == "logistic") return std::make_unique<LogisticLearner>();
  if (name == "kernel") return std::make_unique<KernelLearner>();
  throw Error(ErrorCode::InvalidArgument, "unknown learner '" + name + "'");
}

}  // namespace interfere
