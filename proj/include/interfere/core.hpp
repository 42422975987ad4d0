#ifndef INTERFERE_CORE_HPP
#define INTERFERE_CORE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>

namespace interfere {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IntVector = Eigen::VectorXi;

/// Probability clamp used by every propensity learner.
inline constexpr double kPropensityEps = 1e-6;

/// Logistic function 1/(1+exp(-t)). Evaluated on the branch that keeps
/// exp() bounded, so it saturates without overflow.
template <std::floating_point Scalar>
Scalar expit(Scalar t) {
  using std::exp;
  if (t >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-t));
  const Scalar e = exp(t);
  return e / (Scalar(1) + e);
}

/// log(1 + exp(t)) without overflow.
template <std::floating_point Scalar>
Scalar log1pexp(Scalar t) {
  using std::exp;
  using std::log1p;
  if (t > Scalar(0)) return t + log1p(exp(-t));
  return log1p(exp(t));
}

/// log expit(t) = -log1pexp(-t); log(1 - expit(t)) = -log1pexp(t).
template <std::floating_point Scalar>
Scalar log_expit(Scalar t) {
  return -log1pexp(-t);
}

template <std::floating_point Scalar>
Scalar logit(Scalar p) {
  using std::log;
  return log(p) - log(Scalar(1) - p);
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Derived::RowsAtCompileTime, 1> expit(
    const Eigen::MatrixBase<Derived>& t) {
  return t.unaryExpr([](typename Derived::Scalar v) { return expit(v); });
}

inline double clamp_probability(double p, double eps = kPropensityEps) {
  return p < eps ? eps : (p > 1.0 - eps ? 1.0 - eps : p);
}

/// Pairwise (cascade) summation in a fixed order. Used for every reduction
/// over clusters so results do not depend on thread scheduling.
double pairwise_sum(std::span<const double> values);

/// log(sum(exp(values))) with max-shift.
double log_sum_exp(std::span<const double> values);

}  // namespace interfere

#endif  // INTERFERE_CORE_HPP
