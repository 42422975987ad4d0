#include "doctest.h"
#include "interfere/error.hpp"
#include "interfere/learners.hpp"
#include "interfere/rng.hpp"
#include "oracles.hpp"

using namespace interfere;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::IoError;
}

struct Draws {
  Matrix x;
  IntVector z;
};

// Intercept column plus one standard Normal covariate.
Draws logistic_draws(int n, const Vector& beta, std::uint64_t seed) {
  Rng rng(seed);
  Draws d{Matrix(n, 2), IntVector(n)};
  for (int i = 0; i < n; ++i) {
    d.x(i, 0) = 1.0;
    d.x(i, 1) = rng.normal();
    d.z(i) = rng.bernoulli(expit(d.x.row(i).dot(beta)));
  }
  return d;
}

}  // namespace

TEST_CASE("expit") {
  CHECK(expit(0.0) == 0.5);
  for (double t : {-3.0, 0.7, 42.0}) CHECK(expit(t) == doctest::Approx(1.0 - expit(-t)).epsilon(1e-15));
  // extended precision value 0.73105857863000487925...
  CHECK(std::abs(expit(1.0) - 0.7310585786300048792511592418218362743651) < 1e-16);
  CHECK(std::abs(expit(1.0) - static_cast<double>(oracle::expit_ld(1.0L))) < 1e-16);
  CHECK(expit(1000.0) == 1.0);
  CHECK(expit(-1000.0) == 0.0);
  CHECK(std::isfinite(log1pexp(800.0)));
  CHECK(log_expit(-800.0) == doctest::Approx(-800.0));
  CHECK(logit(expit(0.3)) == doctest::Approx(0.3).epsilon(1e-14));
  double prev = 0.0;
  for (double t = -20; t <= 20; t += 0.25) {
    CHECK(expit(t) >= prev);
    prev = expit(t);
  }
}

TEST_CASE("fit_logistic on symmetric data gives zero") {
  Matrix x(8, 1);
  IntVector z(8);
  x << 1, 1, 1, 1, -1, -1, -1, -1;
  z << 1, 0, 1, 0, 1, 0, 1, 0;
  const LogisticFit fit = fit_logistic(x, z);
  CHECK(fit.converged);
  CHECK(std::abs(fit.beta(0)) < 1e-8);
  CHECK(fit.loglik == doctest::Approx(8 * std::log(0.5)));
}

TEST_CASE("fit_logistic error paths") {
  Matrix x(6, 2);
  x << 1, -3, 1, -2, 1, -1, 1, 1, 1, 2, 1, 3;
  IntVector separated(6);
  separated << 0, 0, 0, 1, 1, 1;
  CHECK(code_of([&] { fit_logistic(x, separated); }) == ErrorCode::SeparationDetected);

  IntVector one_level = IntVector::Ones(6);
  CHECK(code_of([&] { fit_logistic(x, one_level); }) == ErrorCode::SeparationDetected);

  Matrix collinear(6, 2);
  collinear.col(0) = x.col(1);
  collinear.col(1) = 2.0 * x.col(1);
  IntVector mixed(6);
  mixed << 0, 1, 0, 1, 0, 1;
  CHECK(code_of([&] { fit_logistic(collinear, mixed); }) == ErrorCode::RankDeficient);
}

TEST_CASE("fit_logistic recovers truth on 10000 draws") {
  Vector beta(2);
  beta << 0.5, -0.25;
  const Draws d = logistic_draws(10000, beta, 20240611);
  const LogisticFit fit = fit_logistic(d.x, d.z);
  REQUIRE(fit.converged);

  // standard errors from the inverse Fisher information at the fit
  const Vector p = expit(d.x * fit.beta);
  const Vector w = p.array() * (1.0 - p.array());
  const Matrix info = d.x.transpose() * w.asDiagonal() * d.x;
  const Vector se = info.inverse().diagonal().cwiseSqrt();
  for (int k = 0; k < 2; ++k) CHECK(std::abs(fit.beta(k) - beta(k)) < 3.0 * se(k));

  CHECK(logistic_score(d.x, d.z, fit.beta).lpNorm<Eigen::Infinity>() < 1e-8);
  // finite differences at the optimum; h balances truncation against the
  // rounding of a 10000 term log-likelihood
  const auto ll = [&](const Vector& b) { return logistic_loglik(d.x, d.z, b); };
  const Vector fd = oracle::fd_gradient(ll, fit.beta, 1e-4);
  CHECK(fd.lpNorm<Eigen::Infinity>() < 1e-5);

  // log-likelihood never decreases across accepted steps
  REQUIRE(fit.loglik_trace.size() >= 2);
  for (std::size_t k = 1; k < fit.loglik_trace.size(); ++k)
    CHECK(fit.loglik_trace[k] >= fit.loglik_trace[k - 1] - 1e-12 * std::abs(fit.loglik));
  CHECK(fit.loglik_trace.back() == fit.loglik);
}

TEST_CASE("analytic score matches finite differences") {
  Vector beta(3);
  beta << 0.2, -0.4, 0.8;
  Rng rng(77);
  Matrix x(400, 3);
  IntVector z(400);
  for (int i = 0; i < 400; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = rng.normal();
    x(i, 2) = rng.normal();
    z(i) = rng.bernoulli(expit(x.row(i).dot(beta)));
  }
  const auto ll = [&](const Vector& b) { return logistic_loglik(x, z, b); };
  for (int point = 0; point < 10; ++point) {
    Vector b(3);
    for (int k = 0; k < 3; ++k) b(k) = rng.normal();
    const Vector analytic = logistic_score(x, z, b);
    const Vector fd = oracle::fd_gradient(ll, b, 1e-6);
    CHECK((analytic - fd).norm() / analytic.norm() < 1e-5);
  }
}

TEST_CASE("kernel smoother") {
  SUBCASE("constant treatment clamps") {
    Rng rng(1);
    Matrix x(30, 1);
    for (int i = 0; i < 30; ++i) x(i, 0) = rng.normal();
    const auto fit = fit_nonparametric(x, IntVector::Ones(30));
    Vector q(1);
    for (double t : {-5.0, 0.0, 3.0}) {
      q(0) = t;
      CHECK(fit->predict(q) == 1.0 - kPropensityEps);
    }
  }
  SUBCASE("mirror symmetric data predicts one half at zero") {
    Rng rng(2);
    Matrix x(60, 1);
    IntVector z(60);
    for (int i = 0; i < 30; ++i) {
      x(i, 0) = rng.normal();
      z(i) = rng.bernoulli(0.6);
      x(i + 30, 0) = -x(i, 0);
      z(i + 30) = 1 - z(i);
    }
    const auto fit = fit_nonparametric(x, z);
    CHECK(std::abs(fit->predict(Vector::Zero(1)) - 0.5) < 1e-10);
  }
  SUBCASE("too few observations") {
    CHECK(code_of([] { fit_nonparametric(Matrix::Zero(19, 1), IntVector::Ones(19)); }) ==
          ErrorCode::TooFewObservations);
  }
  SUBCASE("recovers a nonlinear propensity") {
    Rng rng(3);
    const int n = 5000;
    Matrix x(n, 1);
    IntVector z(n);
    for (int i = 0; i < n; ++i) {
      x(i, 0) = rng.normal();
      z(i) = rng.bernoulli(expit(std::sin(2.0 * x(i, 0))));
    }
    const auto fit = fit_nonparametric(x, z);
    double sse = 0.0;
    int count = 0;
    Vector q(1);
    for (double t = -2.0; t <= 2.0 + 1e-12; t += 0.05) {
      q(0) = t;
      const double e = fit->predict(q);
      CHECK(e >= kPropensityEps);
      CHECK(e <= 1.0 - kPropensityEps);
      sse += std::pow(e - expit(std::sin(2.0 * t)), 2);
      ++count;
    }
    CHECK(sse / count < 0.01);
  }
}

TEST_CASE("learner predictions stay inside the clamp") {
  Vector beta(2);
  beta << 0.0, 9.0;
  const Draws d = logistic_draws(500, beta, 9);
  for (const char* name : {"logistic", "kernel"}) {
    const auto learner = make_learner(name);
    CHECK(learner->name() == name);
    const auto fit = learner->fit(d.x, d.z);
    Matrix grid(201, 2);
    for (int i = 0; i <= 200; ++i) grid.row(i) << 1.0, -50.0 + 0.5 * i;
    const Vector e = fit->predict_rows(grid);
    CHECK(e.minCoeff() >= kPropensityEps);
    CHECK(e.maxCoeff() <= 1.0 - kPropensityEps);
  }
  CHECK(code_of([] { make_learner("forest"); }) == ErrorCode::InvalidArgument);
}
