#include "doctest.h"
#include "interfere/error.hpp"
#include "interfere/quadrature.hpp"
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

double double_factorial(int k) {
  double r = 1.0;
  for (int m = k; m > 1; m -= 2) r *= m;
  return r;
}

}  // namespace

TEST_CASE("one node rule") {
  const QuadratureRule r = gauss_hermite_rule(1, 1.0);
  REQUIRE(r.size() == 1);
  CHECK(r.nodes(0) == 0.0);
  CHECK(r.weights(0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(integrate(r, [](double v) { return v * v * v; }) == 0.0);

  const QuadratureRule degenerate = gauss_hermite_rule(30, 0.0);
  REQUIRE(degenerate.size() == 1);
  CHECK(degenerate.nodes(0) == 0.0);
  CHECK(degenerate.weights(0) == 1.0);
}

TEST_CASE("moments and examples") {
  const QuadratureRule r20 = gauss_hermite_rule(20, 1.0);
  CHECK(std::abs(integrate(r20, [](double v) { return v * v; }) - 1.0) < 1e-10);

  const double gh = integrate(r20, [](double v) { return expit(v) * expit(v); });
  const double simpson = oracle::normal_expectation(
      [](double v) { return expit(v) * expit(v); }, 1.0, 1e-12);
  CHECK(std::abs(gh - simpson) < 1e-8);
  // 0.29337903585809296273... from a 40-digit evaluation
  CHECK(std::abs(simpson - 0.2933790358580929627376491712819011594237) < 1e-11);

  for (double s2 : {0.1, 0.5, 1.0, 4.0}) {
    const QuadratureRule r = gauss_hermite_rule(30, s2);
    CHECK(std::abs(integrate(r, [](double) { return 1.0; }) - 1.0) < 1e-12);
    CHECK(std::abs(integrate(r, [](double v) { return expit(v); }) - 0.5) < 1e-10);
    CHECK(std::abs(integrate(r, [](double v) { return v; })) < 1e-10);
    CHECK(std::abs(integrate(r, [](double v) { return v * v; }) - s2) < 1e-8);
    CHECK(r.weights.minCoeff() > 0.0);
  }

  const QuadratureRule r30 = gauss_hermite_rule(30, 2.0);
  const auto h = [](double v) { return expit(1.0 + v); };
  const double oracle_value = oracle::normal_expectation(h, 2.0, 1e-12);
  CHECK(std::abs(integrate(r30, h) - oracle_value) < 1e-8);
  // 0.67505670233756540716... from a 40-digit evaluation
  CHECK(std::abs(oracle_value - 0.6750567023375654071624014722215709980729) < 1e-11);
}

TEST_CASE("polynomial exactness through degree 2K-1") {
  for (int K : {2, 5, 10}) {
    for (double s2 : {0.3, 1.0, 2.5}) {
      const QuadratureRule r = gauss_hermite_rule(K, s2);
      for (int d = 0; d <= 2 * K - 1; ++d) {
        const double exact =
            (d % 2 == 1) ? 0.0 : std::pow(s2, d / 2) * double_factorial(d - 1);
        const double got = integrate(r, [d](double v) { return std::pow(v, d); });
        // odd moments cancel to zero, so scale by the absolute moment
        const double scale = integrate(r, [d](double v) { return std::pow(std::abs(v), d); });
        CHECK(std::abs(got - exact) <= 1e-10 * std::max(1.0, scale));
      }
      // degree 2K is not integrated exactly
      const double exact = std::pow(s2, K) * double_factorial(2 * K - 1);
      const double got = integrate(r, [K](double v) { return std::pow(v, 2 * K); });
      CHECK(std::abs(got - exact) > 1e-6 * exact);
    }
  }
}

TEST_CASE("rule structure") {
  const QuadratureRule r = gauss_hermite_rule(30, 1.7);
  CHECK(r.sigma2 == 1.7);
  for (int k = 0; k < r.size(); ++k) {
    CHECK(r.nodes(k) == doctest::Approx(-r.nodes(r.size() - 1 - k)).epsilon(1e-14));
    CHECK(r.nodes(k) == doctest::Approx(std::sqrt(1.7) * r.std_nodes(k)).epsilon(1e-14));
  }
  for (int k = 1; k < r.size(); ++k) CHECK(r.nodes(k) > r.nodes(k - 1));
  const QuadratureRule s = r.rescaled(0.4);
  CHECK(s.sigma2 == 0.4);
  CHECK(s.weights == r.weights);
  CHECK(std::abs(integrate(s, [](double v) { return v * v; }) - 0.4) < 1e-12);
}

TEST_CASE("randomized logistic products against simpson") {
  Rng rng(2718);
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const double s2 = 0.05 + 1.45 * rng.uniform();
    const int n = rng.uniform_int(1, 6);
    Vector eta(n);
    IntVector z(n);
    for (int j = 0; j < n; ++j) {
      eta(j) = 2.0 * rng.normal();
      z(j) = rng.bernoulli(0.5);
    }
    const auto h = [&](double v) { return oracle::conditional_product(eta, z, v); };
    const double gh = integrate(gauss_hermite_rule(30, s2), h);
    const double simpson = oracle::normal_expectation(h, s2, 1e-12);
    worst = std::max(worst, std::abs(gh - simpson));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("adaptive simpson") {
  CHECK(std::abs(adaptive_simpson([](double x) { return x * x; }, 0, 1, 1e-12) - 1.0 / 3.0) <
        1e-12);
  CHECK(std::abs(adaptive_simpson([](double v) { return normal_density(v, 1.0); }, -10, 10,
                                  1e-12) -
                 1.0) < 1e-10);
  CHECK(std::abs(adaptive_simpson([](double v) { return expit(v) * normal_density(v, 1.0); },
                                  -10, 10, 1e-12) -
                 0.5) < 1e-10);
  CHECK(normal_density(0.0, 1.0) == doctest::Approx(1.0 / std::sqrt(2.0 * M_PI)));
}

TEST_CASE("quadrature errors") {
  CHECK(code_of([] { gauss_hermite_rule(0, 1.0); }) == ErrorCode::InvalidNodeCount);
  const QuadratureRule r = gauss_hermite_rule(10, 1.0);
  CHECK(code_of([&] { integrate(r, [](double) { return std::nan(""); }); }) ==
        ErrorCode::NonFiniteIntegrand);
  CHECK(code_of([] {
          adaptive_simpson([](double x) { return x < 0.3 ? 0.0 : 1.0; }, 0, 1, 1e-15, 8);
        }) == ErrorCode::MaxDepthExceeded);
}
