#include "interfere/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <string>

#include "interfere/error.hpp"

namespace interfere {

namespace {

struct StandardRule {
  Vector nodes;    // standard-Normal nodes (sqrt(2) * Hermite roots)
  Vector weights;  // probability weights, sum to 1
};

// Orthonormal Hermite recurrence at x; returns (p_n(x), p_{n-1}(x)).
std::pair<double, double> hermite_orthonormal(int n, double x) {
  double p_prev = 0.0;
  double p = 1.0 / std::pow(std::numbers::pi, 0.25);
  for (int k = 0; k < n; ++k) {
    const double next = x * std::sqrt(2.0 / (k + 1)) * p -
                        std::sqrt(static_cast<double>(k) / (k + 1)) * p_prev;
    p_prev = p;
    p = next;
  }
  return {p, p_prev};
}

// Golub-Welsch for starting values, then Newton on the orthonormal
// recurrence; weights from the derivative formula w = 2 / p_n'(x)^2.
StandardRule build_standard_rule(int n) {
  Matrix jacobi = Matrix::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(k / 2.0);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> solver(jacobi, Eigen::EigenvaluesOnly);
  Vector roots = solver.eigenvalues();

  StandardRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int k = 0; k < n; ++k) {
    double x = roots(k);
    double derivative = 0.0;
    for (int it = 0; it < 20; ++it) {
      const auto [p, p_prev] = hermite_orthonormal(n, x);
      derivative = std::sqrt(2.0 * n) * p_prev;
      const double step = p / derivative;
      x -= step;
      if (std::abs(step) <= 1e-16 * std::max(1.0, std::abs(x))) break;
    }
    const auto [p, p_prev] = hermite_orthonormal(n, x);
    (void)p;
    derivative = std::sqrt(2.0 * n) * p_prev;
    rule.nodes(k) = std::numbers::sqrt2 * x;
    rule.weights(k) = 2.0 / (derivative * derivative) / std::sqrt(std::numbers::pi);
  }
  // Enforce exact symmetry of the rule about zero.
  for (int k = 0; k < n / 2; ++k) {
    const double node = 0.5 * (rule.nodes(n - 1 - k) - rule.nodes(k));
    const double weight = 0.5 * (rule.weights(n - 1 - k) + rule.weights(k));
    rule.nodes(k) = -node;
    rule.nodes(n - 1 - k) = node;
    rule.weights(k) = rule.weights(n - 1 - k) = weight;
  }
  if (n % 2 == 1) rule.nodes(n / 2) = 0.0;
  rule.weights /= pairwise_sum(std::span<const double>(rule.weights.data(), n));
  return rule;
}

const StandardRule& standard_rule(int n) {
  static std::mutex mutex;
  static std::map<int, StandardRule> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, build_standard_rule(n)).first;
  return it->second;
}

constexpr int kMinDepth = 4;

struct SimpsonState {
  const std::function<double(double)>& f;
  int max_depth;
};

double simpson_recurse(const SimpsonState& s, double a, double b, double fa,
                       double fm, double fb, double whole, double tol,
                       int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = s.f(lm);
  const double frm = s.f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  // A few forced subdivisions keep a coarse initial sample from accepting
  // a peaked integrand by coincidence.
  if (depth >= kMinDepth && std::abs(delta) <= 15.0 * tol) {
    return left + right + delta / 15.0;
  }
  if (depth >= s.max_depth) {
    throw Error(ErrorCode::MaxDepthExceeded,
                "adaptive Simpson exceeded depth " + std::to_string(s.max_depth));
  }
  return simpson_recurse(s, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1) +
         simpson_recurse(s, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1);
}

}  // namespace

QuadratureRule QuadratureRule::rescaled(double new_sigma2) const {
  if (new_sigma2 == 0.0 || (sigma2 == 0.0 && size() == 1)) {
    return gauss_hermite_rule(new_sigma2 == 0.0 ? 1 : size(), new_sigma2);
  }
  QuadratureRule out = *this;
  out.sigma2 = new_sigma2;
  out.nodes = std::sqrt(new_sigma2) * std_nodes;
  return out;
}

QuadratureRule gauss_hermite_rule(int node_count, double sigma2) {
  if (node_count < 1) {
    throw Error(ErrorCode::InvalidNodeCount,
                "node count " + std::to_string(node_count) + " < 1");
  }
  if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) {
    throw Error(ErrorCode::InvalidArgument, "variance must be finite and >= 0");
  }
  QuadratureRule rule;
  rule.sigma2 = sigma2;
  if (sigma2 == 0.0) {
    rule.nodes = Vector::Zero(1);
    rule.weights = Vector::Ones(1);
    rule.std_nodes = Vector::Zero(1);
    return rule;
  }
  const StandardRule& base = standard_rule(node_count);
  rule.std_nodes = base.nodes;
  rule.nodes = std::sqrt(sigma2) * base.nodes;
  rule.weights = base.weights;
  return rule;
}

double integrate(const QuadratureRule& rule,
                 const std::function<double(double)>& integrand) {
  double sum = 0.0;
  for (int k = 0; k < rule.size(); ++k) {
    const double value = integrand(rule.nodes(k));
    if (!std::isfinite(value)) {
      throw Error(ErrorCode::NonFiniteIntegrand,
                  "integrand not finite at node " + std::to_string(rule.nodes(k)));
    }
    sum += rule.weights(k) * value;
  }
  return sum;
}

double adaptive_simpson(const std::function<double(double)>& integrand,
                        double lo, double hi, double tol, int max_depth) {
  if (!(lo < hi) || !(tol > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "adaptive Simpson needs lo < hi, tol > 0");
  }
  const SimpsonState state{integrand, max_depth};
  const double fa = integrand(lo);
  const double fb = integrand(hi);
  const double fm = integrand(0.5 * (lo + hi));
  const double whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_recurse(state, lo, hi, fa, fm, fb, whole, tol, 0);
}

double normal_density(double v, double sigma2) {
  return std::exp(-0.5 * v * v / sigma2) / std::sqrt(2.0 * std::numbers::pi * sigma2);
}

}  // namespace interfere
