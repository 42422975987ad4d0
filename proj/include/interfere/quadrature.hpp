#ifndef INTERFERE_QUADRATURE_HPP
#define INTERFERE_QUADRATURE_HPP

#include <functional>

#include "interfere/core.hpp"

namespace interfere {

/// Default Gauss-Hermite node count for random-effect integrals.
inline constexpr int kDefaultQuadratureNodes = 30;

/// Nodes and weights for integrals against the N(0, sigma2) density:
///   sum_k weights(k) * h(nodes(k))  ~=  int h(v) phi(v; 0, sigma2) dv.
struct QuadratureRule {
  Vector nodes;
  Vector weights;
  double sigma2 = 1.0;
  /// Nodes of the same rule for the standard Normal; nodes = sd * std_nodes.
  Vector std_nodes;

  int size() const { return static_cast<int>(nodes.size()); }
  /// Same node count, rescaled to target a different variance.
  QuadratureRule rescaled(double new_sigma2) const;
};

/// Physicists' Gauss-Hermite rule rescaled to N(0, sigma2). Exact for
/// polynomials up to degree 2K-1. sigma2 == 0 gives the one-node rule at 0.
QuadratureRule gauss_hermite_rule(int node_count, double sigma2);

double integrate(const QuadratureRule& rule,
                 const std::function<double(double)>& integrand);

/// Adaptive Simpson on [lo, hi] with absolute error target tol.
double adaptive_simpson(const std::function<double(double)>& integrand,
                        double lo, double hi, double tol, int max_depth = 60);

/// N(0, sigma2) density.
double normal_density(double v, double sigma2);

}  // namespace interfere

#endif  // INTERFERE_QUADRATURE_HPP
