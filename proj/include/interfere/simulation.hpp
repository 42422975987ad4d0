#ifndef INTERFERE_SIMULATION_HPP
#define INTERFERE_SIMULATION_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "interfere/estimands.hpp"
#include "interfere/study.hpp"

namespace interfere {

enum class PropensityKind { Linear, Nonlinear };

/// Named nonlinear score functions of the first covariate.
///   "sin2x_plus_half_x": sin(2 x1) + 0.5 x1
///   "sin2x":             sin(2 x1)
double nonlinear_score(const std::string& name, const Eigen::Ref<const Vector>& x);

struct OutcomeModel {
  double intercept = 0.0;
  double tau = 0.0;    // own-treatment effect
  double delta = 0.0;  // effect of the treated-peer proportion
  Vector lambda;       // covariate loadings, length p (empty means zeros)
  double noise_sd = 0.0;
};

struct DgpConfig {
  int clusters = 1;
  int size_min = 1;  // n_i uniform on [size_min, size_max]
  int size_max = 1;
  int p = 1;
  PropensityKind propensity = PropensityKind::Linear;
  Vector beta;               // linear truth
  std::string function_name; // nonlinear truth
  double sigma2_v = 0.0;
  OutcomeModel outcome;
  std::uint64_t seed = 0;

  /// Conditional score eta(x) entering expit(eta + V).
  double score(const Eigen::Ref<const Vector>& x) const;
};

/// Throws InvalidConfig naming the offending field.
void validate_config(const DgpConfig& config);

struct SimulatedStudy {
  Study study;
  std::vector<double> random_effects;
  DgpConfig truth;
  /// Tables exist only when every cluster has n_i <= kMaxEnumerationSize.
  PotentialOutcomeTable potential_outcomes;
  bool has_table = false;
};

/// Deterministic given config.seed; cluster i draws from sub-stream i.
SimulatedStudy generate(const DgpConfig& config);

/// Exact policy-averaged estimands from the potential outcome table.
EstimandReport true_estimands(const SimulatedStudy& sim,
                              std::span<const AllocationPolicy> policies);

/// CPS under the generating model (propensity truth and sigma2_v).
class TruthCps final : public CpsProvider {
 public:
  explicit TruthCps(DgpConfig truth, int quadrature_nodes = kDefaultQuadratureNodes);
  double prob(const Cluster& cluster, const IntVector& z) const override;
  /// Cluster probability of every treatment vector, indexed by bitmask.
  Vector table(const Cluster& cluster) const;

 private:
  DgpConfig truth_;
  QuadratureRule rule_;
};

/// Draws a treatment vector from a cluster's CPS table by inverse CDF.
std::uint32_t sample_mask(const Vector& table, double u);

}  // namespace interfere

#endif  // INTERFERE_SIMULATION_HPP
