#ifndef INTERFERE_ESTIMANDS_HPP
#define INTERFERE_ESTIMANDS_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "interfere/mixed_model.hpp"
#include "interfere/quadrature.hpp"
#include "interfere/semiparametric.hpp"
#include "interfere/study.hpp"

namespace interfere {

/// Largest cluster for which 2^{n_i} enumeration is performed.
inline constexpr int kMaxEnumerationSize = 12;

/// Bernoulli(alpha) allocation of peers' treatments.
struct AllocationPolicy {
  double alpha = 0.5;
};

AllocationPolicy make_policy(double alpha);

/// P(Z_i = z | X_i) for a cluster. Implementations must be safe for
/// concurrent read-only use.
class CpsProvider {
 public:
  virtual ~CpsProvider() = default;
  virtual double prob(const Cluster& cluster, const IntVector& z) const = 0;
};

class MixedCps final : public CpsProvider {
 public:
  explicit MixedCps(MixedModelFit fit);
  double prob(const Cluster& cluster, const IntVector& z) const override;

 private:
  MixedModelFit fit_;
  QuadratureRule rule_;
};

class SemiparamCps final : public CpsProvider {
 public:
  explicit SemiparamCps(SemiparamFit fit);
  double prob(const Cluster& cluster, const IntVector& z) const override;

 private:
  SemiparamFit fit_;
  QuadratureRule rule_;
};

/// Explicit table: per cluster id, probabilities indexed by the bitmask
/// w = sum_j z_j 2^j.
class TableCps final : public CpsProvider {
 public:
  void set(const std::string& cluster_id, Vector probabilities);
  double prob(const Cluster& cluster, const IntVector& z) const override;

 private:
  std::vector<std::string> ids_;
  std::vector<Vector> tables_;
};

/// Treatment vector of size n encoded by bitmask w (bit j is unit j).
IntVector treatment_from_mask(std::uint32_t mask, int n);
std::uint32_t mask_from_treatment(const IntVector& z);

/// alpha^s (1 - alpha)^(m - s) with s the number of treated peers.
double policy_weight(const IntVector& peers, const AllocationPolicy& policy);
double policy_weight(int treated, int peers, const AllocationPolicy& policy);

/// Horvitz-Thompson contribution of one cluster with hypothetical
/// treatments z_vec and outcomes y:
///   (1/n) sum_j 1{z_j = z} policy_weight(z_{-j}) y_j / cps.
double cluster_ipw_terms(const IntVector& z_vec, const Vector& y, int z,
                         const AllocationPolicy& policy, double cps);
/// Same with the cluster's observed treatments and outcomes.
double cluster_ipw(const Cluster& cluster, int z, const AllocationPolicy& policy,
                   const CpsProvider& cps);

/// Which arm the spillover contrast is taken on.
enum class SpilloverArm { Control = 0, Treated = 1 };

struct EstimandReport {
  std::vector<double> alphas;
  std::vector<std::string> cluster_ids;
  /// mu(z, alpha_a) in row z, column a.
  Matrix mu;
  Matrix mu_variance;
  /// direct(a) = mu(1, a) - mu(0, a).
  Vector direct;
  Vector direct_variance;
  /// spillover(a, b) = mu(arm, a) - mu(arm, b).
  Matrix spillover;
  Matrix spillover_variance;
  SpilloverArm spillover_arm = SpilloverArm::Control;
  /// Cluster contributions; column 2a + z holds mu(z, alpha_a) terms.
  Matrix per_cluster;
};

/// mu(z, alpha) = (1/I) sum_i cluster_ipw(i, z, alpha), with variances from
/// the empirical variance of per-cluster contributions divided by I.
EstimandReport estimate(const Study& study, std::span<const AllocationPolicy> policies,
                        const CpsProvider& cps,
                        SpilloverArm arm = SpilloverArm::Control, int threads = 1);

/// Fills the effect contrasts and variances of a report from its
/// per_cluster matrix.
void finalize_report(EstimandReport& report);

/// Potential outcomes R_ij(w) for every treatment vector w of every cluster:
/// row w of outcomes[i] is (R_i1(w), ..., R_in_i(w)).
struct PotentialOutcomeTable {
  std::vector<std::string> cluster_ids;
  std::vector<Matrix> outcomes;
  bool noiseless = true;
};

struct EnumerationResult {
  /// sum_w cps(w) cluster_ipw(w), averaged over clusters.
  double via_ipw = 0.0;
  /// (1/n_i) sum_j sum_{peer vectors} policy_weight R_ij(z, peers), averaged.
  double via_policy = 0.0;
  std::vector<double> per_cluster_ipw;
  std::vector<double> per_cluster_policy;
};

/// Exact expectation of cluster_ipw under the CPS, by enumeration over all
/// 2^{n_i} vectors, computed along two independent summation routes.
EnumerationResult true_mu_enumeration(const Study& study, const PotentialOutcomeTable& table,
                                      const CpsProvider& cps, int z,
                                      const AllocationPolicy& policy);

/// Policy-averaged potential outcome of one cluster (route two above).
double policy_average(const Matrix& outcomes, int z, const AllocationPolicy& policy);

}  // namespace interfere

#endif  // INTERFERE_ESTIMANDS_HPP
