#include "interfere/estimands.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "interfere/error.hpp"
#include "interfere/parallel.hpp"

namespace interfere {

namespace {

double variance_of_mean(const Vector& values) {
  const Eigen::Index n = values.size();
  if (n < 2) return 0.0;
  const double mean = values.mean();
  return (values.array() - mean).square().sum() / static_cast<double>(n - 1) /
         static_cast<double>(n);
}

double fixed_order_mean(const Vector& values) {
  if (values.size() == 0) return 0.0;
  return pairwise_sum(std::span<const double>(values.data(), values.size())) /
         static_cast<double>(values.size());
}

void check_enumerable(int n, const std::string& id) {
  if (n > kMaxEnumerationSize) {
    throw Error(ErrorCode::ClusterTooLarge,
                "cluster '" + id + "' has " + std::to_string(n) + " units; enumeration cap is " +
                    std::to_string(kMaxEnumerationSize));
  }
}

}  // namespace

AllocationPolicy make_policy(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw Error(ErrorCode::InvalidArgument,
                "allocation alpha must lie strictly in (0, 1), got " + std::to_string(alpha));
  }
  return AllocationPolicy{alpha};
}

MixedCps::MixedCps(MixedModelFit fit)
    : fit_(std::move(fit)), rule_(gauss_hermite_rule(fit_.quadrature_nodes, fit_.sigma2_v)) {}

double MixedCps::prob(const Cluster& cluster, const IntVector& z) const {
  return std::exp(log_cluster_prob(CpsQuery{cluster.covariate_matrix(), z}, fit_, rule_));
}

SemiparamCps::SemiparamCps(SemiparamFit fit)
    : fit_(std::move(fit)), rule_(gauss_hermite_rule(fit_.quadrature_nodes, fit_.sigma2_v)) {}

double SemiparamCps::prob(const Cluster& cluster, const IntVector& z) const {
  return semiparam_cluster_prob(cluster, z, fit_, rule_);
}

void TableCps::set(const std::string& cluster_id, Vector probabilities) {
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (ids_[i] == cluster_id) {
      tables_[i] = std::move(probabilities);
      return;
    }
  }
  ids_.push_back(cluster_id);
  tables_.push_back(std::move(probabilities));
}

double TableCps::prob(const Cluster& cluster, const IntVector& z) const {
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (ids_[i] != cluster.id) continue;
    const std::uint32_t mask = mask_from_treatment(z);
    if (mask >= static_cast<std::uint32_t>(tables_[i].size())) {
      throw Error(ErrorCode::DimensionMismatch, "table too small for cluster '" + cluster.id + "'");
    }
    return tables_[i](mask);
  }
  throw Error(ErrorCode::InvalidArgument, "no CPS table for cluster '" + cluster.id + "'");
}

IntVector treatment_from_mask(std::uint32_t mask, int n) {
  IntVector z(n);
  for (int j = 0; j < n; ++j) z(j) = (mask >> j) & 1U;
  return z;
}

std::uint32_t mask_from_treatment(const IntVector& z) {
  std::uint32_t mask = 0;
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    if (z(j)) mask |= 1U << j;
  }
  return mask;
}

double policy_weight(int treated, int peers, const AllocationPolicy& policy) {
  return std::pow(policy.alpha, treated) * std::pow(1.0 - policy.alpha, peers - treated);
}

double policy_weight(const IntVector& peers, const AllocationPolicy& policy) {
  return policy_weight(peers.sum(), static_cast<int>(peers.size()), policy);
}

double cluster_ipw_terms(const IntVector& z_vec, const Vector& y, int z,
                         const AllocationPolicy& policy, double cps) {
  const int n = static_cast<int>(z_vec.size());
  const int treated = z_vec.sum();
  double total = 0.0;
  for (int j = 0; j < n; ++j) {
    if (z_vec(j) != z) continue;
    if (!(cps > 0.0)) {
      throw Error(ErrorCode::ZeroPropensity, "cluster propensity is not positive");
    }
    total += policy_weight(treated - z_vec(j), n - 1, policy) * y(j) / cps;
  }
  return total / n;
}

double cluster_ipw(const Cluster& cluster, int z, const AllocationPolicy& policy,
                   const CpsProvider& cps) {
  Vector y(cluster.size());
  for (int j = 0; j < cluster.size(); ++j) {
    if (!cluster.units[j].outcome) {
      throw Error(ErrorCode::MissingOutcome,
                  "cluster '" + cluster.id + "' unit " + std::to_string(j));
    }
    y(j) = *cluster.units[j].outcome;
  }
  const IntVector z_vec = cluster.treatments();
  if ((z_vec.array() != z).all()) return 0.0;
  return cluster_ipw_terms(z_vec, y, z, policy, cps.prob(cluster, z_vec));
}

void finalize_report(EstimandReport& report) {
  const Eigen::Index a_count = static_cast<Eigen::Index>(report.alphas.size());
  const Eigen::Index arm = static_cast<Eigen::Index>(report.spillover_arm);
  report.mu.resize(2, a_count);
  report.mu_variance.resize(2, a_count);
  report.direct.resize(a_count);
  report.direct_variance.resize(a_count);
  report.spillover.resize(a_count, a_count);
  report.spillover_variance.resize(a_count, a_count);
  for (Eigen::Index a = 0; a < a_count; ++a) {
    for (int z = 0; z < 2; ++z) {
      const Vector col = report.per_cluster.col(2 * a + z);
      report.mu(z, a) = fixed_order_mean(col);
      report.mu_variance(z, a) = variance_of_mean(col);
    }
    report.direct(a) = report.mu(1, a) - report.mu(0, a);
    report.direct_variance(a) =
        variance_of_mean(report.per_cluster.col(2 * a + 1) - report.per_cluster.col(2 * a));
  }
  for (Eigen::Index a = 0; a < a_count; ++a) {
    for (Eigen::Index b = 0; b < a_count; ++b) {
      report.spillover(a, b) = report.mu(arm, a) - report.mu(arm, b);
      report.spillover_variance(a, b) = variance_of_mean(
          report.per_cluster.col(2 * a + arm) - report.per_cluster.col(2 * b + arm));
    }
  }
}

EstimandReport estimate(const Study& study, std::span<const AllocationPolicy> policies,
                        const CpsProvider& cps, SpilloverArm arm, int threads) {
  if (study.clusters.empty()) {
    throw Error(ErrorCode::InvalidArgument, "study has no clusters");
  }
  if (!study.has_outcomes()) {
    throw Error(ErrorCode::MissingOutcome, "estimation requires every outcome");
  }
  EstimandReport report;
  report.spillover_arm = arm;
  for (const auto& pol : policies) report.alphas.push_back(make_policy(pol.alpha).alpha);
  for (const auto& c : study.clusters) report.cluster_ids.push_back(c.id);
  const Eigen::Index a_count = static_cast<Eigen::Index>(policies.size());
  report.per_cluster.resize(study.cluster_count(), 2 * a_count);

  parallel_for(study.clusters.size(), threads, [&](std::size_t i) {
    const Cluster& c = study.clusters[i];
    Vector y(c.size());
    for (int j = 0; j < c.size(); ++j) y(j) = *c.units[j].outcome;
    const IntVector z_vec = c.treatments();
    const double prob = cps.prob(c, z_vec);
    if (!(prob > 0.0)) {
      throw Error(ErrorCode::ZeroPropensity, "cluster '" + c.id + "' has CPS 0");
    }
    for (Eigen::Index a = 0; a < a_count; ++a) {
      for (int z = 0; z < 2; ++z) {
        report.per_cluster(static_cast<Eigen::Index>(i), 2 * a + z) =
            cluster_ipw_terms(z_vec, y, z, policies[a], prob);
      }
    }
  });
  finalize_report(report);
  return report;
}

double policy_average(const Matrix& outcomes, int z, const AllocationPolicy& policy) {
  const int n = static_cast<int>(outcomes.cols());
  const std::uint32_t vectors = 1U << n;
  double total = 0.0;
  for (int j = 0; j < n; ++j) {
    // centred on the no-peers outcome so a flat row averages to itself exactly
    const double anchor = outcomes(static_cast<Eigen::Index>(z) << j, j);
    double unit = 0.0;
    for (std::uint32_t w = 0; w < vectors; ++w) {
      if (static_cast<int>((w >> j) & 1U) != z) continue;
      const int peers_treated = std::popcount(w) - z;
      unit += policy_weight(peers_treated, n - 1, policy) * (outcomes(w, j) - anchor);
    }
    total += anchor + unit;
  }
  return total / n;
}

EnumerationResult true_mu_enumeration(const Study& study, const PotentialOutcomeTable& table,
                                      const CpsProvider& cps, int z,
                                      const AllocationPolicy& policy) {
  EnumerationResult out;
  for (const auto& c : study.clusters) {
    check_enumerable(c.size(), c.id);
    int idx = -1;
    for (std::size_t t = 0; t < table.cluster_ids.size(); ++t) {
      if (table.cluster_ids[t] == c.id) idx = static_cast<int>(t);
    }
    if (idx < 0) {
      throw Error(ErrorCode::InvalidArgument, "no potential outcomes for cluster '" + c.id + "'");
    }
    const Matrix& outcomes = table.outcomes[idx];
    const int n = c.size();
    if (outcomes.cols() != n || outcomes.rows() != (Eigen::Index{1} << n)) {
      throw Error(ErrorCode::DimensionMismatch, "potential outcome table for '" + c.id + "'");
    }
    double expectation = 0.0;
    for (std::uint32_t w = 0; w < (1U << n); ++w) {
      const IntVector z_vec = treatment_from_mask(w, n);
      const double prob = cps.prob(c, z_vec);
      const Vector y = outcomes.row(w).transpose();
      if ((z_vec.array() != z).all()) continue;
      expectation += prob * cluster_ipw_terms(z_vec, y, z, policy, prob);
    }
    out.per_cluster_ipw.push_back(expectation);
    out.per_cluster_policy.push_back(policy_average(outcomes, z, policy));
  }
  const double count = static_cast<double>(out.per_cluster_ipw.size());
  out.via_ipw = pairwise_sum(out.per_cluster_ipw) / count;
  out.via_policy = pairwise_sum(out.per_cluster_policy) / count;
  return out;
}

}  // namespace interfere
