#include "interfere/simulation.hpp"

#include <bit>
#include <cmath>

#include "interfere/error.hpp"
#include "interfere/rng.hpp"

namespace interfere {

double nonlinear_score(const std::string& name, const Eigen::Ref<const Vector>& x) {
  if (x.size() < 1) throw Error(ErrorCode::InvalidConfig, "nonlinear truth needs p >= 1");
  if (name == "sin2x_plus_half_x") return std::sin(2.0 * x(0)) + 0.5 * x(0);
  if (name == "sin2x") return std::sin(2.0 * x(0));
  throw Error(ErrorCode::InvalidConfig, "propensity.nonlinear: unknown function '" + name + "'");
}

double DgpConfig::score(const Eigen::Ref<const Vector>& x) const {
  return propensity == PropensityKind::Linear ? x.dot(beta) : nonlinear_score(function_name, x);
}

void validate_config(const DgpConfig& c) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (c.clusters < 1) fail("clusters: must be >= 1");
  if (c.size_min < 1 || c.size_max < c.size_min) fail("cluster_size: need 1 <= min <= max");
  if (c.p < 0) fail("p: must be >= 0");
  if (c.propensity == PropensityKind::Linear && c.beta.size() != c.p) {
    fail("propensity.linear: length must equal p");
  }
  if (c.propensity == PropensityKind::Nonlinear) {
    if (c.p < 1) fail("p: nonlinear truth needs p >= 1");
    (void)nonlinear_score(c.function_name, Vector::Zero(c.p));
  }
  if (!(c.sigma2_v >= 0.0) || !std::isfinite(c.sigma2_v)) fail("sigma2_v: must be >= 0");
  if (!(c.outcome.noise_sd >= 0.0)) fail("outcome.noise_sd: must be >= 0");
  if (c.outcome.lambda.size() != 0 && c.outcome.lambda.size() != c.p) {
    fail("outcome.lambda: length must equal p");
  }
}

SimulatedStudy generate(const DgpConfig& config) {
  validate_config(config);
  SimulatedStudy sim;
  sim.truth = config;
  sim.study.p = config.p;
  sim.has_table = config.size_max <= kMaxEnumerationSize;
  sim.potential_outcomes.noiseless = config.outcome.noise_sd == 0.0;
  const Vector lambda =
      config.outcome.lambda.size() ? config.outcome.lambda : Vector::Zero(config.p);
  const double sd_v = std::sqrt(config.sigma2_v);

  for (int i = 0; i < config.clusters; ++i) {
    Rng rng = Rng::stream(config.seed, static_cast<std::uint64_t>(i));
    const int n = rng.uniform_int(config.size_min, config.size_max);
    Cluster cluster;
    cluster.id = "c" + std::to_string(i);
    Matrix x(n, config.p);
    for (int j = 0; j < n; ++j) {
      for (int d = 0; d < config.p; ++d) x(j, d) = rng.normal();
    }
    const double v = sd_v * rng.normal();
    IntVector z(n);
    for (int j = 0; j < n; ++j) {
      z(j) = rng.bernoulli(expit(config.score(x.row(j).transpose()) + v)) ? 1 : 0;
    }
    Vector noise(n);
    for (int j = 0; j < n; ++j) noise(j) = config.outcome.noise_sd * rng.normal();

    const Vector base = (x * lambda).array() + config.outcome.intercept + noise.array();
    const double peer_denominator = n > 1 ? n - 1.0 : 1.0;
    auto outcome = [&](int j, int own, int treated_peers) {
      return base(j) + config.outcome.tau * own +
             config.outcome.delta * treated_peers / peer_denominator;
    };

    const int treated = z.sum();
    for (int j = 0; j < n; ++j) {
      Unit u;
      u.cluster_id = cluster.id;
      u.unit_index = j;
      u.unit_id = j;
      u.treatment = z(j);
      u.outcome = outcome(j, z(j), treated - z(j));
      u.covariates = x.row(j).transpose();
      cluster.units.push_back(std::move(u));
    }
    if (sim.has_table) {
      const std::uint32_t vectors = 1U << n;
      Matrix table(vectors, n);
      for (std::uint32_t w = 0; w < vectors; ++w) {
        const int count = std::popcount(w);
        for (int j = 0; j < n; ++j) {
          const int own = (w >> j) & 1U;
          table(w, j) = outcome(j, own, count - own);
        }
      }
      sim.potential_outcomes.cluster_ids.push_back(cluster.id);
      sim.potential_outcomes.outcomes.push_back(std::move(table));
    }
    sim.random_effects.push_back(v);
    sim.study.clusters.push_back(std::move(cluster));
  }
  sim.study = validate_study(std::move(sim.study));
  return sim;
}

EstimandReport true_estimands(const SimulatedStudy& sim,
                              std::span<const AllocationPolicy> policies) {
  if (!sim.has_table) {
    throw Error(ErrorCode::ClusterTooLarge, "no potential outcome table (clusters above " +
                                                std::to_string(kMaxEnumerationSize) + ")");
  }
  if (!sim.potential_outcomes.noiseless) {
    throw Error(ErrorCode::NoisyTable, "true estimands need a noiseless table");
  }
  EstimandReport report;
  for (const auto& pol : policies) report.alphas.push_back(make_policy(pol.alpha).alpha);
  report.cluster_ids = sim.potential_outcomes.cluster_ids;
  const Eigen::Index a_count = static_cast<Eigen::Index>(policies.size());
  const Eigen::Index count = static_cast<Eigen::Index>(sim.potential_outcomes.outcomes.size());
  report.per_cluster.resize(count, 2 * a_count);
  for (Eigen::Index i = 0; i < count; ++i) {
    for (Eigen::Index a = 0; a < a_count; ++a) {
      for (int z = 0; z < 2; ++z) {
        report.per_cluster(i, 2 * a + z) =
            policy_average(sim.potential_outcomes.outcomes[i], z, policies[a]);
      }
    }
  }
  finalize_report(report);
  // Exact population quantities: no sampling variance.
  report.mu_variance.setZero();
  report.direct_variance.setZero();
  report.spillover_variance.setZero();
  return report;
}

TruthCps::TruthCps(DgpConfig truth, int quadrature_nodes)
    : truth_(std::move(truth)), rule_(gauss_hermite_rule(quadrature_nodes, truth_.sigma2_v)) {}

double TruthCps::prob(const Cluster& cluster, const IntVector& z) const {
  Vector eta(cluster.size());
  for (int j = 0; j < cluster.size(); ++j) eta(j) = truth_.score(cluster.units[j].covariates);
  return std::exp(log_cluster_prob_eta(eta, z, rule_));
}

Vector TruthCps::table(const Cluster& cluster) const {
  const int n = cluster.size();
  if (n > kMaxEnumerationSize) {
    throw Error(ErrorCode::ClusterTooLarge, "cluster '" + cluster.id + "'");
  }
  Vector out(Eigen::Index{1} << n);
  for (Eigen::Index w = 0; w < out.size(); ++w) {
    out(w) = prob(cluster, treatment_from_mask(static_cast<std::uint32_t>(w), n));
  }
  return out;
}

std::uint32_t sample_mask(const Vector& table, double u) {
  double cumulative = 0.0;
  for (Eigen::Index w = 0; w < table.size(); ++w) {
    cumulative += table(w);
    if (u < cumulative) return static_cast<std::uint32_t>(w);
  }
  return static_cast<std::uint32_t>(table.size() - 1);
}

}  // namespace interfere
