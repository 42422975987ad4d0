#include "interfere/semiparametric.hpp"

#include <cmath>
#include <string>

#include "interfere/parallel.hpp"

namespace interfere {

namespace {

constexpr double kBracket = 40.0;

struct Attempt {
  SemiparamFit fit;
  bool converged = false;
};

Attempt run_loop(const Study& study, const OutOfFoldScores& scores,
                 const SemiparamOptions& options, double sigma2) {
  Attempt attempt;
  SemiparamFit& fit = attempt.fit;
  fit.quadrature_nodes = options.quadrature_nodes;
  for (const auto& c : study.clusters) {
    fit.cluster_ids.push_back(c.id);
    std::vector<std::int64_t> ids;
    for (const auto& u : c.units) ids.push_back(u.unit_id);
    fit.unit_ids.push_back(std::move(ids));
  }
  const std::size_t count = study.clusters.size();
  std::vector<Vector> f(count);
  MixedOptions mixed;
  mixed.quadrature_nodes = options.quadrature_nodes;
  mixed.threads = options.threads;

  double loading = 1.0;
  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    const QuadratureRule rule = gauss_hermite_rule(options.quadrature_nodes, sigma2);
    parallel_for(count, options.threads, [&](std::size_t i) {
      const Vector& e = scores.ehat[i];
      Vector out(e.size());
      for (Eigen::Index j = 0; j < e.size(); ++j) {
        out(j) = loading * invert_integral_equation(clamp_probability(e(j)), rule,
                                                    options.inversion_tolerance);
      }
      f[i] = std::move(out);
    });
    const SigmaUpdate update = update_sigma(study, f, sigma2, mixed);
    loading *= update.gamma;
    for (auto& fi : f) fi *= update.gamma;

    const double change = std::abs(update.sigma2_v - sigma2);
    sigma2 = update.sigma2_v;
    fit.gamma_trace.push_back(update.gamma);
    fit.sigma2_trace.push_back(sigma2);
    fit.iterations = iter;
    if (std::max(change, std::abs(update.gamma - 1.0)) < options.tolerance) {
      attempt.converged = true;
      break;
    }
  }
  fit.f_values = std::move(f);
  fit.sigma2_v = sigma2;
  fit.loading = loading;
  fit.converged = attempt.converged;
  return attempt;
}

}  // namespace

const Vector* SemiparamFit::find(const std::string& cluster_id) const {
  for (std::size_t i = 0; i < cluster_ids.size(); ++i) {
    if (cluster_ids[i] == cluster_id) return &f_values[i];
  }
  return nullptr;
}

double marginalize_f(double f, const QuadratureRule& rule) {
  double sum = 0.0;
  for (int k = 0; k < rule.size(); ++k) sum += rule.weights(k) * expit(f + rule.nodes(k));
  return sum;
}

double marginalize_f_derivative(double f, const QuadratureRule& rule) {
  double sum = 0.0;
  for (int k = 0; k < rule.size(); ++k) {
    const double p = expit(f + rule.nodes(k));
    sum += rule.weights(k) * p * (1.0 - p);
  }
  return sum;
}

double invert_integral_equation(double ehat, const QuadratureRule& rule, double tol) {
  double lo = -kBracket;
  double hi = kBracket;
  // h(+-40) can round to 0 or 1 but the true range is open
  if (!(ehat > 0.0 && ehat < 1.0) ||
      !(marginalize_f(lo, rule) <= ehat && ehat <= marginalize_f(hi, rule))) {
    throw Error(ErrorCode::BracketFailure,
                "target " + std::to_string(ehat) + " outside h([-40, 40])");
  }
  if (rule.sigma2 == 0.0) {
    // h is expit: the logit is exact.
    return logit(ehat);
  }
  double f = 0.0;
  for (int iter = 0; iter < 400 && hi - lo > tol; ++iter) {
    const double residual = marginalize_f(f, rule) - ehat;
    if (residual == 0.0) return f;
    if (residual > 0.0) {
      hi = f;
    } else {
      lo = f;
    }
    const double slope = marginalize_f_derivative(f, rule);
    double next = slope > 0.0 ? f - residual / slope : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const double step = std::abs(next - f);
    f = next;
    if (step < tol) break;
  }
  return f;
}

SigmaUpdate update_sigma(const Study& study, const std::vector<Vector>& f_values,
                         double start_sigma2, const MixedOptions& options) {
  if (f_values.size() != study.clusters.size()) {
    throw Error(ErrorCode::MissingFValue, "f values do not cover the study");
  }
  std::vector<Matrix> x;
  std::vector<IntVector> z;
  bool all_zero = true;
  for (std::size_t i = 0; i < study.clusters.size(); ++i) {
    const Cluster& c = study.clusters[i];
    if (f_values[i].size() != c.size()) {
      throw Error(ErrorCode::MissingFValue, "cluster '" + c.id + "' f length");
    }
    if (!f_values[i].allFinite()) {
      throw Error(ErrorCode::NonFiniteValue, "cluster '" + c.id + "' f values");
    }
    all_zero = all_zero && f_values[i].isZero(0.0);
    x.push_back(f_values[i]);
    z.push_back(c.treatments());
  }
  if (all_zero) {
    // No signal: gamma is unidentified, fit the intercept-free variance alone.
    for (auto& xi : x) xi.resize(xi.rows(), 0);
  }
  MixedOptions local = options;
  local.start_sd = {std::sqrt(std::max(start_sigma2, 1e-4))};
  const MarginalLikelihood likelihood(std::move(x), std::move(z), options.quadrature_nodes,
                                      options.threads);
  MixedModelFit fit;
  try {
    fit = fit_mixed(likelihood, local);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NotConverged) throw;
    fit = fit_mixed(likelihood, options);
  }
  SigmaUpdate out;
  out.sigma2_v = fit.sigma2_v;
  out.gamma = all_zero ? 1.0 : fit.beta(0);
  out.boundary = fit.boundary;
  return out;
}

SemiparamFit fit_semiparametric(const Study& study, const OutOfFoldScores& ehat,
                                const SemiparamOptions& options) {
  if (ehat.ehat.size() != study.clusters.size()) {
    throw Error(ErrorCode::MissingFValue, "scores do not cover the study");
  }
  for (std::size_t i = 0; i < study.clusters.size(); ++i) {
    if (ehat.cluster_ids[i] != study.clusters[i].id ||
        ehat.ehat[i].size() != study.clusters[i].size()) {
      throw Error(ErrorCode::MissingFValue,
                  "scores do not match cluster '" + study.clusters[i].id + "'");
    }
  }
  Attempt attempt = run_loop(study, ehat, options, options.initial_sigma2);
  if (!attempt.converged) {
    attempt = run_loop(study, ehat, options, options.fallback_sigma2);
  }
  if (!attempt.converged) {
    throw SemiparamNotConverged(
        "no convergence within " + std::to_string(options.max_iterations) + " iterations",
        attempt.fit);
  }
  return attempt.fit;
}

double semiparam_cluster_prob(const Cluster& cluster, const IntVector& z,
                              const SemiparamFit& fit, const QuadratureRule& rule) {
  const Vector* f = fit.find(cluster.id);
  if (!f) throw Error(ErrorCode::MissingFValue, "no f values for cluster '" + cluster.id + "'");
  if (f->size() != cluster.size() || z.size() != cluster.size()) {
    throw Error(ErrorCode::MissingFValue, "f values do not cover cluster '" + cluster.id + "'");
  }
  return std::exp(log_cluster_prob_eta(*f, z, rule));
}

double extrapolate_f(double ehat, const SemiparamFit& fit) {
  const QuadratureRule rule = gauss_hermite_rule(fit.quadrature_nodes, fit.sigma2_v);
  return fit.loading * invert_integral_equation(clamp_probability(ehat), rule);
}

}  // namespace interfere
