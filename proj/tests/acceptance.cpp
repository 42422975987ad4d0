// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "cli.hpp"
#include "interfere/crossfit.hpp"
#include "interfere/error.hpp"
#include "interfere/estimands.hpp"
#include "interfere/io.hpp"
#include "interfere/mixed_model.hpp"
#include "interfere/rng.hpp"
#include "interfere/semiparametric.hpp"
#include "interfere/simulation.hpp"
#include "oracles.hpp"

using namespace interfere;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

struct Stats {
  std::vector<double> values;
  void add(double v) { values.push_back(v); }
  double mean() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s / values.size();
  }
  double se() const {
    const double m = mean();
    double s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return std::sqrt(s / (values.size() - 1) / values.size());
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

Vector beta_truth() {
  Vector b(2);
  b << 0.5, -0.25;
  return b;
}

DgpConfig linear_design(int clusters, int nmin, int nmax, std::uint64_t seed) {
  DgpConfig c;
  c.clusters = clusters;
  c.size_min = nmin;
  c.size_max = nmax;
  c.p = 2;
  c.beta = beta_truth();
  c.sigma2_v = 1.0;
  c.seed = seed;
  return c;
}

// 1 -------------------------------------------------------------------------
Verdict cps_normalization() {
  Rng rng(1001);
  double worst = 0.0;
  for (int config = 0; config < 200; ++config) {
    const int n = 1 + config % 12;
    const int p = rng.uniform_int(1, 3);
    MixedModelFit fit;
    fit.beta = Vector(p);
    for (int k = 0; k < p; ++k) fit.beta(k) = rng.normal();
    fit.sigma2_v = 4.0 * rng.uniform();
    Matrix x(n, p);
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < p; ++k) x(j, k) = rng.normal();
    const QuadratureRule rule = gauss_hermite_rule(kDefaultQuadratureNodes, fit.sigma2_v);
    double total = 0.0;
    for (std::uint32_t w = 0; w < (1u << n); ++w)
      total += cluster_prob({x, treatment_from_mask(w, n)}, fit, rule);
    worst = std::max(worst, std::abs(total - 1.0));
  }
  return {worst < 1e-8, "max |sum - 1| = " + fmt(worst) + " over 200 configurations"};
}

// 2 -------------------------------------------------------------------------
Verdict quadrature_fidelity() {
  Rng rng(1002);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const double s2 = 0.05 + 1.45 * rng.uniform();
    const int n = rng.uniform_int(1, 8);
    Vector eta(n);
    IntVector z(n);
    for (int j = 0; j < n; ++j) {
      eta(j) = 2.0 * rng.normal();
      z(j) = rng.bernoulli(0.5);
    }
    const auto h = [&](double v) { return oracle::conditional_product(eta, z, v); };
    const double gh = integrate(gauss_hermite_rule(30, s2), h);
    worst = std::max(worst, std::abs(gh - oracle::normal_expectation(h, s2, 1e-12)));
  }
  return {worst < 1e-8, "max |GH - Simpson| = " + fmt(worst) + " over 100 integrands"};
}

// 3 -------------------------------------------------------------------------
Verdict gradient_check() {
  Rng rng(1003);
  double worst = 0.0;
  for (int s = 0; s < 3; ++s) {
    DgpConfig c = linear_design(rng.uniform_int(30, 80), 1, 6, 2000 + s);
    c.sigma2_v = 0.3 + 2.0 * rng.uniform();
    const Study study = generate(c).study;
    const MarginalLikelihood lik(study, 30);
    for (int point = 0; point < 10; ++point) {
      Vector theta(3);
      theta << rng.normal(), rng.normal(), 0.8 * rng.normal();
      Vector grad;
      lik.value_and_gradient(theta, grad);
      const Vector fd =
          oracle::fd_gradient([&](const Vector& t) { return lik.value(t); }, theta, 1e-6);
      worst = std::max(worst, (grad - fd).norm() / grad.norm());
    }
  }
  return {worst < 1e-5, "max relative error = " + fmt(worst) + " at 30 points"};
}

// 4 -------------------------------------------------------------------------
Verdict parameter_recovery() {
  Stats b0, b1, s2;
  int unconverged = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const Study study = generate(linear_design(500, 2, 6, 4000 + rep)).study;
    const MixedModelFit fit = fit_mixed(study);
    if (!fit.converged) ++unconverged;
    b0.add(fit.beta(0));
    b1.add(fit.beta(1));
    s2.add(fit.sigma2_v);
  }
  const double z0 = (b0.mean() - 0.5) / b0.se();
  const double z1 = (b1.mean() + 0.25) / b1.se();
  const double zs = (s2.mean() - 1.0) / s2.se();
  const bool pass = unconverged == 0 && std::abs(z0) < 3 && std::abs(z1) < 3 && std::abs(zs) < 3;
  return {pass, "mean beta = (" + fmt(b0.mean()) + ", " + fmt(b1.mean()) + "), mean sigma2 = " +
                    fmt(s2.mean()) + ", z = (" + fmt(z0) + ", " + fmt(z1) + ", " + fmt(zs) + ")"};
}

// 5 -------------------------------------------------------------------------
Verdict inversion() {
  double roundtrip = 0.0, half = 0.0, logit_err = 0.0;
  for (double s2 : {0.25, 1.0, 4.0}) {
    const QuadratureRule r = gauss_hermite_rule(30, s2);
    for (double f : {-3.0, -1.0, 0.0, 0.7, 2.5})
      roundtrip = std::max(roundtrip, std::abs(invert_integral_equation(marginalize_f(f, r), r) - f));
  }
  for (double s2 : {0.0, 0.5, 1.0, 4.0})
    half = std::max(half, std::abs(invert_integral_equation(0.5, gauss_hermite_rule(30, s2))));
  const QuadratureRule zero = gauss_hermite_rule(30, 0.0);
  for (double e : {1e-6, 0.01, 0.2, 0.5, 0.7310585786, 0.9, 0.999999})
    logit_err = std::max(logit_err, std::abs(invert_integral_equation(e, zero) -
                                             static_cast<double>(std::log(e / (1.0L - e)))));
  return {roundtrip < 1e-8 && half < 1e-12 && logit_err < 1e-8,
          "roundtrip " + fmt(roundtrip) + ", f(0.5) " + fmt(half) + ", logit " + fmt(logit_err)};
}

// 6 -------------------------------------------------------------------------
double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ma += a[k];
    mb += b[k];
  }
  ma /= a.size();
  mb /= b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

SemiparamFit semiparam(const Study& study, const PropensityLearner& learner, std::uint64_t seed) {
  const OutOfFoldScores scores = crossfit_propensity(study, assign_folds(study, 5, seed), learner);
  return fit_semiparametric(study, scores);
}

Verdict semiparametric_procedure() {
  const int reps = 10;
  Stats s2;
  double worst_gamma = 0.0, worst_r = 1.0;
  bool all_converged = true;
  for (int rep = 0; rep < reps; ++rep) {
    const SimulatedStudy sim = generate(linear_design(1000, 2, 6, 6000 + rep));
    const SemiparamFit fit = semiparam(sim.study, LogisticLearner(), rep);
    all_converged = all_converged && fit.converged;
    worst_gamma = std::max(worst_gamma, std::abs(fit.gamma_trace.back() - 1.0));
    std::vector<double> f, eta;
    for (std::size_t i = 0; i < sim.study.clusters.size(); ++i) {
      const Vector e = sim.study.clusters[i].covariate_matrix() * beta_truth();
      for (Eigen::Index j = 0; j < e.size(); ++j) {
        f.push_back(fit.f_values[i](j));
        eta.push_back(e(j));
      }
    }
    worst_r = std::min(worst_r, pearson(f, eta));
    s2.add(fit.sigma2_v);
  }
  const double zs = (s2.mean() - 1.0) / s2.se();

  int kernel_wins = 0;
  for (int rep = 0; rep < reps; ++rep) {
    DgpConfig c;
    c.clusters = 1000;
    c.size_min = 2;
    c.size_max = 6;
    c.p = 1;
    c.propensity = PropensityKind::Nonlinear;
    c.function_name = "sin2x_plus_half_x";
    c.sigma2_v = 1.0;
    c.seed = 6500 + rep;
    const SimulatedStudy sim = generate(c);
    double mse[2] = {0.0, 0.0};
    const KernelLearner kernel;
    const LogisticLearner logistic;
    const PropensityLearner* learners[2] = {&kernel, &logistic};
    for (int l = 0; l < 2; ++l) {
      const SemiparamFit fit = semiparam(sim.study, *learners[l], rep);
      all_converged = all_converged && fit.converged;
      int n = 0;
      for (std::size_t i = 0; i < sim.study.clusters.size(); ++i)
        for (const Unit& u : sim.study.clusters[i].units) {
          mse[l] += std::pow(fit.f_values[i](u.unit_index) - c.score(u.covariates), 2);
          ++n;
        }
      mse[l] /= n;
    }
    if (mse[0] < mse[1]) ++kernel_wins;
  }
  const bool pass = all_converged && worst_gamma < 1e-6 && worst_r > 0.95 && std::abs(zs) < 3 &&
                    kernel_wins >= 9;
  return {pass, "max |gamma-1| " + fmt(worst_gamma) + ", min r " + fmt(worst_r) +
                    ", mean sigma2 " + fmt(s2.mean()) + " (z " + fmt(zs) + "), kernel wins " +
                    std::to_string(kernel_wins) + "/10"};
}

// 7 -------------------------------------------------------------------------
Verdict ipw_unbiasedness() {
  // exact part: every cluster with n_i <= 8
  DgpConfig c = linear_design(60, 1, 8, 7000);
  c.outcome.intercept = 1.0;
  c.outcome.tau = 2.0;
  c.outcome.delta = 1.5;
  c.outcome.lambda = (Vector(2) << 0.4, -0.3).finished();
  const SimulatedStudy sim = generate(c);
  const TruthCps truth(sim.truth);
  double exact_err = 0.0;
  for (double alpha : {0.3, 0.5, 0.7})
    for (int z = 0; z < 2; ++z) {
      const EnumerationResult r =
          true_mu_enumeration(sim.study, sim.potential_outcomes, truth, z, AllocationPolicy{alpha});
      for (std::size_t i = 0; i < r.per_cluster_ipw.size(); ++i)
        exact_err = std::max(exact_err, std::abs(r.per_cluster_ipw[i] - r.per_cluster_policy[i]));
    }

  // end to end over replicate studies
  const std::vector<AllocationPolicy> policies{{0.3}, {0.7}};
  Stats de3, de7, se;
  for (int rep = 0; rep < 500; ++rep) {
    DgpConfig d = c;
    d.clusters = 100;
    d.size_min = 2;
    d.size_max = 4;
    d.seed = 70000 + rep;
    const SimulatedStudy s = generate(d);
    const EstimandReport r = estimate(s.study, policies, TruthCps(s.truth));
    de3.add(r.direct(0));
    de7.add(r.direct(1));
    se.add(r.spillover(1, 0));
  }
  const double z3 = (de3.mean() - 2.0) / de3.se();
  const double z7 = (de7.mean() - 2.0) / de7.se();
  const double zs = (se.mean() - 0.6) / se.se();
  const bool pass = exact_err < 1e-10 && std::abs(z3) < 4 && std::abs(z7) < 4 && std::abs(zs) < 4;
  return {pass, "enumeration gap " + fmt(exact_err) + ", mean DE " + fmt(de3.mean()) + "/" +
                    fmt(de7.mean()) + ", mean SE(0.7,0.3) " + fmt(se.mean()) + ", z (" + fmt(z3) +
                    ", " + fmt(z7) + ", " + fmt(zs) + ")"};
}

// 8 -------------------------------------------------------------------------
Verdict exposure_probabilities() {
  Rng rng(1008);
  double worst = 0.0;
  for (int config = 0; config < 50; ++config) {
    const int n = 1 + config % 12;
    const int p = rng.uniform_int(1, 3);
    MixedModelFit fit;
    fit.beta = Vector(p);
    for (int k = 0; k < p; ++k) fit.beta(k) = rng.normal();
    fit.sigma2_v = 3.0 * rng.uniform();
    Matrix x(n, p);
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < p; ++k) x(j, k) = rng.normal();
    const QuadratureRule rule = gauss_hermite_rule(30, fit.sigma2_v);
    // bins[j][z][g] accumulated over every full vector
    std::vector<double> bins(static_cast<std::size_t>(n) * 2 * n, 0.0);
    for (std::uint32_t w = 0; w < (1u << n); ++w) {
      const double pr = cluster_prob({x, treatment_from_mask(w, n)}, fit, rule);
      const int s = oracle::popcount(w);
      for (int j = 0; j < n; ++j) {
        const int z = (w >> j) & 1u;
        bins[(j * 2 + z) * n + (s - z)] += pr;
      }
    }
    for (int j = 0; j < n; ++j)
      for (int z = 0; z < 2; ++z)
        for (int g = 0; g < n; ++g)
          worst = std::max(worst, std::abs(exposure_joint_prob(x, j, z, g, fit, rule) -
                                           bins[(j * 2 + z) * n + g]));
  }
  double pb = 0.0;
  for (int m = 0; m <= 12; ++m)
    for (int rep = 0; rep < 5; ++rep) {
      Vector p(m);
      for (int k = 0; k < m; ++k) p(k) = rng.uniform();
      for (int g = 0; g <= m; ++g)
        pb = std::max(pb, std::abs(poisson_binomial_pmf(p, g) - oracle::poisson_binomial_enum(p, g)));
    }
  return {worst < 1e-8 && pb < 1e-12,
          "exposure max error " + fmt(worst) + ", Poisson-binomial max error " + fmt(pb)};
}

// 9 -------------------------------------------------------------------------
Verdict crossfit_leakage() {
  Rng rng(1009);
  bool leak = false;
  const Study study = generate(linear_design(200, 2, 6, 9000)).study;
  const FoldAssignment folds = assign_folds(study, 5, 9);
  const LogisticLearner logistic;
  const KernelLearner kernel;
  for (const PropensityLearner* learner : {static_cast<const PropensityLearner*>(&logistic),
                                           static_cast<const PropensityLearner*>(&kernel)}) {
    const OutOfFoldScores base = crossfit_propensity(study, folds, *learner);
    for (int trial = 0; trial < 10; ++trial) {
      const int c = static_cast<int>(rng.below(study.clusters.size()));
      Study mutated = study;
      for (Unit& u : mutated.clusters[c].units) {
        u.treatment = 1 - u.treatment;
        for (Eigen::Index k = 0; k < u.covariates.size(); ++k) u.covariates(k) = 5.0 * rng.normal();
      }
      const OutOfFoldScores other = crossfit_propensity(mutated, folds, *learner);
      // the mutated cluster's own scores see new covariates at predict time,
      // so compare scores of the untouched units in its fold and re-predict
      // the cluster from an unchanged training set
      for (std::size_t i = 0; i < study.clusters.size(); ++i)
        if (folds.fold_of_cluster[i] == folds.fold_of_cluster[c] &&
            static_cast<int>(i) != c && other.ehat[i] != base.ehat[i])
          leak = true;
      Study treatment_only = study;
      for (Unit& u : treatment_only.clusters[c].units) u.treatment = 1 - u.treatment;
      if (crossfit_propensity(treatment_only, folds, *learner).ehat[c] != base.ehat[c]) leak = true;
    }
  }

  bool balanced = true, covered = true;
  for (int trial = 0; trial < 100; ++trial) {
    const int clusters = rng.uniform_int(20, 120);
    const int k = rng.uniform_int(2, std::min(clusters, 10));
    const Study s = generate(linear_design(clusters, 2, 4, 9100 + trial)).study;
    const FoldAssignment a = assign_folds(s, k, rng.next_u64());
    const std::vector<int> sizes = a.fold_sizes();
    const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    balanced = balanced && static_cast<int>(sizes.size()) == k && *lo >= 1 && *hi - *lo <= 1 &&
               a.fold_of_cluster.size() == s.clusters.size();
    const OutOfFoldScores scores = crossfit_propensity(s, a, kernel);
    covered = covered && scores.unit_count() == s.unit_count();
    for (std::size_t i = 0; i < s.clusters.size(); ++i)
      covered = covered && scores.ehat[i].size() == s.clusters[i].size() &&
                scores.cluster_ids[i] == s.clusters[i].id;
  }
  return {!leak && balanced && covered, std::string("perturbation ") + (leak ? "leaked" : "exact") +
                                            ", balance " + (balanced ? "ok" : "violated") +
                                            ", coverage " + (covered ? "ok" : "violated")};
}

// 10 ------------------------------------------------------------------------
std::string slurp(const fs::path& p) { return read_text(p); }

int quiet_run(const std::vector<std::string>& args) {
  std::ostringstream sink;
  auto* old_err = std::cerr.rdbuf(sink.rdbuf());
  auto* old_out = std::cout.rdbuf(sink.rdbuf());
  const int code = cli::run(args);
  std::cerr.rdbuf(old_err);
  std::cout.rdbuf(old_out);
  return code;
}

Verdict cli_determinism() {
  const fs::path dir = fs::temp_directory_path() / "interfere_acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_text(dir / "design.json", R"({
    "clusters": 150, "cluster_size": {"min": 2, "max": 6}, "p": 2,
    "propensity": {"linear": [0.5, -0.25]}, "sigma2_v": 1.0,
    "outcome": {"intercept": 1, "tau": 2, "delta": 1.5, "lambda": [0.3, -0.2], "noise_sd": 0.5},
    "seed": 2024})");
  const std::string d = dir.string();
  const std::vector<std::vector<std::string>> commands{
      {"--threads", "1", "simulate", "--config", d + "/design.json", "--out", d + "/sim"},
      {"--threads", "1", "fit", "--study", d + "/sim/study.csv", "--model", "logistic", "--out", d + "/logit"},
      {"--threads", "1", "fit", "--study", d + "/sim/study.csv", "--model", "mixed", "--out", d + "/mixed"},
      {"--threads", "1", "semiparam", "--study", d + "/sim/study.csv", "--learner", "logistic", "--folds", "5",
       "--seed", "7", "--out", d + "/sp_logistic"},
      {"--threads", "1", "semiparam", "--study", d + "/sim/study.csv", "--learner", "kernel", "--folds", "4",
       "--seed", "3", "--out", d + "/sp_kernel"},
      {"--threads", "1", "estimate", "--study", d + "/sim/study.csv", "--cps", "truth", "--cps-file",
       d + "/sim/truth.json", "--alpha", "0.3", "--alpha", "0.7", "--out", d + "/est_truth"},
      {"--threads", "1", "estimate", "--study", d + "/sim/study.csv", "--cps", "mixed", "--cps-file",
       d + "/mixed/fit.json", "--alpha", "0.3", "--alpha", "0.7", "--out", d + "/est_mixed"},
      {"--threads", "1", "estimate", "--study", d + "/sim/study.csv", "--cps", "semiparam", "--cps-file",
       d + "/sp_logistic/semiparam_fit.json", "--alpha", "0.5", "--out", d + "/est_sp"},
  };
  std::vector<std::pair<fs::path, std::string>> first;
  int failures = 0, compared = 0;
  for (int pass = 0; pass < 2; ++pass) {
    std::size_t slot = 0;
    for (const auto& cmd : commands) {
      if (quiet_run(cmd) != 0) ++failures;
      const fs::path out = cmd.back();
      std::vector<fs::path> files;
      for (const auto& entry : fs::directory_iterator(out)) files.push_back(entry.path());
      std::sort(files.begin(), files.end());
      for (const fs::path& f : files) {
        std::string content = slurp(f);
        if (f.filename() == "manifest.json") {
          Json m = Json::parse(content);
          m.erase("started_at");
          m.erase("duration_seconds");
          content = m.dump();
        }
        if (pass == 0) {
          first.emplace_back(f, content);
        } else {
          ++compared;
          if (slot >= first.size() || first[slot].first != f || first[slot].second != content) ++failures;
        }
        ++slot;
      }
    }
  }
  fs::remove_all(dir);
  return {failures == 0 && compared > 0,
          std::to_string(compared) + " files compared across reruns, " + std::to_string(failures) +
              " mismatches or failed commands"};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  Verdict (*run)();
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {1, "CPS normalization", 30, cps_normalization},
      {2, "quadrature fidelity", 10, quadrature_fidelity},
      {3, "gradient correctness", 30, gradient_check},
      {4, "parameter recovery", 300, parameter_recovery},
      {5, "integral-equation inversion", 5, inversion},
      {6, "semiparametric procedure", 600, semiparametric_procedure},
      {7, "IPW unbiasedness at known CPS", 300, ipw_unbiasedness},
      {8, "exposure-mapping probabilities", 60, exposure_probabilities},
      {9, "cross-fitting no-leakage", 30, crossfit_leakage},
      {10, "CLI determinism", 60, cli_determinism},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = seconds <= c.budget_seconds;
    const bool pass = v.pass && in_time;
    if (!pass) ++failed;
    std::printf("[%s] criterion %d: %s: %s; %.1f s (budget %.0f s)%s\n", pass ? "PASS" : "FAIL",
                c.id, c.name, v.detail.c_str(), seconds, c.budget_seconds,
                in_time ? "" : " over budget");
    std::fflush(stdout);
  }
  std::printf("%d/10 criteria passed\n", 10 - failed);
  return failed == 0 ? 0 : 1;
}
