#include "cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>

#include "CLI11.hpp"

#include "interfere/crossfit.hpp"
#include "interfere/error.hpp"
#include "interfere/estimands.hpp"
#include "interfere/io.hpp"
#include "interfere/learners.hpp"
#include "interfere/mixed_model.hpp"
#include "interfere/parallel.hpp"
#include "interfere/rng.hpp"
#include "interfere/semiparametric.hpp"
#include "interfere/simulation.hpp"

namespace interfere::cli {

namespace fs = std::filesystem;

namespace {

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidArgument:
      return kConfigError;
    case ErrorCode::NotConverged:
    case ErrorCode::SeparationDetected:
    case ErrorCode::RankDeficient:
    case ErrorCode::NonFiniteLikelihood:
    case ErrorCode::BracketFailure:
    case ErrorCode::MaxDepthExceeded:
      return kNumericalError;
    default:
      return kDataError;
  }
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

// One manifest per run, written next to the outputs. Only started_at and
// duration_seconds vary between identical reruns.
class Manifest {
 public:
  explicit Manifest(std::string command)
      : started_(std::chrono::steady_clock::now()), started_at_(utc_timestamp()) {
    body_["command"] = std::move(command);
    body_["library_version"] = kVersion;
    body_["generator"] = std::string(kRngName);
    body_["config"] = Json::object();
    body_["inputs"] = Json::object();
    body_["outputs"] = Json::object();
  }
  Json& config() { return body_["config"]; }
  void input(const std::string& role, const fs::path& path) { body_["inputs"][role] = path.string(); }
  void output(const std::string& role, const fs::path& path) {
    body_["outputs"][role] = path.string();
  }
  void seed(std::uint64_t s) { body_["seed"] = s; }

  void write(const fs::path& dir, int status, const std::string& message = {}) {
    body_["status"] = status;
    if (!message.empty()) body_["message"] = message;
    body_["started_at"] = started_at_;
    body_["duration_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    write_json(dir / "manifest.json", body_);
  }

 private:
  Json body_;
  std::chrono::steady_clock::time_point started_;
  std::string started_at_;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string());
}

// Runs a command body; library errors become exit codes, and once the
// output directory exists a manifest is written whatever the outcome.
int guarded(Manifest& manifest, const fs::path& out_dir, const std::function<void()>& body) {
  int status = kSuccess;
  std::string message;
  try {
    ensure_dir(out_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  try {
    body();
  } catch (const Error& e) {
    status = exit_code_for(e.code());
    message = e.what();
    std::cerr << "error: " << message << '\n';
  }
  manifest.write(out_dir, status, message);
  return status;
}

struct SimulateArgs {
  std::string config;
  std::string out;
};

struct FitArgs {
  std::string study;
  std::string model = "mixed";
  std::string out;
  int nodes = kDefaultQuadratureNodes;
};

struct SemiparamArgs {
  std::string study;
  std::string learner = "logistic";
  int folds = kDefaultFolds;
  std::uint64_t seed = 0;
  std::string out;
  int nodes = kDefaultQuadratureNodes;
};

struct EstimateArgs {
  std::string study;
  std::string cps;
  std::string cps_file;
  std::vector<double> alphas;
  std::string out;
  std::string spillover_arm = "control";
};

int cmd_simulate(const SimulateArgs& args) {
  Manifest manifest("simulate");
  manifest.input("config", args.config);
  // Configuration problems are reported before anything is written.
  DgpConfig config;
  try {
    config = parse_config(read_text(args.config));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
  const fs::path out(args.out);
  return guarded(manifest, out, [&] {
    manifest.config() = to_json(config);
    manifest.seed(config.seed);
    const SimulatedStudy sim = generate(config);
    save_study(sim.study, out / "study.csv", StudyFormat::Csv);
    write_json(out / "truth.json", truth_sidecar(sim));
    manifest.output("study", out / "study.csv");
    manifest.output("truth", out / "truth.json");
  });
}

int cmd_fit(const FitArgs& args, int threads) {
  Manifest manifest("fit");
  manifest.input("study", args.study);
  manifest.config() = Json{{"model", args.model}, {"quadrature_nodes", args.nodes},
                           {"threads", threads}};
  const fs::path out(args.out);
  return guarded(manifest, out, [&] {
    const Study study = load_study(args.study);
    Json j;
    if (args.model == "logistic") {
      j = to_json(fit_logistic(study.covariate_matrix(), study.treatments()));
    } else {
      MixedOptions options;
      options.quadrature_nodes = args.nodes;
      options.threads = threads;
      j = to_json(fit_mixed(study, options));
    }
    j["model"] = args.model;
    write_json(out / "fit.json", j);
    manifest.output("fit", out / "fit.json");
  });
}

int cmd_semiparam(const SemiparamArgs& args, int threads) {
  Manifest manifest("semiparam");
  manifest.input("study", args.study);
  manifest.seed(args.seed);
  manifest.config() = Json{{"learner", args.learner}, {"folds", args.folds},
                           {"quadrature_nodes", args.nodes}, {"threads", threads}};
  const fs::path out(args.out);
  return guarded(manifest, out, [&] {
    const Study study = load_study(args.study);
    const auto learner = make_learner(args.learner);
    const FoldAssignment folds = assign_folds(study, args.folds, args.seed);
    const OutOfFoldScores scores = crossfit_propensity(study, folds, *learner, threads);
    write_text(out / "ehat.csv", format_scores_csv(study, scores));
    manifest.output("ehat", out / "ehat.csv");

    SemiparamOptions options;
    options.quadrature_nodes = args.nodes;
    options.threads = threads;
    try {
      const SemiparamFit fit = fit_semiparametric(study, scores, options);
      write_json(out / "semiparam_fit.json", to_json(fit));
    } catch (const SemiparamNotConverged& e) {
      write_json(out / "semiparam_fit.json", to_json(e.fit()));
      manifest.output("semiparam_fit", out / "semiparam_fit.json");
      throw;
    }
    manifest.output("semiparam_fit", out / "semiparam_fit.json");
  });
}

// Every study cluster must appear in the semiparametric fit with the same
// unit ids in the same order.
void check_semiparam_matches(const SemiparamFit& fit, const Study& study) {
  for (const auto& c : study.clusters) {
    std::size_t idx = fit.cluster_ids.size();
    for (std::size_t i = 0; i < fit.cluster_ids.size(); ++i) {
      if (fit.cluster_ids[i] == c.id) idx = i;
    }
    if (idx == fit.cluster_ids.size()) {
      throw Error(ErrorCode::MissingFValue, "fit has no cluster '" + c.id + "'");
    }
    const auto& ids = fit.unit_ids[idx];
    bool same = ids.size() == c.units.size();
    for (std::size_t j = 0; same && j < ids.size(); ++j) same = ids[j] == c.units[j].unit_id;
    if (!same) throw Error(ErrorCode::MissingFValue, "fit units differ in cluster '" + c.id + "'");
  }
}

int cmd_estimate(const EstimateArgs& args, int threads) {
  Manifest manifest("estimate");
  manifest.input("study", args.study);
  manifest.input("cps", args.cps_file);
  manifest.config() = Json{{"cps", args.cps}, {"alphas", args.alphas},
                           {"spillover_arm", args.spillover_arm}, {"threads", threads}};
  std::vector<AllocationPolicy> policies;
  try {
    for (double a : args.alphas) policies.push_back(make_policy(a));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
  const fs::path out(args.out);
  return guarded(manifest, out, [&] {
    const Study study = load_study(args.study);
    if (!study.has_outcomes()) {
      throw Error(ErrorCode::MissingOutcome, "study lacks outcomes");
    }
    const Json source = read_json(args.cps_file);
    std::unique_ptr<CpsProvider> cps;
    if (args.cps == "mixed") {
      MixedModelFit fit = mixed_fit_from_json(source);
      if (fit.beta.size() != study.p) {
        throw Error(ErrorCode::DimensionMismatch,
                    "fit has " + std::to_string(fit.beta.size()) + " coefficients, study p = " +
                        std::to_string(study.p));
      }
      cps = std::make_unique<MixedCps>(std::move(fit));
    } else if (args.cps == "semiparam") {
      SemiparamFit fit = semiparam_fit_from_json(source);
      check_semiparam_matches(fit, study);
      cps = std::make_unique<SemiparamCps>(std::move(fit));
    } else {
      const DgpConfig truth = config_from_sidecar(source);
      if (truth.p != study.p) {
        throw Error(ErrorCode::DimensionMismatch, "truth sidecar p differs from the study");
      }
      cps = std::make_unique<TruthCps>(truth);
    }
    const SpilloverArm arm =
        args.spillover_arm == "treated" ? SpilloverArm::Treated : SpilloverArm::Control;
    const EstimandReport report = estimate(study, policies, *cps, arm, threads);
    write_json(out / "estimands.json", to_json(report));
    write_text(out / "estimands.csv", report_to_csv(report));
    manifest.output("report_json", out / "estimands.json");
    manifest.output("report_csv", out / "estimands.csv");
  });
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Propensity score estimation under partial interference"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads,
                 "Worker threads (default: INTERFERE_PS_THREADS, else 1)")
      ->check(CLI::PositiveNumber);

  SimulateArgs sim_args;
  auto* simulate = app.add_subcommand("simulate", "Generate a study from a JSON design");
  simulate->add_option("--config", sim_args.config, "Design JSON")->required();
  simulate->add_option("--out", sim_args.out, "Output directory")->required();

  FitArgs fit_args;
  auto* fit = app.add_subcommand("fit", "Fit a logistic or mixed effects propensity model");
  fit->add_option("--study", fit_args.study, "Study CSV or JSON")->required();
  fit->add_option("--model", fit_args.model, "logistic or mixed")
      ->check(CLI::IsMember({"logistic", "mixed"}));
  fit->add_option("--out", fit_args.out, "Output directory")->required();
  fit->add_option("--quadrature-nodes", fit_args.nodes, "Gauss-Hermite nodes")
      ->check(CLI::Range(1, 200));

  SemiparamArgs sp_args;
  auto* semiparam = app.add_subcommand("semiparam", "Cross-fitted semiparametric CPS model");
  semiparam->add_option("--study", sp_args.study, "Study CSV or JSON")->required();
  semiparam->add_option("--learner", sp_args.learner, "logistic or kernel")
      ->check(CLI::IsMember({"logistic", "kernel"}));
  semiparam->add_option("--folds", sp_args.folds, "Cluster folds (>= 2)")
      ->check(CLI::Range(2, 1 << 20));
  semiparam->add_option("--seed", sp_args.seed, "Fold assignment seed");
  semiparam->add_option("--out", sp_args.out, "Output directory")->required();
  semiparam->add_option("--quadrature-nodes", sp_args.nodes, "Gauss-Hermite nodes")
      ->check(CLI::Range(1, 200));

  EstimateArgs est_args;
  auto* est = app.add_subcommand("estimate", "IPW estimates of direct and spillover effects");
  est->add_option("--study", est_args.study, "Study CSV or JSON")->required();
  est->add_option("--cps", est_args.cps, "mixed, semiparam or truth")
      ->required()
      ->check(CLI::IsMember({"mixed", "semiparam", "truth"}));
  est->add_option("--cps-file", est_args.cps_file, "Fit JSON or truth sidecar")->required();
  est->add_option("--alpha", est_args.alphas, "Allocation alpha (repeatable)")->required();
  est->add_option("--spillover-arm", est_args.spillover_arm, "control or treated")
      ->check(CLI::IsMember({"control", "treated"}));
  est->add_option("--out", est_args.out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kSuccess;
  } catch (const CLI::CallForAllHelp& e) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kSuccess;
  } catch (const CLI::CallForVersion& e) {
    std::cout << kVersion << '\n';
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kConfigError;
  }

  if (threads <= 0) threads = default_thread_count();
  if (*simulate) return cmd_simulate(sim_args);
  if (*fit) return cmd_fit(fit_args, threads);
  if (*semiparam) return cmd_semiparam(sp_args, threads);
  return cmd_estimate(est_args, threads);
}

}  // namespace interfere::cli
