#include "interfere/io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "interfere/error.hpp"
#include "interfere/rng.hpp"

namespace interfere {

namespace {

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

[[noreturn]] void config_error(const std::string& key, const std::string& what) {
  throw Error(ErrorCode::InvalidConfig, "key '" + key + "': " + what);
}

const Json& require(const Json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) config_error(path + key, "missing");
  return obj.at(key);
}

double get_number(const Json& obj, const std::string& key, const std::string& path) {
  const Json& v = require(obj, key, path);
  if (!v.is_number()) config_error(path + key, "expected a number");
  return v.get<double>();
}

long long get_integer(const Json& obj, const std::string& key, const std::string& path) {
  const Json& v = require(obj, key, path);
  if (!v.is_number_integer()) config_error(path + key, "expected an integer");
  return v.get<long long>();
}

Vector get_vector(const Json& v, const std::string& key) {
  if (!v.is_array()) config_error(key, "expected an array of numbers");
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (!v[k].is_number()) config_error(key, "expected an array of numbers");
    out(static_cast<Eigen::Index>(k)) = v[k].get<double>();
  }
  return out;
}

void reject_unknown(const Json& obj, const std::set<std::string>& known, const std::string& path) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.count(it.key())) config_error(path + it.key(), "unknown key");
  }
}

}  // namespace

Json to_json(const MixedModelFit& fit) {
  Json j;
  j["beta"] = to_std(fit.beta);
  j["sigma2_v"] = fit.sigma2_v;
  j["loglik"] = fit.loglik;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["grad_norm"] = fit.grad_norm;
  j["boundary"] = fit.boundary;
  j["quadrature_nodes"] = fit.quadrature_nodes;
  return j;
}

MixedModelFit mixed_fit_from_json(const Json& j) {
  try {
    MixedModelFit fit;
    fit.beta = to_vector(j.at("beta").get<std::vector<double>>());
    fit.sigma2_v = j.at("sigma2_v").get<double>();
    fit.loglik = j.value("loglik", 0.0);
    fit.converged = j.value("converged", false);
    fit.iterations = j.value("iterations", 0);
    fit.grad_norm = j.value("grad_norm", 0.0);
    fit.boundary = j.value("boundary", false);
    fit.quadrature_nodes = j.value("quadrature_nodes", kDefaultQuadratureNodes);
    if (fit.sigma2_v < 0.0) throw Error(ErrorCode::ParseError, "sigma2_v < 0");
    return fit;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("mixed fit: ") + e.what());
  }
}

Json to_json(const LogisticFit& fit) {
  Json j;
  j["beta"] = to_std(fit.beta);
  j["loglik"] = fit.loglik;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["grad_norm"] = fit.grad_norm;
  return j;
}

Json to_json(const SemiparamFit& fit) {
  Json j;
  j["sigma2_v"] = fit.sigma2_v;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["gamma_trace"] = fit.gamma_trace;
  j["sigma2_trace"] = fit.sigma2_trace;
  j["loading"] = fit.loading;
  j["quadrature_nodes"] = fit.quadrature_nodes;
  Json f = Json::array();
  for (std::size_t i = 0; i < fit.cluster_ids.size(); ++i) {
    for (Eigen::Index k = 0; k < fit.f_values[i].size(); ++k) {
      f.push_back(Json{{"cluster_id", fit.cluster_ids[i]},
                       {"unit_id", fit.unit_ids[i][static_cast<std::size_t>(k)]},
                       {"f", fit.f_values[i](k)}});
    }
  }
  j["f"] = std::move(f);
  return j;
}

SemiparamFit semiparam_fit_from_json(const Json& j) {
  try {
    SemiparamFit fit;
    fit.sigma2_v = j.at("sigma2_v").get<double>();
    fit.converged = j.value("converged", false);
    fit.iterations = j.value("iterations", 0);
    fit.gamma_trace = j.value("gamma_trace", std::vector<double>{});
    fit.sigma2_trace = j.value("sigma2_trace", std::vector<double>{});
    fit.loading = j.value("loading", 1.0);
    fit.quadrature_nodes = j.value("quadrature_nodes", kDefaultQuadratureNodes);
    std::vector<std::vector<double>> values;
    for (const auto& row : j.at("f")) {
      const std::string id = row.at("cluster_id").get<std::string>();
      if (fit.cluster_ids.empty() || fit.cluster_ids.back() != id) {
        fit.cluster_ids.push_back(id);
        fit.unit_ids.emplace_back();
        values.emplace_back();
      }
      fit.unit_ids.back().push_back(row.at("unit_id").get<std::int64_t>());
      values.back().push_back(row.at("f").get<double>());
    }
    for (const auto& v : values) fit.f_values.push_back(to_vector(v));
    return fit;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("semiparametric fit: ") + e.what());
  }
}

Json to_json(const EstimandReport& r) {
  Json j;
  j["alphas"] = r.alphas;
  j["spillover_arm"] = static_cast<int>(r.spillover_arm);
  Json mu = Json::array();
  Json de = Json::array();
  Json se = Json::array();
  for (std::size_t a = 0; a < r.alphas.size(); ++a) {
    const auto ai = static_cast<Eigen::Index>(a);
    for (int z = 0; z < 2; ++z) {
      mu.push_back(Json{{"z", z},
                        {"alpha", r.alphas[a]},
                        {"value", r.mu(z, ai)},
                        {"variance", r.mu_variance(z, ai)}});
    }
    de.push_back(Json{{"alpha", r.alphas[a]},
                      {"value", r.direct(ai)},
                      {"variance", r.direct_variance(ai)}});
    for (std::size_t b = 0; b < r.alphas.size(); ++b) {
      const auto bi = static_cast<Eigen::Index>(b);
      se.push_back(Json{{"alpha", r.alphas[a]},
                        {"alpha_prime", r.alphas[b]},
                        {"value", r.spillover(ai, bi)},
                        {"variance", r.spillover_variance(ai, bi)}});
    }
  }
  j["mu"] = std::move(mu);
  j["direct_effect"] = std::move(de);
  j["spillover_effect"] = std::move(se);
  Json clusters = Json::array();
  for (Eigen::Index i = 0; i < r.per_cluster.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < r.per_cluster.cols(); ++c) row.push_back(r.per_cluster(i, c));
    clusters.push_back(Json{{"cluster_id", r.cluster_ids[static_cast<std::size_t>(i)]},
                            {"contributions", std::move(row)}});
  }
  j["per_cluster"] = std::move(clusters);
  return j;
}

std::string report_to_csv(const EstimandReport& r) {
  std::string out = "estimand,z,alpha,alpha_prime,value,std_error\n";
  auto line = [&](const std::string& name, const std::string& z, double alpha,
                  const std::string& alpha_prime, double value, double variance) {
    out += name + ',' + z + ',' + format_double(alpha) + ',' + alpha_prime + ',' +
           format_double(value) + ',' + format_double(std::sqrt(variance)) + '\n';
  };
  for (std::size_t a = 0; a < r.alphas.size(); ++a) {
    const auto ai = static_cast<Eigen::Index>(a);
    for (int z = 0; z < 2; ++z) {
      line("mu", std::to_string(z), r.alphas[a], "", r.mu(z, ai), r.mu_variance(z, ai));
    }
  }
  for (std::size_t a = 0; a < r.alphas.size(); ++a) {
    const auto ai = static_cast<Eigen::Index>(a);
    line("direct_effect", "", r.alphas[a], "", r.direct(ai), r.direct_variance(ai));
  }
  for (std::size_t a = 0; a < r.alphas.size(); ++a) {
    for (std::size_t b = 0; b < r.alphas.size(); ++b) {
      const auto ai = static_cast<Eigen::Index>(a);
      const auto bi = static_cast<Eigen::Index>(b);
      line("spillover_effect", std::to_string(static_cast<int>(r.spillover_arm)), r.alphas[a],
           format_double(r.alphas[b]), r.spillover(ai, bi), r.spillover_variance(ai, bi));
    }
  }
  return out;
}

Json to_json(const DgpConfig& c) {
  Json j;
  j["clusters"] = c.clusters;
  j["cluster_size"] = Json{{"min", c.size_min}, {"max", c.size_max}};
  j["p"] = c.p;
  if (c.propensity == PropensityKind::Linear) {
    j["propensity"] = Json{{"linear", to_std(c.beta)}};
  } else {
    j["propensity"] = Json{{"nonlinear", c.function_name}};
  }
  j["sigma2_v"] = c.sigma2_v;
  Json outcome;
  outcome["intercept"] = c.outcome.intercept;
  outcome["tau"] = c.outcome.tau;
  outcome["delta"] = c.outcome.delta;
  outcome["lambda"] = to_std(c.outcome.lambda);
  outcome["noise_sd"] = c.outcome.noise_sd;
  j["outcome"] = std::move(outcome);
  j["seed"] = c.seed;
  return j;
}

DgpConfig config_from_json(const Json& j) {
  if (!j.is_object()) config_error("<root>", "expected an object");
  reject_unknown(j, {"clusters", "cluster_size", "p", "propensity", "sigma2_v", "outcome", "seed"},
                 "");
  DgpConfig c;
  c.clusters = static_cast<int>(get_integer(j, "clusters", ""));
  const Json& size = require(j, "cluster_size", "");
  if (size.is_number_integer()) {
    c.size_min = c.size_max = size.get<int>();
  } else if (size.is_object()) {
    reject_unknown(size, {"min", "max"}, "cluster_size.");
    c.size_min = static_cast<int>(get_integer(size, "min", "cluster_size."));
    c.size_max = static_cast<int>(get_integer(size, "max", "cluster_size."));
  } else {
    config_error("cluster_size", "expected an integer or {min, max}");
  }
  c.p = static_cast<int>(get_integer(j, "p", ""));
  const Json& prop = require(j, "propensity", "");
  if (!prop.is_object() || prop.size() != 1) {
    config_error("propensity", "expected {\"linear\": [...]} or {\"nonlinear\": name}");
  }
  if (prop.contains("linear")) {
    c.propensity = PropensityKind::Linear;
    c.beta = get_vector(prop["linear"], "propensity.linear");
  } else if (prop.contains("nonlinear")) {
    c.propensity = PropensityKind::Nonlinear;
    if (!prop["nonlinear"].is_string()) config_error("propensity.nonlinear", "expected a name");
    c.function_name = prop["nonlinear"].get<std::string>();
  } else {
    config_error("propensity." + prop.begin().key(), "unknown key");
  }
  c.sigma2_v = get_number(j, "sigma2_v", "");
  if (j.contains("outcome")) {
    const Json& o = j["outcome"];
    if (!o.is_object()) config_error("outcome", "expected an object");
    reject_unknown(o, {"intercept", "tau", "delta", "lambda", "noise_sd"}, "outcome.");
    if (o.contains("intercept")) c.outcome.intercept = get_number(o, "intercept", "outcome.");
    if (o.contains("tau")) c.outcome.tau = get_number(o, "tau", "outcome.");
    if (o.contains("delta")) c.outcome.delta = get_number(o, "delta", "outcome.");
    if (o.contains("lambda")) c.outcome.lambda = get_vector(o["lambda"], "outcome.lambda");
    if (o.contains("noise_sd")) c.outcome.noise_sd = get_number(o, "noise_sd", "outcome.");
  }
  const Json& seed = require(j, "seed", "");
  if (!seed.is_number_unsigned()) {
    config_error("seed", "expected a non-negative integer");
  }
  c.seed = seed.get<std::uint64_t>();
  validate_config(c);
  return c;
}

DgpConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("malformed JSON: ") + e.what());
  }
  return config_from_json(j);
}

Json truth_sidecar(const SimulatedStudy& sim) {
  Json j;
  j["generator"] = std::string(kRngName);
  j["config"] = to_json(sim.truth);
  Json effects = Json::array();
  for (std::size_t i = 0; i < sim.random_effects.size(); ++i) {
    effects.push_back(Json{{"cluster_id", sim.study.clusters[i].id}, {"v", sim.random_effects[i]}});
  }
  j["random_effects"] = std::move(effects);
  return j;
}

DgpConfig config_from_sidecar(const Json& j) {
  if (!j.is_object() || !j.contains("config")) {
    throw Error(ErrorCode::ParseError, "truth sidecar lacks 'config'");
  }
  return config_from_json(j["config"]);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

Json read_json(const std::filesystem::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& j) {
  write_text(path, j.dump(2) + "\n");
}

}  // namespace interfere
