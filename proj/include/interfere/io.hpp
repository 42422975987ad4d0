#ifndef INTERFERE_IO_HPP
#define INTERFERE_IO_HPP

#include <filesystem>
#include <string>

#include "json.hpp"

#include "interfere/estimands.hpp"
#include "interfere/mixed_model.hpp"
#include "interfere/semiparametric.hpp"
#include "interfere/simulation.hpp"

namespace interfere {

using Json = nlohmann::ordered_json;

Json to_json(const MixedModelFit& fit);
MixedModelFit mixed_fit_from_json(const Json& j);

Json to_json(const LogisticFit& fit);

Json to_json(const SemiparamFit& fit);
SemiparamFit semiparam_fit_from_json(const Json& j);

Json to_json(const EstimandReport& report);
/// Rows estimand,z,alpha,alpha_prime,value,std_error.
std::string report_to_csv(const EstimandReport& report);

Json to_json(const DgpConfig& config);
/// Throws InvalidConfig naming the offending key.
DgpConfig config_from_json(const Json& j);
DgpConfig parse_config(const std::string& text);

/// Truth sidecar written next to a simulated study.
Json truth_sidecar(const SimulatedStudy& sim);
DgpConfig config_from_sidecar(const Json& j);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
Json read_json(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json(const std::filesystem::path& path, const Json& j);

}  // namespace interfere

#endif  // INTERFERE_IO_HPP
