#include "interfere/study.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

#include "interfere/error.hpp"

namespace interfere {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else if (c != '\r') {
      current.push_back(c);
    }
  }
  fields.push_back(std::move(current));
  return fields;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

double parse_real(const std::string& text, std::size_t line, const char* what) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = first + text.size();
  if (!text.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw Error(ErrorCode::ParseError, "line " + std::to_string(line) +
                                           ": cannot parse " + what + " '" +
                                           text + "'");
  }
  return value;
}

template <typename Int>
Int parse_integer(const std::string& text, std::size_t line, const char* what) {
  Int value = 0;
  const char* first = text.data();
  const char* last = first + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw Error(ErrorCode::ParseError, "line " + std::to_string(line) +
                                           ": cannot parse " + what + " '" +
                                           text + "'");
  }
  return value;
}

// Groups units by cluster id in order of first appearance, sorts each
// cluster by unit_id, and assigns unit_index.
Study assemble(std::vector<Unit> units, std::vector<std::string> order, int p) {
  std::unordered_map<std::string, std::size_t> slot;
  Study study;
  study.p = p;
  for (auto& id : order) {
    if (slot.emplace(id, study.clusters.size()).second) {
      study.clusters.push_back(Cluster{id, {}});
    }
  }
  for (auto& u : units) {
    study.clusters[slot.at(u.cluster_id)].units.push_back(std::move(u));
  }
  for (auto& c : study.clusters) {
    std::stable_sort(c.units.begin(), c.units.end(),
                     [](const Unit& a, const Unit& b) { return a.unit_id < b.unit_id; });
    for (std::size_t j = 0; j < c.units.size(); ++j) {
      if (j > 0 && c.units[j].unit_id == c.units[j - 1].unit_id) {
        throw Error(ErrorCode::DuplicateId,
                    "unit_id " + std::to_string(c.units[j].unit_id) +
                        " repeated in cluster '" + c.id + "'");
      }
      c.units[j].unit_index = static_cast<int>(j);
    }
  }
  return study;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

Matrix Cluster::covariate_matrix() const {
  const int p = units.empty() ? 0 : static_cast<int>(units.front().covariates.size());
  Matrix x(size(), p);
  for (int j = 0; j < size(); ++j) x.row(j) = units[j].covariates.transpose();
  return x;
}

IntVector Cluster::treatments() const {
  IntVector z(size());
  for (int j = 0; j < size(); ++j) z(j) = units[j].treatment;
  return z;
}

bool Cluster::has_outcomes() const {
  return std::all_of(units.begin(), units.end(),
                     [](const Unit& u) { return u.outcome.has_value(); });
}

int Study::unit_count() const {
  int n = 0;
  for (const auto& c : clusters) n += c.size();
  return n;
}

bool Study::has_outcomes() const {
  return std::all_of(clusters.begin(), clusters.end(),
                     [](const Cluster& c) { return c.has_outcomes(); });
}

int Study::find_cluster(const std::string& id) const {
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    if (clusters[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

Matrix Study::covariate_matrix() const {
  Matrix x(unit_count(), p);
  int row = 0;
  for (const auto& c : clusters) {
    for (const auto& u : c.units) x.row(row++) = u.covariates.transpose();
  }
  return x;
}

IntVector Study::treatments() const {
  IntVector z(unit_count());
  int row = 0;
  for (const auto& c : clusters) {
    for (const auto& u : c.units) z(row++) = u.treatment;
  }
  return z;
}

Study validate_study(Study raw) {
  std::set<std::string> seen;
  for (const auto& c : raw.clusters) {
    if (!seen.insert(c.id).second) {
      throw Error(ErrorCode::DuplicateId, "cluster id '" + c.id + "' repeated");
    }
    if (c.units.empty()) {
      throw Error(ErrorCode::EmptyCluster, "cluster '" + c.id + "' has no units");
    }
    for (int j = 0; j < c.size(); ++j) {
      const Unit& u = c.units[j];
      const std::string where =
          "cluster '" + c.id + "' unit " + std::to_string(j);
      if (u.cluster_id != c.id) {
        throw Error(ErrorCode::InvalidArgument,
                    where + " carries cluster id '" + u.cluster_id + "'");
      }
      if (u.unit_index != j) {
        throw Error(ErrorCode::InvalidArgument,
                    where + " has unit_index " + std::to_string(u.unit_index));
      }
      if (u.covariates.size() != raw.p) {
        throw Error(ErrorCode::DimensionMismatch,
                    where + " has " + std::to_string(u.covariates.size()) +
                        " covariates, study p = " + std::to_string(raw.p));
      }
      if (u.treatment != 0 && u.treatment != 1) {
        throw Error(ErrorCode::NonBinaryTreatment,
                    where + " has treatment " + std::to_string(u.treatment));
      }
      if (!u.covariates.allFinite()) {
        throw Error(ErrorCode::NonFiniteValue, where + " has non-finite covariates");
      }
      if (u.outcome && !std::isfinite(*u.outcome)) {
        throw Error(ErrorCode::NonFiniteValue, where + " has non-finite outcome");
      }
    }
  }
  return raw;
}

Study parse_study_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorCode::ParseError, "line 1: missing header");
  }
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> column;
  for (std::size_t k = 0; k < header.size(); ++k) column[trim(header[k])] = k;
  for (const char* required : {"cluster_id", "unit_id", "treatment"}) {
    if (!column.count(required)) {
      throw Error(ErrorCode::ParseError,
                  std::string("line 1: missing column '") + required + "'");
    }
  }
  const bool has_outcome_column = column.count("outcome") > 0;
  std::vector<std::size_t> x_columns;
  for (int k = 1;; ++k) {
    auto it = column.find("x" + std::to_string(k));
    if (it == column.end()) break;
    x_columns.push_back(it->second);
  }
  const int p = static_cast<int>(x_columns.size());
  const std::size_t expected = 3 + (has_outcome_column ? 1 : 0) + x_columns.size();
  if (header.size() != expected) {
    throw Error(ErrorCode::ParseError,
                "line 1: unexpected columns (covariates must be named x1..xp)");
  }

  std::vector<Unit> units;
  std::vector<std::string> order;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::ParseError,
                  "line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    }
    Unit u;
    u.cluster_id = trim(fields[column["cluster_id"]]);
    if (u.cluster_id.empty()) {
      throw Error(ErrorCode::ParseError,
                  "line " + std::to_string(line_no) + ": empty cluster_id");
    }
    u.unit_id = parse_integer<std::int64_t>(trim(fields[column["unit_id"]]),
                                            line_no, "unit_id");
    u.treatment = parse_integer<int>(trim(fields[column["treatment"]]), line_no,
                                     "treatment");
    if (has_outcome_column) {
      const std::string y = trim(fields[column["outcome"]]);
      if (!y.empty()) u.outcome = parse_real(y, line_no, "outcome");
    }
    u.covariates.resize(p);
    for (int k = 0; k < p; ++k) {
      u.covariates(k) = parse_real(trim(fields[x_columns[k]]), line_no, "covariate");
    }
    order.push_back(u.cluster_id);
    units.push_back(std::move(u));
  }
  return validate_study(assemble(std::move(units), std::move(order), p));
}

std::string format_study_csv(const Study& study) {
  std::string out = "cluster_id,unit_id,treatment,outcome";
  for (int k = 1; k <= study.p; ++k) out += ",x" + std::to_string(k);
  out += '\n';
  for (const auto& c : study.clusters) {
    for (const auto& u : c.units) {
      out += c.id;
      out += ',' + std::to_string(u.unit_id);
      out += ',' + std::to_string(u.treatment);
      out += ',';
      if (u.outcome) out += format_double(*u.outcome);
      for (int k = 0; k < study.p; ++k) out += ',' + format_double(u.covariates(k));
      out += '\n';
    }
  }
  return out;
}

Study parse_study_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  if (!doc.is_array()) {
    throw Error(ErrorCode::ParseError, "top level must be an array of clusters");
  }
  std::vector<Unit> units;
  std::vector<std::string> order;
  int p = -1;
  try {
    for (std::size_t i = 0; i < doc.size(); ++i) {
      const auto& jc = doc[i];
      const auto& jid = jc.at("id");
      const std::string id = jid.is_string() ? jid.get<std::string>() : jid.dump();
      order.push_back(id);
      for (const auto& ju : jc.at("units")) {
        Unit u;
        u.cluster_id = id;
        u.unit_id = ju.at("unit_id").get<std::int64_t>();
        u.treatment = ju.at("treatment").get<int>();
        if (ju.contains("outcome") && !ju["outcome"].is_null()) {
          u.outcome = ju["outcome"].get<double>();
        }
        const auto cov = ju.at("covariates").get<std::vector<double>>();
        u.covariates = Eigen::Map<const Vector>(cov.data(), cov.size());
        if (p < 0) p = static_cast<int>(cov.size());
        units.push_back(std::move(u));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  return validate_study(assemble(std::move(units), std::move(order), std::max(p, 0)));
}

std::string format_study_json(const Study& study) {
  // Doubles are emitted through format_double so that the text is identical
  // to the CSV encoding and round-trips exactly.
  std::string out = "[";
  for (std::size_t i = 0; i < study.clusters.size(); ++i) {
    const auto& c = study.clusters[i];
    out += i ? ",\n" : "\n";
    out += R"({"id":)" + nlohmann::json(c.id).dump() + R"(,"units":[)";
    for (std::size_t j = 0; j < c.units.size(); ++j) {
      const auto& u = c.units[j];
      if (j) out += ',';
      out += R"({"unit_id":)" + std::to_string(u.unit_id) +
             R"(,"treatment":)" + std::to_string(u.treatment);
      if (u.outcome) out += R"(,"outcome":)" + format_double(*u.outcome);
      out += R"(,"covariates":[)";
      for (int k = 0; k < u.covariates.size(); ++k) {
        if (k) out += ',';
        out += format_double(u.covariates(k));
      }
      out += "]}";
    }
    out += "]}";
  }
  out += "\n]\n";
  return out;
}

Study load_study(const std::filesystem::path& path, StudyFormat format) {
  const std::string text = read_file(path);
  return format == StudyFormat::Json ? parse_study_json(text) : parse_study_csv(text);
}

Study load_study(const std::filesystem::path& path) {
  return load_study(path, path.extension() == ".json" ? StudyFormat::Json
                                                       : StudyFormat::Csv);
}

void save_study(const Study& study, const std::filesystem::path& path,
                StudyFormat format) {
  write_file(path, format == StudyFormat::Json ? format_study_json(study)
                                               : format_study_csv(study));
}

Cluster permute_cluster(const Cluster& cluster, std::span<const int> perm) {
  const int n = cluster.size();
  if (static_cast<int>(perm.size()) != n) {
    throw Error(ErrorCode::InvalidPermutation,
                "permutation length " + std::to_string(perm.size()) +
                    " for cluster of size " + std::to_string(n));
  }
  std::vector<bool> used(n, false);
  for (int k : perm) {
    if (k < 0 || k >= n || used[k]) {
      throw Error(ErrorCode::InvalidPermutation,
                  "index " + std::to_string(k) + " out of range or repeated");
    }
    used[k] = true;
  }
  Cluster out{cluster.id, {}};
  out.units.reserve(n);
  for (int k = 0; k < n; ++k) {
    Unit u = cluster.units[perm[k]];
    u.unit_index = k;
    out.units.push_back(std::move(u));
  }
  return out;
}

}  // namespace interfere
