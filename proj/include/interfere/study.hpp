#ifndef INTERFERE_STUDY_HPP
#define INTERFERE_STUDY_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "interfere/core.hpp"

namespace interfere {

struct Unit {
  std::string cluster_id;
  int unit_index = 0;        // position within the cluster, 0-based
  std::int64_t unit_id = 0;  // external id carried through files
  int treatment = 0;
  std::optional<double> outcome;
  Vector covariates;
};

struct Cluster {
  std::string id;
  std::vector<Unit> units;

  int size() const { return static_cast<int>(units.size()); }
  /// n_i x p matrix of covariates, one row per unit.
  Matrix covariate_matrix() const;
  IntVector treatments() const;
  bool has_outcomes() const;
};

struct Study {
  std::vector<Cluster> clusters;
  int p = 0;

  int cluster_count() const { return static_cast<int>(clusters.size()); }
  int unit_count() const;
  bool has_outcomes() const;
  /// Index of the cluster with the given id, or -1.
  int find_cluster(const std::string& id) const;
  /// Stacked n x p covariates and length-n treatments in cluster order.
  Matrix covariate_matrix() const;
  IntVector treatments() const;
};

enum class StudyFormat { Csv, Json };

/// Checks every data-model invariant; returns the study unchanged on success.
Study validate_study(Study raw);

Study load_study(const std::filesystem::path& path, StudyFormat format);
/// Picks the format from the file extension (.json, otherwise CSV).
Study load_study(const std::filesystem::path& path);
void save_study(const Study& study, const std::filesystem::path& path,
                StudyFormat format);

Study parse_study_csv(const std::string& text);
std::string format_study_csv(const Study& study);
Study parse_study_json(const std::string& text);
std::string format_study_json(const Study& study);

/// Unit k of the result is unit perm[k] of the input, with unit_index = k.
Cluster permute_cluster(const Cluster& cluster, std::span<const int> perm);

/// Shortest decimal string that round-trips to the same double.
std::string format_double(double value);

}  // namespace interfere

#endif  // INTERFERE_STUDY_HPP
