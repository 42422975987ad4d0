#ifndef INTERFERE_CROSSFIT_HPP
#define INTERFERE_CROSSFIT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "interfere/learners.hpp"
#include "interfere/study.hpp"

namespace interfere {

inline constexpr int kDefaultFolds = 5;

/// Partition of whole clusters into folds; entries align with
/// Study::clusters.
struct FoldAssignment {
  std::vector<std::string> cluster_ids;
  std::vector<int> fold_of_cluster;
  int folds = 0;
  std::uint64_t seed = 0;

  int fold_of(const std::string& cluster_id) const;
  std::vector<int> fold_sizes() const;
};

/// Seeded Fisher-Yates shuffle of the clusters, then round-robin dealing.
FoldAssignment assign_folds(const Study& study, int folds, std::uint64_t seed);

/// Out-of-fold marginal propensity estimates, aligned with Study::clusters.
struct OutOfFoldScores {
  std::vector<std::string> cluster_ids;
  std::vector<Vector> ehat;
  std::string learner;
  FoldAssignment folds;

  int unit_count() const;
  /// Index of the cluster, or -1.
  int find_cluster(const std::string& cluster_id) const;
};

/// For each fold k, fits `learner` on every unit of every cluster outside
/// fold k and predicts the units of fold k.
OutOfFoldScores crossfit_propensity(const Study& study, const FoldAssignment& folds,
                                    const PropensityLearner& learner, int threads = 1);

/// CSV with header cluster_id,unit_id,ehat,fold.
std::string format_scores_csv(const Study& study, const OutOfFoldScores& scores);
OutOfFoldScores parse_scores_csv(const Study& study, const std::string& text);

}  // namespace interfere

#endif  // INTERFERE_CROSSFIT_HPP
