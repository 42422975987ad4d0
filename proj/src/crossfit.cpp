#include "interfere/crossfit.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

#include "interfere/error.hpp"
#include "interfere/parallel.hpp"
#include "interfere/rng.hpp"

namespace interfere {

int FoldAssignment::fold_of(const std::string& cluster_id) const {
  for (std::size_t i = 0; i < cluster_ids.size(); ++i) {
    if (cluster_ids[i] == cluster_id) return fold_of_cluster[i];
  }
  throw Error(ErrorCode::InvalidArgument, "cluster '" + cluster_id + "' has no fold");
}

std::vector<int> FoldAssignment::fold_sizes() const {
  std::vector<int> sizes(folds, 0);
  for (int f : fold_of_cluster) ++sizes[f];
  return sizes;
}

FoldAssignment assign_folds(const Study& study, int folds, std::uint64_t seed) {
  const int count = study.cluster_count();
  if (folds < 2) {
    throw Error(ErrorCode::InvalidArgument, "fold count must be >= 2");
  }
  if (folds > count) {
    throw Error(ErrorCode::TooFewClusters,
                std::to_string(count) + " clusters for " + std::to_string(folds) + " folds");
  }
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (int i = count - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(order[i], order[j]);
  }
  FoldAssignment out;
  out.folds = folds;
  out.seed = seed;
  out.fold_of_cluster.assign(count, 0);
  for (int r = 0; r < count; ++r) out.fold_of_cluster[order[r]] = r % folds;
  for (const auto& c : study.clusters) out.cluster_ids.push_back(c.id);
  return out;
}

int OutOfFoldScores::unit_count() const {
  int n = 0;
  for (const auto& e : ehat) n += static_cast<int>(e.size());
  return n;
}

int OutOfFoldScores::find_cluster(const std::string& cluster_id) const {
  for (std::size_t i = 0; i < cluster_ids.size(); ++i) {
    if (cluster_ids[i] == cluster_id) return static_cast<int>(i);
  }
  return -1;
}

OutOfFoldScores crossfit_propensity(const Study& study, const FoldAssignment& folds,
                                    const PropensityLearner& learner, int threads) {
  if (folds.cluster_ids.size() != study.clusters.size()) {
    throw Error(ErrorCode::DimensionMismatch, "fold assignment does not match the study");
  }
  for (std::size_t i = 0; i < study.clusters.size(); ++i) {
    if (folds.cluster_ids[i] != study.clusters[i].id) {
      throw Error(ErrorCode::DimensionMismatch,
                  "fold assignment cluster order differs at '" + study.clusters[i].id + "'");
    }
  }
  OutOfFoldScores out;
  out.learner = learner.name();
  out.folds = folds;
  out.ehat.resize(study.clusters.size());
  for (const auto& c : study.clusters) out.cluster_ids.push_back(c.id);

  std::vector<std::vector<std::size_t>> members(folds.folds);
  for (std::size_t i = 0; i < study.clusters.size(); ++i) {
    members[folds.fold_of_cluster[i]].push_back(i);
  }

  parallel_for(static_cast<std::size_t>(folds.folds), threads, [&](std::size_t k) {
    int n_train = 0;
    for (std::size_t i = 0; i < study.clusters.size(); ++i) {
      if (folds.fold_of_cluster[i] != static_cast<int>(k)) n_train += study.clusters[i].size();
    }
    Matrix x(n_train, study.p);
    IntVector z(n_train);
    int row = 0;
    for (std::size_t i = 0; i < study.clusters.size(); ++i) {
      if (folds.fold_of_cluster[i] == static_cast<int>(k)) continue;
      for (const auto& u : study.clusters[i].units) {
        x.row(row) = u.covariates.transpose();
        z(row) = u.treatment;
        ++row;
      }
    }
    const int treated = z.sum();
    if (treated == 0 || treated == n_train) {
      throw Error(ErrorCode::DegenerateTrainingFold,
                  "training complement of fold " + std::to_string(k) +
                      " has a single treatment level");
    }
    std::unique_ptr<FittedLearner> fitted;
    try {
      fitted = learner.fit(x, z);
    } catch (const Error& e) {
      throw Error(e.code(), "fold " + std::to_string(k) + ": " + e.what());
    }
    for (std::size_t i : members[k]) {
      const Cluster& c = study.clusters[i];
      Vector e(c.size());
      for (int j = 0; j < c.size(); ++j) e(j) = fitted->predict(c.units[j].covariates);
      out.ehat[i] = std::move(e);
    }
  });
  return out;
}

std::string format_scores_csv(const Study& study, const OutOfFoldScores& scores) {
  std::string out = "cluster_id,unit_id,ehat,fold\n";
  for (std::size_t i = 0; i < study.clusters.size(); ++i) {
    const Cluster& c = study.clusters[i];
    const int idx = scores.find_cluster(c.id);
    if (idx < 0) throw Error(ErrorCode::MissingFValue, "no scores for cluster '" + c.id + "'");
    for (int j = 0; j < c.size(); ++j) {
      out += c.id + ',' + std::to_string(c.units[j].unit_id) + ',' +
             format_double(scores.ehat[idx](j)) + ',' +
             std::to_string(scores.folds.fold_of_cluster[idx]) + '\n';
    }
  }
  return out;
}

OutOfFoldScores parse_scores_csv(const Study& study, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line.rfind("cluster_id,unit_id,ehat,fold", 0) != 0) {
    throw Error(ErrorCode::ParseError, "line 1: expected header cluster_id,unit_id,ehat,fold");
  }
  std::map<std::pair<std::string, std::int64_t>, std::pair<double, int>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 4) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected 4 fields");
    }
    try {
      rows[{f[0], std::stoll(f[1])}] = {std::stod(f[2]), std::stoi(f[3])};
    } catch (const std::exception&) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": bad number");
    }
  }
  OutOfFoldScores out;
  out.learner = "file";
  out.folds.seed = 0;
  int max_fold = 0;
  for (const auto& c : study.clusters) {
    Vector e(c.size());
    int fold = 0;
    for (int j = 0; j < c.size(); ++j) {
      auto it = rows.find({c.id, c.units[j].unit_id});
      if (it == rows.end()) {
        throw Error(ErrorCode::MissingFValue,
                    "no score for cluster '" + c.id + "' unit " + std::to_string(c.units[j].unit_id));
      }
      e(j) = it->second.first;
      fold = it->second.second;
    }
    max_fold = std::max(max_fold, fold);
    out.cluster_ids.push_back(c.id);
    out.ehat.push_back(std::move(e));
    out.folds.cluster_ids.push_back(c.id);
    out.folds.fold_of_cluster.push_back(fold);
  }
  out.folds.folds = max_fold + 1;
  return out;
}

}  // namespace interfere
