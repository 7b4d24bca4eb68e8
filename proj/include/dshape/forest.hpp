#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dshape/features.hpp"

namespace dshape {

struct ForestConfig {
  int n_trees = 300;
  double subsample_fraction = 2.0 / 3.0;
  // false: round(f*n) distinct rows per tree; true: full bootstrap (n draws
  // with replacement; expected OOB fraction ~ 1/e)
  bool subsample_with_replacement = false;
  int features_per_split = 0;  // 0 = floor(sqrt(n_features))
  double min_impurity_decrease = 0.002;
  // empty: inverse in-bag class frequency per tree
  std::map<std::string, double> class_weights;
  std::uint64_t seed = 0;

  void validate(int n_features) const;
};

// Gini impurity of a vector of (weighted) class frequencies summing to 1.
// Two classes: alpha(1-alpha); the multiclass generalization is
// sum alpha_i (1 - alpha_i) / 2.
double gini_impurity(const Eigen::VectorXd& freqs);

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  Eigen::VectorXd class_scores;  // leaves: weighted frequencies, sum 1

  bool is_leaf() const { return feature < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  std::vector<int> in_bag;      // sorted distinct row indices

  int predict(const Eigen::RowVectorXd& row) const;  // class index
};

struct OobResult {
  double accuracy = 0.0;
  Eigen::MatrixXd confusion;     // row-normalized, rows = true class
  Eigen::VectorXi oob_counts;    // OOB trees per case
  int excluded_cases = 0;        // cases that were in-bag everywhere
};

struct TrainedForest {
  std::vector<std::string> classes;  // sorted label set
  std::vector<DecisionTree> trees;
  ForestConfig config;
  double oob_accuracy = 0.0;
  Eigen::MatrixXd confusion;

  int class_index(const std::string& label) const;
};

TrainedForest train_forest(const Eigen::MatrixXd& values,
                           const std::vector<std::string>& labels,
                           const ForestConfig& config, int workers = 1);
TrainedForest train_forest(const FeatureMatrix& fm, const ForestConfig& config,
                           int workers = 1);

OobResult oob_evaluate(const TrainedForest& forest,
                       const Eigen::MatrixXd& values,
                       const std::vector<std::string>& labels);

// Mean OOB accuracy drop when the given column groups are row-scrambled.
// Per repeat a pool of n_permutations independent row permutations is drawn;
// column j of the group uses pool[j % n_permutations]. The forest is never
// retrained. identity_permutations substitutes identity permutations (test
// hook; importances become exactly zero).
std::vector<double> group_importance(
    const TrainedForest& forest, const Eigen::MatrixXd& values,
    const std::vector<std::string>& labels,
    const std::vector<std::vector<int>>& groups, int n_permutations = 100,
    int n_repeats = 100, std::uint64_t seed = 0, int workers = 1,
    bool identity_permutations = false);

void save_forest(const TrainedForest& forest, const std::filesystem::path& path);
TrainedForest load_forest(const std::filesystem::path& path);

}  // namespace dshape
