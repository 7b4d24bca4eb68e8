#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dshape/dissim.hpp"
#include "dshape/surface.hpp"

namespace dshape {

enum class ReferenceRule { random_from_class, all_training };

// Ordered reference surfaces; feature column identity depends on the order,
// so it is fixed at selection time and persisted with the matrix.
struct ReferenceSet {
  std::vector<std::string> ids;
  std::uint64_t selection_seed = 0;
  ReferenceRule rule = ReferenceRule::all_training;
};

ReferenceSet select_reference(const SurfaceDataset& dataset, ReferenceRule rule,
                              const std::string& class_label, int r,
                              std::uint64_t seed);

struct FeatureColumn {
  int dissim_index = 1;  // 1..9
  int ref_ordinal = 0;   // 0-based position in the reference set
};

struct FeatureMatrix {
  std::vector<std::string> row_ids;
  std::vector<std::string> labels;
  std::vector<FeatureColumn> columns;  // i-major, j-minor
  Eigen::MatrixXd values;              // rows x columns
  std::vector<char> complete;          // per row

  int n_rows() const { return static_cast<int>(row_ids.size()); }
  int n_cols() const { return static_cast<int>(columns.size()); }
};

// Assembles value(S, (i,j)) = D_i(S, Sigma_j) from completed records.
// dissim_indices selects which of the nine dissimilarities become feature
// groups (all nine by default; {1,2,9} gives the reduced mode). Rows with a
// missing or non-converged pair are flagged incomplete (and dropped by
// consumers); strict mode turns them into an error.
FeatureMatrix build_features(const SurfaceDataset& dataset,
                             const ReferenceSet& ref,
                             const std::vector<DissimRecord>& records,
                             const std::vector<int>& dissim_indices = {
                                 1, 2, 3, 4, 5, 6, 7, 8, 9},
                             bool strict = false);

// Drops incomplete rows; returns the number removed.
int drop_incomplete_rows(FeatureMatrix& fm);

// Header row of `Di@refj` descriptors, then `id,label,value...` rows.
void write_feature_matrix(const FeatureMatrix& fm,
                          const std::filesystem::path& path);
FeatureMatrix read_feature_matrix(const std::filesystem::path& path);

void write_reference(const ReferenceSet& ref, const std::filesystem::path& path);
ReferenceSet read_reference(const std::filesystem::path& path);

}  // namespace dshape
