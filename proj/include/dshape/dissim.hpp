#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dshape/registration.hpp"
#include "dshape/standardize.hpp"
#include "dshape/strain.hpp"
#include "dshape/surface.hpp"

namespace dshape {

// The nine strongly invariant dissimilarities for one ordered pair:
//   D1..D4 = highstrain_k (95% quantile of lastISI(k)), k = 80,160,240,800
//   D5..D8 = medstrain_k  (50% quantile of lastISI(k))
//   D9     = sqrtkin
struct DissimRecord {
  std::string source_id;
  std::string target_id;
  Eigen::Matrix<double, 9, 1> d = Eigen::Matrix<double, 9, 1>::Zero();
  double kin = 0.0;
  bool converged = false;
};

inline constexpr std::array<int, 4> kStrainTails = {80, 160, 240, 800};
inline constexpr double kHighQuantile = 0.95;
inline constexpr double kMedQuantile = 0.50;

std::string dissim_name(int index);  // 1-based: highstrain_80 ... sqrtkin

struct DissimParams {
  SolverOptions solver;
  // average the (S,Sigma) and (Sigma,S) values, doubling registrations
  bool symmetrize = false;
  // tail sizes larger than the grid are clamped to the grid size
  std::array<int, 4> tails = kStrainTails;

  void validate() const;
};

// Standardizes both surfaces, registers S'' -> Sigma'', computes the strain
// quantiles over lastISI(k) and sqrtkin. Values are invariant under
// independent G3 transformations of either argument.
DissimRecord dissim_pair(const RingSurface& s, const RingSurface& sigma,
                         const DissimParams& params);

// Standardized trimmed Hausdorff (symmetrized), computable without any
// registration; used to rank candidate pairs for enrichment.
double haus_plus(const RingSurface& s, const RingSurface& sigma,
                 double trim_fraction = 0.05);

// Standardized measure-matching dissimilarity, also registration-free.
double hilb_plus(const RingSurface& s, const RingSurface& sigma,
                 double tau = 0.0);

// Append-only dissimilarity cache:
//   source_id,target_id,D1..D9,kin,converged
class DissimCache {
 public:
  DissimCache() = default;
  explicit DissimCache(std::filesystem::path path);

  bool contains(const std::string& src, const std::string& dst) const;
  std::optional<DissimRecord> lookup(const std::string& src,
                                     const std::string& dst) const;
  void append(const DissimRecord& rec);
  std::size_t size() const { return rows_.size(); }
  const std::map<std::pair<std::string, std::string>, DissimRecord>& rows()
      const {
    return rows_;
  }

 private:
  std::filesystem::path path_;
  std::map<std::pair<std::string, std::string>, DissimRecord> rows_;
};

// Evaluates all requested pairs concurrently. Converged cached pairs are
// skipped; failed pairs are flagged, never abort the batch. Records are
// returned and appended in pair-list order regardless of worker count.
std::vector<DissimRecord> batch_dissims(
    const SurfaceDataset& dataset,
    const std::vector<std::pair<std::string, std::string>>& pairs,
    const DissimParams& params, DissimCache* cache, int workers);

enum class PairGroup { AA, BB, AB };

std::string to_string(PairGroup g);

struct HistogramSummary {
  PairGroup group = PairGroup::AA;
  int dissim_index = 1;  // 1..9
  Eigen::VectorXd bin_edges;
  Eigen::VectorXi counts;
};

// Histograms of one dissimilarity over records grouped by the class pairing
// of their endpoints (label_a/label_a, label_b/label_b, mixed), with shared
// bin edges across the three groups. Non-converged records are skipped.
std::vector<HistogramSummary> pair_histograms(
    const std::vector<DissimRecord>& records,
    const std::map<std::string, std::string>& label_of_id,
    const std::string& label_a, const std::string& label_b, int dissim_index,
    int bins);

// `group,index,edge_lo,edge_hi,count` rows.
void write_histograms(const std::vector<HistogramSummary>& histograms,
                      const std::filesystem::path& path);

}  // namespace dshape
