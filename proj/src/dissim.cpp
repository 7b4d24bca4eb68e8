#include "dshape/dissim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>

#include "dshape/kernels.hpp"
#include "dshape/workers.hpp"

namespace dshape {

std::string dissim_name(int index) {
  switch (index) {
    case 1: return "highstrain_80";
    case 2: return "highstrain_160";
    case 3: return "highstrain_240";
    case 4: return "highstrain_800";
    case 5: return "medstrain_80";
    case 6: return "medstrain_160";
    case 7: return "medstrain_240";
    case 8: return "medstrain_800";
    case 9: return "sqrtkin";
  }
  throw std::invalid_argument("dissim_name: index must be 1..9");
}

void DissimParams::validate() const {
  solver.validate();
  for (int t : tails) {
    if (t <= 0) throw std::invalid_argument("DissimParams: tail sizes must be positive");
  }
}

namespace {

DissimRecord one_direction(const RingSurface& s_std, const RingSurface& t_std,
                           const DissimParams& params) {
  DissimRecord rec;
  const auto reg = register_surfaces(s_std, t_std, params.solver);
  rec.converged = reg.converged;
  rec.kin = reg.flow.kinetic_energy;
  const StrainField strain = isotropic_strain(s_std, reg.deformed);
  const int n = s_std.point_count();
  for (int i = 0; i < 4; ++i) {
    const int k = std::min(params.tails[i], n);
    rec.d(i) = strain_quantile(strain, kHighQuantile, k);
    rec.d(i + 4) = strain_quantile(strain, kMedQuantile, k);
  }
  rec.d(8) = std::sqrt(std::max(0.0, rec.kin));
  return rec;
}

}  // namespace

DissimRecord dissim_pair(const RingSurface& s, const RingSurface& sigma,
                         const DissimParams& params) {
  params.validate();
  const RingSurface s_std = standardize(s).surface;
  const RingSurface t_std = standardize(sigma).surface;

  DissimRecord rec = one_direction(s_std, t_std, params);
  if (params.symmetrize) {
    const DissimRecord back = one_direction(t_std, s_std, params);
    rec.d = 0.5 * (rec.d + back.d);
    rec.kin = 0.5 * (rec.kin + back.kin);
    rec.d(8) = std::sqrt(std::max(0.0, rec.kin));
    rec.converged = rec.converged && back.converged;
  }
  rec.source_id = s.id;
  rec.target_id = sigma.id;
  return rec;
}

double haus_plus(const RingSurface& s, const RingSurface& sigma,
                 double trim_fraction) {
  const Points a = standardize(s).surface.points;
  const Points b = standardize(sigma).surface.points;
  return std::max(trimmed_hausdorff(a, b, trim_fraction),
                  trimmed_hausdorff(b, a, trim_fraction));
}

double hilb_plus(const RingSurface& s, const RingSurface& sigma, double tau) {
  const Points a = standardize(s).surface.points;
  const Points b = standardize(sigma).surface.points;
  return hilb_dissimilarity(a, b, tau > 0 ? tau : default_tau(a, b));
}

DissimCache::DissimCache(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) return;
  std::ifstream in(path_);
  if (!in) throw std::runtime_error("cannot open cache " + path_.string());
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first && line.rfind("source_id,", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    std::istringstream ls(line);
    std::string field;
    DissimRecord rec;
    std::getline(ls, rec.source_id, ',');
    std::getline(ls, rec.target_id, ',');
    for (int i = 0; i < 9; ++i) {
      std::getline(ls, field, ',');
      rec.d(i) = std::stod(field);
    }
    std::getline(ls, field, ',');
    rec.kin = std::stod(field);
    std::getline(ls, field, ',');
    rec.converged = field == "1";
    rows_[{rec.source_id, rec.target_id}] = rec;
  }
}

bool DissimCache::contains(const std::string& src, const std::string& dst) const {
  return rows_.count({src, dst}) > 0;
}

std::optional<DissimRecord> DissimCache::lookup(const std::string& src,
                                                const std::string& dst) const {
  const auto it = rows_.find({src, dst});
  if (it == rows_.end()) return std::nullopt;
  return it->second;
}

void DissimCache::append(const DissimRecord& rec) {
  rows_[{rec.source_id, rec.target_id}] = rec;
  if (path_.empty()) return;
  const bool fresh = !std::filesystem::exists(path_);
  std::ofstream out(path_, std::ios::app);
  if (!out) throw std::runtime_error("cannot write cache " + path_.string());
  if (fresh) {
    out << "source_id,target_id,D1,D2,D3,D4,D5,D6,D7,D8,D9,kin,converged\n";
  }
  std::ostringstream row;
  row << rec.source_id << ',' << rec.target_id;
  char buf[32];
  for (int i = 0; i < 9; ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", rec.d(i));
    row << ',' << buf;
  }
  std::snprintf(buf, sizeof(buf), "%.17g", rec.kin);
  row << ',' << buf << ',' << (rec.converged ? 1 : 0) << '\n';
  out << row.str();
}

std::vector<DissimRecord> batch_dissims(
    const SurfaceDataset& dataset,
    const std::vector<std::pair<std::string, std::string>>& pairs,
    const DissimParams& params, DissimCache* cache, int workers) {
  params.validate();
  std::vector<DissimRecord> records(pairs.size());
  std::vector<char> fresh(pairs.size(), 0);

  // resolve ids up front so missing entries fail before any work is spent
  std::vector<const DatasetEntry*> src(pairs.size());
  std::vector<const DatasetEntry*> dst(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    src[i] = dataset.find(pairs[i].first);
    dst[i] = dataset.find(pairs[i].second);
    if (src[i] == nullptr || dst[i] == nullptr) {
      throw std::runtime_error("batch_dissims: unknown id in pair " +
                               pairs[i].first + "," + pairs[i].second);
    }
  }

  parallel_for(pairs.size(), resolve_workers(workers), [&](std::size_t i) {
    if (cache != nullptr) {
      const auto hit = cache->lookup(pairs[i].first, pairs[i].second);
      if (hit && hit->converged) {
        records[i] = *hit;
        return;
      }
    }
    DissimRecord rec;
    try {
      rec = dissim_pair(src[i]->surface, dst[i]->surface, params);
    } catch (const std::exception&) {
      // per-pair failures are isolated: flagged, excluded from features
      rec.source_id = pairs[i].first;
      rec.target_id = pairs[i].second;
      rec.converged = false;
    }
    records[i] = rec;
    fresh[i] = 1;
  });

  if (cache != nullptr) {
    // single appender, records in pair-list order
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (fresh[i]) cache->append(records[i]);
    }
  }
  return records;
}

std::string to_string(PairGroup g) {
  switch (g) {
    case PairGroup::AA: return "AA";
    case PairGroup::BB: return "BB";
    case PairGroup::AB: return "AB";
  }
  return "AA";
}

std::vector<HistogramSummary> pair_histograms(
    const std::vector<DissimRecord>& records,
    const std::map<std::string, std::string>& label_of_id,
    const std::string& label_a, const std::string& label_b, int dissim_index,
    int bins) {
  if (bins < 1) throw std::invalid_argument("pair_histograms: bins < 1");
  if (dissim_index < 1 || dissim_index > 9) {
    throw std::invalid_argument("pair_histograms: dissim index must be 1..9");
  }
  std::array<std::vector<double>, 3> values;
  for (const auto& rec : records) {
    if (!rec.converged) continue;
    const auto sa = label_of_id.find(rec.source_id);
    const auto sb = label_of_id.find(rec.target_id);
    if (sa == label_of_id.end() || sb == label_of_id.end()) continue;
    PairGroup g;
    if (sa->second == label_a && sb->second == label_a) {
      g = PairGroup::AA;
    } else if (sa->second == label_b && sb->second == label_b) {
      g = PairGroup::BB;
    } else {
      g = PairGroup::AB;
    }
    values[static_cast<int>(g)].push_back(rec.d(dissim_index - 1));
  }
  for (const auto& v : values) {
    if (v.empty()) {
      throw std::runtime_error("pair_histograms: empty group");
    }
  }

  double lo = values[0][0], hi = values[0][0];
  for (const auto& v : values) {
    for (double x : v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  if (hi <= lo) hi = lo + 1e-12;  // all-identical records: single usable bin

  std::vector<HistogramSummary> out(3);
  for (int g = 0; g < 3; ++g) {
    auto& h = out[g];
    h.group = static_cast<PairGroup>(g);
    h.dissim_index = dissim_index;
    h.bin_edges = Eigen::VectorXd::LinSpaced(bins + 1, lo, hi);
    h.counts = Eigen::VectorXi::Zero(bins);
    for (double x : values[g]) {
      int b = static_cast<int>((x - lo) / (hi - lo) * bins);
      b = std::clamp(b, 0, bins - 1);
      h.counts(b) += 1;
    }
  }
  return out;
}

void write_histograms(const std::vector<HistogramSummary>& histograms,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "group,index,edge_lo,edge_hi,count\n";
  char buf[96];
  for (const auto& h : histograms) {
    for (int b = 0; b < h.counts.size(); ++b) {
      std::snprintf(buf, sizeof(buf), "%s,%d,%.17g,%.17g,%d\n",
                    to_string(h.group).c_str(), h.dissim_index, h.bin_edges(b),
                    h.bin_edges(b + 1), h.counts(b));
      out << buf;
    }
  }
}

}  // namespace dshape
