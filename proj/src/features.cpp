#include "dshape/features.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "dshape/rng.hpp"

namespace dshape {

ReferenceSet select_reference(const SurfaceDataset& dataset, ReferenceRule rule,
                              const std::string& class_label, int r,
                              std::uint64_t seed) {
  ReferenceSet ref;
  ref.selection_seed = seed;
  ref.rule = rule;
  if (rule == ReferenceRule::all_training) {
    for (const auto& e : dataset.entries) ref.ids.push_back(e.surface.id);
    return ref;
  }
  const auto pool = dataset.ids_with_label(class_label);
  if (static_cast<int>(pool.size()) < r) {
    std::ostringstream msg;
    msg << "select_reference: class `" << class_label << "` has "
        << pool.size() << " members, need " << r;
    throw std::runtime_error(msg.str());
  }
  Rng rng(mix_seed(seed, "reference"));
  const auto picks = rng.sample_without_replacement(static_cast<int>(pool.size()), r);
  for (int idx : picks) ref.ids.push_back(pool[idx]);
  return ref;
}

FeatureMatrix build_features(const SurfaceDataset& dataset,
                             const ReferenceSet& ref,
                             const std::vector<DissimRecord>& records,
                             const std::vector<int>& dissim_indices,
                             bool strict) {
  for (int i : dissim_indices) {
    if (i < 1 || i > 9) {
      throw std::invalid_argument("build_features: dissim index must be 1..9");
    }
  }
  std::map<std::pair<std::string, std::string>, const DissimRecord*> by_pair;
  for (const auto& rec : records) {
    by_pair[{rec.source_id, rec.target_id}] = &rec;
  }

  FeatureMatrix fm;
  const int r = static_cast<int>(ref.ids.size());
  for (int i : dissim_indices) {
    for (int j = 0; j < r; ++j) fm.columns.push_back({i, j});
  }
  fm.values.resize(dataset.entries.size(), fm.columns.size());
  fm.values.setZero();
  for (const auto& e : dataset.entries) {
    fm.row_ids.push_back(e.surface.id);
    fm.labels.push_back(e.label);
  }
  fm.complete.assign(dataset.entries.size(), 1);

  for (int row = 0; row < fm.n_rows(); ++row) {
    for (int col = 0; col < fm.n_cols(); ++col) {
      const auto& c = fm.columns[col];
      const auto it = by_pair.find({fm.row_ids[row], ref.ids[c.ref_ordinal]});
      if (it == by_pair.end() || !it->second->converged) {
        if (strict) {
          throw std::runtime_error("build_features: missing pair " +
                                   fm.row_ids[row] + " -> " +
                                   ref.ids[c.ref_ordinal]);
        }
        fm.complete[row] = 0;
        continue;
      }
      fm.values(row, col) = it->second->d(c.dissim_index - 1);
    }
  }
  return fm;
}

int drop_incomplete_rows(FeatureMatrix& fm) {
  int kept = 0;
  for (int row = 0; row < fm.n_rows(); ++row) {
    if (!fm.complete[row]) continue;
    if (kept != row) {
      fm.values.row(kept) = fm.values.row(row);
      fm.row_ids[kept] = fm.row_ids[row];
      fm.labels[kept] = fm.labels[row];
    }
    ++kept;
  }
  const int dropped = fm.n_rows() - kept;
  fm.row_ids.resize(kept);
  fm.labels.resize(kept);
  fm.values.conservativeResize(kept, Eigen::NoChange);
  fm.complete.assign(kept, 1);
  return dropped;
}

void write_feature_matrix(const FeatureMatrix& fm,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "id,label";
  for (const auto& c : fm.columns) {
    out << ",D" << c.dissim_index << "@ref" << c.ref_ordinal;
  }
  out << '\n';
  char buf[32];
  for (int row = 0; row < fm.n_rows(); ++row) {
    out << fm.row_ids[row] << ',' << fm.labels[row];
    for (int col = 0; col < fm.n_cols(); ++col) {
      std::snprintf(buf, sizeof(buf), "%.17g", fm.values(row, col));
      out << ',' << buf;
    }
    out << '\n';
  }
}

FeatureMatrix read_feature_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  FeatureMatrix fm;
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("empty feature matrix file " + path.string());
  }
  {
    std::istringstream hs(line);
    std::string tok;
    std::getline(hs, tok, ',');  // id
    std::getline(hs, tok, ',');  // label
    while (std::getline(hs, tok, ',')) {
      FeatureColumn c;
      if (std::sscanf(tok.c_str(), "D%d@ref%d", &c.dissim_index,
                      &c.ref_ordinal) != 2) {
        throw std::runtime_error("bad column descriptor `" + tok + "` in " +
                                 path.string());
      }
      fm.columns.push_back(c);
    }
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    std::getline(ls, tok, ',');
    fm.row_ids.push_back(tok);
    std::getline(ls, tok, ',');
    fm.labels.push_back(tok);
    std::vector<double> vals;
    while (std::getline(ls, tok, ',')) vals.push_back(std::stod(tok));
    if (vals.size() != fm.columns.size()) {
      throw std::runtime_error("row width mismatch in " + path.string());
    }
    rows.push_back(std::move(vals));
  }
  fm.values.resize(rows.size(), fm.columns.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) fm.values(r, c) = rows[r][c];
  }
  fm.complete.assign(rows.size(), 1);
  return fm;
}

void write_reference(const ReferenceSet& ref, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "seed," << ref.selection_seed << '\n';
  out << "rule,"
      << (ref.rule == ReferenceRule::random_from_class ? "random_from_class"
                                                       : "all_training")
      << '\n';
  for (const auto& id : ref.ids) out << id << '\n';
}

ReferenceSet read_reference(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  ReferenceSet ref;
  std::string line;
  if (!std::getline(in, line) || line.rfind("seed,", 0) != 0) {
    throw std::runtime_error("bad reference file " + path.string());
  }
  ref.selection_seed = std::stoull(line.substr(5));
  if (!std::getline(in, line) || line.rfind("rule,", 0) != 0) {
    throw std::runtime_error("bad reference file " + path.string());
  }
  ref.rule = line.substr(5) == "random_from_class"
                 ? ReferenceRule::random_from_class
                 : ReferenceRule::all_training;
  while (std::getline(in, line)) {
    if (!line.empty()) ref.ids.push_back(line);
  }
  return ref;
}

}  // namespace dshape
