#include "dshape/forest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dshape/rng.hpp"
#include "dshape/workers.hpp"

namespace dshape {

void ForestConfig::validate(int n_features) const {
  if (n_trees < 1) throw std::invalid_argument("ForestConfig: n_trees < 1");
  if (subsample_fraction <= 0 || subsample_fraction > 1) {
    throw std::invalid_argument("ForestConfig: subsample_fraction outside (0,1]");
  }
  if (min_impurity_decrease < 0) {
    throw std::invalid_argument("ForestConfig: negative min_impurity_decrease");
  }
  if (features_per_split < 0 || features_per_split > n_features) {
    throw std::invalid_argument("ForestConfig: features_per_split out of range");
  }
  for (const auto& [label, w] : class_weights) {
    if (w <= 0) throw std::invalid_argument("ForestConfig: class weight <= 0");
  }
}

double gini_impurity(const Eigen::VectorXd& freqs) {
  const double total = freqs.sum();
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("gini_impurity: frequencies must sum to 1");
  }
  if (freqs.size() == 2) {
    const double alpha = freqs(0);
    return alpha * (1.0 - alpha);
  }
  return (freqs.array() * (1.0 - freqs.array())).sum() / 2.0;
}

int DecisionTree::predict(const Eigen::RowVectorXd& row) const {
  int node = 0;
  while (!nodes[node].is_leaf()) {
    node = row(nodes[node].feature) <= nodes[node].threshold
               ? nodes[node].left
               : nodes[node].right;
  }
  int best = 0;
  nodes[node].class_scores.maxCoeff(&best);
  return best;
}

int TrainedForest::class_index(const std::string& label) const {
  const auto it = std::lower_bound(classes.begin(), classes.end(), label);
  if (it == classes.end() || *it != label) {
    throw std::invalid_argument("unknown class label " + label);
  }
  return static_cast<int>(it - classes.begin());
}

namespace {

// raw impurity of weighted class counts (not yet normalized)
double counts_gini(const Eigen::VectorXd& wcounts, double wtotal) {
  if (wtotal <= 0) return 0.0;
  if (wcounts.size() == 2) {
    const double alpha = wcounts(0) / wtotal;
    return alpha * (1.0 - alpha);
  }
  const auto freqs = wcounts.array() / wtotal;
  return (freqs * (1.0 - freqs)).sum() / 2.0;
}

struct TreeGrower {
  const Eigen::MatrixXd& values;
  const std::vector<int>& y;            // class index per row
  const Eigen::VectorXd& class_weight;  // resolved for this tree
  int n_classes;
  int mtry;
  double min_gain;
  Rng& rng;
  DecisionTree& tree;

  int grow(std::vector<int>& rows) {
    const int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();

    Eigen::VectorXd wcounts = Eigen::VectorXd::Zero(n_classes);
    for (int r : rows) wcounts(y[r]) += class_weight(y[r]);
    const double wtotal = wcounts.sum();

    auto make_leaf = [&]() {
      tree.nodes[node_id].class_scores =
          wtotal > 0 ? (wcounts / wtotal).eval()
                     : Eigen::VectorXd::Constant(n_classes, 1.0 / n_classes);
      return node_id;
    };

    const double parent_gini = counts_gini(wcounts, wtotal);
    if (rows.size() < 2 || parent_gini == 0.0) return make_leaf();

    // mtry features without replacement, scanned in ascending index order so
    // equal-gain ties resolve toward the lowest feature index
    auto feats = rng.sample_without_replacement(
        static_cast<int>(values.cols()), mtry);
    std::sort(feats.begin(), feats.end());

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_gain = 0.0;
    std::vector<std::pair<double, int>> order;
    order.reserve(rows.size());

    for (int f : feats) {
      order.clear();
      for (int r : rows) order.emplace_back(values(r, f), y[r]);
      std::sort(order.begin(), order.end());
      if (order.front().first == order.back().first) continue;

      Eigen::VectorXd left = Eigen::VectorXd::Zero(n_classes);
      double wleft = 0.0;
      for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        const double w = class_weight(order[k].second);
        left(order[k].second) += w;
        wleft += w;
        if (order[k].first == order[k + 1].first) continue;
        const double threshold = 0.5 * (order[k].first + order[k + 1].first);
        const Eigen::VectorXd right = wcounts - left;
        const double wright = wtotal - wleft;
        const double child =
            (wleft * counts_gini(left, wleft) +
             wright * counts_gini(right, wright)) /
            wtotal;
        const double gain = parent_gini - child;
        // strict improvement keeps the first (lowest feature, lowest
        // threshold) candidate on ties
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_threshold = threshold;
        }
      }
    }

    if (best_feature < 0 || best_gain < min_gain) return make_leaf();

    std::vector<int> left_rows, right_rows;
    for (int r : rows) {
      (values(r, best_feature) <= best_threshold ? left_rows : right_rows)
          .push_back(r);
    }
    if (left_rows.empty() || right_rows.empty()) return make_leaf();

    rows.clear();
    rows.shrink_to_fit();
    tree.nodes[node_id].feature = best_feature;
    tree.nodes[node_id].threshold = best_threshold;
    const int left_id = grow(left_rows);
    tree.nodes[node_id].left = left_id;
    const int right_id = grow(right_rows);
    tree.nodes[node_id].right = right_id;
    return node_id;
  }
};

std::vector<int> class_indices(const std::vector<std::string>& labels,
                               const std::vector<std::string>& classes) {
  std::vector<int> y(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto it = std::lower_bound(classes.begin(), classes.end(), labels[i]);
    if (it == classes.end() || *it != labels[i]) {
      throw std::invalid_argument("label not in class set: " + labels[i]);
    }
    y[i] = static_cast<int>(it - classes.begin());
  }
  return y;
}

}  // namespace

TrainedForest train_forest(const Eigen::MatrixXd& values,
                           const std::vector<std::string>& labels,
                           const ForestConfig& config, int workers) {
  const int n = static_cast<int>(values.rows());
  const int p = static_cast<int>(values.cols());
  if (n < 1 || p < 1) throw std::invalid_argument("train_forest: empty matrix");
  if (static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("train_forest: label count mismatch");
  }
  config.validate(p);
  if (!values.allFinite()) {
    throw std::invalid_argument("train_forest: missing values not supported");
  }

  TrainedForest forest;
  forest.config = config;
  {
    std::set<std::string> cl(labels.begin(), labels.end());
    forest.classes.assign(cl.begin(), cl.end());
  }
  const int k = static_cast<int>(forest.classes.size());
  const auto y = class_indices(labels, forest.classes);

  const int mtry = config.features_per_split > 0
                       ? config.features_per_split
                       : std::max(1, static_cast<int>(std::floor(std::sqrt(p))));
  const int bag_size = std::max(
      1, static_cast<int>(std::lround(config.subsample_fraction * n)));

  forest.trees.resize(config.n_trees);
  parallel_for(config.n_trees, resolve_workers(workers), [&](std::size_t t) {
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(t)));
    DecisionTree& tree = forest.trees[t];

    std::vector<int> bag;
    if (config.subsample_with_replacement) {
      bag.resize(n);
      for (int i = 0; i < n; ++i) bag[i] = static_cast<int>(rng.uniform_index(n));
    } else {
      bag = rng.sample_without_replacement(n, bag_size);
    }
    {
      std::set<int> distinct(bag.begin(), bag.end());
      tree.in_bag.assign(distinct.begin(), distinct.end());
    }

    // class weights: explicit map, else inverse in-bag class frequency
    Eigen::VectorXd cw(k);
    if (!config.class_weights.empty()) {
      for (int c = 0; c < k; ++c) {
        const auto it = config.class_weights.find(forest.classes[c]);
        cw(c) = it != config.class_weights.end() ? it->second : 1.0;
      }
    } else {
      Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
      for (int r : bag) counts(y[r]) += 1.0;
      for (int c = 0; c < k; ++c) {
        cw(c) = counts(c) > 0
                    ? static_cast<double>(bag.size()) / (k * counts(c))
                    : 0.0;
      }
    }

    TreeGrower grower{values, y, cw, k, mtry,
                      config.min_impurity_decrease, rng, tree};
    std::vector<int> rows = bag;  // bootstrap repeats train with multiplicity
    grower.grow(rows);
  });

  const auto oob = oob_evaluate(forest, values, labels);
  forest.oob_accuracy = oob.accuracy;
  forest.confusion = oob.confusion;
  return forest;
}

TrainedForest train_forest(const FeatureMatrix& fm, const ForestConfig& config,
                           int workers) {
  return train_forest(fm.values, fm.labels, config, workers);
}

namespace {

int majority_vote(const Eigen::VectorXi& votes, const TrainedForest& forest) {
  int best = 0;
  for (int c = 1; c < votes.size(); ++c) {
    if (votes(c) > votes(best)) {
      best = c;
    } else if (votes(c) == votes(best)) {
      // tie: larger configured class weight wins, then the lexicographically
      // smaller label (classes are sorted)
      const auto& cw = forest.config.class_weights;
      const auto wb = cw.find(forest.classes[best]);
      const auto wc = cw.find(forest.classes[c]);
      const double weight_best = wb != cw.end() ? wb->second : 1.0;
      const double weight_c = wc != cw.end() ? wc->second : 1.0;
      if (weight_c > weight_best) best = c;
    }
  }
  return best;
}

}  // namespace

OobResult oob_evaluate(const TrainedForest& forest,
                       const Eigen::MatrixXd& values,
                       const std::vector<std::string>& labels) {
  const int n = static_cast<int>(values.rows());
  const int k = static_cast<int>(forest.classes.size());
  const auto y = class_indices(labels, forest.classes);

  OobResult res;
  res.oob_counts = Eigen::VectorXi::Zero(n);
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(k, k);

  std::vector<std::vector<char>> in_bag(forest.trees.size(),
                                        std::vector<char>(n, 0));
  for (std::size_t t = 0; t < forest.trees.size(); ++t) {
    for (int r : forest.trees[t].in_bag) in_bag[t][r] = 1;
  }

  int correct = 0, scored = 0;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXi votes = Eigen::VectorXi::Zero(k);
    for (std::size_t t = 0; t < forest.trees.size(); ++t) {
      if (in_bag[t][i]) continue;
      res.oob_counts(i) += 1;
      votes(forest.trees[t].predict(values.row(i))) += 1;
    }
    if (res.oob_counts(i) == 0) {
      res.excluded_cases += 1;
      continue;
    }
    const int pred = majority_vote(votes, forest);
    counts(y[i], pred) += 1;
    ++scored;
    if (pred == y[i]) ++correct;
  }

  res.accuracy = scored > 0 ? static_cast<double>(correct) / scored : 0.0;
  res.confusion.resize(k, k);
  for (int r = 0; r < k; ++r) {
    const double row_total = counts.row(r).sum();
    for (int c = 0; c < k; ++c) {
      res.confusion(r, c) = row_total > 0 ? counts(r, c) / row_total : 0.0;
    }
  }
  return res;
}

std::vector<double> group_importance(
    const TrainedForest& forest, const Eigen::MatrixXd& values,
    const std::vector<std::string>& labels,
    const std::vector<std::vector<int>>& groups, int n_permutations,
    int n_repeats, std::uint64_t seed, int workers,
    bool identity_permutations) {
  const int n = static_cast<int>(values.rows());
  for (const auto& g : groups) {
    for (int c : g) {
      if (c < 0 || c >= values.cols()) {
        throw std::invalid_argument("group_importance: unknown column " +
                                    std::to_string(c));
      }
    }
  }
  if (n_permutations < 1 || n_repeats < 1) {
    throw std::invalid_argument("group_importance: counts must be >= 1");
  }

  const double baseline = oob_evaluate(forest, values, labels).accuracy;
  std::vector<double> importance(groups.size(), 0.0);

  // flatten (group, repeat) tasks; per-task seeds keep results independent of
  // scheduling
  const std::size_t tasks = groups.size() * static_cast<std::size_t>(n_repeats);
  std::vector<double> drops(tasks, 0.0);
  parallel_for(tasks, resolve_workers(workers), [&](std::size_t task) {
    const std::size_t g = task / n_repeats;
    Rng rng(mix_seed(mix_seed(seed, "importance"),
                     static_cast<std::uint64_t>(task)));

    const int pool_size =
        std::min<int>(n_permutations, static_cast<int>(groups[g].size()));
    std::vector<std::vector<int>> pool(std::max(pool_size, 1));
    for (auto& perm : pool) {
      perm.resize(n);
      for (int i = 0; i < n; ++i) perm[i] = i;
      if (!identity_permutations) rng.shuffle(perm);
    }

    Eigen::MatrixXd scrambled = values;
    for (std::size_t jc = 0; jc < groups[g].size(); ++jc) {
      const int col = groups[g][jc];
      const auto& perm = pool[jc % pool.size()];
      for (int i = 0; i < n; ++i) scrambled(i, col) = values(perm[i], col);
    }
    drops[task] =
        baseline - oob_evaluate(forest, scrambled, labels).accuracy;
  });

  for (std::size_t g = 0; g < groups.size(); ++g) {
    double sum = 0.0;
    for (int rep = 0; rep < n_repeats; ++rep) {
      sum += drops[g * n_repeats + rep];
    }
    importance[g] = sum / n_repeats;
  }
  return importance;
}

void save_forest(const TrainedForest& forest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[64];
  out << "dshape_forest v1\n";
  out << "classes " << forest.classes.size();
  for (const auto& c : forest.classes) out << ' ' << c;
  out << '\n';
  const auto& cfg = forest.config;
  std::snprintf(buf, sizeof(buf), "%.17g", cfg.subsample_fraction);
  out << "config " << cfg.n_trees << ' ' << buf << ' '
      << (cfg.subsample_with_replacement ? 1 : 0) << ' '
      << cfg.features_per_split << ' ';
  std::snprintf(buf, sizeof(buf), "%.17g", cfg.min_impurity_decrease);
  out << buf << ' ' << cfg.seed << '\n';
  out << "class_weights " << cfg.class_weights.size();
  for (const auto& [label, w] : cfg.class_weights) {
    std::snprintf(buf, sizeof(buf), "%.17g", w);
    out << ' ' << label << ' ' << buf;
  }
  out << '\n';
  std::snprintf(buf, sizeof(buf), "%.17g", forest.oob_accuracy);
  out << "oob " << buf << '\n';
  out << "confusion " << forest.confusion.rows();
  for (int r = 0; r < forest.confusion.rows(); ++r) {
    for (int c = 0; c < forest.confusion.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", forest.confusion(r, c));
      out << ' ' << buf;
    }
  }
  out << '\n';
  for (const auto& tree : forest.trees) {
    out << "tree " << tree.nodes.size() << ' ' << tree.in_bag.size() << '\n';
    out << "inbag";
    for (int r : tree.in_bag) out << ' ' << r;
    out << '\n';
    for (const auto& node : tree.nodes) {
      std::snprintf(buf, sizeof(buf), "%.17g", node.threshold);
      out << "node " << node.feature << ' ' << buf << ' ' << node.left << ' '
          << node.right;
      out << ' ' << node.class_scores.size();
      for (int c = 0; c < node.class_scores.size(); ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", node.class_scores(c));
        out << ' ' << buf;
      }
      out << '\n';
    }
  }
}

TrainedForest load_forest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string tok;
  in >> tok;
  if (tok != "dshape_forest") {
    throw std::runtime_error("bad forest file " + path.string());
  }
  in >> tok;
  if (tok != "v1") throw std::runtime_error("unsupported forest version " + tok);

  TrainedForest forest;
  std::size_t k = 0;
  in >> tok >> k;
  forest.classes.resize(k);
  for (auto& c : forest.classes) in >> c;
  auto& cfg = forest.config;
  int with_repl = 0;
  in >> tok >> cfg.n_trees >> cfg.subsample_fraction >> with_repl >>
      cfg.features_per_split >> cfg.min_impurity_decrease >> cfg.seed;
  cfg.subsample_with_replacement = with_repl != 0;
  std::size_t n_weights = 0;
  in >> tok >> n_weights;
  for (std::size_t i = 0; i < n_weights; ++i) {
    std::string label;
    double w;
    in >> label >> w;
    cfg.class_weights[label] = w;
  }
  in >> tok >> forest.oob_accuracy;
  int kk = 0;
  in >> tok >> kk;
  forest.confusion.resize(kk, kk);
  for (int r = 0; r < kk; ++r) {
    for (int c = 0; c < kk; ++c) in >> forest.confusion(r, c);
  }
  while (in >> tok) {
    if (tok != "tree") throw std::runtime_error("bad forest record " + tok);
    std::size_t n_nodes = 0, n_inbag = 0;
    in >> n_nodes >> n_inbag;
    DecisionTree tree;
    in >> tok;  // inbag
    tree.in_bag.resize(n_inbag);
    for (auto& r : tree.in_bag) in >> r;
    tree.nodes.resize(n_nodes);
    for (auto& node : tree.nodes) {
      std::size_t n_scores = 0;
      in >> tok >> node.feature >> node.threshold >> node.left >> node.right >>
          n_scores;
      node.class_scores.resize(n_scores);
      for (std::size_t c = 0; c < n_scores; ++c) in >> node.class_scores(c);
    }
    forest.trees.push_back(std::move(tree));
  }
  return forest;
}

}  // namespace dshape
