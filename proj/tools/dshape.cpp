#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "dshape/dissim.hpp"
#include "dshape/enrich.hpp"
#include "dshape/features.hpp"
#include "dshape/forest.hpp"
#include "dshape/registration.hpp"
#include "dshape/rng.hpp"
#include "dshape/standardize.hpp"
#include "dshape/synth.hpp"
#include "dshape/version.hpp"
#include "dshape/workers.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct SolverFlags {
  double sigma = 0.0;
  double tau = 0.0;
  double sigma_factor = 0.3;
  double tau_factor = 0.2;
  double lambda = 1.0;
  int q = 4;
  int stride = 1;
  int max_iters = 200;
  double term_factor = 0.5;
  double trim = 0.05;

  void attach(CLI::App* cmd) {
    cmd->add_option("--sigma", sigma, "velocity kernel scale (0 = derived)");
    cmd->add_option("--tau", tau, "matching kernel scale (0 = derived)");
    cmd->add_option("--sigma-factor", sigma_factor, "derived sigma bbox factor");
    cmd->add_option("--tau-factor", tau_factor, "derived tau bbox factor");
    cmd->add_option("--lambda", lambda, "matching weight");
    cmd->add_option("--q", q, "time intervals");
    cmd->add_option("--stride", stride, "control-point stride");
    cmd->add_option("--max-iters", max_iters, "ADMM iteration cap");
    cmd->add_option("--term-factor", term_factor, "termination mesh factor");
    cmd->add_option("--trim", trim, "censored Hausdorff trim fraction");
  }

  dshape::SolverOptions options() const {
    dshape::SolverOptions o;
    o.kernel.sigma = sigma;
    o.kernel.tau = tau;
    o.sigma_bbox_factor = sigma_factor;
    o.tau_bbox_factor = tau_factor;
    o.kernel.lambda = lambda;
    o.time_steps = q;
    o.control_stride = stride;
    o.max_admm_iters = max_iters;
    o.term_mesh_factor = term_factor;
    o.trim_fraction = trim;
    return o;
  }

  json to_json() const {
    return json{{"sigma", sigma},   {"tau", tau},
                {"sigma_factor", sigma_factor}, {"tau_factor", tau_factor},
                {"lambda", lambda}, {"q", q},
                {"stride", stride}, {"max_iters", max_iters},
                {"term_factor", term_factor}, {"trim", trim}};
  }
};

std::vector<std::pair<std::string, std::string>> read_pairs(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw std::runtime_error("bad pair line: " + line);
    }
    pairs.emplace_back(line.substr(0, comma), line.substr(comma + 1));
  }
  return pairs;
}

std::map<std::string, std::string> label_map(const dshape::SurfaceDataset& ds) {
  std::map<std::string, std::string> m;
  for (const auto& e : ds.entries) m[e.surface.id] = e.label;
  return m;
}

void write_oob_reports(const std::vector<double>& accuracies,
                       const fs::path& dir) {
  {
    std::ofstream out(dir / "oob_accuracies.csv");
    out << "restart,oob_accuracy\n";
    char buf[48];
    for (std::size_t i = 0; i < accuracies.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, accuracies[i]);
      out << buf;
    }
  }
  // fixed-width histogram of the restart accuracies
  double lo = 1.0, hi = 0.0;
  for (double a : accuracies) {
    lo = std::min(lo, a);
    hi = std::max(hi, a);
  }
  if (hi <= lo) hi = lo + 1e-9;
  const int bins = std::max<int>(1, std::min<std::size_t>(20, accuracies.size()));
  std::vector<int> counts(bins, 0);
  for (double a : accuracies) {
    int b = static_cast<int>((a - lo) / (hi - lo) * bins);
    counts[std::clamp(b, 0, bins - 1)] += 1;
  }
  std::ofstream out(dir / "oob_histogram.csv");
  out << "edge_lo,edge_hi,count\n";
  char buf[80];
  for (int b = 0; b < bins; ++b) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%d\n",
                  lo + (hi - lo) * b / bins, lo + (hi - lo) * (b + 1) / bins,
                  counts[b]);
    out << buf;
  }
}

void write_importance_table(
    const std::vector<std::pair<std::string, double>>& rows,
    const fs::path& path) {
  std::ofstream out(path);
  out << "group,importance\n";
  char buf[64];
  for (const auto& [name, imp] : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g\n", name.c_str(), imp);
    out << buf;
  }
}

std::vector<std::pair<std::string, double>> ranked_importance(
    const dshape::TrainedForest& forest, const dshape::FeatureMatrix& fm,
    int permutations, int repeats, std::uint64_t seed, int workers) {
  // one group per dissimilarity index present in the matrix
  std::map<int, std::vector<int>> by_index;
  for (int c = 0; c < fm.n_cols(); ++c) {
    by_index[fm.columns[c].dissim_index].push_back(c);
  }
  std::vector<int> indices;
  std::vector<std::vector<int>> groups;
  for (const auto& [idx, cols] : by_index) {
    indices.push_back(idx);
    groups.push_back(cols);
  }
  const auto imps =
      dshape::group_importance(forest, fm.values, fm.labels, groups,
                               permutations, repeats, seed, workers);
  std::vector<std::pair<std::string, double>> rows;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    rows.emplace_back(dshape::dissim_name(indices[g]), imps[g]);
  }
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.second > b.second; });
  return rows;
}

int run_pipeline(const json& cfg, const fs::path& outdir);

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffeomorphic surface classification toolkit"};
  app.set_version_flag("--version", dshape::kVersion);
  app.require_subcommand(1);

  // ---- gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::string gen_out = "dataset";
  dshape::SynthParams synth;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--n-gapped", synth.n_gapped);
  gen->add_option("--n-closed", synth.n_closed);
  gen->add_option("--ring-size", synth.ring_size);
  gen->add_option("--ring-count", synth.ring_count);
  gen->add_option("--gap-depth-lo", synth.gap_depth_lo);
  gen->add_option("--gap-depth-hi", synth.gap_depth_hi);
  gen->add_option("--gap-width-lo", synth.gap_width_lo);
  gen->add_option("--gap-width-hi", synth.gap_width_hi);
  gen->add_option("--noise", synth.noise_amplitude);
  gen->add_option("--noise-scale", synth.noise_scale);
  gen->add_option("--seed", synth.seed);

  // ---- register
  auto* reg = app.add_subcommand("register", "register one surface pair");
  std::string reg_src, reg_dst, reg_cache, reg_dissim_cache, reg_flow_dir;
  bool reg_no_standardize = false, reg_dissim = false;
  SolverFlags reg_solver;
  reg->add_option("source", reg_src, "source RGS file")->required();
  reg->add_option("target", reg_dst, "target RGS file")->required();
  reg->add_option("--cache", reg_cache, "registration cache CSV");
  reg->add_flag("--no-standardize", reg_no_standardize,
                "register the raw grids");
  reg->add_flag("--dissim", reg_dissim, "also compute the nine dissimilarities");
  reg->add_option("--dissim-cache", reg_dissim_cache, "dissimilarity cache CSV");
  reg->add_option("--dump-flow", reg_flow_dir, "write RGS per flow node");
  reg_solver.attach(reg);

  // ---- dissim-batch
  auto* batch = app.add_subcommand("dissim-batch", "dissimilarities for many pairs");
  std::string batch_manifest, batch_pairs, batch_refs, batch_cache = "dissims.csv";
  int batch_workers = 1;
  bool batch_symmetrize = false;
  SolverFlags batch_solver;
  batch->add_option("--manifest", batch_manifest)->required();
  batch->add_option("--pairs", batch_pairs, "CSV of source_id,target_id");
  batch->add_option("--refs", batch_refs, "reference file: all dataset x refs");
  batch->add_option("--cache", batch_cache);
  batch->add_option("--workers", batch_workers);
  batch->add_flag("--symmetrize", batch_symmetrize,
                  "average both directions (doubles registrations)");
  batch_solver.attach(batch);

  // ---- enrich
  auto* enrich = app.add_subcommand("enrich", "rebalance classes");
  std::string enrich_manifest, enrich_out = "enriched";
  std::vector<std::string> enrich_targets;
  bool enrich_perturb_all = false;
  std::uint64_t enrich_seed = 0;
  int enrich_workers = 1;
  double enrich_tstar = 0.75, enrich_drift = 0.05, enrich_delta = 0.02;
  int enrich_steps = 5;
  SolverFlags enrich_solver;
  enrich->add_option("--manifest", enrich_manifest)->required();
  enrich->add_option("--out", enrich_out)->required();
  enrich->add_option("--target", enrich_targets,
                     "label=N per-class target size (repeatable)");
  enrich->add_flag("--perturb-all", enrich_perturb_all);
  enrich->add_option("--t-star", enrich_tstar);
  enrich->add_option("--max-drift", enrich_drift);
  enrich->add_option("--delta", enrich_delta);
  enrich->add_option("--steps", enrich_steps);
  enrich->add_option("--seed", enrich_seed);
  enrich->add_option("--workers", enrich_workers);
  enrich_solver.attach(enrich);

  // ---- features
  auto* feat = app.add_subcommand("features", "assemble the feature matrix");
  std::string feat_manifest, feat_cache, feat_ref, feat_out = "features.csv";
  std::string feat_ref_class;
  int feat_ref_size = 0;
  std::uint64_t feat_seed = 0;
  bool feat_reduced = false, feat_strict = false;
  feat->add_option("--manifest", feat_manifest)->required();
  feat->add_option("--cache", feat_cache)->required();
  feat->add_option("--ref", feat_ref, "existing reference file");
  feat->add_option("--ref-class", feat_ref_class, "select references from class");
  feat->add_option("--ref-size", feat_ref_size);
  feat->add_option("--seed", feat_seed);
  feat->add_option("--out", feat_out);
  feat->add_flag("--reduced", feat_reduced, "only D1, D2, D9 groups");
  feat->add_flag("--strict", feat_strict, "abort on missing pairs");

  // ---- train
  auto* train = app.add_subcommand("train", "train a random forest");
  std::string train_features, train_out = "forest.txt";
  dshape::ForestConfig train_cfg;
  int train_workers = 1;
  train->add_option("--features", train_features)->required();
  train->add_option("--out", train_out);
  train->add_option("--trees", train_cfg.n_trees);
  train->add_option("--subsample-fraction", train_cfg.subsample_fraction);
  train->add_flag("--with-replacement", train_cfg.subsample_with_replacement);
  train->add_option("--mtry", train_cfg.features_per_split);
  train->add_option("--min-gain", train_cfg.min_impurity_decrease);
  train->add_option("--seed", train_cfg.seed);
  train->add_option("--workers", train_workers);

  // ---- importance
  auto* imp = app.add_subcommand("importance", "group permutation importance");
  std::string imp_features, imp_forest, imp_out = "importance.csv";
  int imp_perms = 100, imp_repeats = 100, imp_workers = 1;
  std::uint64_t imp_seed = 0;
  imp->add_option("--features", imp_features)->required();
  imp->add_option("--forest", imp_forest)->required();
  imp->add_option("--out", imp_out);
  imp->add_option("--permutations", imp_perms);
  imp->add_option("--repeats", imp_repeats);
  imp->add_option("--seed", imp_seed);
  imp->add_option("--workers", imp_workers);

  // ---- histogram
  auto* hist = app.add_subcommand("histogram", "dissimilarity histograms by class pairing");
  std::string hist_manifest, hist_cache, hist_out = "histograms.csv";
  std::string hist_label_a, hist_label_b;
  int hist_index = 1, hist_bins = 20;
  hist->add_option("--manifest", hist_manifest)->required();
  hist->add_option("--cache", hist_cache)->required();
  hist->add_option("--label-a", hist_label_a)->required();
  hist->add_option("--label-b", hist_label_b)->required();
  hist->add_option("--index", hist_index, "dissimilarity index 1..9");
  hist->add_option("--bins", hist_bins);
  hist->add_option("--out", hist_out);

  // ---- pipeline
  auto* pipe = app.add_subcommand("pipeline", "full end-to-end run");
  std::string pipe_config, pipe_out = "run";
  pipe->add_option("--config", pipe_config, "JSON pipeline configuration")
      ->required();
  pipe->add_option("--out", pipe_out, "artifact directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const fs::path dir(gen_out);
      const auto ds = dshape::generate(synth);
      dshape::save_dataset(ds, dir / "surfaces", dir / "manifest.csv");
      dshape::write_synth_provenance(synth, dir / "synth_params.json");
      std::printf("wrote %zu surfaces under %s\n", ds.entries.size(),
                  dir.string().c_str());
      return 0;
    }

    if (*reg) {
      dshape::RingSurface s, t;
      try {
        s = dshape::load_surface(reg_src);
        t = dshape::load_surface(reg_dst);
      } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
      }
      const auto opts = reg_solver.options();
      if (reg_dissim) {
        dshape::DissimParams dp;
        dp.solver = opts;
        const auto t0 = std::chrono::steady_clock::now();
        const auto rec = dshape::dissim_pair(s, t, dp);
        const auto dt = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
        if (!reg_dissim_cache.empty()) {
          dshape::DissimCache cache{fs::path(reg_dissim_cache)};
          cache.append(rec);
        }
        std::printf("kin=%.6g converged=%d", rec.kin, rec.converged ? 1 : 0);
        for (int i = 0; i < 9; ++i) std::printf(" D%d=%.6g", i + 1, rec.d(i));
        std::printf(" wallclock=%.2fs\n", dt);
        return rec.converged ? 0 : 2;
      }
      dshape::RingSurface src_reg = s, dst_reg = t;
      if (!reg_no_standardize) {
        src_reg = dshape::standardize(s).surface;
        dst_reg = dshape::standardize(t).surface;
      }
      const auto t0 = std::chrono::steady_clock::now();
      const auto res = dshape::register_surfaces(src_reg, dst_reg, opts);
      const auto wallclock = std::chrono::duration<double>(
                                 std::chrono::steady_clock::now() - t0)
                                 .count();
      if (!reg_cache.empty()) {
        dshape::append_registration_log(
            reg_cache, {s.id, t.id, res.flow.kinetic_energy,
                        res.flow.terminal_mismatch, res.converged,
                        res.iterations, wallclock});
      }
      if (!reg_flow_dir.empty()) {
        fs::create_directories(reg_flow_dir);
        for (int node = 0; node <= res.flow.time_steps; ++node) {
          const auto surf =
              dshape::flow_node_surface(res.flow, src_reg, node);
          dshape::save_surface(surf, fs::path(reg_flow_dir) /
                                         ("node_" + std::to_string(node) + ".rgs"));
        }
      }
      std::printf("kin=%.6g mismatch=%.6g threshold=%.6g converged=%d iters=%d\n",
                  res.flow.kinetic_energy, res.flow.terminal_mismatch,
                  res.threshold, res.converged ? 1 : 0, res.iterations);
      return res.converged ? 0 : 2;
    }

    if (*batch) {
      const auto ds = dshape::load_dataset(batch_manifest);
      std::vector<std::pair<std::string, std::string>> pairs;
      if (!batch_pairs.empty()) {
        pairs = read_pairs(batch_pairs);
      } else if (!batch_refs.empty()) {
        const auto ref = dshape::read_reference(batch_refs);
        for (const auto& e : ds.entries) {
          for (const auto& rid : ref.ids) {
            pairs.emplace_back(e.surface.id, rid);
          }
        }
      } else {
        throw std::runtime_error("dissim-batch: need --pairs or --refs");
      }
      dshape::DissimParams dp;
      dp.solver = batch_solver.options();
      dp.symmetrize = batch_symmetrize;
      dshape::DissimCache cache{fs::path(batch_cache)};
      const auto records =
          dshape::batch_dissims(ds, pairs, dp, &cache, batch_workers);
      int failed = 0;
      for (const auto& r : records) failed += r.converged ? 0 : 1;
      std::printf("computed %zu records (%d non-converged) -> %s\n",
                  records.size(), failed, batch_cache.c_str());
      return 0;
    }

    if (*enrich) {
      const auto ds = dshape::load_dataset(enrich_manifest);
      std::map<std::string, int> targets;
      for (const auto& t : enrich_targets) {
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
          throw std::runtime_error("bad --target, expected label=N: " + t);
        }
        targets[t.substr(0, eq)] = std::stoi(t.substr(eq + 1));
      }
      dshape::RebalanceOptions opts;
      opts.solver = enrich_solver.options();
      opts.perturb_all = enrich_perturb_all;
      opts.t_star = enrich_tstar;
      opts.perturbation.max_drift = enrich_drift;
      opts.perturbation.time_step = enrich_delta;
      opts.perturbation.step_count = enrich_steps;
      opts.seed = enrich_seed;
      opts.workers = enrich_workers;
      const auto result = dshape::rebalance(ds, targets, opts);
      const fs::path dir(enrich_out);
      dshape::save_dataset(result.dataset, dir / "surfaces",
                           dir / "manifest.csv");
      dshape::write_enrichment_report(result.report, dir / "enrichment.csv");
      std::printf("enriched dataset: %zu entries -> %s\n",
                  result.dataset.entries.size(), enrich_out.c_str());
      return 0;
    }

    if (*feat) {
      const auto ds = dshape::load_dataset(feat_manifest);
      dshape::ReferenceSet ref;
      if (!feat_ref.empty()) {
        ref = dshape::read_reference(feat_ref);
      } else if (!feat_ref_class.empty() && feat_ref_size > 0) {
        ref = dshape::select_reference(ds, dshape::ReferenceRule::random_from_class,
                                       feat_ref_class, feat_ref_size, feat_seed);
        dshape::write_reference(ref, fs::path(feat_out).replace_extension(".ref"));
      } else {
        throw std::runtime_error("features: need --ref or --ref-class/--ref-size");
      }
      dshape::DissimCache cache{fs::path(feat_cache)};
      std::vector<dshape::DissimRecord> records;
      for (const auto& [key, rec] : cache.rows()) records.push_back(rec);
      const std::vector<int> indices =
          feat_reduced ? std::vector<int>{1, 2, 9}
                       : std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9};
      auto fm = dshape::build_features(ds, ref, records, indices, feat_strict);
      const int dropped = dshape::drop_incomplete_rows(fm);
      dshape::write_feature_matrix(fm, feat_out);
      std::printf("feature matrix %dx%d (%d incomplete rows dropped) -> %s\n",
                  fm.n_rows(), fm.n_cols(), dropped, feat_out.c_str());
      return 0;
    }

    if (*train) {
      const auto fm = dshape::read_feature_matrix(train_features);
      const auto forest = dshape::train_forest(fm, train_cfg, train_workers);
      dshape::save_forest(forest, train_out);
      std::printf("oob_accuracy=%.6g\n", forest.oob_accuracy);
      for (int r = 0; r < forest.confusion.rows(); ++r) {
        std::printf("confusion[%s]", forest.classes[r].c_str());
        for (int c = 0; c < forest.confusion.cols(); ++c) {
          std::printf(" %.4f", forest.confusion(r, c));
        }
        std::printf("\n");
      }
      return 0;
    }

    if (*imp) {
      const auto fm = dshape::read_feature_matrix(imp_features);
      const auto forest = dshape::load_forest(imp_forest);
      const auto rows = ranked_importance(forest, fm, imp_perms, imp_repeats,
                                          imp_seed, imp_workers);
      write_importance_table(rows, imp_out);
      for (const auto& [name, value] : rows) {
        std::printf("%s %.6g\n", name.c_str(), value);
      }
      return 0;
    }

    if (*hist) {
      const auto ds = dshape::load_dataset(hist_manifest);
      dshape::DissimCache cache{fs::path(hist_cache)};
      std::vector<dshape::DissimRecord> records;
      for (const auto& [key, rec] : cache.rows()) records.push_back(rec);
      const auto histograms =
          dshape::pair_histograms(records, label_map(ds), hist_label_a,
                                  hist_label_b, hist_index, hist_bins);
      dshape::write_histograms(histograms, hist_out);
      std::printf("wrote %s\n", hist_out.c_str());
      return 0;
    }

    if (*pipe) {
      std::ifstream in(pipe_config);
      if (!in) throw std::runtime_error("cannot open config " + pipe_config);
      json cfg = json::parse(in);
      return run_pipeline(cfg, pipe_out);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

namespace {

int run_pipeline(const json& cfg, const fs::path& outdir) {
  fs::create_directories(outdir);
  const std::uint64_t master_seed = cfg.value("seed", 0ull);
  const int workers = dshape::resolve_workers(cfg.value("workers", 1));

  // stage bookkeeping: every artifact directory records the exact
  // configuration, code version, and seeds
  {
    json echo = cfg;
    echo["version"] = dshape::kVersion;
    echo["resolved_workers"] = workers;
    std::ofstream out(outdir / "config.json");
    out << echo.dump(2) << '\n';
  }

  auto stage_fail = [](const std::string& stage, const std::string& what) {
    throw std::runtime_error("pipeline stage `" + stage + "` failed: " + what);
  };

  // ---- stage: dataset (generate or load)
  dshape::SurfaceDataset ds;
  try {
    if (cfg.contains("manifest")) {
      ds = dshape::load_dataset(cfg.at("manifest").get<std::string>());
    } else {
      const json g = cfg.value("generate", json::object());
      dshape::SynthParams sp;
      sp.n_gapped = g.value("n_gapped", 30);
      sp.n_closed = g.value("n_closed", 30);
      sp.ring_size = g.value("ring_size", 80);
      sp.ring_count = g.value("ring_count", 10);
      sp.noise_amplitude = g.value("noise", 0.05);
      sp.noise_scale = g.value("noise_scale", 2.5);
      sp.gap_depth_lo = g.value("gap_depth_lo", 0.35);
      sp.gap_depth_hi = g.value("gap_depth_hi", 0.60);
      sp.gap_width_lo = g.value("gap_width_lo", 0.45);
      sp.gap_width_hi = g.value("gap_width_hi", 0.75);
      sp.seed = dshape::mix_seed(master_seed, "generate");
      ds = dshape::generate(sp);
      dshape::save_dataset(ds, outdir / "dataset" / "surfaces",
                           outdir / "dataset" / "manifest.csv");
      dshape::write_synth_provenance(sp, outdir / "dataset" / "synth_params.json");
    }
  } catch (const std::exception& e) {
    stage_fail("dataset", e.what());
  }

  SolverFlags solver_flags;
  // pipeline defaults are calibrated for standardized benchmark surfaces
  solver_flags.sigma_factor = 0.15;
  solver_flags.tau_factor = 0.10;
  solver_flags.lambda = 1000.0;
  solver_flags.stride = 4;
  solver_flags.term_factor = 0.75;
  if (cfg.contains("solver")) {
    const json s = cfg["solver"];
    solver_flags.sigma = s.value("sigma", 0.0);
    solver_flags.tau = s.value("tau", 0.0);
    solver_flags.sigma_factor = s.value("sigma_factor", 0.15);
    solver_flags.tau_factor = s.value("tau_factor", 0.10);
    solver_flags.lambda = s.value("lambda", 1000.0);
    solver_flags.q = s.value("q", 4);
    solver_flags.stride = s.value("stride", 4);
    solver_flags.max_iters = s.value("max_iters", 200);
    solver_flags.term_factor = s.value("term_factor", 0.75);
    solver_flags.trim = s.value("trim", 0.05);
  }

  // ---- stage: enrichment
  try {
    if (cfg.contains("enrich")) {
      const json e = cfg["enrich"];
      dshape::RebalanceOptions opts;
      opts.solver = solver_flags.options();
      opts.perturb_all = e.value("perturb_all", false);
      opts.t_star = e.value("t_star", 0.75);
      opts.perturbation.time_step = e.value("delta", 0.02);
      opts.perturbation.step_count = e.value("steps", 5);
      opts.perturbation.max_drift = e.value("max_drift", 0.05);
      opts.perturbation.min_triangle_quality =
          e.value("min_triangle_quality", 0.05);
      opts.seed = dshape::mix_seed(master_seed, "enrich");
      opts.workers = workers;
      std::map<std::string, int> targets;
      if (e.contains("targets")) {
        for (const auto& [label, n] : e["targets"].items()) {
          targets[label] = n.get<int>();
        }
      }
      auto result = dshape::rebalance(ds, targets, opts);
      ds = std::move(result.dataset);
      dshape::save_dataset(ds, outdir / "enriched" / "surfaces",
                           outdir / "enriched" / "manifest.csv");
      dshape::write_enrichment_report(result.report,
                                      outdir / "enriched" / "enrichment.csv");
    }
  } catch (const std::exception& e) {
    stage_fail("enrich", e.what());
  }

  // ---- stage: reference + batch dissimilarities
  dshape::ReferenceSet ref;
  std::vector<dshape::DissimRecord> records;
  try {
    const json f = cfg.value("features", json::object());
    const std::string ref_class = f.value("ref_class", std::string("closed"));
    const int r = f.value("ref_size", 20);
    ref = dshape::select_reference(ds, dshape::ReferenceRule::random_from_class,
                                   ref_class, r,
                                   dshape::mix_seed(master_seed, "reference"));
    dshape::write_reference(ref, outdir / "reference.txt");

    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& e : ds.entries) {
      for (const auto& rid : ref.ids) pairs.emplace_back(e.surface.id, rid);
    }
    dshape::DissimParams dp;
    dp.solver = solver_flags.options();
    dp.symmetrize = f.value("symmetrize", false);
    dshape::DissimCache cache{outdir / "dissims.csv"};
    records = dshape::batch_dissims(ds, pairs, dp, &cache, workers);
  } catch (const std::exception& e) {
    stage_fail("dissims", e.what());
  }

  // ---- stage: feature matrix
  dshape::FeatureMatrix fm;
  try {
    const json f = cfg.value("features", json::object());
    const std::vector<int> indices =
        f.value("reduced", false) ? std::vector<int>{1, 2, 9}
                                  : std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9};
    fm = dshape::build_features(ds, ref, records, indices, false);
    const int dropped = dshape::drop_incomplete_rows(fm);
    if (dropped > 0) {
      std::printf("pipeline: dropped %d incomplete feature rows\n", dropped);
    }
    dshape::write_feature_matrix(fm, outdir / "features.csv");
  } catch (const std::exception& e) {
    stage_fail("features", e.what());
  }

  // ---- stage: forest restarts + reports
  try {
    const json t = cfg.value("train", json::object());
    dshape::ForestConfig fc;
    fc.n_trees = t.value("trees", 100);
    fc.subsample_fraction = t.value("subsample_fraction", 2.0 / 3.0);
    fc.subsample_with_replacement = t.value("with_replacement", false);
    fc.features_per_split = t.value("mtry", 0);
    fc.min_impurity_decrease = t.value("min_gain", 0.002);
    const int restarts = t.value("restarts", 5);

    std::vector<double> accuracies;
    int best = 0;
    dshape::TrainedForest best_forest;
    for (int l = 0; l < restarts; ++l) {
      fc.seed = dshape::mix_seed(dshape::mix_seed(master_seed, "rf"),
                                 static_cast<std::uint64_t>(l));
      auto forest = dshape::train_forest(fm, fc, workers);
      accuracies.push_back(forest.oob_accuracy);
      if (l == 0 || forest.oob_accuracy > accuracies[best]) {
        best = l;
        best_forest = std::move(forest);
      }
    }
    write_oob_reports(accuracies, outdir);
    dshape::save_forest(best_forest, outdir / "forest.txt");
    {
      std::ofstream out(outdir / "confusion.csv");
      out << "true_class";
      for (const auto& c : best_forest.classes) out << ',' << c;
      out << '\n';
      char buf[48];
      for (int r = 0; r < best_forest.confusion.rows(); ++r) {
        out << best_forest.classes[r];
        for (int c = 0; c < best_forest.confusion.cols(); ++c) {
          std::snprintf(buf, sizeof(buf), ",%.17g", best_forest.confusion(r, c));
          out << buf;
        }
        out << '\n';
      }
    }

    const json ij = cfg.value("importance", json::object());
    const auto rows = ranked_importance(
        best_forest, fm, ij.value("permutations", 100),
        ij.value("repeats", 100), dshape::mix_seed(master_seed, "importance"),
        workers);
    write_importance_table(rows, outdir / "importance.csv");
  } catch (const std::exception& e) {
    stage_fail("train", e.what());
  }

  std::printf("pipeline artifacts in %s\n", outdir.string().c_str());
  return 0;
}

}  // namespace
