#include "dshape/dissim.hpp"
#include "dshape/standardize.hpp"
#include "dshape/synth.hpp"
#include <chrono>
#include <cstdio>
using namespace dshape;
int main() {
  SynthParams sp; sp.n_gapped = 4; sp.n_closed = 4; sp.seed = 5;
  auto ds = generate(sp);
  DissimParams dp;
  dp.solver.control_stride = 4;
  dp.solver.kernel.lambda = 1000;
  dp.solver.term_mesh_factor = 0.75;
  auto run = [&](const char* a, const char* b) {
    auto sa = standardize(ds.find(a)->surface).surface;
    DissimParams local = dp;
    local.solver.kernel.sigma = 0.15 * bbox_diagonal(sa.points);
    local.solver.kernel.tau = 0.10 * bbox_diagonal(sa.points);
    auto t0 = std::chrono::steady_clock::now();
    auto fwd = dissim_pair(ds.find(a)->surface, ds.find(b)->surface, local);
    auto bwd = dissim_pair(ds.find(b)->surface, ds.find(a)->surface, local);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double sym = 0.5 * (fwd.kin + bwd.kin);
    std::printf("%s<->%s conv=%d%d D1=%.4f/%.4f D9=%.4f/%.4f asym=%.2f (%.1fs)\n",
                a, b, fwd.converged, bwd.converged, fwd.d(0), bwd.d(0),
                fwd.d(8), bwd.d(8), sym > 1e-12 ? std::abs(fwd.kin - bwd.kin) / sym : 0.0, secs);
  };
  run("closed_000", "closed_001"); run("closed_001", "closed_002");
  run("closed_002", "closed_003"); run("closed_000", "closed_003");
  run("gapped_000", "closed_000"); run("gapped_001", "closed_001");
  run("gapped_002", "closed_002"); run("gapped_003", "closed_003");
  run("gapped_000", "gapped_001"); run("gapped_002", "gapped_003");
  return 0;
}
