#pragma once

#include <cstdint>
#include <filesystem>

#include "dshape/surface.hpp"

namespace dshape {

// Labeled benchmark of valve-like ring surfaces: saddle-shaped bands whose
// last ring traces a coaptation-like space curve. Positive-class surfaces
// carry a localized opening near that curve ("gapped"); the rest close it
// cleanly ("closed"). Every surface gets smooth random shape noise and a
// random G3 pose so that invariance is exercised end to end.
struct SynthParams {
  int n_gapped = 30;
  int n_closed = 30;
  int ring_size = 80;
  int ring_count = 10;  // 800 points at the defaults
  double gap_depth_lo = 0.35;
  double gap_depth_hi = 0.60;
  double gap_width_lo = 0.45;  // angular extent (radians)
  double gap_width_hi = 0.75;
  double noise_amplitude = 0.05;
  double noise_scale = 2.5;  // field correlation scale; larger = smoother
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr const char* kGappedLabel = "gapped";
inline constexpr const char* kClosedLabel = "closed";

SurfaceDataset generate(const SynthParams& params);

// Parameters echoed into a sidecar file next to the generated dataset.
void write_synth_provenance(const SynthParams& params,
                            const std::filesystem::path& path);

}  // namespace dshape
