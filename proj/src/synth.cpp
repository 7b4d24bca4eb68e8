#include "dshape/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "dshape/gaussian_field.hpp"
#include "dshape/rng.hpp"

namespace dshape {

void SynthParams::validate() const {
  if (n_gapped < 0 || n_closed < 0) {
    throw std::invalid_argument("SynthParams: negative class size");
  }
  if (ring_size < 3 || ring_count < 2) {
    throw std::invalid_argument("SynthParams: invalid ring structure");
  }
  if (gap_depth_lo > gap_depth_hi || gap_width_lo > gap_width_hi ||
      gap_depth_lo < 0 || gap_width_lo <= 0) {
    throw std::invalid_argument("SynthParams: bad gap distribution");
  }
  if (noise_amplitude < 0) {
    throw std::invalid_argument("SynthParams: negative noise amplitude");
  }
}

namespace {

constexpr double kPi = 3.14159265358979323846;

Mat3 random_rotation(Rng& rng) {
  // uniform rotation from a normalized quaternion
  Eigen::Vector4d quat(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  quat.normalize();
  return Eigen::Quaterniond(quat(0), quat(1), quat(2), quat(3))
      .toRotationMatrix();
}

RingSurface build_surface(const SynthParams& params, bool gapped,
                          const std::string& id, std::uint64_t surface_seed,
                          const EigenBasis& basis) {
  Rng rng(surface_seed);
  const int gr = params.ring_size;
  const int gk = params.ring_count;

  const double gap_u0 = rng.uniform(0.0, 2.0 * kPi);
  const double gap_depth = rng.uniform(params.gap_depth_lo, params.gap_depth_hi);
  const double gap_width = rng.uniform(params.gap_width_lo, params.gap_width_hi);

  RingSurface s;
  s.id = id;
  s.ring_size = gr;
  s.ring_count = gk;
  s.points.resize(3, gr * gk);

  // base band: rings recede outward/upward from the coaptation-like curve
  for (int k = 0; k < gk; ++k) {
    const double rec = static_cast<double>(gk - 1 - k) / (gk - 1);
    const double radial = 1.0 + 0.8 * rec;
    for (int i = 0; i < gr; ++i) {
      const double u = 2.0 * kPi * i / gr;
      Vec3 p(radial * std::cos(u), 0.8 * radial * std::sin(u),
             0.35 * rec * rec + 0.15 * (1.0 - 0.6 * rec) * std::sin(2.0 * u));
      if (gapped) {
        double du = std::abs(u - gap_u0);
        du = std::min(du, 2.0 * kPi - du);
        const double along = std::exp(-(du * du) / (gap_width * gap_width));
        const double across = std::exp(-(rec * rec) / (0.25 * 0.25));
        p(2) += gap_depth * along * across;
      }
      s.points.col(k * gr + i) = p;
    }
  }

  // smooth per-surface shape noise
  if (params.noise_amplitude > 0) {
    const double field_scale = params.noise_scale;
    const int trunc = truncation_for_tolerance(5e-3, 2.2 / field_scale);
    FieldSpec noise(basis, trunc, Vec3::Constant(field_scale),
                    mix_seed(surface_seed, "shape_noise"));
    for (int i = 0; i < s.point_count(); ++i) {
      s.points.col(i) += params.noise_amplitude * noise.sample_vector(
                             s.points.col(i) * 0.9);
    }
  }

  // pose jitter in G3: class labels depend only on the intrinsic gap
  const Mat3 rot = random_rotation(rng);
  const Vec3 shift(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
                   rng.uniform(-2.0, 2.0));
  const double scale = std::exp(rng.uniform(std::log(0.6), std::log(1.7)));
  s.points = (scale * (rot * s.points)).colwise() + shift;

  s.triangles = triangulate_rings(gr, gk);
  return s;
}

}  // namespace

SurfaceDataset generate(const SynthParams& params) {
  params.validate();
  const EigenBasis basis(40);
  SurfaceDataset ds;

  auto emit = [&](bool gapped, int count, const char* label,
                  const char* prefix) {
    for (int i = 0; i < count; ++i) {
      char id[64];
      std::snprintf(id, sizeof(id), "%s_%03d", prefix, i);
      const std::uint64_t base =
          mix_seed(mix_seed(params.seed, "surface"), std::string(id));
      RingSurface surf;
      bool ok = false;
      for (int attempt = 0; attempt < 5 && !ok; ++attempt) {
        surf = build_surface(params, gapped, id,
                             mix_seed(base, static_cast<std::uint64_t>(attempt)),
                             basis);
        try {
          validate_surface(surf);
          ok = true;
        } catch (const std::exception&) {
          // degenerate geometry after noise: regenerate with a fresh seed
        }
      }
      if (!ok) {
        throw std::runtime_error(std::string("generate: persistent degenerate geometry for ") + id);
      }
      ds.add({std::move(surf), label, Provenance::original});
    }
  };

  emit(true, params.n_gapped, kGappedLabel, "gapped");
  emit(false, params.n_closed, kClosedLabel, "closed");
  return ds;
}

void write_synth_provenance(const SynthParams& params,
                            const std::filesystem::path& path) {
  nlohmann::json j;
  j["n_gapped"] = params.n_gapped;
  j["n_closed"] = params.n_closed;
  j["ring_size"] = params.ring_size;
  j["ring_count"] = params.ring_count;
  j["gap_depth"] = {params.gap_depth_lo, params.gap_depth_hi};
  j["gap_width"] = {params.gap_width_lo, params.gap_width_hi};
  j["noise_amplitude"] = params.noise_amplitude;
  j["seed"] = params.seed;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace dshape
