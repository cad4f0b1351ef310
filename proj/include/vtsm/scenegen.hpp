#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtsm/geometry.hpp"
#include "vtsm/image.hpp"
#include "vtsm/meshmap.hpp"
#include "vtsm/renderer.hpp"

namespace vtsm {

enum class TerrainKind { Flagstone, Cfa6, Cfa2 };

inline const char* to_string(TerrainKind k) {
  switch (k) {
    case TerrainKind::Flagstone: return "flagstone";
    case TerrainKind::Cfa6: return "cfa6";
    case TerrainKind::Cfa2: return "cfa2";
  }
  return "?";
}

inline TerrainKind terrain_kind_from_string(const std::string& s) {
  if (s == "flagstone") return TerrainKind::Flagstone;
  if (s == "cfa6") return TerrainKind::Cfa6;
  if (s == "cfa2") return TerrainKind::Cfa2;
  throw std::invalid_argument("unknown terrain kind '" + s + "'");
}

/// Grayscale albedo statistics of one surface class.
struct AlbedoStats {
  double mean = 0.5;
  double contrast = 0.15;
};

struct TerrainSpec {
  TerrainKind kind = TerrainKind::Cfa2;
  double extent = 8.0;            // square side, meters
  double grid = 0.04;             // heightfield spacing, meters
  double rock_density = -1.0;     // cumulative fractional area; < 0 picks the kind default
  double fracture_density = 1.5;  // flagstone slabs per square meter
  double rock_radius_min = 0.12;
  double rock_radius_max = 0.35;
  double relief = 0.05;           // base terrain amplitude, meters
  int texture_size = 2048;
  double texture_scale = 0.6;     // largest albedo feature, meters
  int texture_octaves = 7;
  AlbedoStats sand{0.60, 0.16};
  AlbedoStats rock{0.42, 0.26};
  AlbedoStats slab{0.52, 0.20};
  std::uint64_t seed = 1;

  double density() const {
    if (rock_density >= 0.0) return rock_density;
    switch (kind) {
      case TerrainKind::Cfa6: return 0.06;
      case TerrainKind::Cfa2: return 0.02;
      case TerrainKind::Flagstone: return 0.0;
    }
    return 0.0;
  }

  void validate() const {
    if (!(extent > 0.0) || !(grid > 0.0) || grid > extent) {
      throw std::invalid_argument("TerrainSpec: extent and grid must be positive");
    }
    if (density() < 0.0 || density() > 0.2) {
      throw std::invalid_argument("TerrainSpec: rock density must lie in [0, 0.2]");
    }
    if (!(fracture_density > 0.0)) throw std::invalid_argument("TerrainSpec: fracture density must be > 0");
    if (texture_size < 16) throw std::invalid_argument("TerrainSpec: texture too small");
    if (!(rock_radius_min > 0.0) || rock_radius_max < rock_radius_min) {
      throw std::invalid_argument("TerrainSpec: invalid rock radius range");
    }
  }
};

inline nlohmann::json to_json(const AlbedoStats& a) {
  return {{"mean", a.mean}, {"contrast", a.contrast}};
}

inline nlohmann::json to_json(const TerrainSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"extent", s.extent},
          {"grid", s.grid},
          {"rock_density", s.density()},
          {"fracture_density", s.fracture_density},
          {"rock_radius_min", s.rock_radius_min},
          {"rock_radius_max", s.rock_radius_max},
          {"relief", s.relief},
          {"texture_size", s.texture_size},
          {"texture_scale", s.texture_scale},
          {"texture_octaves", s.texture_octaves},
          {"sand", to_json(s.sand)},
          {"rock", to_json(s.rock)},
          {"slab", to_json(s.slab)},
          {"seed", s.seed}};
}

inline TerrainSpec terrain_spec_from_json(const nlohmann::json& j) {
  TerrainSpec s;
  s.kind = terrain_kind_from_string(j.value("kind", std::string("cfa2")));
  s.extent = j.value("extent", s.extent);
  s.grid = j.value("grid", s.grid);
  s.rock_density = j.value("rock_density", s.rock_density);
  s.fracture_density = j.value("fracture_density", s.fracture_density);
  s.rock_radius_min = j.value("rock_radius_min", s.rock_radius_min);
  s.rock_radius_max = j.value("rock_radius_max", s.rock_radius_max);
  s.relief = j.value("relief", s.relief);
  s.texture_size = j.value("texture_size", s.texture_size);
  s.texture_scale = j.value("texture_scale", s.texture_scale);
  s.texture_octaves = j.value("texture_octaves", s.texture_octaves);
  auto stats = [&](const char* key, AlbedoStats d) {
    if (!j.contains(key)) return d;
    return AlbedoStats{j.at(key).value("mean", d.mean), j.at(key).value("contrast", d.contrast)};
  };
  s.sand = stats("sand", s.sand);
  s.rock = stats("rock", s.rock);
  s.slab = stats("slab", s.slab);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

/// Sun presets for the morning / noon / afternoon captures.
inline ShadingSpec sun_preset(const std::string& name, double ambient = 0.3) {
  if (name == "am") return ShadingSpec::from_angles(30.0, 90.0, ambient);
  if (name == "nn") return ShadingSpec::from_angles(75.0, 180.0, ambient);
  if (name == "pm") return ShadingSpec::from_angles(30.0, 270.0, ambient);
  throw std::invalid_argument("unknown sun preset '" + name + "'");
}

// Noise ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

inline double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
  const std::uint64_t h =
      mix64(seed ^ mix64(std::uint64_t(ix) * 0x9E3779B97F4A7C15ULL + std::uint64_t(iy)));
  return double(h >> 11) * (2.0 / 9007199254740992.0) - 1.0;
}

inline double quintic(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

/// Smooth lattice value noise in [-1, 1].
inline double value_noise(double x, double y, std::uint64_t seed) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = std::int64_t(fx), iy = std::int64_t(fy);
  const double tx = quintic(x - fx), ty = quintic(y - fy);
  const double a = lattice(ix, iy, seed), b = lattice(ix + 1, iy, seed);
  const double c = lattice(ix, iy + 1, seed), d = lattice(ix + 1, iy + 1, seed);
  return (a + (b - a) * tx) + ((c + (d - c) * tx) - (a + (b - a) * tx)) * ty;
}

/// Fractal sum normalized to roughly unit amplitude.
inline double fbm(double x, double y, double scale, int octaves, std::uint64_t seed) {
  double sum = 0.0, amp = 1.0, norm = 0.0, f = 1.0 / scale;
  for (int o = 0; o < octaves; ++o) {
    sum += amp * value_noise(x * f, y * f, seed + std::uint64_t(o) * 7919ULL);
    norm += amp;
    amp *= 0.6;
    f *= 2.0;
  }
  return sum / norm;
}

}  // namespace detail

// Terrain model -----------------------------------------------------------------

/// Analytic description of a depot: height field plus surface classes. The mesh
/// and the albedo texture are both sampled from it.
class TerrainModel {
 public:
  struct Rock {
    Vec2 center;
    double radius;
    double height;
    std::uint64_t seed;
  };
  struct Slab {
    Vec2 site;
    double step;
    Vec2 tilt;
  };
  enum class Region { Ground, Rock, Slab, Crack };
  struct Sample {
    double height;
    Region region;
    int index;  // rock or slab index, -1 for ground
  };

  explicit TerrainModel(const TerrainSpec& spec) : spec_(spec) {
    spec_.validate();
    Rng rng(spec_.seed);
    if (spec_.kind == TerrainKind::Flagstone) {
      place_slabs(rng);
    } else {
      place_rocks(rng);
    }
  }

  const TerrainSpec& spec() const { return spec_; }
  const std::vector<Rock>& rocks() const { return rocks_; }
  const std::vector<Slab>& slabs() const { return slabs_; }

  double ground(double x, double y) const {
    return spec_.relief * detail::fbm(x, y, 1.6, 3, spec_.seed * 31 + 5) +
           0.004 * detail::fbm(x, y, 0.12, 2, spec_.seed * 31 + 6);
  }

  /// Normalized radial coordinate of (x, y) inside a rock's irregular outline.
  double rock_rho(const Rock& r, double x, double y) const {
    const Vec2 d(x - r.center.x(), y - r.center.y());
    const double theta = std::atan2(d.y(), d.x());
    const double wobble = 1.0 + 0.12 * detail::value_noise(std::cos(theta) * 1.5 + 10.0,
                                                           std::sin(theta) * 1.5 + 10.0, r.seed);
    return d.norm() / (r.radius * wobble);
  }

  Sample sample(double x, double y) const {
    if (spec_.kind == TerrainKind::Flagstone) return sample_flagstone(x, y);
    const double g = ground(x, y);
    for (size_t i = 0; i < rocks_.size(); ++i) {
      const Rock& r = rocks_[i];
      if ((Vec2(x, y) - r.center).norm() > 1.3 * r.radius) continue;
      const double rho = rock_rho(r, x, y);
      if (rho >= 1.0) continue;
      const double lump = 1.0 + 0.15 * detail::fbm(x, y, 0.15, 2, r.seed + 3);
      const double h = r.height * std::pow(1.0 - rho * rho, 0.45) * lump;
      return {g + h, Region::Rock, int(i)};
    }
    return {g, Region::Ground, -1};
  }

  Material material_at(double x, double y) const {
    const Region r = sample(x, y).region;
    if (spec_.kind == TerrainKind::Cfa2) return Material::Persistent;
    return (r == Region::Rock || r == Region::Slab) ? Material::Persistent : Material::Mutable;
  }

  /// Albedo in [0, 1] with per-class statistics.
  double albedo(double x, double y) const {
    const Sample s = sample(x, y);
    const double base = detail::fbm(x, y, spec_.texture_scale, spec_.texture_octaves, spec_.seed * 131);
    const double fine = detail::fbm(x, y, 0.02, 2, spec_.seed * 131 + 77);
    AlbedoStats st = spec_.sand;
    std::uint64_t salt = 0;
    double offset = 0.0;
    switch (s.region) {
      case Region::Ground: break;
      case Region::Crack:
        st = {spec_.sand.mean - 0.12, spec_.sand.contrast};
        break;
      case Region::Rock:
        st = spec_.rock;
        salt = rocks_[size_t(s.index)].seed;
        offset = 0.08 * detail::lattice(s.index, 1, spec_.seed);
        break;
      case Region::Slab:
        st = spec_.slab;
        salt = std::uint64_t(s.index) * 977 + 13;
        offset = 0.10 * detail::lattice(s.index, 2, spec_.seed);
        break;
    }
    double v = st.mean + offset + st.contrast * (base + 0.5 * fine);
    if (salt != 0) {
      v += 0.6 * st.contrast * detail::fbm(x, y, 0.08, 3, salt);
    }
    return std::clamp(v, 0.02, 0.98);
  }

 private:
  void place_rocks(Rng& rng) {
    const double target = spec_.density() * spec_.extent * spec_.extent;
    if (target <= 0.0) return;
    std::uniform_real_distribution<double> pos(-0.5 * spec_.extent + spec_.rock_radius_max,
                                               0.5 * spec_.extent - spec_.rock_radius_max);
    std::uniform_real_distribution<double> rad(spec_.rock_radius_min, spec_.rock_radius_max);
    std::uniform_real_distribution<double> aspect(0.45, 0.8);
    double area = 0.0;
    int failures = 0;
    while (area < target) {
      if (failures > 20000) {
        throw std::runtime_error("generate_depot: rock density unreachable within placement budget");
      }
      Rock r{{pos(rng), pos(rng)}, rad(rng), 0.0, rng()};
      r.height = r.radius * aspect(rng);
      bool clear = true;
      for (const Rock& o : rocks_) {
        if ((o.center - r.center).norm() < 1.15 * (o.radius + r.radius) + 0.05) {
          clear = false;
          break;
        }
      }
      if (!clear) {
        ++failures;
        continue;
      }
      double a = outline_area(r);
      if (area + a > target) {
        // Shrink the last rock so the cumulative area lands on the target.
        r.radius *= std::sqrt((target - area) / a);
        r.height = std::max(r.height * 0.5, r.radius * 0.45);
        a = outline_area(r);
      }
      rocks_.push_back(r);
      area += a;
      if (target - area < 1e-9) break;
    }
  }

  double outline_area(const Rock& r) const {
    // Polar integral of the wobbly outline.
    constexpr int kSteps = 720;
    double sum = 0.0;
    for (int k = 0; k < kSteps; ++k) {
      const double theta = (k + 0.5) * 2.0 * std::numbers::pi / kSteps;
      const double wobble = 1.0 + 0.12 * detail::value_noise(std::cos(theta) * 1.5 + 10.0,
                                                             std::sin(theta) * 1.5 + 10.0, r.seed);
      const double rr = r.radius * wobble;
      sum += 0.5 * rr * rr;
    }
    return sum * 2.0 * std::numbers::pi / kSteps;
  }

  void place_slabs(Rng& rng) {
    const int n = std::max(2, int(std::lround(spec_.fracture_density * spec_.extent * spec_.extent)));
    const double margin = 0.5;
    std::uniform_real_distribution<double> pos(-0.5 * spec_.extent - margin,
                                               0.5 * spec_.extent + margin);
    std::uniform_real_distribution<double> step(0.0, 0.06);
    std::uniform_real_distribution<double> tilt(-0.03, 0.03);
    for (int i = 0; i < n; ++i) slabs_.push_back({{pos(rng), pos(rng)}, step(rng), {tilt(rng), tilt(rng)}});
  }

  Sample sample_flagstone(double x, double y) const {
    const Vec2 p(x, y);
    int i1 = -1, i2 = -1;
    double d1 = kNoDepth, d2 = kNoDepth;
    for (size_t i = 0; i < slabs_.size(); ++i) {
      const double d = (slabs_[i].site - p).squaredNorm();
      if (d < d1) {
        d2 = d1;
        i2 = i1;
        d1 = d;
        i1 = int(i);
      } else if (d < d2) {
        d2 = d;
        i2 = int(i);
      }
    }
    const double g = ground(x, y);
    auto slab_height = [&](int i) {
      const Slab& s = slabs_[size_t(i)];
      return g + 0.05 + s.step + s.tilt.dot(p - s.site);
    };
    // Distance to the bisector between the two nearest sites.
    const Vec2 s1 = slabs_[size_t(i1)].site, s2 = slabs_[size_t(i2)].site;
    const double boundary = (d2 - d1) / (2.0 * (s2 - s1).norm());
    const double crack = 0.03 * (1.0 + 0.5 * detail::value_noise(x * 3.0, y * 3.0, spec_.seed + 9));
    if (boundary < crack) {
      return {std::min(slab_height(i1), slab_height(i2)) - 0.03, Region::Crack, -1};
    }
    return {slab_height(i1), Region::Slab, i1};
  }

  TerrainSpec spec_;
  std::vector<Rock> rocks_;
  std::vector<Slab> slabs_;
};

// Mesh --------------------------------------------------------------------------

/// Regular-grid triangulation of the model, two triangles per cell; cell
/// (i, j) owns triangles 2k and 2k + 1 with k = i * n + j.
inline TexturedMesh build_terrain_mesh(const TerrainModel& model) {
  const TerrainSpec& spec = model.spec();
  const int n = std::max(1, int(std::lround(spec.extent / spec.grid)));
  const double h = spec.extent / n;
  const double half = 0.5 * spec.extent;
  TexturedMesh mesh;
  mesh.vertices.reserve(size_t(n + 1) * size_t(n + 1));
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= n; ++j) {
      const double x = -half + j * h;
      const double y = -half + i * h;
      mesh.vertices.emplace_back(x, y, model.sample(x, y).height);
      mesh.uvs.emplace_back(double(j) / n, double(i) / n);
    }
  }
  auto vid = [n](int i, int j) { return i * (n + 1) + j; };
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const int a = vid(i, j), b = vid(i, j + 1), c = vid(i + 1, j), d = vid(i + 1, j + 1);
      for (const std::array<int, 3>& t : {std::array<int, 3>{a, b, d}, std::array<int, 3>{a, d, c}}) {
        mesh.triangles.push_back(t);
        mesh.triangle_uvs.push_back(t);
        const Vec3 cen = (mesh.vertices[size_t(t[0])] + mesh.vertices[size_t(t[1])] +
                          mesh.vertices[size_t(t[2])]) / 3.0;
        mesh.materials.push_back(model.material_at(cen.x(), cen.y()));
      }
    }
  }
  mesh.finalize();
  return mesh;
}

/// Texel (row, col) center in world xy for a planar-mapped square texture.
inline Vec2 texel_world(int row, int col, int size, double extent) {
  return {(col + 0.5) / size * extent - 0.5 * extent, 0.5 * extent - (row + 0.5) / size * extent};
}

inline GrayImage albedo_texture(const TerrainModel& model, int size) {
  GrayImage tex(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const Vec2 p = texel_world(r, c, size, model.spec().extent);
      tex(r, c) = quantize8(model.albedo(p.x(), p.y()));
    }
  }
  return tex;
}

struct Depot {
  TexturedMesh mesh;  // albedo texture
  SamplingMask mask;
};

/// Height-field depot with rocks or slabs, material tags and an albedo texture.
/// The sampling mask is the persistent set.
inline Depot generate_depot(const TerrainSpec& spec) {
  const TerrainModel model(spec);
  Depot d;
  d.mesh = build_terrain_mesh(model);
  d.mesh.texture = std::make_shared<const GrayImage>(albedo_texture(model, spec.texture_size));
  d.mask = SamplingMask::by_material(d.mesh, Material::Persistent);
  return d;
}

/// Surface point, interpolated vertex normal and triangle of a regular-grid
/// terrain mesh above world (x, y).
struct SurfaceHit {
  Vec3 point;
  Vec3 normal;
  int triangle = -1;
};

inline std::optional<SurfaceHit> grid_surface(const TexturedMesh& mesh, double extent, double x,
                                              double y) {
  const int n = int(std::lround(std::sqrt(double(mesh.vertices.size())))) - 1;
  if (n < 1 || size_t(n + 1) * size_t(n + 1) != mesh.vertices.size()) return std::nullopt;
  const double h = extent / n;
  const double fx = (x + 0.5 * extent) / h, fy = (y + 0.5 * extent) / h;
  const int j = std::clamp(int(std::floor(fx)), 0, n - 1);
  const int i = std::clamp(int(std::floor(fy)), 0, n - 1);
  const double s = std::clamp(fx - j, 0.0, 1.0), t = std::clamp(fy - i, 0.0, 1.0);
  const int k = 2 * (i * n + j);
  // Triangle (a, b, d) covers s >= t, (a, d, c) covers s < t.
  const int tri = s >= t ? k : k + 1;
  const auto& f = mesh.triangles[size_t(tri)];
  std::array<double, 3> w;
  if (s >= t) {
    w = {1.0 - s, s - t, t};
  } else {
    w = {1.0 - t, s, t - s};
  }
  SurfaceHit hit;
  hit.triangle = tri;
  hit.point = Vec3::Zero();
  hit.normal = Vec3::Zero();
  for (int q = 0; q < 3; ++q) {
    hit.point += w[size_t(q)] * mesh.vertices[size_t(f[size_t(q)])];
    hit.normal += w[size_t(q)] * mesh.normals[size_t(f[size_t(q)])];
  }
  hit.normal.normalize();
  return hit;
}

/// Map texture: albedo multiplied by the mapping-time shading, evaluated per
/// texel on the mesh surface with cast shadows.
inline GrayImage bake_texture(const TexturedMesh& albedo_mesh, double extent,
                              const ShadingSpec& shading) {
  if (!albedo_mesh.texture) throw std::invalid_argument("bake_texture: mesh has no albedo");
  const GrayImage& albedo = *albedo_mesh.texture;
  GrayImage out(albedo.rows, albedo.cols);
  for (int r = 0; r < albedo.rows; ++r) {
    for (int c = 0; c < albedo.cols; ++c) {
      const Vec2 p = texel_world(r, c, albedo.cols, extent);
      const auto hit = grid_surface(albedo_mesh, extent, p.x(), p.y());
      if (!hit) throw std::invalid_argument("bake_texture: mesh is not a terrain grid");
      out(r, c) = quantize8(
          albedo(r, c) * detail::shade_factor(albedo_mesh, hit->triangle, hit->normal, hit->point, shading));
    }
  }
  return out;
}

inline TexturedMesh with_texture(const TexturedMesh& mesh, GrayImage texture) {
  TexturedMesh out = mesh;
  out.texture = std::make_shared<const GrayImage>(std::move(texture));
  return out;
}

struct StereoFrames {
  RenderedFrame left;
  RenderedFrame right;
};

/// Shaded left/right renders of the albedo mesh, quantized to 8 bits.
inline StereoFrames render_query_pair(const TexturedMesh& albedo_mesh, const StereoRig& rig,
                                      const Pose& pose, const ShadingSpec& shading) {
  StereoFrames f{render_frame(albedo_mesh, pose, rig, Side::Left, &shading),
                 render_frame(albedo_mesh, pose, rig, Side::Right, &shading)};
  f.left.intensity = quantized(std::move(f.left.intensity));
  f.right.intensity = quantized(std::move(f.right.intensity));
  return f;
}

/// Displaces vertices touched only by mutable triangles vertically by a smooth
/// noise field scaled to RMS `magnitude` over those vertices.
inline TexturedMesh perturb_mutable(const TexturedMesh& mesh, double magnitude, Rng& rng) {
  if (magnitude < 0.0) throw std::invalid_argument("perturb_mutable: magnitude must be >= 0");
  TexturedMesh out = mesh;
  if (magnitude == 0.0) return out;
  std::vector<std::uint8_t> pinned(mesh.vertices.size(), 0), touched(mesh.vertices.size(), 0);
  for (size_t t = 0; t < mesh.triangles.size(); ++t) {
    for (int v : mesh.triangles[t]) {
      touched[size_t(v)] = 1;
      if (mesh.materials[t] == Material::Persistent) pinned[size_t(v)] = 1;
    }
  }
  const std::uint64_t seed = rng();
  const double ox = std::uniform_real_distribution<double>(0.0, 100.0)(rng);
  const double oy = std::uniform_real_distribution<double>(0.0, 100.0)(rng);
  std::vector<size_t> movable;
  std::vector<double> dz;
  for (size_t v = 0; v < mesh.vertices.size(); ++v) {
    if (!touched[v] || pinned[v]) continue;
    movable.push_back(v);
    dz.push_back(detail::fbm(mesh.vertices[v].x() + ox, mesh.vertices[v].y() + oy, 0.5, 3, seed));
  }
  if (movable.empty()) return out;
  double ss = 0.0;
  for (double d : dz) ss += d * d;
  const double rms = std::sqrt(ss / double(dz.size()));
  if (rms == 0.0) return out;
  for (size_t k = 0; k < movable.size(); ++k) {
    out.vertices[movable[k]].z() += dz[k] * magnitude / rms;
  }
  out.finalize();
  return out;
}

// Scenes on disk ---------------------------------------------------------------

/// Desk-scale query rig.
inline StereoRig default_rig() { return StereoRig{}; }

/// Generated depot with both textures, the sampling mask and the mapping light.
struct Scene {
  TerrainSpec spec;
  ShadingSpec mapping_shading;
  StereoRig rig;
  TexturedMesh map_mesh;     // baked mapping-time texture
  TexturedMesh albedo_mesh;  // same geometry, unlit albedo
  SamplingMask mask;
};

inline Scene build_scene(const TerrainSpec& spec, const ShadingSpec& mapping_shading,
                         const StereoRig& rig = default_rig()) {
  Scene s;
  s.spec = spec;
  s.mapping_shading = mapping_shading;
  s.rig = rig;
  Depot d = generate_depot(spec);
  s.albedo_mesh = d.mesh;
  s.map_mesh = with_texture(d.mesh, bake_texture(d.mesh, spec.extent, mapping_shading));
  s.mask = std::move(d.mask);
  return s;
}

inline void save_scene(const std::filesystem::path& dir, const Scene& s) {
  std::filesystem::create_directories(dir);
  save_mesh(dir / "mesh.obj", s.map_mesh, "texture.png", {{"albedo", "albedo.png"}});
  write_png_rgb(dir / "albedo.png", *s.albedo_mesh.texture);
  save_mask(dir / "mask.json", s.mask);
  std::ofstream out(dir / "scene.json");
  out << nlohmann::json{{"spec", to_json(s.spec)},
                        {"mapping_shading", to_json(s.mapping_shading)},
                        {"rig", to_json(s.rig)}}
             .dump(2)
      << '\n';
  if (!out) throw IoError("save_scene: cannot write " + (dir / "scene.json").string());
}

inline Scene load_scene(const std::filesystem::path& dir) {
  std::ifstream in(dir / "scene.json");
  if (!in) throw IoError("load_scene: missing " + (dir / "scene.json").string());
  const auto j = nlohmann::json::parse(in);
  Scene s;
  s.spec = terrain_spec_from_json(j.at("spec"));
  s.mapping_shading = shading_from_json(j.at("mapping_shading"));
  s.rig = rig_from_json(j.at("rig"));
  s.map_mesh = load_mesh(dir / "mesh.obj");
  std::ifstream side(dir / "mesh.json");
  const auto sj = nlohmann::json::parse(side);
  s.albedo_mesh = with_texture(s.map_mesh, read_png_gray(dir / sj.value("albedo", "albedo.png")));
  s.mask = load_mask(dir / "mask.json", s.map_mesh);
  return s;
}

/// Left camera on a ring around the depot center, looking at the center.
inline Pose ring_viewpoint(double azimuth_deg, double radius = 2.5, double height = 1.8,
                           const Vec3& target = Vec3::Zero()) {
  const double a = azimuth_deg * kDegToRad;
  const Vec3 eye(target.x() + radius * std::cos(a), target.y() + radius * std::sin(a),
                 target.z() + height);
  return look_at(eye, target);
}

}  // namespace vtsm
