#pragma once

#include <memory>
#include <random>
#include <vector>

#include "vtsm/geometry.hpp"
#include "vtsm/meshmap.hpp"

namespace fixtures {

using namespace vtsm;

inline Pose random_pose(Rng& rng, double t_scale = 1.0, std::string from = "W",
                        std::string to = "C") {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Vec3 axis = random_unit_vector(rng);
  const double angle = std::numbers::pi * u(rng);
  return Pose(axis_angle(axis, angle), t_scale * Vec3(u(rng), u(rng), u(rng)), std::move(from),
              std::move(to));
}

struct QuadSpec {
  Vec3 a, b, c, d;  // counter-clockwise
  Material material = Material::Persistent;
};

/// Mesh of independent quads (two triangles each) sharing one texture.
inline TexturedMesh quads(const std::vector<QuadSpec>& qs, GrayImage texture) {
  TexturedMesh m;
  for (const auto& q : qs) {
    const int base = int(m.vertices.size());
    for (const Vec3& v : {q.a, q.b, q.c, q.d}) m.vertices.push_back(v);
    const int tb = int(m.uvs.size());
    for (const Vec2& uv : {Vec2(0, 0), Vec2(1, 0), Vec2(1, 1), Vec2(0, 1)}) m.uvs.push_back(uv);
    m.triangles.push_back({base, base + 1, base + 2});
    m.triangles.push_back({base, base + 2, base + 3});
    m.triangle_uvs.push_back({tb, tb + 1, tb + 2});
    m.triangle_uvs.push_back({tb, tb + 2, tb + 3});
    m.materials.push_back(q.material);
    m.materials.push_back(q.material);
  }
  m.texture = std::make_shared<const GrayImage>(std::move(texture));
  m.finalize();
  return m;
}

inline GrayImage constant_texture(double value, int size = 8) { return GrayImage(size, size, value); }

inline GrayImage noise_texture(int size, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> u(0, 255);
  GrayImage t(size, size, 0.0);
  for (auto& x : t.data) x = u(rng) / 255.0;
  return t;
}

/// Horizontal square of half-size `h` at height z.
inline QuadSpec ground(double h, double z = 0.0, Material m = Material::Persistent) {
  return {Vec3(-h, -h, z), Vec3(h, -h, z), Vec3(h, h, z), Vec3(-h, h, z), m};
}

/// Camera at `eye` looking straight down (+x image right = +x world).
inline Pose nadir(const Vec3& eye) {
  Mat3 r;
  r << 1, 0, 0, 0, -1, 0, 0, 0, -1;
  return Pose(r, eye);
}

}  // namespace fixtures
