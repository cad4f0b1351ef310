#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include <json.hpp>

#include "vtsm/geometry.hpp"
#include "vtsm/image.hpp"
#include "vtsm/meshmap.hpp"

namespace vtsm {

/// Directional sun plus ambient term. `sun_direction` points from the surface
/// toward the sun in the world frame (z up).
struct ShadingSpec {
  Vec3 sun_direction = Vec3::UnitZ();
  double ambient = 0.3;
  bool cast_shadows = true;

  void validate() const {
    if (!(sun_direction.z() > 0.0)) {
      throw std::invalid_argument("ShadingSpec: sun must be above the horizon");
    }
    if (std::abs(sun_direction.norm() - 1.0) > 1e-9) {
      throw std::invalid_argument("ShadingSpec: sun_direction must be unit length");
    }
    if (ambient < 0.0 || ambient > 1.0) {
      throw std::invalid_argument("ShadingSpec: ambient must lie in [0,1]");
    }
  }

  /// Sun from elevation/azimuth in degrees; azimuth counter-clockwise from +x.
  static ShadingSpec from_angles(double elevation_deg, double azimuth_deg, double ambient = 0.3,
                                 bool shadows = true) {
    const double el = elevation_deg * kDegToRad;
    const double az = azimuth_deg * kDegToRad;
    ShadingSpec s;
    s.sun_direction = Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el))
                          .normalized();
    s.ambient = ambient;
    s.cast_shadows = shadows;
    return s;
  }
};

inline nlohmann::json to_json(const ShadingSpec& s) {
  return {{"sun_direction", {s.sun_direction.x(), s.sun_direction.y(), s.sun_direction.z()}},
          {"ambient", s.ambient},
          {"cast_shadows", s.cast_shadows}};
}

inline ShadingSpec shading_from_json(const nlohmann::json& j) {
  ShadingSpec s;
  if (j.contains("elevation_deg")) {
    s = ShadingSpec::from_angles(j.at("elevation_deg").get<double>(),
                                 j.at("azimuth_deg").get<double>(), j.value("ambient", 0.3),
                                 j.value("cast_shadows", true));
  } else {
    const auto d = j.at("sun_direction").get<std::vector<double>>();
    if (d.size() != 3) throw std::invalid_argument("shading JSON: sun_direction needs 3 numbers");
    s.sun_direction = Vec3(d[0], d[1], d[2]);
    s.ambient = j.value("ambient", 0.3);
    s.cast_shadows = j.value("cast_shadows", true);
  }
  s.validate();
  return s;
}

/// Rendered template: intensity, depth and validity over a square window of
/// the virtual full-frame image. `center` is the projection of the map point the
/// patch was rendered around.
struct Patch {
  int side_length = 0;
  int row0 = 0;
  int col0 = 0;
  PixelCoord center;
  GrayImage intensity;
  DepthImage depth;
  Image<std::uint8_t> valid;

  PixelRect rect() const { return {row0, col0, side_length, side_length}; }
  size_t valid_count() const {
    return size_t(std::count(valid.data.begin(), valid.data.end(), std::uint8_t{1}));
  }
};

struct RenderedFrame {
  GrayImage intensity;
  DepthImage depth;
  Pose pose;
  StereoRig rig;
  Side side = Side::Left;
};

namespace detail {

struct RasterBuffers {
  PixelRect rect;
  DepthImage depth;
  Image<int> triangle;
  Image<std::array<double, 3>> bary;  // perspective-correct, w.r.t. original corners
};

/// Side-camera pose T_{W->S}.
inline Pose side_pose(const Pose& left, const StereoRig& rig, Side side) {
  if (side == Side::Left) return left;
  return Pose(left.rotation(), left.apply(Vec3(rig.baseline, 0.0, 0.0)), left.from(), left.to());
}

/// World-frame planes bounding the sub-frustum of `rect` (padded by a pixel).
inline std::array<Plane, 6> window_planes(const Pose& cam, const StereoRig& rig,
                                          const PixelRect& rect) {
  const double f = rig.focal;
  const double umin = (rect.row0 - 1.5 - rig.cu) / f;
  const double umax = (rect.row0 + rect.rows + 0.5 - rig.cu) / f;
  const double vmin = (rect.col0 - 1.5 - rig.cv) / f;
  const double vmax = (rect.col0 + rect.cols + 0.5 - rig.cv) / f;
  const std::array<std::pair<Vec3, double>, 6> local = {{
      {Vec3(1.0, 0.0, -vmin), 0.0},
      {Vec3(-1.0, 0.0, vmax), 0.0},
      {Vec3(0.0, 1.0, -umin), 0.0},
      {Vec3(0.0, -1.0, umax), 0.0},
      {Vec3(0.0, 0.0, 1.0), -rig.near_clip},
      {Vec3(0.0, 0.0, -1.0), rig.far_clip},
  }};
  std::array<Plane, 6> out;
  for (size_t i = 0; i < local.size(); ++i) {
    const Vec3 n = cam.rotation() * local[i].first;
    out[i] = {n, local[i].second - n.dot(cam.origin())};
  }
  return out;
}

struct ClipVertex {
  Vec3 p;                      // side-camera frame
  std::array<double, 3> bary;  // w.r.t. original triangle corners
};

/// Rasterizes the mesh (optionally restricted to `only`) into `rect` with a
/// z-buffer. Triangles are processed in ascending index order and the depth
/// test is strict, so any window yields the same per-pixel winner as the full
/// frame.
inline RasterBuffers rasterize(const TexturedMesh& mesh, const SamplingMask* only,
                               const Pose& viewpoint, const StereoRig& rig, Side side,
                               const PixelRect& rect) {
  RasterBuffers buf;
  buf.rect = rect;
  buf.depth = DepthImage(rect.rows, rect.cols, kNoDepth);
  buf.triangle = Image<int>(rect.rows, rect.cols, -1);
  buf.bary = Image<std::array<double, 3>>(rect.rows, rect.cols, {0.0, 0.0, 0.0});
  if (mesh.triangles.empty() || !mesh.bvh) return buf;

  const Pose cam = side_pose(viewpoint, rig, side);
  const auto planes = window_planes(cam, rig, rect);
  const std::vector<int> candidates = mesh.bvh->query_planes(planes);
  const Mat3 rt = cam.rotation().transpose();
  const Vec3 origin = cam.origin();
  const double near = rig.near_clip;

  std::array<ClipVertex, 3> tri;
  std::array<ClipVertex, 4> poly;
  for (int t : candidates) {
    if (only && !only->contains(t)) continue;
    const auto& f = mesh.triangles[size_t(t)];
    for (int k = 0; k < 3; ++k) {
      tri[size_t(k)].p = rt * (mesh.vertices[size_t(f[size_t(k)])] - origin);
      tri[size_t(k)].bary = {k == 0 ? 1.0 : 0.0, k == 1 ? 1.0 : 0.0, k == 2 ? 1.0 : 0.0};
    }
    if (tri[0].p.z() > rig.far_clip && tri[1].p.z() > rig.far_clip && tri[2].p.z() > rig.far_clip) {
      continue;
    }
    // Clip against z = near (Sutherland-Hodgman on a single plane).
    int n = 0;
    for (int k = 0; k < 3; ++k) {
      const ClipVertex& a = tri[size_t(k)];
      const ClipVertex& b = tri[size_t((k + 1) % 3)];
      const bool ain = a.p.z() >= near;
      const bool bin = b.p.z() >= near;
      if (ain) poly[size_t(n++)] = a;
      if (ain != bin) {
        const double s = (near - a.p.z()) / (b.p.z() - a.p.z());
        ClipVertex c;
        c.p = a.p + s * (b.p - a.p);
        c.p.z() = near;
        for (int j = 0; j < 3; ++j) c.bary[size_t(j)] = a.bary[size_t(j)] + s * (b.bary[size_t(j)] - a.bary[size_t(j)]);
        poly[size_t(n++)] = c;
      }
    }
    if (n < 3) continue;

    std::array<double, 4> su{}, sv{}, iz{};
    for (int k = 0; k < n; ++k) {
      const Vec3& p = poly[size_t(k)].p;
      iz[size_t(k)] = 1.0 / p.z();
      su[size_t(k)] = rig.cu + rig.focal * p.y() * iz[size_t(k)];
      sv[size_t(k)] = rig.cv + rig.focal * p.x() * iz[size_t(k)];
    }
    for (int k = 1; k + 1 < n; ++k) {
      const std::array<int, 3> idx = {0, k, k + 1};
      const double x0 = sv[size_t(idx[0])], y0 = su[size_t(idx[0])];
      const double x1 = sv[size_t(idx[1])], y1 = su[size_t(idx[1])];
      const double x2 = sv[size_t(idx[2])], y2 = su[size_t(idx[2])];
      const double area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0);
      if (!(std::abs(area) > 1e-14)) continue;
      const int rmin = std::max(rect.row0, int(std::ceil(std::min({y0, y1, y2}))));
      const int rmax = std::min(rect.row0 + rect.rows - 1, int(std::floor(std::max({y0, y1, y2}))));
      const int cmin = std::max(rect.col0, int(std::ceil(std::min({x0, x1, x2}))));
      const int cmax = std::min(rect.col0 + rect.cols - 1, int(std::floor(std::max({x0, x1, x2}))));
      if (rmin > rmax || cmin > cmax) continue;
      const double inv_area = 1.0 / area;
      for (int r = rmin; r <= rmax; ++r) {
        const double py = r;
        for (int c = cmin; c <= cmax; ++c) {
          const double px = c;
          const double e0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
          const double e1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2);
          const double e2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
          const bool inside = area > 0 ? (e0 >= 0 && e1 >= 0 && e2 >= 0)
                                       : (e0 <= 0 && e1 <= 0 && e2 <= 0);
          if (!inside) continue;
          const double l0 = e0 * inv_area, l1 = e1 * inv_area, l2 = e2 * inv_area;
          const double w0 = l0 * iz[size_t(idx[0])];
          const double w1 = l1 * iz[size_t(idx[1])];
          const double w2 = l2 * iz[size_t(idx[2])];
          const double w = w0 + w1 + w2;
          if (!(w > 0.0)) continue;
          const double z = 1.0 / w;
          if (z > rig.far_clip || z < near * (1.0 - 1e-12)) continue;
          const int lr = r - rect.row0, lc = c - rect.col0;
          double& zb = buf.depth(lr, lc);
          if (!(z < zb)) continue;
          zb = z;
          buf.triangle(lr, lc) = t;
          auto& b = buf.bary(lr, lc);
          const auto& b0 = poly[size_t(idx[0])].bary;
          const auto& b1 = poly[size_t(idx[1])].bary;
          const auto& b2 = poly[size_t(idx[2])].bary;
          for (int j = 0; j < 3; ++j) {
            b[size_t(j)] = (w0 * b0[size_t(j)] + w1 * b1[size_t(j)] + w2 * b2[size_t(j)]) * z;
          }
        }
      }
    }
  }
  return buf;
}

inline double shade_factor(const TexturedMesh& mesh, int tri, const Vec3& normal,
                           const Vec3& world_point, const ShadingSpec& shading) {
  const double lambert = std::max(0.0, normal.dot(shading.sun_direction));
  double lit = 1.0;
  if (shading.cast_shadows && lambert > 0.0 && mesh.bvh) {
    // Start slightly off the surface; the own triangle is skipped.
    const Vec3 origin = world_point + 1e-4 * shading.sun_direction;
    if (mesh.bvh->any_hit(origin, shading.sun_direction, 1e-6, 1e3,
                          [tri](int t) { return t == tri; })) {
      lit = 0.0;
    }
  }
  return std::clamp(shading.ambient + (1.0 - shading.ambient) * lambert * lit, 0.0, 1.0);
}

/// Texture lookup and optional shading for every covered pixel.
inline GrayImage resolve_intensity(const TexturedMesh& mesh, const RasterBuffers& buf,
                                   const Pose& viewpoint, const StereoRig& rig, Side side,
                                   const ShadingSpec* shading) {
  GrayImage out(buf.rect.rows, buf.rect.cols, 0.0);
  const Pose cam = side_pose(viewpoint, rig, side);
  for (int r = 0; r < buf.rect.rows; ++r) {
    for (int c = 0; c < buf.rect.cols; ++c) {
      const int t = buf.triangle(r, c);
      if (t < 0) continue;
      const auto& b = buf.bary(r, c);
      const auto& tuv = mesh.triangle_uvs[size_t(t)];
      Vec2 uv = Vec2::Zero();
      for (int k = 0; k < 3; ++k) uv += b[size_t(k)] * mesh.uvs[size_t(tuv[size_t(k)])];
      double value = 1.0;
      if (mesh.texture) {
        const GrayImage& tex = *mesh.texture;
        value = sample_bilinear(tex, uv.x() * tex.cols - 0.5, (1.0 - uv.y()) * tex.rows - 0.5);
      }
      if (shading) {
        const auto& f = mesh.triangles[size_t(t)];
        Vec3 n = Vec3::Zero();
        for (int k = 0; k < 3; ++k) n += b[size_t(k)] * mesh.normals[size_t(f[size_t(k)])];
        n.normalize();
        const double z = buf.depth(r, c);
        const double u = buf.rect.row0 + r, v = buf.rect.col0 + c;
        const Vec3 pc((v - rig.cv) / rig.focal * z, (u - rig.cu) / rig.focal * z, z);
        value *= shade_factor(mesh, t, n, cam.apply(pc), *shading);
      }
      out(r, c) = value;
    }
  }
  return out;
}

}  // namespace detail

/// Depth (camera z, +inf where empty) over a window, optionally restricted to
/// the triangles of `only`.
inline DepthImage render_depth(const TexturedMesh& mesh, const SamplingMask* only,
                               const Pose& viewpoint, const StereoRig& rig, Side side,
                               const PixelRect& rect) {
  return detail::rasterize(mesh, only, viewpoint, rig, side, rect).depth;
}

/// Intensity and depth over an arbitrary window of the virtual image.
inline std::pair<GrayImage, DepthImage> render_window(const TexturedMesh& mesh,
                                                      const Pose& viewpoint, const StereoRig& rig,
                                                      Side side, const PixelRect& rect,
                                                      const ShadingSpec* shading = nullptr) {
  auto buf = detail::rasterize(mesh, nullptr, viewpoint, rig, side, rect);
  GrayImage intensity = detail::resolve_intensity(mesh, buf, viewpoint, rig, side, shading);
  return {std::move(intensity), std::move(buf.depth)};
}

/// Top-left corner of an l x l window centered (to the nearest pixel) on `center`,
/// clamped into the image.
inline std::pair<int, int> patch_origin(const PixelCoord& center, int side_length,
                                        const StereoRig& rig) {
  const int half = side_length / 2;
  const int r0 = std::clamp(int(std::lround(center.u)) - half, 0, rig.rows - side_length);
  const int c0 = std::clamp(int(std::lround(center.v)) - half, 0, rig.cols - side_length);
  return {r0, c0};
}

/// Renders an l x l patch of the mesh around the projection of `center`, seen
/// from the `side` camera of the virtual rig at `viewpoint` (T_{W->V}). Every
/// covered pixel starts out valid.
inline Patch render_patch(const TexturedMesh& mesh, const Pose& viewpoint, const StereoRig& rig,
                          Side side, const MapPoint& center, int side_length,
                          const ShadingSpec* shading = nullptr) {
  if (side_length <= 0 || side_length > rig.rows || side_length > rig.cols) {
    throw std::invalid_argument("render_patch: patch side does not fit the image");
  }
  Patch patch;
  patch.side_length = side_length;
  patch.center = project(viewpoint.apply_inverse(center.position), rig, side);
  std::tie(patch.row0, patch.col0) = patch_origin(patch.center, side_length, rig);
  auto [intensity, depth] = render_window(mesh, viewpoint, rig, side, patch.rect(), shading);
  patch.intensity = std::move(intensity);
  patch.depth = std::move(depth);
  patch.valid = Image<std::uint8_t>(side_length, side_length, 0);
  for (size_t i = 0; i < patch.depth.data.size(); ++i) {
    patch.valid.data[i] = std::isfinite(patch.depth.data[i]) ? 1 : 0;
  }
  return patch;
}

inline RenderedFrame render_frame(const TexturedMesh& mesh, const Pose& viewpoint,
                                  const StereoRig& rig, Side side,
                                  const ShadingSpec* shading = nullptr) {
  RenderedFrame frame;
  auto [intensity, depth] =
      render_window(mesh, viewpoint, rig, side, {0, 0, rig.rows, rig.cols}, shading);
  frame.intensity = std::move(intensity);
  frame.depth = std::move(depth);
  frame.pose = viewpoint;
  frame.rig = rig;
  frame.side = side;
  return frame;
}

// Validity -----------------------------------------------------------------------

struct ValidityParams {
  double depth_tolerance = 1e-3;  // rule 1 depth agreement (m)
  double edge_threshold = 0.05;   // depth jump marking a discontinuity (m)
  int dilation = -1;              // rule 2 radius in pixels; < 0 means side/8
};

/// Pixel validity from the full-mesh depth and the mask-only depth of the same
/// window.
///  Rule 1: masked depth exists and agrees with the full depth.
///  Rule 2: no masked depth, but the pixel is background (deeper by more than
///  the edge threshold) within `dilation` pixels of a rule-1 pixel that sits on
///  a depth discontinuity of the full depth map.
inline Image<std::uint8_t> compute_validity(const DepthImage& full_depth,
                                            const DepthImage& masked_depth,
                                            const ValidityParams& params = {}) {
  if (full_depth.rows != masked_depth.rows || full_depth.cols != masked_depth.cols) {
    throw std::invalid_argument("compute_validity: depth maps differ in size");
  }
  const int rows = full_depth.rows, cols = full_depth.cols;
  const int k = params.dilation >= 0 ? params.dilation : std::max(rows, cols) / 8;
  Image<std::uint8_t> valid(rows, cols, 0);
  Image<std::uint8_t> rule1(rows, cols, 0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double m = masked_depth(r, c);
      const double f = full_depth(r, c);
      if (std::isfinite(m) && std::isfinite(f) && std::abs(m - f) <= params.depth_tolerance) {
        rule1(r, c) = valid(r, c) = 1;
      }
    }
  }
  constexpr std::array<std::pair<int, int>, 4> kNeighbors = {{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (!rule1(r, c)) continue;
      const double fg = full_depth(r, c);
      bool edge = false;
      for (auto [dr, dc] : kNeighbors) {
        const int rr = r + dr, cc = c + dc;
        if (rr < 0 || cc < 0 || rr >= rows || cc >= cols) continue;
        const double nb = full_depth(rr, cc);
        if (nb > fg + params.edge_threshold) {  // includes +inf (no surface)
          edge = true;
          break;
        }
      }
      if (!edge) continue;
      for (int rr = std::max(0, r - k); rr <= std::min(rows - 1, r + k); ++rr) {
        for (int cc = std::max(0, c - k); cc <= std::min(cols - 1, c + k); ++cc) {
          if (valid(rr, cc) || std::isfinite(masked_depth(rr, cc))) continue;
          const double bg = full_depth(rr, cc);
          if (std::isfinite(bg) && bg > fg + params.edge_threshold) valid(rr, cc) = 1;
        }
      }
    }
  }
  return valid;
}

/// Left/right synthetic templates around `point` as seen from `viewpoint`,
/// rendered from the full mesh with validity from the sampling mask.
inline std::pair<Patch, Patch> synthesize_templates(const TexturedMesh& mesh,
                                                    const SamplingMask& mask,
                                                    const Pose& viewpoint, const StereoRig& rig,
                                                    const MapPoint& point, int side_length,
                                                    const ValidityParams& params = {},
                                                    const ShadingSpec* shading = nullptr) {
  ValidityParams p = params;
  if (p.dilation < 0) p.dilation = side_length / 8;
  auto make = [&](Side side) {
    Patch patch = render_patch(mesh, viewpoint, rig, side, point, side_length, shading);
    const DepthImage masked = render_depth(mesh, &mask, viewpoint, rig, side, patch.rect());
    patch.valid = compute_validity(patch.depth, masked, p);
    return patch;
  };
  return {make(Side::Left), make(Side::Right)};
}

}  // namespace vtsm
