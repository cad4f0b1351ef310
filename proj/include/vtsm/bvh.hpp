#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "vtsm/geometry.hpp"

namespace vtsm {

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void extend(const Aabb& b) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }
  Vec3 center() const { return 0.5 * (lo + hi); }
};

/// Möller-Trumbore; returns the ray parameter t or +inf. Two-sided.
inline double intersect_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a,
                                 const Vec3& b, const Vec3& c) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 p = dir.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-300) return kInf;
  const double inv = 1.0 / det;
  const Vec3 s = origin - a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return kInf;
  const Vec3 q = s.cross(e1);
  const double v = dir.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return kInf;
  return e2.dot(q) * inv;
}

/// Plane n·x + d >= 0 is "inside".
struct Plane {
  Vec3 n;
  double d;
};

/// Bounding-volume hierarchy over an indexed triangle list.
class Bvh {
 public:
  Bvh() = default;

  Bvh(std::span<const Vec3> vertices, std::span<const std::array<int, 3>> triangles)
      : vertices_(vertices.begin(), vertices.end()),
        triangles_(triangles.begin(), triangles.end()) {
    order_.resize(triangles_.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (triangles_.empty()) return;
    std::vector<Aabb> boxes(triangles_.size());
    std::vector<Vec3> centers(triangles_.size());
    for (size_t i = 0; i < triangles_.size(); ++i) {
      for (int k : triangles_[i]) boxes[i].extend(vertices_[size_t(k)]);
      centers[i] = boxes[i].center();
    }
    nodes_.reserve(2 * triangles_.size() / kLeafSize + 2);
    build(0, int(order_.size()), boxes, centers);
  }

  bool empty() const { return triangles_.empty(); }

  /// Nearest hit with t in (t_min, t_max); returns {t, triangle} or {inf, -1}.
  std::pair<double, int> closest_hit(const Vec3& origin, const Vec3& dir, double t_min,
                                     double t_max) const {
    std::pair<double, int> best{std::numeric_limits<double>::infinity(), -1};
    if (nodes_.empty()) return best;
    const Vec3 inv_dir = dir.cwiseInverse();
    int stack[128];
    int top = 0;
    stack[top++] = 0;
    double limit = t_max;
    while (top > 0) {
      const Node& node = nodes_[size_t(stack[--top])];
      if (!slab_test(node.box, origin, inv_dir, t_min, limit)) continue;
      if (node.count > 0) {
        for (int i = node.first; i < node.first + node.count; ++i) {
          const int tri = order_[size_t(i)];
          const auto& f = triangles_[size_t(tri)];
          const double t = intersect_triangle(origin, dir, vertices_[size_t(f[0])],
                                              vertices_[size_t(f[1])], vertices_[size_t(f[2])]);
          if (t > t_min && t < limit) {
            limit = t;
            best = {t, tri};
          } else if (t > t_min && t == limit && tri < best.second) {
            best.second = tri;
          }
        }
      } else {
        stack[top++] = node.left;
        stack[top++] = node.right;
      }
    }
    return best;
  }

  /// True if any triangle is hit with t in (t_min, t_max), optionally skipping
  /// triangles for which `skip(tri)` is true.
  template <typename Skip>
  bool any_hit(const Vec3& origin, const Vec3& dir, double t_min, double t_max,
               Skip&& skip) const {
    if (nodes_.empty()) return false;
    const Vec3 inv_dir = dir.cwiseInverse();
    int stack[128];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& node = nodes_[size_t(stack[--top])];
      if (!slab_test(node.box, origin, inv_dir, t_min, t_max)) continue;
      if (node.count > 0) {
        for (int i = node.first; i < node.first + node.count; ++i) {
          const int tri = order_[size_t(i)];
          if (skip(tri)) continue;
          const auto& f = triangles_[size_t(tri)];
          const double t = intersect_triangle(origin, dir, vertices_[size_t(f[0])],
                                              vertices_[size_t(f[1])], vertices_[size_t(f[2])]);
          if (t > t_min && t < t_max) return true;
        }
      } else {
        stack[top++] = node.left;
        stack[top++] = node.right;
      }
    }
    return false;
  }

  bool any_hit(const Vec3& origin, const Vec3& dir, double t_min, double t_max) const {
    return any_hit(origin, dir, t_min, t_max, [](int) { return false; });
  }

  /// Indices of triangles whose bounding boxes are not fully outside any plane,
  /// sorted ascending.
  std::vector<int> query_planes(std::span<const Plane> planes) const {
    std::vector<int> out;
    if (nodes_.empty()) return out;
    int stack[128];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& node = nodes_[size_t(stack[--top])];
      if (outside(node.box, planes)) continue;
      if (node.count > 0) {
        for (int i = node.first; i < node.first + node.count; ++i) out.push_back(order_[size_t(i)]);
      } else {
        stack[top++] = node.left;
        stack[top++] = node.right;
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  static constexpr int kLeafSize = 4;

  struct Node {
    Aabb box;
    int left = -1;
    int right = -1;
    int first = 0;
    int count = 0;  // > 0 for leaves
  };

  int build(int begin, int end, const std::vector<Aabb>& boxes, const std::vector<Vec3>& centers) {
    const int index = int(nodes_.size());
    nodes_.emplace_back();
    Aabb box, cbox;
    for (int i = begin; i < end; ++i) {
      box.extend(boxes[size_t(order_[size_t(i)])]);
      cbox.extend(centers[size_t(order_[size_t(i)])]);
    }
    nodes_[size_t(index)].box = box;
    const Vec3 extent = cbox.hi - cbox.lo;
    int axis = 0;
    extent.maxCoeff(&axis);
    if (end - begin <= kLeafSize || extent[axis] <= 0.0) {
      nodes_[size_t(index)].first = begin;
      nodes_[size_t(index)].count = end - begin;
      return index;
    }
    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                       const double ca = centers[size_t(a)][axis];
                       const double cb = centers[size_t(b)][axis];
                       return ca < cb || (ca == cb && a < b);
                     });
    const int left = build(begin, mid, boxes, centers);
    const int right = build(mid, end, boxes, centers);
    nodes_[size_t(index)].left = left;
    nodes_[size_t(index)].right = right;
    return index;
  }

  static bool slab_test(const Aabb& b, const Vec3& o, const Vec3& inv_dir, double t0, double t1) {
    for (int a = 0; a < 3; ++a) {
      double ta = (b.lo[a] - o[a]) * inv_dir[a];
      double tb = (b.hi[a] - o[a]) * inv_dir[a];
      if (std::isnan(ta) || std::isnan(tb)) {
        // Ray parallel to and inside the slab plane.
        if (o[a] < b.lo[a] || o[a] > b.hi[a]) return false;
        continue;
      }
      if (ta > tb) std::swap(ta, tb);
      // Pad for rounding so grazing rays are not culled.
      const double pad = 1e-9 * (std::abs(ta) + std::abs(tb)) + 1e-12;
      t0 = std::max(t0, ta - pad);
      t1 = std::min(t1, tb + pad);
      if (t0 > t1) return false;
    }
    return true;
  }

  static bool outside(const Aabb& b, std::span<const Plane> planes) {
    for (const Plane& p : planes) {
      const Vec3 corner(p.n.x() >= 0 ? b.hi.x() : b.lo.x(), p.n.y() >= 0 ? b.hi.y() : b.lo.y(),
                        p.n.z() >= 0 ? b.hi.z() : b.lo.z());
      if (p.n.dot(corner) + p.d < 0.0) return true;
    }
    return false;
  }

  std::vector<Vec3> vertices_;
  std::vector<std::array<int, 3>> triangles_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace vtsm
