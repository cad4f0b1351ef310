#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtsm/bvh.hpp"
#include "vtsm/geometry.hpp"
#include "vtsm/image.hpp"

namespace vtsm {

enum class Material : std::uint8_t { Persistent, Mutable };

class MeshError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public MeshError {
 public:
  ParseError(const std::string& file, int line, const std::string& what)
      : MeshError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Triangle mesh with per-corner texture coordinates and a grayscale texture.
/// Call `finalize()` after construction or edits; it validates the invariants
/// and builds vertex normals and the ray-casting index.
struct TexturedMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec2> uvs;
  std::vector<std::array<int, 3>> triangle_uvs;
  std::vector<Material> materials;
  std::shared_ptr<const GrayImage> texture;
  std::string texture_path;

  // Derived by finalize().
  std::vector<Vec3> normals;
  std::shared_ptr<const Bvh> bvh;

  size_t triangle_count() const { return triangles.size(); }

  Vec3 face_normal(size_t tri) const {
    const auto& f = triangles[tri];
    const Vec3 n = (vertices[size_t(f[1])] - vertices[size_t(f[0])])
                       .cross(vertices[size_t(f[2])] - vertices[size_t(f[0])]);
    return n.normalized();
  }

  double face_area(size_t tri) const {
    const auto& f = triangles[tri];
    return 0.5 * (vertices[size_t(f[1])] - vertices[size_t(f[0])])
                     .cross(vertices[size_t(f[2])] - vertices[size_t(f[0])])
                     .norm();
  }

  void finalize() {
    if (materials.size() != triangles.size()) materials.resize(triangles.size(), Material::Persistent);
    if (triangle_uvs.size() != triangles.size()) {
      throw MeshError("mesh: triangle_uvs size does not match triangle count");
    }
    const int nv = int(vertices.size());
    const int nt = int(uvs.size());
    for (size_t i = 0; i < triangles.size(); ++i) {
      for (int k = 0; k < 3; ++k) {
        if (triangles[i][size_t(k)] < 0 || triangles[i][size_t(k)] >= nv) {
          throw MeshError("mesh: triangle " + std::to_string(i) + " has out-of-range vertex index");
        }
        if (triangle_uvs[i][size_t(k)] < 0 || triangle_uvs[i][size_t(k)] >= nt) {
          throw MeshError("mesh: triangle " + std::to_string(i) +
                          " has out-of-range texture index");
        }
      }
      if (face_area(i) <= 1e-12) {
        throw MeshError("mesh: triangle " + std::to_string(i) + " is degenerate");
      }
    }
    for (size_t i = 0; i < uvs.size(); ++i) {
      if (uvs[i].minCoeff() < 0.0 || uvs[i].maxCoeff() > 1.0) {
        throw MeshError("mesh: texture coordinate " + std::to_string(i) + " outside [0,1]");
      }
    }
    // Area-weighted vertex normals: the unnormalized cross product carries 2*area.
    normals.assign(vertices.size(), Vec3::Zero());
    for (const auto& f : triangles) {
      const Vec3 n = (vertices[size_t(f[1])] - vertices[size_t(f[0])])
                         .cross(vertices[size_t(f[2])] - vertices[size_t(f[0])]);
      for (int k : f) normals[size_t(k)] += n;
    }
    for (auto& n : normals) {
      const double len = n.norm();
      n = len > 0.0 ? Vec3(n / len) : Vec3(Vec3::UnitZ());
    }
    bvh = std::make_shared<const Bvh>(vertices, triangles);
  }
};

/// Subset of a mesh's triangles (sorted, unique) with an O(1) membership table.
class SamplingMask {
 public:
  SamplingMask() = default;

  SamplingMask(const TexturedMesh& mesh, std::vector<int> triangles)
      : triangles_(std::move(triangles)), member_(mesh.triangle_count(), 0) {
    std::sort(triangles_.begin(), triangles_.end());
    triangles_.erase(std::unique(triangles_.begin(), triangles_.end()), triangles_.end());
    for (int t : triangles_) {
      if (t < 0 || size_t(t) >= mesh.triangle_count()) {
        throw MeshError("mask: triangle index " + std::to_string(t) + " not in mesh");
      }
      member_[size_t(t)] = 1;
    }
    std::vector<char> seen(mesh.vertices.size(), 0);
    for (int t : triangles_) {
      for (int v : mesh.triangles[size_t(t)]) seen[size_t(v)] = 1;
    }
    for (size_t v = 0; v < seen.size(); ++v)
      if (seen[v]) vertices_.push_back(int(v));
  }

  static SamplingMask full(const TexturedMesh& mesh) {
    std::vector<int> all(mesh.triangle_count());
    std::iota(all.begin(), all.end(), 0);
    return SamplingMask(mesh, std::move(all));
  }

  static SamplingMask by_material(const TexturedMesh& mesh, Material m) {
    std::vector<int> sel;
    for (size_t i = 0; i < mesh.triangle_count(); ++i)
      if (mesh.materials[i] == m) sel.push_back(int(i));
    return SamplingMask(mesh, std::move(sel));
  }

  const std::vector<int>& triangles() const { return triangles_; }
  /// Vertices of mask triangles, ascending.
  const std::vector<int>& vertices() const { return vertices_; }
  bool contains(int tri) const { return tri >= 0 && size_t(tri) < member_.size() && member_[size_t(tri)]; }
  size_t mesh_triangle_count() const { return member_.size(); }
  bool empty() const { return triangles_.empty(); }

 private:
  std::vector<int> triangles_;
  std::vector<int> vertices_;
  std::vector<char> member_;
};

struct MapPoint {
  Vec3 position = Vec3::Zero();
  int vertex = -1;
  Vec3 normal = Vec3::UnitZ();
};

class NoVisiblePoints : public std::runtime_error {
 public:
  NoVisiblePoints() : std::runtime_error("no visible mask points") {}
};

// OBJ I/O ----------------------------------------------------------------------

namespace detail {

inline std::string format_double(double x) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view s, const std::string& file, int line) {
  double x = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(file, line, "invalid number '" + std::string(s) + "'");
  }
  return x;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace detail

/// Writes the OBJ subset (v, vt, o, f v/vt), a `<stem>.json` sidecar naming the
/// texture, and the texture as 8-bit RGB PNG next to the mesh.
inline void save_mesh(const std::filesystem::path& obj_path, const TexturedMesh& mesh,
                      const std::string& texture_name = "texture.png",
                      const nlohmann::json& sidecar_extra = nlohmann::json::object()) {
  std::ofstream out(obj_path);
  if (!out) throw IoError("save_mesh: cannot open " + obj_path.string());
  out << "# vtsm textured mesh\n";
  for (const auto& v : mesh.vertices) {
    out << "v " << detail::format_double(v.x()) << ' ' << detail::format_double(v.y()) << ' '
        << detail::format_double(v.z()) << '\n';
  }
  for (const auto& t : mesh.uvs) {
    out << "vt " << detail::format_double(t.x()) << ' ' << detail::format_double(t.y()) << '\n';
  }
  int group = 0;
  for (size_t i = 0; i < mesh.triangles.size(); ++i) {
    if (i == 0 || mesh.materials[i] != mesh.materials[i - 1]) {
      out << "o " << (mesh.materials[i] == Material::Persistent ? "persistent_" : "mutable_")
          << group++ << '\n';
    }
    const auto& f = mesh.triangles[i];
    const auto& t = mesh.triangle_uvs[i];
    out << "f " << f[0] + 1 << '/' << t[0] + 1 << ' ' << f[1] + 1 << '/' << t[1] + 1 << ' '
        << f[2] + 1 << '/' << t[2] + 1 << '\n';
  }
  if (!out) throw IoError("save_mesh: write failed for " + obj_path.string());

  nlohmann::json side = sidecar_extra;
  side["texture"] = texture_name;
  std::ofstream js(std::filesystem::path(obj_path).replace_extension(".json"));
  js << side.dump(2) << '\n';
  if (mesh.texture) {
    write_png_rgb(obj_path.parent_path() / texture_name, *mesh.texture);
  }
}

/// Parses the OBJ subset. Faces must be triangles with v/vt indices; negative
/// (relative) indices are accepted. Material tags come from `o` names.
inline TexturedMesh load_mesh(const std::filesystem::path& obj_path, bool load_texture = true) {
  std::ifstream in(obj_path);
  if (!in) throw IoError("load_mesh: cannot open " + obj_path.string());
  const std::string file = obj_path.string();
  TexturedMesh mesh;
  Material current = Material::Persistent;
  std::string line;
  int lineno = 0;
  std::vector<int> face_lines;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tok = detail::split_ws(line);
    if (tok.empty() || tok[0].front() == '#') continue;
    if (tok[0] == "v") {
      if (tok.size() < 4) throw ParseError(file, lineno, "vertex needs 3 coordinates");
      mesh.vertices.emplace_back(detail::parse_double(tok[1], file, lineno),
                                 detail::parse_double(tok[2], file, lineno),
                                 detail::parse_double(tok[3], file, lineno));
    } else if (tok[0] == "vt") {
      if (tok.size() < 3) throw ParseError(file, lineno, "texture coordinate needs 2 values");
      mesh.uvs.emplace_back(detail::parse_double(tok[1], file, lineno),
                            detail::parse_double(tok[2], file, lineno));
    } else if (tok[0] == "o" || tok[0] == "g") {
      const std::string name = tok.size() > 1 ? std::string(tok[1]) : std::string();
      current = name.rfind("mutable", 0) == 0 ? Material::Mutable : Material::Persistent;
    } else if (tok[0] == "f") {
      if (tok.size() != 4) throw ParseError(file, lineno, "only triangular faces are supported");
      std::array<int, 3> f{}, t{};
      for (int k = 0; k < 3; ++k) {
        const std::string_view s = tok[size_t(k) + 1];
        const auto slash = s.find('/');
        if (slash == std::string_view::npos) {
          throw ParseError(file, lineno, "face corner needs v/vt indices");
        }
        int vi = 0, ti = 0;
        auto r1 = std::from_chars(s.data(), s.data() + slash, vi);
        const auto rest = s.substr(slash + 1);
        const auto slash2 = rest.find('/');
        const auto tstr = rest.substr(0, slash2);
        auto r2 = std::from_chars(tstr.data(), tstr.data() + tstr.size(), ti);
        if (r1.ec != std::errc() || r2.ec != std::errc()) {
          throw ParseError(file, lineno, "invalid face index '" + std::string(s) + "'");
        }
        f[size_t(k)] = vi > 0 ? vi - 1 : int(mesh.vertices.size()) + vi;
        t[size_t(k)] = ti > 0 ? ti - 1 : int(mesh.uvs.size()) + ti;
      }
      mesh.triangles.push_back(f);
      mesh.triangle_uvs.push_back(t);
      mesh.materials.push_back(current);
      face_lines.push_back(lineno);
    } else if (tok[0] == "mtllib" || tok[0] == "usemtl" || tok[0] == "s" || tok[0] == "vn") {
      continue;
    } else {
      throw ParseError(file, lineno, "unsupported statement '" + std::string(tok[0]) + "'");
    }
  }
  // Index checks here so the error names the offending face line.
  for (size_t i = 0; i < mesh.triangles.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      const int v = mesh.triangles[i][size_t(k)];
      const int t = mesh.triangle_uvs[i][size_t(k)];
      if (v < 0 || size_t(v) >= mesh.vertices.size() || t < 0 || size_t(t) >= mesh.uvs.size()) {
        throw ParseError(file, face_lines[i],
                         "face " + std::to_string(i) + " references an out-of-range index");
      }
    }
  }

  const auto sidecar = std::filesystem::path(obj_path).replace_extension(".json");
  if (load_texture && std::filesystem::exists(sidecar)) {
    std::ifstream js(sidecar);
    const auto j = nlohmann::json::parse(js);
    if (j.contains("texture")) {
      mesh.texture_path = j["texture"].get<std::string>();
      mesh.texture = std::make_shared<const GrayImage>(
          read_png_gray(obj_path.parent_path() / mesh.texture_path));
    }
  }
  mesh.finalize();
  return mesh;
}

inline void save_mask(const std::filesystem::path& path, const SamplingMask& mask) {
  std::ofstream out(path);
  if (!out) throw IoError("save_mask: cannot open " + path.string());
  out << nlohmann::json(mask.triangles()).dump() << '\n';
}

inline SamplingMask load_mask(const std::filesystem::path& path, const TexturedMesh& mesh) {
  std::ifstream in(path);
  if (!in) throw IoError("load_mask: cannot open " + path.string());
  return SamplingMask(mesh, nlohmann::json::parse(in).get<std::vector<int>>());
}

// Visibility ---------------------------------------------------------------------

/// Border margin (pixels) a vertex must keep so a centered template of side
/// `template_side` fits in the image.
inline double visibility_margin(int template_side) { return template_side / 2.0 + 8.0; }

namespace detail {

/// Cheap per-vertex tests: in front of the camera within the clip range,
/// inside the left image with margin, and facing the camera.
inline bool passes_view_tests(const TexturedMesh& mesh, int v, const Pose& viewpoint,
                              const StereoRig& rig, double margin) {
  const Vec3& pw = mesh.vertices[size_t(v)];
  const Vec3 pc = viewpoint.apply_inverse(pw);
  if (pc.z() <= rig.near_clip || pc.z() >= rig.far_clip) return false;
  const double u = rig.cu + rig.focal * pc.y() / pc.z();
  const double col = rig.cv + rig.focal * pc.x() / pc.z();
  if (u < margin || col < margin || u > rig.rows - 1 - margin || col > rig.cols - 1 - margin) {
    return false;
  }
  const Vec3 view = pw - viewpoint.origin();
  return mesh.normals[size_t(v)].dot(view) < 0.0;
}

inline bool unoccluded(const TexturedMesh& mesh, int v, const Pose& viewpoint) {
  const Vec3 origin = viewpoint.origin();
  const Vec3 dir = mesh.vertices[size_t(v)] - origin;
  const double len = dir.norm();
  // Hits closer than the vertex by more than 1e-6 m occlude it.
  const double t_max = 1.0 - 1e-6 / len;
  return !mesh.bvh->any_hit(origin, dir, 1e-9, t_max);
}

inline MapPoint make_point(const TexturedMesh& mesh, int v) {
  return {mesh.vertices[size_t(v)], v, mesh.normals[size_t(v)]};
}

}  // namespace detail

/// Mask vertices visible from the left camera at `viewpoint` (T_{W->V}).
inline std::vector<MapPoint> visible_mask_vertices(const TexturedMesh& mesh,
                                                   const SamplingMask& mask,
                                                   const Pose& viewpoint, const StereoRig& rig,
                                                   int template_side = 128) {
  if (mask.mesh_triangle_count() != mesh.triangle_count()) {
    throw MeshError("visible_mask_vertices: mask does not belong to this mesh");
  }
  const double margin = visibility_margin(template_side);
  std::vector<MapPoint> out;
  for (int v : mask.vertices()) {
    if (detail::passes_view_tests(mesh, v, viewpoint, rig, margin) &&
        detail::unoccluded(mesh, v, viewpoint)) {
      out.push_back(detail::make_point(mesh, v));
    }
  }
  return out;
}

/// Uniform choice from a visible set.
inline MapPoint sample_point(const std::vector<MapPoint>& visible, Rng& rng) {
  if (visible.empty()) throw NoVisiblePoints();
  std::uniform_int_distribution<size_t> pick(0, visible.size() - 1);
  return visible[pick(rng)];
}

/// Draws a uniformly random visible mask vertex without enumerating the whole
/// visible set: candidates passing the cheap view tests are drawn uniformly and
/// rejected if occluded. The result has the same distribution as
/// sample_point(visible_mask_vertices(...)).
inline MapPoint sample_visible_point(const TexturedMesh& mesh, const SamplingMask& mask,
                                     const Pose& viewpoint, const StereoRig& rig,
                                     int template_side, Rng& rng) {
  const double margin = visibility_margin(template_side);
  std::vector<int> candidates;
  for (int v : mask.vertices()) {
    if (detail::passes_view_tests(mesh, v, viewpoint, rig, margin)) candidates.push_back(v);
  }
  while (!candidates.empty()) {
    std::uniform_int_distribution<size_t> pick(0, candidates.size() - 1);
    const size_t i = pick(rng);
    const int v = candidates[i];
    if (detail::unoccluded(mesh, v, viewpoint)) return detail::make_point(mesh, v);
    candidates[i] = candidates.back();
    candidates.pop_back();
  }
  throw NoVisiblePoints();
}

}  // namespace vtsm
