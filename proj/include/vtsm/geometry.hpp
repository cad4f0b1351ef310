#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

#include <json.hpp>

namespace vtsm {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Rng = std::mt19937_64;

inline constexpr double kDegToRad = std::numbers::pi / 180.0;
inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;

class FrameMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GeometryError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Rigid transform T_{from->to}: maps coordinates expressed in `to` into `from`,
/// i.e. the pose of frame `to` inside frame `from`. Chains as
/// compose(T_{A->B}, T_{B->C}) = T_{A->C}.
class Pose {
 public:
  Pose() = default;

  Pose(const Mat3& rotation, const Vec3& translation, std::string from = "W",
       std::string to = "C")
      : rotation_(rotation),
        translation_(translation),
        from_(std::move(from)),
        to_(std::move(to)) {
    if (orthonormality_error(rotation_) > 1e-9 || rotation_.determinant() < 0.0) {
      throw GeometryError("Pose: rotation is not a proper orthonormal matrix");
    }
  }

  static Pose identity(std::string from = "W", std::string to = "C") {
    return Pose(Mat3::Identity(), Vec3::Zero(), std::move(from), std::move(to));
  }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  const std::string& from() const { return from_; }
  const std::string& to() const { return to_; }

  Pose relabeled(std::string from, std::string to) const {
    Pose p = *this;
    p.from_ = std::move(from);
    p.to_ = std::move(to);
    return p;
  }

  /// Position of the `to` frame origin in `from` coordinates.
  const Vec3& origin() const { return translation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3 apply_inverse(const Vec3& p) const {
    return rotation_.transpose() * (p - translation_);
  }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation_;
    m.topRightCorner<3, 1>() = translation_;
    return m;
  }

  static double orthonormality_error(const Mat3& r) {
    return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  }

 private:
  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
  std::string from_ = "W";
  std::string to_ = "C";

  friend Pose compose(const Pose& a, const Pose& b);
  friend Pose inverse(const Pose& p);
};

namespace detail {

// Projects onto SO(3) once drift becomes measurable; exact matrices pass
// through untouched so short chains stay bit-identical to the plain product.
inline Mat3 renormalized(const Mat3& r) {
  if (Pose::orthonormality_error(r) <= 1e-12) return r;
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 out = svd.matrixU() * svd.matrixV().transpose();
  if (out.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    out = u * svd.matrixV().transpose();
  }
  return out;
}

}  // namespace detail

inline Pose compose(const Pose& a, const Pose& b) {
  if (a.to_ != b.from_) {
    throw FrameMismatch("compose: '" + a.from_ + "->" + a.to_ + "' cannot chain with '" +
                        b.from_ + "->" + b.to_ + "'");
  }
  Pose out;
  out.rotation_ = detail::renormalized(a.rotation_ * b.rotation_);
  out.translation_ = a.rotation_ * b.translation_ + a.translation_;
  out.from_ = a.from_;
  out.to_ = b.to_;
  return out;
}

inline Pose inverse(const Pose& p) {
  Pose out;
  out.rotation_ = p.rotation_.transpose();
  out.translation_ = -(out.rotation_ * p.translation_);
  out.from_ = p.to_;
  out.to_ = p.from_;
  return out;
}

/// Rotation angle of R in radians, accurate near zero (no acos).
inline double rotation_angle(const Mat3& r) {
  const Vec3 axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double s = 0.5 * axis.norm();
  const double c = 0.5 * (r.trace() - 1.0);
  return std::atan2(s, c);
}

inline Mat3 axis_angle(const Vec3& unit_axis, double angle_rad) {
  return Eigen::AngleAxisd(angle_rad, unit_axis).toRotationMatrix();
}

/// Translation/rotation search bounds (meters, degrees).
struct SearchBounds {
  double t_tilde = 0.0;
  double r_tilde = 0.0;

  SearchBounds() = default;
  SearchBounds(double t, double r) : t_tilde(t), r_tilde(r) {
    if (!(t >= 0.0) || !(r >= 0.0)) {
      throw std::invalid_argument("SearchBounds: bounds must be non-negative");
    }
  }
  bool operator==(const SearchBounds&) const = default;
};

enum class Side { Left, Right };

inline const char* to_string(Side s) { return s == Side::Left ? "left" : "right"; }

/// Image position: u = row (down), v = column (right); integer values are
/// pixel centers, origin at the top-left pixel.
struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
  bool in_frame = false;
};

/// Rectified pinhole stereo pair. The right camera sits at +baseline along the
/// left camera's x axis with identical intrinsics.
struct StereoRig {
  double focal = 1100.0;
  double cu = 479.5;  // principal point row
  double cv = 639.5;  // principal point column
  double baseline = 0.40;
  int rows = 960;
  int cols = 1280;
  double near_clip = 0.1;
  double far_clip = 50.0;

  void validate() const {
    if (!(baseline > 0.0)) throw std::invalid_argument("StereoRig: baseline must be > 0");
    if (!(focal > 0.0)) throw std::invalid_argument("StereoRig: focal must be > 0");
    if (rows <= 0 || cols <= 0) throw std::invalid_argument("StereoRig: empty image");
    if (cu < 0.0 || cu > rows - 1 || cv < 0.0 || cv > cols - 1) {
      throw std::invalid_argument("StereoRig: principal point outside image");
    }
    if (!(near_clip > 0.0) || !(far_clip > near_clip)) {
      throw std::invalid_argument("StereoRig: require 0 < near < far");
    }
  }

  bool contains(double u, double v) const {
    return u >= 0.0 && v >= 0.0 && u <= rows - 1 && v <= cols - 1;
  }

  /// Left-camera-frame point expressed in the given side's camera frame.
  Vec3 to_side(const Vec3& p_left, Side side) const {
    return side == Side::Left ? p_left : Vec3(p_left.x() - baseline, p_left.y(), p_left.z());
  }
  Vec3 from_side(const Vec3& p_side, Side side) const {
    return side == Side::Left ? p_side : Vec3(p_side.x() + baseline, p_side.y(), p_side.z());
  }
};

/// Pinhole projection of a left-camera-frame point into the requested camera.
inline PixelCoord project(const Vec3& point, const StereoRig& rig, Side side) {
  if (!(point.z() > 0.0)) {
    throw GeometryError("project: point at or behind the camera plane");
  }
  const Vec3 p = rig.to_side(point, side);
  PixelCoord px;
  px.u = rig.cu + rig.focal * p.y() / p.z();
  px.v = rig.cv + rig.focal * p.x() / p.z();
  px.in_frame = rig.contains(px.u, px.v);
  return px;
}

/// Uniform direction on the unit sphere.
inline Vec3 random_unit_vector(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    Vec3 d(n(rng), n(rng), n(rng));
    const double norm = d.norm();
    if (norm > 1e-12) return d / norm;
  }
}

/// Orthonormal pair spanning the plane orthogonal to unit vector `n`.
inline std::pair<Vec3, Vec3> tangent_basis(const Vec3& n) {
  const Vec3 helper = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  Vec3 e1 = (helper - helper.dot(n) * n).normalized();
  Vec3 e2 = n.cross(e1).normalized();
  return {e1, e2};
}

/// Random rigid perturbation T_{C->V}: rotation about a uniform axis with angle
/// uniform in [-r, r], then a translation of magnitude uniform in [0, t] along a
/// uniform direction (restricted to the plane orthogonal to `surface_normal`
/// when `planar` is set). `surface_normal` is expressed in frame C.
inline Pose sample_perturbation(const SearchBounds& bounds, const Vec3& surface_normal,
                                bool planar, Rng& rng, const std::string& from = "C",
                                const std::string& to = "V") {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Vec3 axis = random_unit_vector(rng);
  const double max_angle = bounds.r_tilde * kDegToRad;
  const double angle = (2.0 * unit(rng) - 1.0) * max_angle;
  const double magnitude = unit(rng) * bounds.t_tilde;

  Vec3 direction;
  if (planar) {
    const Vec3 n = surface_normal.normalized();
    const auto [e1, e2] = tangent_basis(n);
    const double phi = 2.0 * std::numbers::pi * unit(rng);
    direction = std::cos(phi) * e1 + std::sin(phi) * e2;
    direction -= direction.dot(n) * n;
  } else {
    direction = random_unit_vector(rng);
  }

  Mat3 r = Mat3::Identity();
  if (angle != 0.0) r = axis_angle(axis, angle);
  Vec3 t = Vec3::Zero();
  if (magnitude != 0.0) t = magnitude * direction;
  return Pose(r, t, from, to);
}

struct PoseError {
  double translation = 0.0;  // meters
  double rotation = 0.0;     // degrees
};

/// Magnitudes of inverse(truth) * estimate.
inline PoseError pose_error(const Pose& truth, const Pose& estimate) {
  if (truth.from() != estimate.from() || truth.to() != estimate.to()) {
    throw FrameMismatch("pose_error: frame pairs differ ('" + truth.from() + "->" + truth.to() +
                        "' vs '" + estimate.from() + "->" + estimate.to() + "')");
  }
  const Pose d = compose(inverse(truth), estimate.relabeled(truth.from(), truth.to() + "'"));
  return {d.translation().norm(), rotation_angle(d.rotation()) * kRadToDeg};
}

/// Camera pose (left camera, T_{W->C}) at `eye` looking at `target`; image rows
/// run along -up.
inline Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ(),
                    const std::string& from = "W", const std::string& to = "C") {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-9) throw GeometryError("look_at: view direction parallel to up");
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return Pose(r, eye, from, to);
}

// JSON ----------------------------------------------------------------------

inline nlohmann::json to_json(const Pose& p) {
  nlohmann::json j;
  std::vector<double> r(9);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r[3 * i + k] = p.rotation()(i, k);
  j["rotation"] = r;
  j["translation"] = {p.translation().x(), p.translation().y(), p.translation().z()};
  j["from"] = p.from();
  j["to"] = p.to();
  return j;
}

inline Pose pose_from_json(const nlohmann::json& j) {
  const auto r = j.at("rotation").get<std::vector<double>>();
  const auto t = j.at("translation").get<std::vector<double>>();
  if (r.size() != 9 || t.size() != 3) {
    throw std::invalid_argument("pose JSON: rotation needs 9 numbers, translation 3");
  }
  Mat3 m;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) m(i, k) = r[3 * i + k];
  // Text round trips can leave ~1e-16 drift; snap back onto SO(3).
  return Pose(detail::renormalized(m), Vec3(t[0], t[1], t[2]), j.value("from", "W"),
              j.value("to", "C"));
}

inline nlohmann::json to_json(const StereoRig& rig) {
  return {{"focal", rig.focal},       {"cu", rig.cu},       {"cv", rig.cv},
          {"baseline", rig.baseline}, {"rows", rig.rows},   {"cols", rig.cols},
          {"near", rig.near_clip},    {"far", rig.far_clip}};
}

inline StereoRig rig_from_json(const nlohmann::json& j) {
  StereoRig rig;
  rig.focal = j.value("focal", rig.focal);
  rig.rows = j.value("rows", rig.rows);
  rig.cols = j.value("cols", rig.cols);
  rig.cu = j.value("cu", 0.5 * (rig.rows - 1));
  rig.cv = j.value("cv", 0.5 * (rig.cols - 1));
  rig.baseline = j.value("baseline", rig.baseline);
  rig.near_clip = j.value("near", rig.near_clip);
  rig.far_clip = j.value("far", rig.far_clip);
  rig.validate();
  return rig;
}

inline nlohmann::json to_json(const SearchBounds& b) {
  return {{"t", b.t_tilde}, {"r_deg", b.r_tilde}};
}

}  // namespace vtsm
