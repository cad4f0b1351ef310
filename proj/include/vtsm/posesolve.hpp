#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "vtsm/geometry.hpp"

namespace vtsm {

class TriangulationError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class AlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Left-camera-frame point from a rectified stereo match. Depth comes from the
/// disparity vL - vR, the row from the mean of both rows.
inline Vec3 stereo_triangulate(double uL, double vL, double uR, double vR, const StereoRig& rig,
                               double d_min = 0.5) {
  const double d = vL - vR;
  if (!(d > d_min)) {
    throw TriangulationError("stereo_triangulate: disparity " + std::to_string(d) +
                             " px is not above " + std::to_string(d_min));
  }
  const double z = rig.focal * rig.baseline / d;
  const double u = 0.5 * (uL + uR);
  return {(vL - rig.cv) * z / rig.focal, (u - rig.cu) * z / rig.focal, z};
}

struct Correspondence {
  Vec3 p_world = Vec3::Zero();
  Vec3 p_camera = Vec3::Zero();
  double score = 0.0;
  bool reused = false;
};

/// Rigid least-squares fit T minimizing sum |Q_i - T(P_i)|^2 (Umeyama without
/// scale). The returned pose maps P coordinates into Q coordinates, labeled
/// T_{q_frame -> p_frame}.
inline Pose umeyama_align(const std::vector<Vec3>& P, const std::vector<Vec3>& Q,
                          const std::string& q_frame = "W", const std::string& p_frame = "C") {
  if (P.size() != Q.size()) throw AlignmentError("umeyama_align: point sets differ in size");
  if (P.size() < 3) throw AlignmentError("umeyama_align: need at least 3 point pairs");
  const double n = double(P.size());
  Vec3 mp = Vec3::Zero(), mq = Vec3::Zero();
  for (size_t i = 0; i < P.size(); ++i) {
    mp += P[i];
    mq += Q[i];
  }
  mp /= n;
  mq /= n;
  Mat3 sigma = Mat3::Zero();
  for (size_t i = 0; i < P.size(); ++i) sigma += (Q[i] - mq) * (P[i] - mp).transpose();
  sigma /= n;
  Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(1) > 1e-9 * sv(0)) || !(sv(0) > 0.0)) {
    throw AlignmentError("umeyama_align: degenerate (collinear or coincident) configuration");
  }
  Mat3 s = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2, 2) = -1.0;
  Mat3 r = svd.matrixU() * s * svd.matrixV().transpose();
  r = detail::renormalized(r);
  const Vec3 t = mq - r * mp;
  return Pose(r, t, q_frame, p_frame);
}

struct AlignmentResult {
  bool success = false;
  Pose transform;  // T_{W->C}: camera points into world points
  std::vector<int> inliers;
  double rms = 0.0;
  struct Hypothesis {
    Pose transform;
    int inliers = 0;
  };
  std::vector<Hypothesis> top_hypotheses;  // best first, distinct inlier sets

  int inlier_count() const { return int(inliers.size()); }
};

struct RansacParams {
  double inlier_threshold = 0.03;
  int max_iterations = 500;
  int min_inliers = 20;
  int keep_hypotheses = 3;
};

namespace detail {

inline std::vector<int> inliers_of(const Pose& t, const std::vector<Correspondence>& corrs,
                                   double threshold) {
  std::vector<int> out;
  for (size_t i = 0; i < corrs.size(); ++i) {
    if ((t.apply(corrs[i].p_camera) - corrs[i].p_world).norm() < threshold) out.push_back(int(i));
  }
  return out;
}

inline double rms_of(const Pose& t, const std::vector<Correspondence>& corrs,
                     const std::vector<int>& idx) {
  if (idx.empty()) return 0.0;
  double sum = 0.0;
  for (int i : idx) sum += (t.apply(corrs[size_t(i)].p_camera) - corrs[size_t(i)].p_world).squaredNorm();
  return std::sqrt(sum / double(idx.size()));
}

inline Pose fit(const std::vector<Correspondence>& corrs, const std::vector<int>& idx) {
  std::vector<Vec3> p, q;
  p.reserve(idx.size());
  q.reserve(idx.size());
  for (int i : idx) {
    p.push_back(corrs[size_t(i)].p_camera);
    q.push_back(corrs[size_t(i)].p_world);
  }
  return umeyama_align(p, q, "W", "C");
}

}  // namespace detail

/// RANSAC over 3-point Umeyama hypotheses, then a refit on the inliers of the
/// best hypothesis (ties keep the earliest). Fails (success = false) when the
/// best model has fewer than `min_inliers` inliers.
inline AlignmentResult ransac_align(const std::vector<Correspondence>& corrs,
                                    const RansacParams& params, Rng& rng) {
  if (corrs.size() < 3) throw AlignmentError("ransac_align: need at least 3 correspondences");
  AlignmentResult result;
  std::vector<AlignmentResult::Hypothesis> hyps;
  std::vector<std::vector<int>> hyp_inliers;
  std::uniform_int_distribution<size_t> pick(0, corrs.size() - 1);
  int best = -1;
  for (int it = 0; it < params.max_iterations; ++it) {
    size_t a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || a == c || b == c) continue;
    Pose model;
    try {
      model = detail::fit(corrs, {int(a), int(b), int(c)});
    } catch (const AlignmentError&) {
      continue;
    }
    auto in = detail::inliers_of(model, corrs, params.inlier_threshold);
    hyps.push_back({model, int(in.size())});
    hyp_inliers.push_back(std::move(in));
    if (best < 0 || hyps.back().inliers > hyps[size_t(best)].inliers) best = int(hyps.size()) - 1;
  }
  if (best < 0) return result;

  // Distinct-support hypotheses, most inliers first, earliest on ties.
  std::vector<size_t> order(hyps.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t x, size_t y) { return hyps[x].inliers > hyps[y].inliers; });
  std::vector<std::vector<int>> seen;
  for (size_t k : order) {
    if (int(result.top_hypotheses.size()) >= params.keep_hypotheses) break;
    if (hyps[k].inliers == 0) break;
    if (std::find(seen.begin(), seen.end(), hyp_inliers[k]) != seen.end()) continue;
    seen.push_back(hyp_inliers[k]);
    result.top_hypotheses.push_back(hyps[k]);
  }

  const std::vector<int>& support = hyp_inliers[size_t(best)];
  result.transform = hyps[size_t(best)].transform;
  result.inliers = support;
  if (int(support.size()) < params.min_inliers || support.size() < 3) {
    result.rms = detail::rms_of(result.transform, corrs, support);
    return result;
  }
  try {
    const Pose refit = detail::fit(corrs, support);
    const double rms_refit = detail::rms_of(refit, corrs, support);
    const double rms_min = detail::rms_of(result.transform, corrs, support);
    if (rms_refit <= rms_min) {
      result.transform = refit;
      result.rms = rms_refit;
    } else {
      result.rms = rms_min;
    }
  } catch (const AlignmentError&) {
    result.rms = detail::rms_of(result.transform, corrs, support);
  }
  if (!result.top_hypotheses.empty()) result.top_hypotheses.front().transform = result.transform;
  result.success = true;
  return result;
}

inline nlohmann::json to_json(const RansacParams& p) {
  return {{"inlier_threshold", p.inlier_threshold},
          {"max_iterations", p.max_iterations},
          {"min_inliers", p.min_inliers},
          {"keep_hypotheses", p.keep_hypotheses}};
}

inline RansacParams ransac_params_from_json(const nlohmann::json& j) {
  RansacParams p;
  p.inlier_threshold = j.value("inlier_threshold", p.inlier_threshold);
  p.max_iterations = j.value("max_iterations", p.max_iterations);
  p.min_inliers = j.value("min_inliers", p.min_inliers);
  p.keep_hypotheses = j.value("keep_hypotheses", p.keep_hypotheses);
  if (!(p.inlier_threshold > 0.0) || p.max_iterations < 1 || p.min_inliers < 3 ||
      p.keep_hypotheses < 1) {
    throw std::invalid_argument("ransac: invalid parameters");
  }
  return p;
}

}  // namespace vtsm
