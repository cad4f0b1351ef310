#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtsm/geometry.hpp"
#include "vtsm/image.hpp"
#include "vtsm/matcher.hpp"
#include "vtsm/meshmap.hpp"
#include "vtsm/posesolve.hpp"
#include "vtsm/renderer.hpp"

namespace vtsm {

struct VtsmConfig {
  int n_correspondences = 100;
  int n_iterations = 5;
  SearchBounds initial_bounds{0.20, 1.5};
  double gamma = 0.5;
  int template_side = 128;
  double convergence = 1e-3;  // meters
  double reuse_fraction = 0.5;
  int stall_limit = 3;
  int reseed_limit = 10;
  bool distribute = false;
  SearchBounds reseed_bounds{0.50, 1.5};
  int attempt_budget_factor = 50;  // attempts per iteration = factor * N_c
  double normal_radius = 1.0;      // meters, neighbourhood for the planar-search normal
  double d_min = 0.5;
  std::uint64_t seed = 0;
  MatchParams match;
  RansacParams ransac;
  ValidityParams validity;

  void validate() const {
    if (n_correspondences < 3) throw std::invalid_argument("vtsm: N_c must be >= 3");
    if (n_iterations < 1) throw std::invalid_argument("vtsm: N_iter must be >= 1");
    if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("vtsm: gamma must lie in [0,1]");
    if (reuse_fraction < 0.0 || reuse_fraction >= 1.0) {
      throw std::invalid_argument("vtsm: reuse fraction must lie in [0,1)");
    }
    if (template_side < 8 || template_side % 2 != 0) {
      throw std::invalid_argument("vtsm: template side must be even and >= 8");
    }
    if (!(convergence > 0.0) || !(normal_radius > 0.0) || !(d_min > 0.0)) {
      throw std::invalid_argument("vtsm: thresholds must be positive");
    }
    if (stall_limit < 0 || reseed_limit < 0 || attempt_budget_factor < 1) {
      throw std::invalid_argument("vtsm: limits must be non-negative");
    }
  }

  int attempt_budget() const { return attempt_budget_factor * n_correspondences; }
};

inline nlohmann::json to_json(const VtsmConfig& c) {
  return {{"n_correspondences", c.n_correspondences},
          {"n_iterations", c.n_iterations},
          {"initial_bounds", to_json(c.initial_bounds)},
          {"gamma", c.gamma},
          {"template_side", c.template_side},
          {"convergence", c.convergence},
          {"reuse_fraction", c.reuse_fraction},
          {"stall_limit", c.stall_limit},
          {"reseed_limit", c.reseed_limit},
          {"distribute", c.distribute},
          {"reseed_bounds", to_json(c.reseed_bounds)},
          {"attempt_budget_factor", c.attempt_budget_factor},
          {"normal_radius", c.normal_radius},
          {"d_min", c.d_min},
          {"seed", c.seed},
          {"match", to_json(c.match)},
          {"ransac", to_json(c.ransac)},
          {"validity",
           {{"depth_tolerance", c.validity.depth_tolerance},
            {"edge_threshold", c.validity.edge_threshold},
            {"dilation", c.validity.dilation}}}};
}

inline SearchBounds bounds_from_json(const nlohmann::json& j) {
  return SearchBounds(j.at("t").get<double>(), j.at("r_deg").get<double>());
}

inline VtsmConfig vtsm_config_from_json(const nlohmann::json& j) {
  VtsmConfig c;
  c.n_correspondences = j.value("n_correspondences", c.n_correspondences);
  c.n_iterations = j.value("n_iterations", c.n_iterations);
  if (j.contains("initial_bounds")) c.initial_bounds = bounds_from_json(j.at("initial_bounds"));
  c.gamma = j.value("gamma", c.gamma);
  c.template_side = j.value("template_side", c.template_side);
  c.convergence = j.value("convergence", c.convergence);
  c.reuse_fraction = j.value("reuse_fraction", c.reuse_fraction);
  c.stall_limit = j.value("stall_limit", c.stall_limit);
  c.reseed_limit = j.value("reseed_limit", c.reseed_limit);
  c.distribute = j.value("distribute", c.distribute);
  if (j.contains("reseed_bounds")) c.reseed_bounds = bounds_from_json(j.at("reseed_bounds"));
  c.attempt_budget_factor = j.value("attempt_budget_factor", c.attempt_budget_factor);
  c.normal_radius = j.value("normal_radius", c.normal_radius);
  c.d_min = j.value("d_min", c.d_min);
  c.seed = j.value("seed", c.seed);
  if (j.contains("match")) c.match = match_params_from_json(j.at("match"));
  if (j.contains("ransac")) c.ransac = ransac_params_from_json(j.at("ransac"));
  if (j.contains("validity")) {
    const auto& v = j.at("validity");
    c.validity.depth_tolerance = v.value("depth_tolerance", c.validity.depth_tolerance);
    c.validity.edge_threshold = v.value("edge_threshold", c.validity.edge_threshold);
    c.validity.dilation = v.value("dilation", c.validity.dilation);
  }
  c.validate();
  return c;
}

/// Left and right query images of the rig whose pose is being estimated.
struct StereoQuery {
  GrayImage left;
  GrayImage right;
};

// Strategies -------------------------------------------------------------------

/// Geometric shrink of the viewpoint randomization.
inline SearchBounds anneal(const SearchBounds& bounds, double gamma) {
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("anneal: gamma must lie in [0,1]");
  return SearchBounds(gamma * bounds.t_tilde, gamma * bounds.r_tilde);
}

struct PoseCandidate {
  Pose pose;
  int inliers = 0;
};

/// Picks a candidate with probability proportional to its inlier count.
inline Pose distribute_pick(const std::vector<PoseCandidate>& candidates, Rng& rng) {
  if (candidates.empty()) throw std::invalid_argument("distribute_pick: no candidates");
  std::vector<double> weights;
  for (const auto& c : candidates) {
    if (c.inliers <= 0) throw std::invalid_argument("distribute_pick: inlier counts must be > 0");
    weights.push_back(double(c.inliers));
  }
  if (candidates.size() == 1) return candidates.front().pose;
  std::discrete_distribution<size_t> pick(weights.begin(), weights.end());
  return candidates[pick(rng)].pose;
}

/// Uniform subset of the previous inliers, floor(fraction * N_c) of them (or all
/// if fewer), marked as reused.
inline std::vector<Correspondence> reuse_carryover(const std::vector<Correspondence>& inliers,
                                                   double fraction, int n_correspondences,
                                                   Rng& rng) {
  if (fraction < 0.0 || fraction >= 1.0) {
    throw std::invalid_argument("reuse_carryover: fraction must lie in [0,1)");
  }
  const size_t k = size_t(std::floor(fraction * n_correspondences));
  std::vector<Correspondence> out;
  if (k == 0) return out;
  if (inliers.size() <= k) {
    out = inliers;
  } else {
    std::sample(inliers.begin(), inliers.end(), std::back_inserter(out), k, rng);
  }
  for (auto& c : out) c.reused = true;
  return out;
}

/// Search state carried between iterations; Stall and Reseed act on it.
struct SearchState {
  Pose estimate;
  SearchBounds bounds;
  int stalls = 0;
  int reseeds = 0;
  int successes = 0;
};

class LimitExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Keeps pose and bounds, spends one unit of the consecutive stall budget.
inline SearchState stall(SearchState s, int limit) {
  if (s.stalls >= limit) throw LimitExceeded("stall-limit-exceeded");
  ++s.stalls;
  return s;
}

/// Accepts an iteration: new estimate, annealed bounds, failure counters cleared.
inline SearchState advance(SearchState s, const Pose& estimate, double gamma) {
  s.estimate = estimate;
  s.bounds = anneal(s.bounds, gamma);
  s.stalls = 0;
  s.reseeds = 0;
  ++s.successes;
  return s;
}

/// Replaces the estimate by anchor * (planar perturbation within `reseed_bounds`).
inline SearchState reseed(SearchState s, const Pose& anchor, const SearchBounds& reseed_bounds,
                          const Vec3& normal_world, int limit, Rng& rng) {
  if (s.reseeds >= limit) throw LimitExceeded("reseed-limit-exceeded");
  ++s.reseeds;
  const Vec3 n_c = anchor.rotation().transpose() * normal_world;
  const Pose d = sample_perturbation(reseed_bounds, n_c, true, rng, "C", "C'");
  s.estimate = compose(anchor, d).relabeled(anchor.from(), anchor.to());
  return s;
}

/// Area-weighted mean normal of the mask triangles whose centroids lie within
/// `radius` (horizontally) of `xy`; falls back to the nearest mask triangle.
inline Vec3 local_surface_normal(const TexturedMesh& mesh, const SamplingMask& mask, const Vec2& xy,
                                 double radius) {
  Vec3 sum = Vec3::Zero();
  double best_d2 = kNoDepth;
  Vec3 nearest = Vec3::UnitZ();
  for (int t : mask.triangles()) {
    const auto& f = mesh.triangles[size_t(t)];
    const Vec3 c = (mesh.vertices[size_t(f[0])] + mesh.vertices[size_t(f[1])] +
                    mesh.vertices[size_t(f[2])]) / 3.0;
    const double d2 = (c.head<2>() - xy).squaredNorm();
    const Vec3 n2a = (mesh.vertices[size_t(f[1])] - mesh.vertices[size_t(f[0])])
                         .cross(mesh.vertices[size_t(f[2])] - mesh.vertices[size_t(f[0])]);
    if (d2 <= radius * radius) sum += n2a;
    if (d2 < best_d2) {
      best_d2 = d2;
      nearest = n2a;
    }
  }
  Vec3 n = sum.norm() > 0.0 ? sum : nearest;
  if (n.norm() == 0.0) return Vec3::UnitZ();
  n.normalize();
  if (n.z() < 0.0) n = -n;
  return n;
}

// Outcome ------------------------------------------------------------------------

struct CorrespondenceAudit {
  Correspondence corr;
  double uL = 0.0, vL = 0.0, uR = 0.0, vR = 0.0;
  double score_left = 0.0, score_right = 0.0;
  std::string modality;
  Vec3 perturbation_translation = Vec3::Zero();  // in the anchor camera frame
  double perturbation_rotation_deg = 0.0;
  Vec3 normal = Vec3::UnitZ();  // planar-search normal in the anchor camera frame
};

struct IterationRecord {
  int index = 0;
  SearchBounds bounds;
  bool planar = false;
  Pose anchor;
  Pose estimate;
  int correspondences = 0;
  int reused = 0;
  int inliers = 0;
  double rms = 0.0;
  PoseError delta;
  int attempts = 0;
  std::vector<CorrespondenceAudit> audit;
};

struct SearchEvent {
  int attempt_round = 0;
  std::string kind;   // stall | reseed
  std::string cause;  // attempt-budget-exceeded | alignment-failed | no-visible-points
};

struct LocalizeOutcome {
  bool success = false;
  std::string failure;  // empty on success
  bool converged = false;
  Pose estimate;
  std::vector<IterationRecord> trace;
  std::vector<SearchEvent> events;
  long total_attempts = 0;
  double seconds = 0.0;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();
};

inline nlohmann::json to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline nlohmann::json to_json(const LocalizeOutcome& o, bool include_timing = false,
                              bool include_audit = true) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& it : o.trace) {
    nlohmann::json rec = {{"index", it.index},
                          {"bounds", to_json(it.bounds)},
                          {"planar", it.planar},
                          {"anchor", to_json(it.anchor)},
                          {"estimate", to_json(it.estimate)},
                          {"correspondences", it.correspondences},
                          {"reused", it.reused},
                          {"inliers", it.inliers},
                          {"rms", it.rms},
                          {"delta_translation", it.delta.translation},
                          {"delta_rotation_deg", it.delta.rotation},
                          {"attempts", it.attempts}};
    if (include_audit) {
      nlohmann::json audit = nlohmann::json::array();
      for (const auto& a : it.audit) {
        audit.push_back({{"p_world", to_json(a.corr.p_world)},
                         {"p_camera", to_json(a.corr.p_camera)},
                         {"reused", a.corr.reused},
                         {"uL", a.uL},
                         {"vL", a.vL},
                         {"uR", a.uR},
                         {"vR", a.vR},
                         {"score_left", a.score_left},
                         {"score_right", a.score_right},
                         {"modality", a.modality},
                         {"perturbation_translation", to_json(a.perturbation_translation)},
                         {"perturbation_rotation_deg", a.perturbation_rotation_deg},
                         {"normal", to_json(a.normal)}});
      }
      rec["audit"] = audit;
    }
    trace.push_back(rec);
  }
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : o.events) {
    events.push_back({{"round", e.attempt_round}, {"kind", e.kind}, {"cause", e.cause}});
  }
  nlohmann::json j = {{"status", o.success ? "success" : "failure"},
                      {"failure", o.failure},
                      {"converged", o.converged},
                      {"estimate", to_json(o.estimate)},
                      {"trace", trace},
                      {"events", events},
                      {"total_attempts", o.total_attempts},
                      {"seed", o.seed}};
  if (!o.extra.empty()) j["extra"] = o.extra;
  if (include_timing) j["seconds"] = o.seconds;
  return j;
}

// The loop ---------------------------------------------------------------------

namespace detail {

struct Collection {
  std::vector<Correspondence> corrs;
  std::vector<CorrespondenceAudit> audit;
  int attempts = 0;
  bool no_visible_points = false;
};

/// Inner loop of one iteration: randomize viewpoints, synthesize templates and
/// match until `target` correspondences exist or `budget` attempts are spent.
inline Collection collect(const StereoQuery& query, const TexturedMesh& mesh,
                          const SamplingMask& mask, const StereoRig& rig, const Pose& estimate,
                          const std::vector<PoseCandidate>* candidates, const SearchBounds& bounds,
                          bool planar, const Vec3& normal_world,
                          std::vector<Correspondence> carry, int target, int budget,
                          const VtsmConfig& cfg, Rng& rng) {
  Collection out;
  for (const auto& c : carry) {
    CorrespondenceAudit a;
    a.corr = c;
    a.modality = "reused";
    out.audit.push_back(a);
  }
  out.corrs = std::move(carry);
  const int side = cfg.template_side;
  int consecutive_no_visible = 0;
  while (int(out.corrs.size()) < target && out.attempts < budget) {
    ++out.attempts;
    const Pose anchor = candidates && !candidates->empty() ? distribute_pick(*candidates, rng)
                                                           : estimate;
    const Pose center = anchor.relabeled("W", "C");
    const Vec3 n_c = center.rotation().transpose() * normal_world;
    const Pose perturbation = sample_perturbation(bounds, n_c, planar, rng, "C", "V");
    const Pose viewpoint = compose(center, perturbation);
    MapPoint point;
    try {
      point = sample_visible_point(mesh, mask, viewpoint, rig, side, rng);
      consecutive_no_visible = 0;
    } catch (const NoVisiblePoints&) {
      if (++consecutive_no_visible >= 10) {
        out.no_visible_points = true;
        return out;
      }
      continue;
    }
    const auto [left, right] =
        synthesize_templates(mesh, mask, viewpoint, rig, point, side, cfg.validity);
    std::optional<StereoMatch> match;
    try {
      match = match_stereo(left, right, query.left, query.right, bounds, center, point, rig,
                           cfg.match);
    } catch (const SearchWindowError&) {
      continue;
    }
    if (!match) continue;
    Vec3 p_cam;
    try {
      p_cam = stereo_triangulate(match->left.location.u, match->left.location.v,
                                 match->right.location.u, match->right.location.v, rig, cfg.d_min);
    } catch (const TriangulationError&) {
      continue;
    }
    Correspondence c{point.position, p_cam, std::min(match->left.score, match->right.score), false};
    CorrespondenceAudit a;
    a.corr = c;
    a.uL = match->left.location.u;
    a.vL = match->left.location.v;
    a.uR = match->right.location.u;
    a.vR = match->right.location.v;
    a.score_left = match->left.score;
    a.score_right = match->right.score;
    a.modality = to_string(match->left.modality);
    a.perturbation_translation = perturbation.translation();
    a.perturbation_rotation_deg = rotation_angle(perturbation.rotation()) * kRadToDeg;
    a.normal = n_c;
    out.corrs.push_back(c);
    out.audit.push_back(std::move(a));
  }
  return out;
}

inline std::vector<PoseCandidate> candidates_from(const AlignmentResult& r) {
  std::vector<PoseCandidate> out;
  for (const auto& h : r.top_hypotheses) out.push_back({h.transform, h.inliers});
  return out;
}

}  // namespace detail

/// Iterative pose search: each iteration collects N_c template correspondences
/// around randomized virtual viewpoints, then updates the estimate with a
/// RANSAC-Umeyama alignment. `initial_guess` and the result are T_{W->C} of the
/// query's left camera.
inline LocalizeOutcome localize(const StereoQuery& query, const TexturedMesh& mesh,
                                const SamplingMask& mask, const StereoRig& rig,
                                const Pose& initial_guess, const VtsmConfig& cfg) {
  cfg.validate();
  rig.validate();
  if (query.left.rows != rig.rows || query.left.cols != rig.cols ||
      query.right.rows != rig.rows || query.right.cols != rig.cols) {
    throw std::invalid_argument("localize: query images do not match the rig");
  }
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  LocalizeOutcome out;
  out.seed = cfg.seed;

  SearchState state;
  state.estimate = initial_guess.relabeled("W", "C");
  state.bounds = cfg.initial_bounds;
  const Pose reseed_anchor = state.estimate;
  std::vector<Correspondence> carry;
  std::vector<PoseCandidate> candidates;
  int round = 0;

  auto finish = [&](bool success, std::string failure) {
    out.success = success;
    out.failure = std::move(failure);
    out.estimate = state.estimate;
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  };

  while (state.successes < cfg.n_iterations) {
    ++round;
    const bool planar = state.successes == 0;
    const Vec3 normal = local_surface_normal(mesh, mask, state.estimate.origin().head<2>(),
                                             cfg.normal_radius);
    const bool use_distribute = cfg.distribute && !candidates.empty();
    detail::Collection col = detail::collect(
        query, mesh, mask, rig, state.estimate, use_distribute ? &candidates : nullptr,
        state.bounds, planar, normal, carry, cfg.n_correspondences, cfg.attempt_budget(), cfg, rng);
    out.total_attempts += col.attempts;

    std::string cause;
    AlignmentResult aligned;
    if (col.no_visible_points) {
      cause = "no-visible-points";
    } else if (int(col.corrs.size()) < cfg.n_correspondences) {
      cause = "attempt-budget-exceeded";
    } else {
      aligned = ransac_align(col.corrs, cfg.ransac, rng);
      if (!aligned.success) cause = "alignment-failed";
    }

    if (!cause.empty()) {
      carry.clear();
      try {
        if (state.successes > 0 && cause != "no-visible-points") {
          state = stall(state, cfg.stall_limit);
          out.events.push_back({round, "stall", cause});
        } else {
          state = reseed(state, reseed_anchor, cfg.reseed_bounds, normal, cfg.reseed_limit, rng);
          out.events.push_back({round, "reseed", cause});
        }
      } catch (const LimitExceeded& e) {
        return finish(false, cause == "no-visible-points" ? cause : e.what());
      }
      continue;
    }

    IterationRecord rec;
    rec.index = state.successes;
    rec.bounds = state.bounds;
    rec.planar = planar;
    rec.anchor = state.estimate;
    rec.estimate = aligned.transform;
    rec.correspondences = int(col.corrs.size());
    rec.reused = int(std::count_if(col.corrs.begin(), col.corrs.end(),
                                   [](const Correspondence& c) { return c.reused; }));
    rec.inliers = aligned.inlier_count();
    rec.rms = aligned.rms;
    rec.delta = pose_error(state.estimate, aligned.transform);
    rec.attempts = col.attempts;
    rec.audit = std::move(col.audit);
    out.trace.push_back(std::move(rec));

    std::vector<Correspondence> inliers;
    for (int i : aligned.inliers) {
      Correspondence c = col.corrs[size_t(i)];
      c.reused = false;
      inliers.push_back(c);
    }
    const double moved = out.trace.back().delta.translation;
    state = advance(state, aligned.transform, cfg.gamma);
    candidates = detail::candidates_from(aligned);
    carry = reuse_carryover(inliers, cfg.reuse_fraction, cfg.n_correspondences, rng);
    if (moved < cfg.convergence) {
      out.converged = true;
      break;
    }
  }
  return finish(true, "");
}

/// Scores `n_seeds` planar pose seeds within `wide_bound` of the guess by the
/// inlier count of one iteration each, then localizes from the best one.
/// `seed_attempts` caps the template attempts spent on each seed.
inline LocalizeOutcome multi_seed_localize(const StereoQuery& query, const TexturedMesh& mesh,
                                           const SamplingMask& mask, const StereoRig& rig,
                                           const Pose& initial_guess, double wide_bound,
                                           int n_seeds, const VtsmConfig& cfg,
                                           int seed_attempts = -1) {
  cfg.validate();
  if (!(wide_bound >= cfg.initial_bounds.t_tilde)) {
    throw std::invalid_argument("multi_seed_localize: wide_bound must be >= the initial bound");
  }
  if (n_seeds < 1) throw std::invalid_argument("multi_seed_localize: need at least one seed");
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  const Pose guess = initial_guess.relabeled("W", "C");
  const Vec3 normal =
      local_surface_normal(mesh, mask, guess.origin().head<2>(), cfg.normal_radius);
  const Vec3 n_c = guess.rotation().transpose() * normal;
  const int budget = seed_attempts > 0 ? seed_attempts : cfg.attempt_budget();

  long attempts = 0;
  int best = -1;
  int best_inliers = -1;
  Pose best_start = guess;
  nlohmann::json seeds = nlohmann::json::array();
  for (int i = 0; i < n_seeds; ++i) {
    const Pose d = sample_perturbation(SearchBounds(wide_bound, cfg.initial_bounds.r_tilde), n_c,
                                       true, rng, "C", "C'");
    const Pose seed_pose = compose(guess, d).relabeled("W", "C");
    const detail::Collection col =
        detail::collect(query, mesh, mask, rig, seed_pose, nullptr, cfg.initial_bounds, true,
                        normal, {}, cfg.n_correspondences, budget, cfg, rng);
    attempts += col.attempts;
    int inliers = 0;
    Pose updated = seed_pose;
    if (col.corrs.size() >= 3) {
      const AlignmentResult r = ransac_align(col.corrs, cfg.ransac, rng);
      inliers = r.inlier_count();
      if (r.success) updated = r.transform;
    }
    seeds.push_back({{"offset", d.translation().norm()},
                     {"correspondences", col.corrs.size()},
                     {"inliers", inliers}});
    if (inliers > best_inliers) {
      best_inliers = inliers;
      best = i;
      best_start = updated;
    }
  }

  LocalizeOutcome out;
  if (best_inliers < 3) {
    out.failure = "all-seeds-failed";
    out.estimate = guess;
    out.seed = cfg.seed;
  } else {
    VtsmConfig inner = cfg;
    inner.seed = rng();
    out = localize(query, mesh, mask, rig, best_start, inner);
    out.seed = cfg.seed;
  }
  out.total_attempts += attempts;
  out.extra["seeds"] = seeds;
  out.extra["best_seed"] = best;
  out.extra["best_seed_inliers"] = best_inliers;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace vtsm
