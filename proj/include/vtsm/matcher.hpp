#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include <fftw3.h>

#include "vtsm/geometry.hpp"
#include "vtsm/image.hpp"
#include "vtsm/meshmap.hpp"
#include "vtsm/renderer.hpp"

namespace vtsm {

enum class Filter { Gray, Sobel, Laplacian };

inline const char* to_string(Filter f) {
  switch (f) {
    case Filter::Gray: return "gray";
    case Filter::Sobel: return "sobel";
    case Filter::Laplacian: return "laplacian";
  }
  return "?";
}

inline Filter filter_from_string(const std::string& s) {
  if (s == "gray") return Filter::Gray;
  if (s == "sobel") return Filter::Sobel;
  if (s == "laplacian") return Filter::Laplacian;
  throw std::invalid_argument("unknown filter '" + s + "'");
}

/// Template size (a divisor of the patch side, centered) and prefilter.
struct MatchModality {
  int size = 128;
  Filter filter = Filter::Gray;
  bool operator==(const MatchModality&) const = default;
};

inline std::string to_string(const MatchModality& m) {
  return std::string(to_string(m.filter)) + "-" + std::to_string(m.size);
}

/// Default first-accept order: gray l, gray l/2, sobel l, laplacian l.
inline std::vector<MatchModality> default_modalities(int side) {
  return {{side, Filter::Gray}, {side / 2, Filter::Gray}, {side, Filter::Sobel},
          {side, Filter::Laplacian}};
}

struct MatchResult {
  PixelCoord location;  // template center in query image coordinates
  double score = 0.0;
  MatchModality modality;
  double valid_fraction = 0.0;
  int row0 = 0;  // top-left of the (sub)template at the best offset
  int col0 = 0;
};

struct MatchParams {
  double s_min = 0.5;
  double f_min = 0.3;
  double epsilon_u = 8.0;
  int window_margin = 8;
  std::vector<MatchModality> modalities;  // empty: default_modalities(l)
};

/// Template unusable under a modality (too few valid pixels or no contrast).
class InsufficientTemplate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SearchWindowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filters -------------------------------------------------------------------

namespace detail {

template <typename At>
inline double apply_filter(Filter f, At at) {
  switch (f) {
    case Filter::Gray:
      return at(0, 0);
    case Filter::Sobel: {
      const double gx = (at(-1, 1) + 2.0 * at(0, 1) + at(1, 1)) -
                        (at(-1, -1) + 2.0 * at(0, -1) + at(1, -1));
      const double gy = (at(1, -1) + 2.0 * at(1, 0) + at(1, 1)) -
                        (at(-1, -1) + 2.0 * at(-1, 0) + at(-1, 1));
      return std::sqrt(gx * gx + gy * gy);
    }
    case Filter::Laplacian:
      return 4.0 * at(0, 0) - at(-1, 0) - at(1, 0) - at(0, -1) - at(0, 1);
  }
  return 0.0;
}

}  // namespace detail

/// Filtered values of `img` over `rect`, replicating the image border.
inline GrayImage filter_region(const GrayImage& img, const PixelRect& rect, Filter f) {
  GrayImage out(rect.rows, rect.cols);
  for (int r = 0; r < rect.rows; ++r) {
    for (int c = 0; c < rect.cols; ++c) {
      const int rr = rect.row0 + r, cc = rect.col0 + c;
      out(r, c) = detail::apply_filter(f, [&](int dr, int dc) {
        return img(std::clamp(rr + dr, 0, img.rows - 1), std::clamp(cc + dc, 0, img.cols - 1));
      });
    }
  }
  return out;
}

/// Filters a masked image. A result pixel stays valid only if its whole
/// stencil is valid and inside the image.
inline std::pair<GrayImage, Image<std::uint8_t>> filter_masked(const GrayImage& img,
                                                               const Image<std::uint8_t>& valid,
                                                               Filter f) {
  if (f == Filter::Gray) return {img, valid};
  GrayImage out(img.rows, img.cols, 0.0);
  Image<std::uint8_t> ok(img.rows, img.cols, 0);
  for (int r = 1; r + 1 < img.rows; ++r) {
    for (int c = 1; c + 1 < img.cols; ++c) {
      bool all = true;
      for (int dr = -1; dr <= 1 && all; ++dr)
        for (int dc = -1; dc <= 1 && all; ++dc) all = valid(r + dr, c + dc) != 0;
      if (!all) continue;
      ok(r, c) = 1;
      out(r, c) = detail::apply_filter(f, [&](int dr, int dc) { return img(r + dr, c + dc); });
    }
  }
  return {std::move(out), std::move(ok)};
}

// Template preparation --------------------------------------------------------

/// Template reduced to a modality: zero-mean weights over the valid pixels.
struct PreparedTemplate {
  int size = 0;
  int offset = 0;  // sub-template corner inside the patch
  MatchModality modality;
  GrayImage values;
  Image<std::uint8_t> valid;
  std::size_t valid_count = 0;
  double mean = 0.0;
  double norm2 = 0.0;  // sum of squared zero-mean values
  struct Weight {
    int col;
    double w;
  };
  std::vector<std::vector<Weight>> rows;         // nonzero zero-mean weights per row
  std::vector<std::vector<std::pair<int, int>>> runs;  // valid [begin, end) per row
};

inline PreparedTemplate prepare_template(const GrayImage& intensity,
                                         const Image<std::uint8_t>& validity,
                                         const MatchModality& modality, double f_min) {
  const int side = intensity.rows;
  if (intensity.cols != side || validity.rows != side || validity.cols != side) {
    throw std::invalid_argument("prepare_template: template must be square");
  }
  if (modality.size <= 0 || modality.size > side || side % modality.size != 0) {
    throw std::invalid_argument("prepare_template: modality size must divide the template side");
  }
  auto [filtered, ok] = filter_masked(intensity, validity, modality.filter);
  PreparedTemplate t;
  t.size = modality.size;
  t.offset = (side - modality.size) / 2;
  t.modality = modality;
  t.values = filtered.crop(t.offset, t.offset, t.size, t.size);
  t.valid = ok.crop(t.offset, t.offset, t.size, t.size);
  double sum = 0.0;
  for (size_t i = 0; i < t.valid.data.size(); ++i) {
    if (t.valid.data[i]) {
      ++t.valid_count;
      sum += t.values.data[i];
    }
  }
  const double fraction = double(t.valid_count) / double(t.size * t.size);
  if (t.valid_count < 2 || fraction < f_min) {
    throw InsufficientTemplate("template has too few valid pixels (" +
                               std::to_string(fraction) + ")");
  }
  t.mean = sum / double(t.valid_count);
  t.rows.resize(size_t(t.size));
  t.runs.resize(size_t(t.size));
  for (int r = 0; r < t.size; ++r) {
    int c = 0;
    while (c < t.size) {
      if (!t.valid(r, c)) {
        ++c;
        continue;
      }
      const int begin = c;
      while (c < t.size && t.valid(r, c)) {
        const double w = t.values(r, c) - t.mean;
        t.norm2 += w * w;
        if (w != 0.0) t.rows[size_t(r)].push_back({c, w});
        ++c;
      }
      t.runs[size_t(r)].emplace_back(begin, c);
    }
  }
  if (t.norm2 < 1e-10) throw InsufficientTemplate("template has no contrast");
  return t;
}

namespace detail {

/// Exact two-pass zero-mean NCC of a prepared template placed at (a, b) of `img`.
inline double ncc_exact(const PreparedTemplate& t, const GrayImage& img, int a, int b) {
  double sum = 0.0;
  for (int r = 0; r < t.size; ++r)
    for (int c = 0; c < t.size; ++c)
      if (t.valid(r, c)) sum += img(a + r, b + c);
  const double mi = sum / double(t.valid_count);
  double num = 0.0, vt = 0.0, vi = 0.0;
  for (int r = 0; r < t.size; ++r) {
    for (int c = 0; c < t.size; ++c) {
      if (!t.valid(r, c)) continue;
      const double x = t.values(r, c) - t.mean;
      const double y = img(a + r, b + c) - mi;
      num += x * y;
      vt += x * x;
      vi += y * y;
    }
  }
  if (vi < 1e-10 || vt < 1e-10) return 0.0;
  return std::clamp(num / std::sqrt(vt * vi), -1.0, 1.0);
}

}  // namespace detail

namespace detail {

/// Smallest n >= x whose only prime factors are 2, 3, 5 and 7.
inline int fft_size(int x) {
  for (int n = std::max(1, x);; ++n) {
    int m = n;
    for (int p : {2, 3, 5, 7})
      while (m % p == 0) m /= p;
    if (m == 1) return n;
  }
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

/// Cached real 2-D transforms of one size. FFTW's planner is not thread-safe,
/// so plan creation is serialized; execution on fresh arrays is.
struct FftPlan {
  int rows = 0;
  int cols = 0;
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;

  static const FftPlan& get(int rows, int cols) {
    static std::mutex mutex;
    static std::map<std::pair<int, int>, FftPlan> cache;
    std::lock_guard lock(mutex);
    auto it = cache.find({rows, cols});
    if (it != cache.end()) return it->second;
    const size_t nreal = size_t(rows) * size_t(cols);
    const size_t ncomplex = size_t(rows) * size_t(cols / 2 + 1);
    std::unique_ptr<double, FftwFree> real(fftw_alloc_real(nreal));
    std::unique_ptr<fftw_complex, FftwFree> spec(fftw_alloc_complex(ncomplex));
    FftPlan plan;
    plan.rows = rows;
    plan.cols = cols;
    plan.forward = fftw_plan_dft_r2c_2d(rows, cols, real.get(), spec.get(), FFTW_ESTIMATE);
    plan.backward = fftw_plan_dft_c2r_2d(rows, cols, spec.get(), real.get(), FFTW_ESTIMATE);
    if (!plan.forward || !plan.backward) throw std::runtime_error("FFTW planning failed");
    return cache.emplace(std::pair{rows, cols}, plan).first->second;
  }
};

/// Valid-mode cross-correlation num(a, b) = sum_ij w(i, j) * img(a + i, b + j)
/// for a in [0, img.rows - w.rows], b in [0, img.cols - w.cols].
inline GrayImage cross_correlate(const GrayImage& img, const GrayImage& w) {
  const int n0 = fft_size(img.rows);
  const int n1 = fft_size(img.cols);
  const FftPlan& plan = FftPlan::get(n0, n1);
  const size_t nreal = size_t(n0) * size_t(n1);
  const size_t nspec = size_t(n0) * size_t(n1 / 2 + 1);
  std::unique_ptr<double, FftwFree> real(fftw_alloc_real(nreal));
  std::unique_ptr<fftw_complex, FftwFree> fi(fftw_alloc_complex(nspec));
  std::unique_ptr<fftw_complex, FftwFree> fw(fftw_alloc_complex(nspec));

  std::fill_n(real.get(), nreal, 0.0);
  for (int r = 0; r < img.rows; ++r) std::copy_n(img.row(r), img.cols, real.get() + size_t(r) * size_t(n1));
  fftw_execute_dft_r2c(plan.forward, real.get(), fi.get());
  std::fill_n(real.get(), nreal, 0.0);
  for (int r = 0; r < w.rows; ++r) std::copy_n(w.row(r), w.cols, real.get() + size_t(r) * size_t(n1));
  fftw_execute_dft_r2c(plan.forward, real.get(), fw.get());
  for (size_t k = 0; k < nspec; ++k) {
    const double ar = fi.get()[k][0], ai = fi.get()[k][1];
    const double br = fw.get()[k][0], bi = -fw.get()[k][1];
    fi.get()[k][0] = ar * br - ai * bi;
    fi.get()[k][1] = ar * bi + ai * br;
  }
  fftw_execute_dft_c2r(plan.backward, fi.get(), real.get());
  const int out_rows = img.rows - w.rows + 1;
  const int out_cols = img.cols - w.cols + 1;
  const double scale = 1.0 / double(nreal);
  GrayImage out(out_rows, out_cols);
  for (int r = 0; r < out_rows; ++r) {
    const double* src = real.get() + size_t(r) * size_t(n1);
    for (int c = 0; c < out_cols; ++c) out(r, c) = src[c] * scale;
  }
  return out;
}

}  // namespace detail

/// Exhaustive masked NCC of a prepared template over `region` (already
/// filtered). Returns the best top-left offset inside the region and its score;
/// ties resolve to the smallest (row, col).
inline std::tuple<int, int, double> ncc_search(const PreparedTemplate& t, const GrayImage& region) {
  const int s = t.size;
  const int out_rows = region.rows - s + 1;
  const int out_cols = region.cols - s + 1;
  if (out_rows <= 0 || out_cols <= 0) {
    throw SearchWindowError("search window smaller than the template");
  }
  const double n = double(t.valid_count);

  // Row prefix sums of I and I^2 for the masked window sums.
  const int pc = region.cols + 1;
  std::vector<double> p1(size_t(region.rows) * size_t(pc), 0.0);
  std::vector<double> p2(p1.size(), 0.0);
  for (int r = 0; r < region.rows; ++r) {
    const double* in = region.row(r);
    double* a1 = &p1[size_t(r) * size_t(pc)];
    double* a2 = &p2[size_t(r) * size_t(pc)];
    for (int c = 0; c < region.cols; ++c) {
      a1[c + 1] = a1[c] + in[c];
      a2[c + 1] = a2[c] + in[c] * in[c];
    }
  }

  GrayImage weights(s, s, 0.0);
  for (int r = 0; r < s; ++r)
    for (const auto& [col, w] : t.rows[size_t(r)]) weights(r, col) = w;
  const GrayImage numerator = detail::cross_correlate(region, weights);

  std::vector<double> scores(static_cast<size_t>(out_rows) * size_t(out_cols));
  std::vector<double> s1(static_cast<size_t>(out_cols));
  std::vector<double> s2(static_cast<size_t>(out_cols));
  for (int a = 0; a < out_rows; ++a) {
    std::fill(s1.begin(), s1.end(), 0.0);
    std::fill(s2.begin(), s2.end(), 0.0);
    for (int r = 0; r < s; ++r) {
      const double* q1 = &p1[size_t(a + r) * size_t(pc)];
      const double* q2 = &p2[size_t(a + r) * size_t(pc)];
      double* __restrict d1 = s1.data();
      double* __restrict d2 = s2.data();
      for (const auto& [c0, c1] : t.runs[size_t(r)]) {
        const double* __restrict e1 = q1 + c1;
        const double* __restrict b1 = q1 + c0;
        const double* __restrict e2 = q2 + c1;
        const double* __restrict b2 = q2 + c0;
        for (int b = 0; b < out_cols; ++b) {
          d1[b] += e1[b] - b1[b];
          d2[b] += e2[b] - b2[b];
        }
      }
    }
    double* out = &scores[size_t(a) * size_t(out_cols)];
    for (int b = 0; b < out_cols; ++b) {
      const double var_i = s2[size_t(b)] - s1[size_t(b)] * s1[size_t(b)] / n;
      out[b] = var_i < 1e-10 ? 0.0 : numerator(a, b) / std::sqrt(t.norm2 * var_i);
    }
  }

  // Exact rescoring of every near-maximal offset.
  const double best_fast = *std::max_element(scores.begin(), scores.end());
  int best_a = 0, best_b = 0;
  double best = -2.0;
  for (int a = 0; a < out_rows; ++a) {
    for (int b = 0; b < out_cols; ++b) {
      if (scores[size_t(a) * size_t(out_cols) + size_t(b)] < best_fast - 1e-6) continue;
      const double exact = detail::ncc_exact(t, region, a, b);
      if (exact > best) {
        best = exact;
        best_a = a;
        best_b = b;
      }
    }
  }
  return {best_a, best_b, best};
}

/// Best match of `patch` inside `window` of the query image under one modality.
inline MatchResult ncc_match(const Patch& patch, const GrayImage& query, const PixelRect& window,
                             const MatchModality& modality, double f_min = 0.3) {
  if (!window.inside(query.rows, query.cols)) {
    throw SearchWindowError("search window does not fit in the query image");
  }
  if (window.rows < modality.size || window.cols < modality.size) {
    throw SearchWindowError("search window smaller than the template");
  }
  const PreparedTemplate t = prepare_template(patch.intensity, patch.valid, modality, f_min);
  const GrayImage region = modality.filter == Filter::Gray
                               ? query.crop(window.row0, window.col0, window.rows, window.cols)
                               : filter_region(query, window, modality.filter);
  const auto [a, b, score] = ncc_search(t, region);
  MatchResult m;
  m.score = score;
  m.modality = modality;
  m.valid_fraction = double(t.valid_count) / double(t.size * t.size);
  m.row0 = window.row0 + a;
  m.col0 = window.col0 + b;
  m.location.u = m.row0 - t.offset + (patch.center.u - patch.row0);
  m.location.v = m.col0 - t.offset + (patch.center.v - patch.col0);
  m.location.in_frame = m.location.u >= 0 && m.location.v >= 0 &&
                        m.location.u <= query.rows - 1 && m.location.v <= query.cols - 1;
  return m;
}

/// Pixel rectangle of the query image that can contain the template of
/// `point` when the true camera lies within `bounds` of `anchor` (T_{W->C}).
/// The point is projected from the anchor and from twelve extremal poses
/// (+-t along and +-r about each camera axis).
inline PixelRect compute_search_window(const SearchBounds& bounds, const Pose& anchor,
                                       const MapPoint& point, const StereoRig& rig, Side side,
                                       int template_side, int margin = 8) {
  std::vector<Pose> poses{anchor};
  const Pose base = anchor.relabeled(anchor.from(), "C");
  for (int axis = 0; axis < 3; ++axis) {
    for (double sign : {1.0, -1.0}) {
      const Vec3 e = sign * Vec3::Unit(axis);
      poses.push_back(compose(base, Pose(Mat3::Identity(), bounds.t_tilde * e, "C", "V")));
      poses.push_back(
          compose(base, Pose(axis_angle(e, bounds.r_tilde * kDegToRad), Vec3::Zero(), "C", "V")));
    }
  }
  double umin = kNoDepth, umax = -kNoDepth, vmin = kNoDepth, vmax = -kNoDepth;
  bool any_in_frame = false;
  for (const Pose& p : poses) {
    const Vec3 pc = p.apply_inverse(point.position);
    if (!(pc.z() > rig.near_clip)) continue;
    const PixelCoord px = project(pc, rig, side);
    any_in_frame = any_in_frame || px.in_frame;
    umin = std::min(umin, px.u);
    umax = std::max(umax, px.u);
    vmin = std::min(vmin, px.v);
    vmax = std::max(vmax, px.v);
  }
  if (!any_in_frame) throw SearchWindowError("point leaves the frame under all extremal poses");
  const int half = template_side / 2;
  const int r_lo = std::max(0, int(std::lround(umin)) - half - margin);
  const int c_lo = std::max(0, int(std::lround(vmin)) - half - margin);
  const int r_hi = std::min(rig.rows, int(std::lround(umax)) - half + margin + template_side);
  const int c_hi = std::min(rig.cols, int(std::lround(vmax)) - half + margin + template_side);
  if (r_hi - r_lo < template_side || c_hi - c_lo < template_side) {
    throw SearchWindowError("search window clipped below the template size");
  }
  return {r_lo, c_lo, r_hi - r_lo, c_hi - c_lo};
}

struct StereoMatch {
  MatchResult left;
  MatchResult right;
  double disparity() const { return left.location.v - right.location.v; }
};

/// Matches both templates modality by modality and returns the first pair that
/// passes the score, epipolar and disparity gates. Modalities whose template is
/// unusable are skipped.
inline std::optional<StereoMatch> match_stereo(const Patch& left_template,
                                               const Patch& right_template,
                                               const GrayImage& left_query,
                                               const GrayImage& right_query,
                                               const PixelRect& left_window,
                                               const PixelRect& right_window,
                                               const MatchParams& params) {
  const auto modalities = params.modalities.empty()
                              ? default_modalities(left_template.side_length)
                              : params.modalities;
  for (const MatchModality& m : modalities) {
    try {
      const MatchResult l = ncc_match(left_template, left_query, left_window, m, params.f_min);
      if (l.score < params.s_min) continue;
      const MatchResult r = ncc_match(right_template, right_query, right_window, m, params.f_min);
      if (r.score < params.s_min) continue;
      if (std::abs(l.location.u - r.location.u) > params.epsilon_u) continue;
      if (!(l.location.v - r.location.v > 0.0)) continue;
      return StereoMatch{l, r};
    } catch (const InsufficientTemplate&) {
      continue;
    }
  }
  return std::nullopt;
}

/// Convenience overload deriving both search windows from the pose bounds.
inline std::optional<StereoMatch> match_stereo(const Patch& left_template,
                                               const Patch& right_template,
                                               const GrayImage& left_query,
                                               const GrayImage& right_query,
                                               const SearchBounds& bounds, const Pose& anchor,
                                               const MapPoint& point, const StereoRig& rig,
                                               const MatchParams& params) {
  const int side = left_template.side_length;
  const PixelRect lw =
      compute_search_window(bounds, anchor, point, rig, Side::Left, side, params.window_margin);
  const PixelRect rw =
      compute_search_window(bounds, anchor, point, rig, Side::Right, side, params.window_margin);
  return match_stereo(left_template, right_template, left_query, right_query, lw, rw, params);
}

inline nlohmann::json to_json(const MatchParams& p) {
  nlohmann::json mods = nlohmann::json::array();
  for (const auto& m : p.modalities) mods.push_back({{"size", m.size}, {"filter", to_string(m.filter)}});
  return {{"s_min", p.s_min},
          {"f_min", p.f_min},
          {"epsilon_u", p.epsilon_u},
          {"window_margin", p.window_margin},
          {"modalities", mods}};
}

inline MatchParams match_params_from_json(const nlohmann::json& j) {
  MatchParams p;
  p.s_min = j.value("s_min", p.s_min);
  p.f_min = j.value("f_min", p.f_min);
  p.epsilon_u = j.value("epsilon_u", p.epsilon_u);
  p.window_margin = j.value("window_margin", p.window_margin);
  if (j.contains("modalities")) {
    for (const auto& m : j.at("modalities")) {
      p.modalities.push_back({m.at("size").get<int>(), filter_from_string(m.at("filter"))});
    }
  }
  if (p.s_min < -1.0 || p.s_min > 1.0) throw std::invalid_argument("matcher: s_min outside [-1,1]");
  if (p.f_min <= 0.0 || p.f_min > 1.0) throw std::invalid_argument("matcher: f_min outside (0,1]");
  if (!(p.epsilon_u > 0.0)) throw std::invalid_argument("matcher: epsilon_u must be > 0");
  return p;
}

}  // namespace vtsm
