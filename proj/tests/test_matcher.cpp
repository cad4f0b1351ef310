#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "vtsm/matcher.hpp"

using namespace vtsm;

namespace {

GrayImage smooth_noise(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GrayImage raw(rows, cols, 0.0), out(rows, cols, 0.0);
  for (auto& x : raw.data) x = u(rng);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double s = 0.0;
      int n = 0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= rows || cc >= cols) continue;
          s += raw(rr, cc);
          ++n;
        }
      out(r, c) = quantize8(s / n);
    }
  return out;
}

Patch cut_patch(const GrayImage& img, int r0, int c0, int side) {
  Patch p;
  p.side_length = side;
  p.row0 = r0;
  p.col0 = c0;
  p.center = {double(r0 + side / 2), double(c0 + side / 2), true};
  p.intensity = img.crop(r0, c0, side, side);
  p.depth = DepthImage(side, side, 1.0);
  p.valid = Image<std::uint8_t>(side, side, 1);
  return p;
}

}  // namespace

TEST(NccMatch, SelfMatchIsExact) {
  const GrayImage q = smooth_noise(200, 240, 1);
  const Patch p = cut_patch(q, 57, 91, 64);
  const MatchResult m = ncc_match(p, q, {20, 40, 150, 170}, {64, Filter::Gray});
  EXPECT_EQ(m.location.u, p.center.u);
  EXPECT_EQ(m.location.v, p.center.v);
  EXPECT_EQ(m.score, 1.0);
}

TEST(NccMatch, AffineIntensityInvariance) {
  const GrayImage q = smooth_noise(200, 240, 2);
  const Patch p = cut_patch(q, 70, 60, 64);
  GrayImage q2 = q;
  for (auto& x : q2.data) x = 0.5 * x + 0.2;
  const MatchResult a = ncc_match(p, q, {30, 20, 150, 170}, {64, Filter::Gray});
  const MatchResult b = ncc_match(p, q2, {30, 20, 150, 170}, {64, Filter::Gray});
  EXPECT_EQ(a.location.u, b.location.u);
  EXPECT_EQ(a.location.v, b.location.v);
  EXPECT_NEAR(b.score, 1.0, 1e-12);
}

TEST(NccMatch, HalfSizeModalityUsesCenteredSubTemplate) {
  const GrayImage q = smooth_noise(200, 240, 3);
  const Patch p = cut_patch(q, 70, 60, 64);
  const MatchResult m = ncc_match(p, q, {30, 20, 150, 170}, {32, Filter::Gray});
  EXPECT_EQ(m.location.u, p.center.u);
  EXPECT_EQ(m.location.v, p.center.v);
  EXPECT_EQ(m.row0, 70 + 16);
}

TEST(NccMatch, PartialValidityMatchesBruteForceOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    std::uniform_int_distribution<int> size_pick(3, 6);
    const int side = 8 * size_pick(rng);
    const GrayImage q = smooth_noise(side + 40, side + 50, 100 + trial);
    std::uniform_int_distribution<int> rp(0, 40), cp(0, 50);
    const int r0 = rp(rng), c0 = cp(rng);
    Patch p = cut_patch(q, r0, c0, side);
    // Random 40 % validity; invalid pixels get unrelated content.
    std::bernoulli_distribution keep(0.4);
    std::uniform_real_distribution<double> junk(0.0, 1.0);
    for (size_t i = 0; i < p.valid.data.size(); ++i) {
      p.valid.data[i] = keep(rng) ? 1 : 0;
      if (!p.valid.data[i]) p.intensity.data[i] = junk(rng);
    }
    const MatchModality mod{side, Filter::Gray};
    const PreparedTemplate t = prepare_template(p.intensity, p.valid, mod, 0.3);
    const auto [a, b, s] = ncc_search(t, q);
    const auto [oa, ob, os] = oracle::brute_force_ncc(t.values, t.valid, q);
    EXPECT_EQ(a, oa);
    EXPECT_EQ(b, ob);
    EXPECT_NEAR(s, os, 1e-9);
    EXPECT_EQ(a, r0);
    EXPECT_EQ(b, c0);
  }
}

TEST(NccMatch, FilteredModalitiesMatchOracle) {
  for (Filter f : {Filter::Sobel, Filter::Laplacian}) {
    const GrayImage q = smooth_noise(120, 130, 7);
    const Patch p = cut_patch(q, 30, 41, 48);
    const MatchModality mod{48, f};
    const PreparedTemplate t = prepare_template(p.intensity, p.valid, mod, 0.3);
    const GrayImage region = filter_region(q, {0, 0, q.rows, q.cols}, f);
    const auto [a, b, s] = ncc_search(t, region);
    const auto [oa, ob, os] = oracle::brute_force_ncc(t.values, t.valid, region);
    EXPECT_EQ(a, oa);
    EXPECT_EQ(b, ob);
    EXPECT_NEAR(s, os, 1e-9);
    const MatchResult m = ncc_match(p, q, {0, 0, q.rows, q.cols}, mod);
    EXPECT_EQ(m.location.u, p.center.u) << to_string(f);
    EXPECT_EQ(m.location.v, p.center.v) << to_string(f);
  }
}

TEST(NccMatch, InsufficientTemplateAndBadWindow) {
  const GrayImage q = smooth_noise(100, 100, 8);
  Patch p = cut_patch(q, 10, 10, 32);
  std::fill(p.valid.data.begin(), p.valid.data.end(), 0);
  p.valid(3, 3) = 1;
  EXPECT_THROW(ncc_match(p, q, {0, 0, 100, 100}, {32, Filter::Gray}), InsufficientTemplate);
  const Patch ok = cut_patch(q, 10, 10, 32);
  EXPECT_THROW(ncc_match(ok, q, {0, 0, 20, 100}, {32, Filter::Gray}), SearchWindowError);
  EXPECT_THROW(ncc_match(ok, q, {90, 0, 20, 100}, {32, Filter::Gray}), SearchWindowError);
  const Patch flat{32, 0, 0, {16, 16, true}, GrayImage(32, 32, 0.5), DepthImage(32, 32, 1.0),
                   Image<std::uint8_t>(32, 32, 1)};
  EXPECT_THROW(ncc_match(flat, q, {0, 0, 100, 100}, {32, Filter::Gray}), InsufficientTemplate);
}

TEST(SearchWindow, ZeroBoundsIsFootprintPlusMargin) {
  const StereoRig rig;
  const Pose cam = look_at(Vec3(2.5, 0, 1.8), Vec3::Zero());
  const MapPoint pt{Vec3(0.1, 0.2, 0.0), -1, Vec3::UnitZ()};
  const PixelRect w = compute_search_window(SearchBounds(0, 0), cam, pt, rig, Side::Left, 128, 8);
  EXPECT_EQ(w.rows, 128 + 16);
  EXPECT_EQ(w.cols, 128 + 16);
  const PixelCoord px = project(cam.apply_inverse(pt.position), rig, Side::Left);
  EXPECT_EQ(w.row0, int(std::lround(px.u)) - 64 - 8);
  EXPECT_EQ(w.col0, int(std::lround(px.v)) - 64 - 8);
}

TEST(SearchWindow, FullResolutionCameraIsAboutEightHundredPixels) {
  StereoRig rig;
  rig.rows = 3648;
  rig.cols = 5472;
  rig.cu = 1823.5;
  rig.cv = 2735.5;
  rig.focal = 4000.0;
  const Pose cam = look_at(Vec3(3.0, 0, 2.65), Vec3::Zero());
  const MapPoint pt{Vec3::Zero(), -1, Vec3::UnitZ()};
  const PixelRect w = compute_search_window(SearchBounds(0.20, 1.5), cam, pt, rig, Side::Left, 128, 8);
  EXPECT_GT(w.rows, 500);
  EXPECT_LT(w.rows, 1200);
  EXPECT_GT(w.cols, 500);
  EXPECT_LT(w.cols, 1200);
}

TEST(SearchWindow, NestedForNestedBounds) {
  const StereoRig rig;
  const Pose cam = look_at(Vec3(2.5, 0, 1.8), Vec3::Zero());
  const MapPoint pt{Vec3(0.1, 0.2, 0.0), -1, Vec3::UnitZ()};
  PixelRect prev = compute_search_window(SearchBounds(0, 0), cam, pt, rig, Side::Left, 128);
  for (double t : {0.02, 0.05, 0.1, 0.2, 0.4}) {
    const PixelRect w = compute_search_window(SearchBounds(t, 1.5 * t / 0.2), cam, pt, rig, Side::Left, 128);
    EXPECT_LE(w.row0, prev.row0);
    EXPECT_LE(w.col0, prev.col0);
    EXPECT_GE(w.row0 + w.rows, prev.row0 + prev.rows);
    EXPECT_GE(w.col0 + w.cols, prev.col0 + prev.cols);
    prev = w;
  }
}

class StereoMatchTest : public ::testing::Test {
 protected:
  void SetUp() override {
    mesh = fixtures::quads({fixtures::ground(3.0)}, fixtures::noise_texture(512, 11));
    cam = look_at(Vec3(2.0, 0.3, 1.6), Vec3::Zero());
    left = render_frame(mesh, cam, rig, Side::Left).intensity;
    right = render_frame(mesh, cam, rig, Side::Right).intensity;
    point = {Vec3(0.05, -0.1, 0.0), -1, Vec3::UnitZ()};
    std::tie(lt, rt) = synthesize_templates(mesh, SamplingMask::full(mesh), cam, rig, point, 128);
  }
  StereoRig rig;
  TexturedMesh mesh;
  Pose cam;
  GrayImage left, right;
  MapPoint point;
  Patch lt, rt;
};

TEST_F(StereoMatchTest, SelfConsistentQueryAcceptedAtFirstModality) {
  const auto m = match_stereo(lt, rt, left, right, SearchBounds(0.1, 1.0), cam, point, rig, MatchParams{});
  ASSERT_TRUE(m.has_value());
  EXPECT_EQ(m->left.modality, (MatchModality{128, Filter::Gray}));
  EXPECT_LE(std::abs(m->left.location.u - m->right.location.u), 0.5);
  EXPECT_NEAR(m->left.score, 1.0, 1e-9);
  EXPECT_GT(m->disparity(), 0.0);
}

TEST_F(StereoMatchTest, VerticallyShiftedRightQueryRejected) {
  const MatchParams params;
  const int shift = int(2 * params.epsilon_u);
  GrayImage shifted(right.rows, right.cols, 0.0);
  for (int r = shift; r < right.rows; ++r)
    for (int c = 0; c < right.cols; ++c) shifted(r, c) = right(r - shift, c);
  const PixelRect lw = compute_search_window(SearchBounds(0.1, 1.0), cam, point, rig, Side::Left, 128);
  PixelRect rw = compute_search_window(SearchBounds(0.1, 1.0), cam, point, rig, Side::Right, 128);
  rw.rows = std::min(rw.rows + shift, rig.rows - rw.row0);
  EXPECT_FALSE(match_stereo(lt, rt, left, shifted, lw, rw, params).has_value());
}

TEST(MatchParamsTest, DefaultEpipolarThreshold) {
  EXPECT_EQ(MatchParams{}.epsilon_u, 8.0);
  const auto mods = default_modalities(128);
  ASSERT_EQ(mods.size(), 4u);
  EXPECT_EQ(mods[1], (MatchModality{64, Filter::Gray}));
  EXPECT_EQ(mods[3], (MatchModality{128, Filter::Laplacian}));
}
