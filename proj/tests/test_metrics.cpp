#include <cmath>

#include <gtest/gtest.h>

#include "pathdiff/metrics.hpp"

using namespace pathdiff;

namespace {

ToyWorldSpec noiseless() {
  ToyWorldSpec s;
  s.noise_sigma = 0.0;
  return s;
}

std::vector<Scene> scenes(const ToyWorldSpec& spec, int n, std::uint64_t seed) {
  std::vector<Scene> out;
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::derive(seed, i);
    out.push_back(gen_scene(spec, rng));
  }
  return out;
}

std::vector<ImageF> images_of(const std::vector<Scene>& s) {
  std::vector<ImageF> out;
  for (const auto& x : s) out.push_back(x.image);
  return out;
}

std::vector<FeatureVector> gaussian_1d(Rng& rng, int n, double mu, double sigma) {
  std::vector<FeatureVector> out;
  for (int i = 0; i < n; ++i) out.push_back({mu + sigma * rng.normal()});
  return out;
}

}  // namespace

TEST(Dice, OneDimensionalExample) {
  const MaskCondition a(1, 4, 2, {1, 1, 0, 0}), b(1, 4, 2, {1, 0, 0, 0});
  const auto r = dice(a, b);
  ASSERT_TRUE(r.per_class[1].has_value());
  EXPECT_NEAR(*r.per_class[1], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(*r.per_class[0], 2.0 * 2 / (2 + 3), 1e-15);
  EXPECT_NEAR(r.cell_macro, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.macro, (2.0 / 3.0 + 0.8) / 2, 1e-15);
}

TEST(Dice, IdentitySymmetryAndDisjoint) {
  const MaskCondition a(2, 3, 3, {0, 1, 1, 2, 2, 0}), b(2, 3, 3, {1, 0, 2, 2, 1, 1});
  EXPECT_EQ(dice(a, a).macro, 1.0);
  EXPECT_EQ(dice(a, b).macro, dice(b, a).macro);
  EXPECT_EQ(dice(a, b).cell_macro, dice(b, a).cell_macro);
  EXPECT_GE(dice(a, b).macro, 0.0);
  EXPECT_LE(dice(a, b).macro, 1.0);
  const MaskCondition c(1, 4, 2, {1, 1, 0, 0}), d(1, 4, 2, {0, 0, 1, 1});
  EXPECT_EQ(*dice(c, d).per_class[1], 0.0);
  EXPECT_EQ(dice(c, d).cell_macro, 0.0);
}

TEST(Dice, EmptyAndNull) {
  const auto bg = MaskCondition::filled(3, 3, 4, 0);
  EXPECT_EQ(dice(bg, bg).cell_macro, 1.0);
  EXPECT_FALSE(dice(bg, bg).per_class[2].has_value());
  EXPECT_THROW(dice(bg, null_mask(3, 3, 4)), ValidationError);
  EXPECT_THROW(dice(bg, MaskCondition::filled(3, 3, 3, 0)), ValidationError);
}

TEST(Segmenter, AllBackgroundImage) {
  const ToyWorldSpec spec = noiseless();
  const auto seg = SegmenterSpec::from_world(spec);
  for (int h = 0; h < spec.n_hues; ++h) {
    ImageF img(spec.image_shape());
    const auto bg = ToyWorldSpec::render_color(0, h);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) img.at(c, y, x) = float(bg[c]);
    EXPECT_EQ(rule_segmenter(img, seg), MaskCondition::filled(spec.height, spec.width, spec.num_classes, 0));
  }
}

TEST(Segmenter, TiesGoToLowerClassAndSpecksAreRemoved) {
  SegmenterSpec seg;
  seg.prototypes = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  seg.min_area = 2;
  ImageF img({3, 3, 3});
  img.at(0, 0, 0) = 0.5f;  // equidistant from classes 0 and 1
  img.at(1, 1, 1) = 1.0f;  // lone class-2 pixel
  img.at(0, 2, 1) = img.at(0, 2, 2) = 1.0f;  // class-1 pair survives
  const auto m = rule_segmenter(img, seg);
  EXPECT_EQ(m.at(0, 0), 0);
  EXPECT_EQ(m.at(1, 1), 0);
  EXPECT_EQ(m.at(2, 1), 1);
  EXPECT_EQ(m.at(2, 2), 1);
  seg.min_area = 1;
  EXPECT_EQ(rule_segmenter(img, seg).at(1, 1), 2);
}

TEST(Segmenter, SilverMasksAreNeverNull) {
  ToyWorldSpec spec;
  const auto seg = SegmenterSpec::from_world(spec);
  for (const auto& m : silver_masks(images_of(scenes(spec, 30, 1)), seg)) {
    EXPECT_FALSE(m.is_null());
    for (auto v : m.labels()) EXPECT_LT(v, spec.num_classes);
  }
}

TEST(Faithfulness, RealImagesReachSegmenterBound) {
  const ToyWorldSpec spec = noiseless();
  const auto seg = SegmenterSpec::from_world(spec);
  const auto s = scenes(spec, 100, 2);
  std::vector<MaskCondition> masks;
  for (const auto& x : s) masks.push_back(x.mask);
  EXPECT_GE(fs1(images_of(s), masks, seg), 0.95);
}

TEST(Faithfulness, ConstantBackgroundScoresZero) {
  const ToyWorldSpec spec = noiseless();
  const auto seg = SegmenterSpec::from_world(spec);
  const auto s = scenes(spec, 20, 3);
  std::vector<MaskCondition> masks;
  std::vector<ImageF> flat;
  for (const auto& x : s) {
    masks.push_back(x.mask);
    ImageF img(spec.image_shape());
    const auto bg = ToyWorldSpec::render_color(0, 0);
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < spec.height * spec.width; ++p) img[c * spec.height * spec.width + p] = float(bg[c]);
    flat.push_back(img);
  }
  EXPECT_EQ(fs1(flat, masks, seg), 0.0);
}

TEST(Faithfulness, Fs2IdentityAndPermutationBaseline) {
  ToyWorldSpec spec;
  const auto seg = SegmenterSpec::from_world(spec);
  const auto real = images_of(scenes(spec, 60, 4));
  EXPECT_EQ(fs2(real, real, seg), 1.0);
  const auto other = images_of(scenes(spec, 60, 5));
  EXPECT_LT(fs2(other, real, seg), 0.5 * fs2(real, real, seg));
}

TEST(Features, LayoutAndNormalisation) {
  ToyWorldSpec spec;
  const FeatureExtractor fx{SegmenterSpec::from_world(spec)};
  EXPECT_EQ(fx.dim(), 24 + 2 * spec.num_classes);
  const auto f = fx(scenes(spec, 1, 6)[0].image);
  ASSERT_EQ(int(f.size()), fx.dim());
  double hist = 0.0, area = 0.0;
  for (int i = 0; i < 24; ++i) hist += f[i];
  for (int k = 0; k < spec.num_classes; ++k) area += f[24 + k];
  EXPECT_NEAR(hist, 3.0, 1e-12);
  EXPECT_NEAR(area, 1.0, 1e-12);
  const auto imgs = images_of(scenes(spec, 9, 7));
  EXPECT_EQ(fx(imgs, 1), fx(imgs, 4));
}

TEST(Frechet, SelfDistanceIsZero) {
  ToyWorldSpec spec;
  const FeatureExtractor fx{SegmenterSpec::from_world(spec)};
  const auto f = fx(images_of(scenes(spec, 200, 8)));
  EXPECT_NEAR(frechet(f, f), 0.0, 1e-9);
  Rng rng(9);
  const auto a = gaussian_1d(rng, 50, 0.0, 1.0);
  EXPECT_NEAR(frechet(a, a), 0.0, 1e-9);
}

TEST(Frechet, OneDimensionalClosedForm) {
  Rng rng(10);
  const auto a = gaussian_1d(rng, 500, 1.0, 2.0), b = gaussian_1d(rng, 400, -0.5, 0.7);
  auto moments = [](const std::vector<FeatureVector>& x) {
    double m = 0.0, v = 0.0;
    for (const auto& r : x) m += r[0] / x.size();
    for (const auto& r : x) v += (r[0] - m) * (r[0] - m) / (x.size() - 1);
    return std::pair{m, std::sqrt(v)};
  };
  const auto [m1, s1] = moments(a);
  const auto [m2, s2] = moments(b);
  const double expect = (m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2);
  EXPECT_NEAR(frechet(a, b), expect, 1e-9);
  EXPECT_NEAR(frechet(b, a), expect, 1e-9);
}

TEST(Frechet, SmallSetsStayNonNegative) {
  Rng rng(11);
  std::vector<FeatureVector> a, b;
  for (int i = 0; i < 3; ++i) {
    a.push_back({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
    b.push_back({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
  }
  EXPECT_GE(frechet(a, b), 0.0);
  EXPECT_THROW(frechet({a[0]}, b), ValidationError);
}

TEST(Kid, MatchesExhaustiveSumOnTinySets) {
  Rng rng(12);
  std::vector<FeatureVector> a, b;
  for (int i = 0; i < 3; ++i) {
    a.push_back({rng.normal(), rng.normal()});
    b.push_back({rng.normal(), rng.normal()});
  }
  auto k = [](const FeatureVector& x, const FeatureVector& y) { return std::pow((x[0] * y[0] + x[1] * y[1]) / 2 + 1, 3); };
  double within_a = 0.0, within_b = 0.0, cross = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      if (i != j) {
        within_a += k(a[i], a[j]);
        within_b += k(b[i], b[j]);
      }
      cross += k(a[i], b[j]);
    }
  const double expect = within_a / 6 + within_b / 6 - 2 * cross / 9;
  EXPECT_NEAR(kid(a, b), expect, 1e-12);
  EXPECT_NEAR(kid(b, a), expect, 1e-12);
  EXPECT_THROW(kid({a[0]}, b), ValidationError);
}

// kid(A, A) = 2 (mean off-diagonal - mean diagonal kernel) / |A|, so the bound needs a few hundred samples.
TEST(Kid, SelfDistanceIsSmall) {
  ToyWorldSpec spec;
  const FeatureExtractor fx{SegmenterSpec::from_world(spec)};
  const auto f = fx(images_of(scenes(spec, 300, 13)));
  EXPECT_LT(std::abs(kid(f, f)), 1e-3);
}

TEST(Alignment, NoiselessRendersClassifyPerfectly) {
  const ToyWorldSpec spec;
  const auto model = AlignmentModel::build(spec, 64, 0);
  const ToyWorldSpec clean = noiseless();
  std::vector<ImageF> imgs;
  std::vector<TextCondition> texts;
  for (int v = 0; v < spec.vocab_size(); ++v)
    for (int i = 0; i < 50; ++i) {
      Rng rng = Rng::derive(1000 + v, i);
      imgs.push_back(gen_scene_for_token(clean, v, rng).image);
      texts.emplace_back(v, spec.vocab_size());
    }
  const auto s = alignment(model, imgs, texts);
  EXPECT_EQ(s.accuracy, 1.0);
  EXPECT_GT(s.mean_score, 0.5);
  EXPECT_LE(s.mean_score, 1.0);
}

TEST(Alignment, OrthogonalFeatureScoresZero) {
  const ToyWorldSpec spec;
  const auto model = AlignmentModel::build(spec, 8, 0);
  Rng rng(14);
  const std::size_t d = model.center.size();
  FeatureVector b(d), r(d), f(d);
  for (std::size_t j = 0; j < d; ++j) {
    b[j] = model.prototypes[2][j] - model.center[j];
    r[j] = rng.normal();
  }
  double rb = 0.0, bb = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    rb += r[j] * b[j];
    bb += b[j] * b[j];
  }
  for (std::size_t j = 0; j < d; ++j) f[j] = model.center[j] + r[j] - rb / bb * b[j];
  EXPECT_NEAR(model.score(f, 2), 0.0, 1e-12);
  EXPECT_NEAR(model.score(model.prototypes[2], 2), 1.0, 1e-12);
}

TEST(Alignment, RejectsNullToken) {
  const ToyWorldSpec spec;
  const auto model = AlignmentModel::build(spec, 4, 0);
  EXPECT_THROW(alignment_score(model, scenes(spec, 1, 15)[0].image, null_text(spec.vocab_size())), ValidationError);
}

TEST(Cosine, BasicValues) {
  EXPECT_NEAR(cosine({1, 0}, {0, 1}), 0.0, 1e-15);
  EXPECT_NEAR(cosine({1, 2}, {2, 4}), 1.0, 1e-15);
  EXPECT_NEAR(cosine({1, 2}, {-1, -2}), -1.0, 1e-15);
  EXPECT_EQ(cosine({0, 0}, {1, 2}), 0.0);
}
