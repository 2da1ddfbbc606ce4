#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "pathdiff/dataset.hpp"
#include "pathdiff/metrics.hpp"

using namespace pathdiff;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("pathdiff_test_dataset_" + name);
  fs::remove_all(dir);
  return dir;
}

ToyWorldSpec noiseless() {
  ToyWorldSpec s;
  s.noise_sigma = 0.0;
  return s;
}

}  // namespace

TEST(ToyWorld, EmptySceneIsPureBackground) {
  ToyWorldSpec spec = noiseless();
  spec.blob_count_min = spec.blob_count_max = 0;
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    const Scene s = gen_scene(spec, rng);
    const auto bg = ToyWorldSpec::render_color(0, spec.hue_of(s.text.token()));
    EXPECT_EQ(s.mask, MaskCondition::filled(spec.height, spec.width, spec.num_classes, 0));
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) EXPECT_EQ(s.image.at(c, y, x), float(bg[c]));
  }
}

TEST(ToyWorld, FixedSeedIsBitIdentical) {
  const ToyWorldSpec spec;
  Rng a(77), b(77);
  for (int i = 0; i < 5; ++i) {
    const Scene x = gen_scene(spec, a), y = gen_scene(spec, b);
    EXPECT_EQ(x.image, y.image);
    EXPECT_EQ(x.mask, y.mask);
    EXPECT_EQ(x.text, y.text);
  }
}

TEST(ToyWorld, ImagesStayInRange) {
  ToyWorldSpec spec;
  spec.noise_sigma = 0.5;
  Rng rng(2);
  for (int i = 0; i < 20; ++i)
    for (float v : gen_scene(spec, rng).image.values()) {
      EXPECT_GE(v, -1.0f);
      EXPECT_LE(v, 1.0f);
    }
}

TEST(ToyWorld, SegmenterRecoversNoiselessMasks) {
  const ToyWorldSpec spec = noiseless();
  const auto seg = SegmenterSpec::from_world(spec);
  Rng rng(3);
  double worst = 1.0;
  for (int i = 0; i < 200; ++i) {
    const Scene s = gen_scene(spec, rng);
    // brute-force per-pixel agreement alongside the dice score
    const auto m = rule_segmenter(s.image, seg);
    int agree = 0;
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) agree += m.at(y, x) == s.mask.at(y, x);
    EXPECT_GE(agree, spec.height * spec.width * 95 / 100);
    worst = std::min(worst, dice(m, s.mask).cell_macro);
  }
  EXPECT_GE(worst, 0.95);
}

TEST(ToyWorld, DensityScalesBlobCount) {
  ToyWorldSpec spec = noiseless();
  Rng rng(4);
  auto foreground = [&](int token) {
    double total = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Scene s = gen_scene_for_token(spec, token, rng);
      for (auto v : s.mask.labels()) total += v != 0;
    }
    return total / 100;
  };
  EXPECT_GT(foreground(1), 1.5 * foreground(0));
}

TEST(Unpaired, HalvesCarryOneModalityEach) {
  const auto c = make_unpaired(ToyWorldSpec{}, 100, 100, 5);
  ASSERT_EQ(c.t2i.size(), 100u);
  ASSERT_EQ(c.m2i.size(), 100u);
  ASSERT_EQ(c.truth.size(), 200u);
  for (const auto& r : c.t2i) {
    EXPECT_TRUE(r.cond.mask.is_null());
    EXPECT_FALSE(r.cond.text.is_null());
  }
  for (const auto& r : c.m2i) {
    EXPECT_TRUE(r.cond.text.is_null());
    EXPECT_FALSE(r.cond.mask.is_null());
  }
}

TEST(Unpaired, ThreadCountDoesNotChangeContent) {
  const auto a = make_unpaired(ToyWorldSpec{}, 20, 20, 6, 1);
  const auto b = make_unpaired(ToyWorldSpec{}, 20, 20, 6, 4);
  for (std::size_t i = 0; i < a.truth.size(); ++i) EXPECT_EQ(a.truth[i].image, b.truth[i].image);
}

TEST(Unpaired, TokensAreRoughlyUniform) {
  const ToyWorldSpec spec;
  const auto c = make_unpaired(spec, 3000, 3000, 7);
  std::vector<int> counts(spec.vocab_size(), 0);
  for (const auto& s : c.truth) ++counts[s.text.token()];
  const double n = 6000, p = 1.0 / spec.vocab_size();
  for (int k : counts) EXPECT_NEAR(k, n * p, 3.5 * std::sqrt(n * p * (1 - p)));
}

TEST(Split, EightyTwenty) {
  const auto c = make_unpaired(ToyWorldSpec{}, 10, 10, 8);
  const auto [train, test] = split(c, 0.8, 1);
  EXPECT_EQ(train.t2i.size(), 8u);
  EXPECT_EQ(test.t2i.size(), 2u);
  EXPECT_EQ(train.m2i.size(), 8u);
  EXPECT_EQ(test.m2i.size(), 2u);
  EXPECT_EQ(train.truth.size(), 16u);
  EXPECT_EQ(test.truth.size(), 4u);
  for (const auto& r : test.t2i) EXPECT_EQ(train.find_truth(r.id), nullptr);

  const auto [train2, test2] = split(c, 0.8, 1);
  for (std::size_t i = 0; i < train.t2i.size(); ++i) EXPECT_EQ(train.t2i[i].id, train2.t2i[i].id);
  EXPECT_THROW(split(c, 1.0, 1), ValidationError);
}

TEST(Corpus, RoundTrip) {
  const auto dir = scratch("roundtrip");
  const auto c = make_unpaired(ToyWorldSpec{}, 6, 5, 9);
  save_corpus(c, dir);
  const auto back = load_corpus(dir);
  ASSERT_EQ(back.t2i.size(), c.t2i.size());
  ASSERT_EQ(back.m2i.size(), c.m2i.size());
  for (std::size_t i = 0; i < c.t2i.size(); ++i) {
    EXPECT_EQ(back.t2i[i].id, c.t2i[i].id);
    EXPECT_EQ(back.t2i[i].image, c.t2i[i].image);
    EXPECT_EQ(back.t2i[i].cond, c.t2i[i].cond);
  }
  for (std::size_t i = 0; i < c.m2i.size(); ++i) {
    EXPECT_EQ(back.m2i[i].image, c.m2i[i].image);
    EXPECT_EQ(back.m2i[i].cond, c.m2i[i].cond);
  }
  EXPECT_TRUE(back.truth.empty());
  const auto truth = load_truth(dir);
  ASSERT_EQ(truth.size(), c.truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    EXPECT_EQ(truth[i].mask, c.truth[i].mask);
    EXPECT_EQ(truth[i].text, c.truth[i].text);
    EXPECT_EQ(truth[i].image, c.truth[i].image);
  }
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "images")) files += e.is_regular_file();
  EXPECT_EQ(files, c.t2i.size() + c.m2i.size());
  fs::remove_all(dir);
}

TEST(Corpus, CorruptImageNamesTheFile) {
  const auto dir = scratch("corrupt");
  save_corpus(make_unpaired(ToyWorldSpec{}, 3, 3, 10), dir);
  {
    std::ofstream f(dir / "images" / "000004.f32", std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(5);
    f.put(char(0x5a));
  }
  try {
    load_corpus(dir);
    FAIL() << "expected a load error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("000004.f32"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Corpus, MissingManifestIsAnError) { EXPECT_THROW(load_corpus(scratch("missing")), ValidationError); }

TEST(Gmm, RightColumnHasPositiveXMean) {
  const GmmGrid grid;
  const auto c = gen_gmm_corpus(grid, 4000, 10, 11);
  double sum = 0.0;
  int n = 0;
  for (const auto& r : c.t2i)
    if (r.cond.text.token() == 1 && n < 1000) {
      sum += r.image[0];
      ++n;
    }
  ASSERT_EQ(n, 1000);
  EXPECT_NEAR(sum / n, 3.0, 4 * grid.sigma / std::sqrt(double(n)));
}

TEST(Gmm, SingleComponentGrid) {
  GmmGrid grid;
  grid.column_means = {3.0};
  grid.row_means = {-2.0};
  const auto c = gen_gmm_corpus(grid, 500, 500, 12);
  double sx = 0.0, sy = 0.0;
  for (const auto& s : c.truth) {
    EXPECT_EQ(s.text.token(), 0);
    EXPECT_EQ(s.mask.at(0, 0), 0);
    sx += s.image[0];
    sy += s.image[1];
  }
  EXPECT_NEAR(sx / 1000, 3.0, 4 * 0.5 / std::sqrt(1000.0));
  EXPECT_NEAR(sy / 1000, -2.0, 4 * 0.5 / std::sqrt(1000.0));
}

TEST(Gmm, JointConditionIdentifiesOneCell) {
  const GmmGrid grid;
  const auto c = gen_gmm_corpus(grid, 50, 50, 13);
  for (const auto& s : c.truth) {
    const double mx = grid.column_means[s.text.token()], my = grid.row_means[s.mask.at(0, 0)];
    EXPECT_LT(std::abs(s.image[0] - mx), 6 * grid.sigma);
    EXPECT_LT(std::abs(s.image[1] - my), 6 * grid.sigma);
  }
}
