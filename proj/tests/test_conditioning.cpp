#include <cmath>

#include <gtest/gtest.h>

#include "pathdiff/conditioning.hpp"

using namespace pathdiff;

TEST(Mask, NullMaskCarriesReservedLabel) {
  const auto m = null_mask(2, 2, 5);
  EXPECT_TRUE(m.is_null());
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) EXPECT_EQ(m.at(y, x), 5);
}

TEST(Mask, AllBackgroundIsNotNull) {
  const auto m = MaskCondition::filled(3, 3, 4, 0);
  EXPECT_FALSE(m.is_null());
}

TEST(Mask, RejectsMixedAndOutOfRangeLabels) {
  EXPECT_THROW(MaskCondition(1, 2, 3, {0, 3}), ValidationError);
  EXPECT_THROW(MaskCondition(1, 2, 3, {0, 4}), ValidationError);
  EXPECT_THROW(MaskCondition(1, 2, 3, {0}), ValidationError);
  EXPECT_THROW(MaskCondition(1, 1, 0, {0}), ValidationError);
}

TEST(Text, NullTokenIsVocabSize) {
  const auto t = null_text(6);
  EXPECT_TRUE(t.is_null());
  EXPECT_EQ(t.token(), 6);
  EXPECT_FALSE(TextCondition(0, 6).is_null());
  EXPECT_THROW(TextCondition(7, 6), ValidationError);
  EXPECT_THROW(TextCondition(-1, 6), ValidationError);
}

TEST(ConditionPair, ModeCaseAnalysis) {
  const auto m = MaskCondition::filled(2, 2, 3, 1);
  const auto nm = null_mask(2, 2, 3);
  const TextCondition t(2, 4);
  const auto nt = null_text(4);
  EXPECT_EQ((ConditionPair{nm, t}).mode(), ConditionMode::TextOnly);
  EXPECT_EQ((ConditionPair{m, nt}).mode(), ConditionMode::MaskOnly);
  EXPECT_EQ((ConditionPair{m, t}).mode(), ConditionMode::Both);
  EXPECT_EQ((ConditionPair{nm, nt}).mode(), ConditionMode::Unconditional);
  EXPECT_EQ(unconditional(m, 4), (ConditionPair{nm, nt}));
}

TEST(EncodeMask, OneHotChannels) {
  const MaskCondition m(1, 1, 5, {2});
  const auto e = encode_mask<float>(m);
  ASSERT_EQ(e.shape(), (Shape{6, 1, 1}));
  const std::vector<float> expect{0, 0, 1, 0, 0, 0};
  EXPECT_EQ(e.storage(), expect);
}

TEST(EncodeMask, NullMaskLightsOnlyNullChannel) {
  const auto e = encode_mask<double>(null_mask(3, 2, 4));
  for (int c = 0; c < 5; ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 2; ++x) EXPECT_EQ(e.at(c, y, x), c == 4 ? 1.0 : 0.0);
}

TEST(EncodeMask, EveryPixelSumsToOne) {
  const MaskCondition m(2, 3, 3, {0, 1, 2, 3 - 1, 1, 0});
  const auto e = encode_mask<double>(m);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) {
      double sum = 0.0;
      for (int c = 0; c < 4; ++c) sum += e.at(c, y, x);
      EXPECT_EQ(sum, 1.0);
      EXPECT_EQ(e.at(m.at(y, x), y, x), 1.0);
    }
}

TEST(RandomPairing, SingleMaskIsShared) {
  const std::vector<MaskCondition> masks{MaskCondition::filled(2, 2, 3, 1)};
  const std::vector<TextCondition> texts{{0, 4}, {1, 4}, {3, 4}};
  const auto pairs = random_pairing(masks, texts, 42);
  ASSERT_EQ(pairs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(pairs[i].mask, masks[0]);
    EXPECT_EQ(pairs[i].text, texts[i]);
  }
}

TEST(RandomPairing, SeedDeterminesPairing) {
  std::vector<MaskCondition> masks;
  for (int k = 0; k < 5; ++k) masks.push_back(MaskCondition::filled(1, 1, 5, k));
  const std::vector<TextCondition> texts(50, TextCondition(0, 1));
  EXPECT_EQ(random_pairing(masks, texts, 9), random_pairing(masks, texts, 9));
  EXPECT_NE(random_pairing_indices(5, 50, 9), random_pairing_indices(5, 50, 10));
  EXPECT_THROW(random_pairing({}, texts, 0), ValidationError);
}

TEST(RandomPairing, RoughlyUniform) {
  const auto picks = random_pairing_indices(4, 8000, 1);
  std::vector<int> counts(4, 0);
  for (auto p : picks) ++counts[p];
  // 99.9% binomial band around 2000 with p = 1/4
  for (int c : counts) EXPECT_NEAR(c, 2000, 3.3 * std::sqrt(8000 * 0.25 * 0.75));
}
