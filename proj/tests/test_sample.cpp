#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "pathdiff/sample.hpp"

using namespace pathdiff;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.height = c.width = 4;
  c.num_classes = 2;
  c.vocab_size = 3;
  c.base_width = 4;
  c.time_embed_dim = 8;
  return c;
}

struct Trained {
  Denoiser<float> model{tiny_config()};
  DenoiserParams<float> params = model.init_params(1);
  Trained() {
    Rng rng(2);
    for (auto& v : params.values) v = float(0.3 * rng.normal());
  }
};

ConditionPair both_cond() { return {MaskCondition::filled(4, 4, 2, 1), TextCondition(2, 3)}; }

Image<double> scalar(double v) { return Image<double>({1, 1, 1}, std::vector<double>{v}); }

}  // namespace

TEST(Cfg, ScalarProbe) {
  EXPECT_DOUBLE_EQ(cfg_combine(scalar(1.0), scalar(0.5), 1.75)[0], 1.875);
}

TEST(Cfg, ZeroGuidanceIsConditionalForward) {
  const Trained n;
  const auto model = network_model(n.model, n.params);
  Rng rng(3);
  const auto z = rng.normal_image<float>({3, 4, 4});
  EXPECT_EQ(cfg_epsilon(model, z, 17, both_cond(), 0.0), n.model.forward(n.params, z, 17, both_cond()));
}

TEST(Cfg, MinusOneIsUnconditional) {
  const Trained n;
  const auto model = network_model(n.model, n.params);
  Rng rng(4);
  const auto z = rng.normal_image<float>({3, 4, 4});
  EXPECT_EQ(cfg_epsilon(model, z, 9, both_cond(), -1.0),
            n.model.forward(n.params, z, 9, unconditional(both_cond().mask, 3)));
}

TEST(Cfg, AffineInGuidance) {
  Rng rng(5);
  Image<double> c({2, 2, 2}), u({2, 2, 2});
  for (std::size_t i = 0; i < c.size(); ++i) {
    c[i] = rng.normal();
    u[i] = rng.normal();
  }
  const auto a = cfg_combine(c, u, 0.5), b = cfg_combine(c, u, 2.5), mid = cfg_combine(c, u, 1.5);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(mid[i], 0.5 * (a[i] + b[i]), 1e-14);
}

TEST(Cfg, UnconditionalBranchGetsFullyNullPair) {
  std::vector<ConditionPair> seen;
  const EpsilonModel<double> probe = [&](const Image<double>& z, int, const ConditionPair& c) {
    seen.push_back(c);
    return z;
  };
  for (const auto& cond : {both_cond(), ConditionPair{null_mask(4, 4, 2), TextCondition(1, 3)},
                           ConditionPair{MaskCondition::filled(4, 4, 2, 0), null_text(3)}}) {
    seen.clear();
    cfg_epsilon(probe, Image<double>({3, 4, 4}), 5, cond, 1.75);
    ASSERT_EQ(seen.size(), 2u);
    EXPECT_EQ(seen[0], cond);
    EXPECT_EQ(seen[1].mode(), ConditionMode::Unconditional);
  }
}

TEST(Subsequence, StrideExamples) {
  EXPECT_EQ(make_ddim_subsequence(10, 5), (std::vector<int>{10, 8, 6, 4, 2, 0}));
  EXPECT_EQ(make_ddim_subsequence(3, 1), (std::vector<int>{3, 0}));
  std::vector<int> identity;
  for (int t = 12; t >= 0; --t) identity.push_back(t);
  EXPECT_EQ(make_ddim_subsequence(12, 12), identity);
  EXPECT_THROW(make_ddim_subsequence(5, 6), ValidationError);
  EXPECT_THROW(make_ddim_subsequence(5, 0), ValidationError);
}

TEST(Subsequence, MatchesRoundedStride) {
  for (int T : {7, 50, 100, 1000})
    for (int S : {1, 3, 7, 33, 50})
      if (S <= T) {
        const auto steps = make_ddim_subsequence(T, S);
        ASSERT_EQ(steps.size(), std::size_t(S) + 1);
        for (int k = 0; k < S; ++k) EXPECT_EQ(steps[k], int(std::lround(double(T) * (S - k) / S))) << T << "," << S;
        for (int k = 0; k < S; ++k) EXPECT_GT(steps[k], steps[k + 1]);
      }
}

TEST(Sampler, SingleStepIsPredictedX0) {
  const Trained n;
  const auto model = network_model(n.model, n.params);
  const auto s = NoiseSchedule::scaled_default(20);
  SamplerOptions o;
  o.steps = 1;
  o.guidance = 0.0;
  Rng rng(6), replay(6);
  const auto out = sample_one(model, both_cond(), o, s, {3, 4, 4}, rng);
  const auto z = replay.normal_image<float>({3, 4, 4});
  EXPECT_EQ(out, predict_x0(z, n.model.forward(n.params, z, 20, both_cond()), 20, s));
}

TEST(Sampler, FixedSeedIsReproducible) {
  const Trained n;
  const auto model = network_model(n.model, n.params);
  const auto s = NoiseSchedule::scaled_default(20);
  SamplerOptions o;
  o.steps = 10;
  o.seed = 8;
  const GuidanceSpec spec{o, both_cond()};
  EXPECT_EQ(generate(model, spec, s, {3, 4, 4}, 3), generate(model, spec, s, {3, 4, 4}, 3));
  EXPECT_EQ(generate(model, spec, s, {3, 4, 4}, 5, 1), generate(model, spec, s, {3, 4, 4}, 5, 4));
  o.sampler = SamplerKind::Ancestral;
  const GuidanceSpec anc{o, both_cond()};
  EXPECT_EQ(generate(model, anc, s, {3, 4, 4}, 3, 1), generate(model, anc, s, {3, 4, 4}, 3, 3));
  o.seed = 9;
  EXPECT_NE(generate(model, GuidanceSpec{o, both_cond()}, s, {3, 4, 4}, 3), generate(model, anc, s, {3, 4, 4}, 3));
}

TEST(Sampler, ZeroModelDdimShrinksToZeroMean) {
  // eps = 0 everywhere: DDIM with eta = 0 returns z_T / sqrt(alpha_bar_T) after the final hop
  const EpsilonModel<double> zero = [](const Image<double>& z, int, const ConditionPair&) { return Image<double>(z.shape()); };
  const auto s = NoiseSchedule::scaled_default(10);
  SamplerOptions o;
  o.steps = 5;
  Rng rng(10), replay(10);
  const auto out = sample_one(zero, ConditionPair{null_mask(1, 1, 1), null_text(1)}, o, s, {1, 1, 1}, rng);
  EXPECT_NEAR(out[0], replay.normal() / std::sqrt(s.alpha_bar(10)), 1e-12);
}

TEST(Sampler, NonFiniteStateIsNumericalError) {
  const EpsilonModel<double> bad = [](const Image<double>& z, int, const ConditionPair&) {
    return Image<double>(z.shape(), std::numeric_limits<double>::quiet_NaN());
  };
  const auto s = NoiseSchedule::scaled_default(10);
  Rng rng(11);
  EXPECT_THROW(sample_one(bad, ConditionPair{null_mask(1, 1, 1), null_text(1)}, SamplerOptions{}, s, {1, 1, 1}, rng),
               ValidationError);
  SamplerOptions o;
  o.steps = 5;
  EXPECT_THROW(sample_one(bad, ConditionPair{null_mask(1, 1, 1), null_text(1)}, o, s, {1, 1, 1}, rng), NumericalError);
}

TEST(SamplerOptions, JsonRoundTrip) {
  SamplerOptions o;
  o.guidance = 3.0;
  o.sampler = SamplerKind::Ancestral;
  o.steps = 7;
  o.eta = 0.5;
  o.seed = 12;
  const SamplerOptions back = nlohmann::json(o).get<SamplerOptions>();
  EXPECT_EQ(back.guidance, 3.0);
  EXPECT_EQ(back.sampler, SamplerKind::Ancestral);
  EXPECT_EQ(back.steps, 7);
  EXPECT_EQ(back.eta, 0.5);
  EXPECT_EQ(back.seed, 12u);
  nlohmann::json bad = o;
  bad["sampler"] = "euler";
  EXPECT_THROW(bad.get<SamplerOptions>(), ValidationError);
}
