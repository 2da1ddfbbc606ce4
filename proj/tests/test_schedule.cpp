#include <cmath>

#include <gtest/gtest.h>

#include "pathdiff/schedule.hpp"

using namespace pathdiff;

namespace {

Image<double> scalar(double v) { return Image<double>({1, 1, 1}, std::vector<double>{v}); }

}  // namespace

TEST(Schedule, CumulativeProductSmall) {
  const auto s = NoiseSchedule::from_increments({0.1, 0.2});
  EXPECT_DOUBLE_EQ(s.alpha_bar(0), 1.0);
  EXPECT_NEAR(s.alpha_bar(1), 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_bar(2), 0.72, 1e-15);

  const auto one = NoiseSchedule::linear(1, 0.5, 0.5);
  ASSERT_EQ(one.num_steps(), 1);
  EXPECT_DOUBLE_EQ(one.alpha_bar(1), 0.5);
}

TEST(Schedule, LinearThousandStepsMatchesBruteForceProduct) {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  // independent loop: a_i = 1e-4 + (0.02 - 1e-4) * i / 999, accumulated in long double
  long double prod = 1.0L;
  for (int i = 0; i < 1000; ++i) prod *= 1.0L - (1e-4L + (0.02L - 1e-4L) * i / 999.0L);
  EXPECT_NEAR(s.alpha_bar(1000), double(prod), 1e-12);
  EXPECT_NEAR(s.increment(1), 1e-4, 1e-18);
  EXPECT_NEAR(s.increment(1000), 0.02, 1e-17);
}

TEST(Schedule, ScaledDefaultEndpoints) {
  const auto s = NoiseSchedule::scaled_default(100);
  EXPECT_NEAR(s.increment(1), 1e-3, 1e-15);
  EXPECT_NEAR(s.increment(100), 0.2, 1e-15);
  const auto tiny = NoiseSchedule::scaled_default(10);
  EXPECT_LE(tiny.increment(10), 0.999);
}

TEST(Schedule, RejectsBadIncrements) {
  EXPECT_THROW(NoiseSchedule::from_increments({}), ValidationError);
  EXPECT_THROW(NoiseSchedule::from_increments({0.0}), ValidationError);
  EXPECT_THROW(NoiseSchedule::from_increments({1.0}), ValidationError);
  EXPECT_THROW(NoiseSchedule::linear(0, 0.1, 0.2), ValidationError);
  const auto s = NoiseSchedule::from_increments({0.1, 0.2});
  EXPECT_THROW(s.increment(0), ValidationError);
  EXPECT_THROW(s.increment(3), ValidationError);
}

TEST(ForwardDiffuse, ZeroNoiseScalesSignal) {
  const auto s = NoiseSchedule::from_increments({0.1, 0.2});
  const auto out = forward_diffuse(scalar(2.0), 2, scalar(0.0), s);
  EXPECT_EQ(out[0], std::sqrt(s.alpha_bar(2)) * 2.0);
}

TEST(ForwardDiffuse, HandValue) {
  const auto s = NoiseSchedule::from_increments({0.1, 0.2});
  const auto out = forward_diffuse(scalar(1.0), 2, scalar(1.0), s);
  EXPECT_NEAR(out[0], 0.848528137423857 + 0.529150262212918, 1e-12);
  EXPECT_NEAR(out[0], 1.3777, 1e-4);
}

TEST(ForwardDiffuse, MonteCarloMarginalMean) {
  const auto s = NoiseSchedule::scaled_default(100);
  Rng rng(7);
  const int n = 10000;
  for (int t : {1, 40, 100}) {
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = forward_diffuse(scalar(0.0), t, scalar(rng.normal()), s)[0];
      sum += x;
      sq += x * x;
    }
    const double var = 1.0 - s.alpha_bar(t);
    EXPECT_LT(std::abs(sum / n), 4.0 * std::sqrt(var / n)) << "t=" << t;
    EXPECT_NEAR(sq / n, var, 0.05 * var) << "t=" << t;
  }
}

TEST(PredictX0, InvertsForwardDiffuse) {
  const auto s = NoiseSchedule::from_increments({0.1, 0.2});
  const double z = std::sqrt(0.72) + std::sqrt(0.28);
  EXPECT_NEAR(predict_x0(scalar(z), scalar(1.0), 2, s)[0], 1.0, 1e-14);
  EXPECT_NEAR(predict_x0(scalar(z), scalar(0.0), 2, s)[0], z / std::sqrt(0.72), 1e-14);

  Rng rng(3);
  const auto sd = NoiseSchedule::scaled_default(100);
  const auto x0 = rng.normal_image<double>({3, 4, 5});
  const auto eps = rng.normal_image<double>({3, 4, 5});
  for (int t : {1, 50, 100}) {
    const auto back = predict_x0(forward_diffuse(x0, t, eps, sd), eps, t, sd);
    for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(back[i], x0[i], 1e-9 / std::sqrt(sd.alpha_bar(t)));
  }
}

TEST(DdimStep, EtaZeroConsumesNoRandomness) {
  const auto s = NoiseSchedule::scaled_default(100);
  Rng data(11);
  const auto z = data.normal_image<double>({3, 4, 4});
  const auto e = data.normal_image<double>({3, 4, 4});
  Rng a(1), b(999);
  const auto out_a = ddim_step(z, e, 60, 40, 0.0, s, a);
  const auto out_b = ddim_step(z, e, 60, 40, 0.0, s, b);
  EXPECT_EQ(out_a, out_b);
  EXPECT_EQ(a.next_seed(), Rng(1).next_seed());
}

TEST(DdimStep, FinalHopReturnsPredictedX0) {
  const auto s = NoiseSchedule::scaled_default(100);
  Rng data(12), rng(0);
  const auto z = data.normal_image<double>({1, 3, 3});
  const auto e = data.normal_image<double>({1, 3, 3});
  EXPECT_EQ(ddim_step(z, e, 37, 0, 0.0, s, rng), predict_x0(z, e, 37, s));
}

TEST(DdimStep, EtaOneMatchesPosteriorVariance) {
  // with eta = 1 the DDIM noise scale equals the DDPM posterior variance for a single step
  const auto s = NoiseSchedule::scaled_default(100);
  const int t = 50, n = 20000;
  const auto z = scalar(0.3), e = scalar(-0.2);
  Rng rng(5);
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = ddim_step(z, e, t, t - 1, 1.0, s, rng)[0];
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_NEAR(var, posterior_coefficients(t, s).variance, 0.05 * posterior_coefficients(t, s).variance);
}

TEST(Posterior, CoefficientsHandValues) {
  // alpha_bar_{t-1} = 0.9, a_t = 0.2, alpha_bar_t = 0.72
  const auto s = NoiseSchedule::from_increments({0.1, 0.2});
  const auto c = posterior_coefficients(2, s);
  EXPECT_NEAR(c.x0_coef, std::sqrt(0.9) * 0.2 / 0.28, 1e-15);
  EXPECT_NEAR(c.zt_coef, std::sqrt(0.8) * 0.1 / 0.28, 1e-15);
  EXPECT_NEAR(c.variance, 0.2 * 0.1 / 0.28, 1e-15);
}

TEST(AncestralStep, VanishingIncrementIsIdentity) {
  const auto s = NoiseSchedule::from_increments({0.3, 1e-12});
  Rng rng(2);
  const auto c = posterior_coefficients(2, s);
  const double z = 0.7, x0 = -1.1;
  const double mu = c.x0_coef * x0 + c.zt_coef * z;
  EXPECT_LT(std::abs(mu - z), 1e-9);
  EXPECT_LT(c.variance, 1e-11);
  EXPECT_NEAR(ancestral_step(scalar(z), scalar(x0), 2, s, rng)[0], z, 1e-5);
}

TEST(AncestralStep, LastStepReturnsEstimate) {
  const auto s = NoiseSchedule::scaled_default(10);
  Rng rng(4);
  const auto x0 = scalar(0.25);
  EXPECT_EQ(ancestral_step(scalar(3.0), x0, 1, s, rng), x0);
}

TEST(AncestralStep, MomentsMatchPosterior) {
  const auto s = NoiseSchedule::scaled_default(100);
  const int t = 30, n = 20000;
  const auto c = posterior_coefficients(t, s);
  Rng rng(8);
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = ancestral_step(scalar(0.5), scalar(-0.4), t, s, rng)[0];
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_NEAR(mean, c.x0_coef * -0.4 + c.zt_coef * 0.5, 4.0 * std::sqrt(c.variance / n));
  EXPECT_NEAR(var, c.variance, 0.05 * c.variance);
}

TEST(Schedule, FloatImagesStayWithinRounding) {
  const auto s = NoiseSchedule::scaled_default(100);
  Rng rng(9);
  const auto x0 = rng.normal_image<double>({2, 3, 3});
  const auto eps = rng.normal_image<double>({2, 3, 3});
  const auto d = forward_diffuse(x0, 77, eps, s);
  const auto f = forward_diffuse(x0.cast<float>(), 77, eps.cast<float>(), s);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(f[i], d[i], 1e-6);
}
