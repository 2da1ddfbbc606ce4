#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pathdiff/core.hpp"

namespace pathdiff {

/// Discrete forward-process schedule.
///
/// Naming convention: `increment(t)` is the per-step noise variance a_t, i.e.
///   q(x_t | x_{t-1}) = N(sqrt(1 - a_t) x_{t-1}, a_t I),
/// the quantity many codebases call beta_t. `alpha_bar(t)` is the cumulative
/// product prod_{i<=t} (1 - a_i), with alpha_bar(0) = 1.
///
/// Steps are 1-based. All arithmetic is 64-bit; model-precision images are
/// cast at the boundary.
class NoiseSchedule {
 public:
  static NoiseSchedule from_increments(std::vector<double> increments) {
    require(!increments.empty(), "schedule needs at least one step");
    NoiseSchedule s;
    s.increments_ = std::move(increments);
    s.alpha_bar_.resize(s.increments_.size() + 1);
    s.alpha_bar_[0] = 1.0;
    for (std::size_t t = 1; t <= s.increments_.size(); ++t) {
      double a = s.increments_[t - 1];
      require(a > 0.0 && a < 1.0, "schedule increment a_" + std::to_string(t) + " outside (0,1)");
      s.alpha_bar_[t] = s.alpha_bar_[t - 1] * (1.0 - a);
    }
    return s;
  }

  static NoiseSchedule linear(int num_steps, double a_start, double a_end) {
    require(num_steps >= 1, "schedule needs T >= 1");
    require(a_start > 0.0 && a_end < 1.0 && a_start <= a_end, "schedule endpoints must satisfy 0 < a_start <= a_end < 1");
    std::vector<double> a(num_steps);
    for (int i = 0; i < num_steps; ++i) {
      double frac = num_steps == 1 ? 0.0 : double(i) / double(num_steps - 1);
      a[i] = a_start + (a_end - a_start) * frac;
    }
    return from_increments(std::move(a));
  }

  /// Linear schedule with the 1000-step endpoints (1e-4, 0.02) rescaled by
  /// 1000/T so short chains reach a comparable terminal alpha_bar.
  static NoiseSchedule scaled_default(int num_steps) {
    require(num_steps >= 1, "schedule needs T >= 1");
    double scale = 1000.0 / num_steps;
    return linear(num_steps, std::min(1e-4 * scale, 0.999), std::min(0.02 * scale, 0.999));
  }

  int num_steps() const { return int(increments_.size()); }
  double increment(int t) const {
    check_step(t);
    return increments_[t - 1];
  }
  // Defined for t in [0, T].
  double alpha_bar(int t) const {
    require(t >= 0 && t <= num_steps(), "step " + std::to_string(t) + " outside [0, T]");
    return alpha_bar_[t];
  }
  const std::vector<double>& increments() const { return increments_; }

  void check_step(int t) const {
    require(t >= 1 && t <= num_steps(), "step " + std::to_string(t) + " outside [1, " + std::to_string(num_steps()) + "]");
  }

 private:
  NoiseSchedule() = default;
  std::vector<double> increments_;
  std::vector<double> alpha_bar_;
};

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
template <typename Real>
Image<Real> forward_diffuse(const Image<Real>& x0, int t, const Image<Real>& eps, const NoiseSchedule& s) {
  require_same_shape(x0, eps, "forward_diffuse");
  s.check_step(t);
  const double ab = s.alpha_bar(t);
  const double signal = std::sqrt(ab), noise = std::sqrt(1.0 - ab);
  Image<Real> out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Real>(signal * double(x0[i]) + noise * double(eps[i]));
  return out;
}

template <typename Real>
Image<Real> predict_x0(const Image<Real>& z_t, const Image<Real>& eps_hat, int t, const NoiseSchedule& s) {
  require_same_shape(z_t, eps_hat, "predict_x0");
  s.check_step(t);
  const double ab = s.alpha_bar(t);
  const double inv_signal = 1.0 / std::sqrt(ab), noise = std::sqrt(1.0 - ab);
  Image<Real> out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<Real>((double(z_t[i]) - noise * double(eps_hat[i])) * inv_signal);
  return out;
}

/// Generalized DDIM update from step t to t_prev (t_prev may be 0).
/// With eta == 0 no randomness is consumed.
template <typename Real>
Image<Real> ddim_step(const Image<Real>& z_t, const Image<Real>& eps_hat, int t, int t_prev, double eta,
                      const NoiseSchedule& s, Rng& rng) {
  require(t_prev >= 0 && t_prev < t, "ddim_step requires 0 <= t_prev < t");
  require(eta >= 0.0 && eta <= 1.0, "ddim eta must lie in [0,1]");
  const Image<Real> x0 = predict_x0(z_t, eps_hat, t, s);
  const double ab_t = s.alpha_bar(t), ab_prev = s.alpha_bar(t_prev);
  const double sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
  const double x0_coef = std::sqrt(ab_prev);
  const double dir_coef = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  Image<Real> out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = x0_coef * double(x0[i]) + dir_coef * double(eps_hat[i]);
    if (sigma > 0.0) v += sigma * rng.normal();
    out[i] = static_cast<Real>(v);
  }
  return out;
}

/// Mean coefficients and variance of the DDPM posterior q(z_{t-1} | z_t, z0).
struct PosteriorCoefficients {
  double x0_coef;
  double zt_coef;
  double variance;
};

inline PosteriorCoefficients posterior_coefficients(int t, const NoiseSchedule& s) {
  s.check_step(t);
  const double a = s.increment(t), ab_t = s.alpha_bar(t), ab_prev = s.alpha_bar(t - 1);
  return {std::sqrt(ab_prev) * a / (1.0 - ab_t), std::sqrt(1.0 - a) * (1.0 - ab_prev) / (1.0 - ab_t),
          a * (1.0 - ab_prev) / (1.0 - ab_t)};
}

/// Draw z_{t-1} from the posterior given the current denoised estimate.
/// At t == 1 the estimate itself is returned and no noise is drawn.
template <typename Real>
Image<Real> ancestral_step(const Image<Real>& z_t, const Image<Real>& z0_hat, int t, const NoiseSchedule& s, Rng& rng) {
  require_same_shape(z_t, z0_hat, "ancestral_step");
  s.check_step(t);
  if (t == 1) return z0_hat;
  const auto c = posterior_coefficients(t, s);
  const double stddev = std::sqrt(c.variance);
  Image<Real> out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<Real>(c.x0_coef * double(z0_hat[i]) + c.zt_coef * double(z_t[i]) + stddev * rng.normal());
  return out;
}

}  // namespace pathdiff
