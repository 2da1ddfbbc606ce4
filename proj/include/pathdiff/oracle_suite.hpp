#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "pathdiff/oracle.hpp"
#include "pathdiff/sample.hpp"

namespace pathdiff::oracle {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

inline GaussianMixture random_mixture(Rng& rng, int dim, int components) {
  GaussianMixture m;
  m.dim = dim;
  double total = 0.0;
  for (int k = 0; k < components; ++k) {
    Component c;
    c.weight = rng.uniform(0.2, 1.0);
    total += c.weight;
    for (int d = 0; d < dim; ++d) c.mean.push_back(rng.uniform(-3.0, 3.0));
    c.sigma = rng.uniform(0.3, 1.5);
    m.components.push_back(c);
  }
  for (auto& c : m.components) c.weight /= total;
  return m;
}

}  // namespace detail

/// Sample mean/variance recovery with the optimal denoiser of a single
/// Gaussian, run through the real sampling loop.
struct RecoveryStats {
  std::vector<double> mean;
  std::vector<double> variance;
};

inline RecoveryStats recover_gaussian(const Vec& mu, double sigma, const NoiseSchedule& s, const SamplerOptions& o, int n,
                                      int threads = 1) {
  GaussianMixture g{int(mu.size()), {{1.0, mu, sigma}}};
  const auto model = mixture_model(g, s);
  const ConditionPair cond{null_mask(1, 1, 1), null_text(1)};
  const auto samples =
      generate_each<double>(model, std::vector<ConditionPair>(std::size_t(n), cond), o, s, {int(mu.size()), 1, 1}, threads);
  RecoveryStats r{Vec(mu.size(), 0.0), Vec(mu.size(), 0.0)};
  for (const auto& x : samples)
    for (std::size_t d = 0; d < mu.size(); ++d) r.mean[d] += x[d] / n;
  for (const auto& x : samples)
    for (std::size_t d = 0; d < mu.size(); ++d) r.variance[d] += (x[d] - r.mean[d]) * (x[d] - r.mean[d]) / (n - 1);
  return r;
}

/// Runs every closed-form and brute-force check of the oracle module plus
/// sampler recovery. `combine` is the guidance combiner under test.
inline std::vector<CheckResult> run_oracle_suite(std::uint64_t seed, int threads = 1,
                                                 CfgCombiner<double> combine = &cfg_combine<double>) {
  std::vector<CheckResult> out;
  Rng rng = Rng::derive(seed, 0);

  {  // standard normal is a fixed point of the forward process
    const auto s = NoiseSchedule::scaled_default(100);
    double worst = 0.0;
    for (int t : {1, 17, 50, 100}) {
      const auto d = diffused_mixture({1, {{1.0, {0.0}, 1.0}}}, t, s);
      worst = std::max(worst, std::abs(d.components[0].sigma - 1.0));
    }
    out.push_back({"diffused standard normal keeps unit variance", worst < 1e-12, detail::fmt("max |sigma-1| = %.3g", worst)});
  }
  {  // alpha_bar = 0.72, mu = 3, sigma = 0.5
    const auto s = NoiseSchedule::from_increments({0.28});
    const auto d = diffused_mixture({1, {{1.0, {3.0}, 0.5}}}, 1, s);
    const double mean_err = std::abs(d.components[0].mean[0] - 3.0 * std::sqrt(0.72));
    const double var_err = std::abs(d.components[0].sigma * d.components[0].sigma - 0.46);
    out.push_back({"diffused Gaussian hand values", mean_err < 1e-12 && var_err < 1e-12,
                   detail::fmt("mean %.6f, var %.6f", d.components[0].mean[0], d.components[0].sigma * d.components[0].sigma)});
  }
  {  // exact score vs central differences of the log density
    const auto s = NoiseSchedule::scaled_default(200);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const auto m = detail::random_mixture(rng, 2, 1 + trial % 4);
      const int t = rng.integer(1, s.num_steps());
      const Vec z{rng.uniform(-4, 4), rng.uniform(-4, 4)};
      const auto score = exact_score(m, z, t, s);
      const auto dm = diffused_mixture(m, t, s);
      for (int d = 0; d < 2; ++d) {
        const double h = 1e-5;
        Vec zp = z, zm = z;
        zp[d] += h;
        zm[d] -= h;
        const double fd = (log_density(dm, zp) - log_density(dm, zm)) / (2 * h);
        worst = std::max(worst, std::abs(fd - score[d]) / std::max(1.0, std::abs(score[d])));
      }
    }
    out.push_back({"exact score matches finite differences", worst < 1e-6, detail::fmt("max rel err %.3g", worst)});
  }
  {  // guided eps of two equal-width Gaussians is the eps of a shifted Gaussian
    const auto s = NoiseSchedule::scaled_default(100);
    const Vec mu_c{3.0, -1.0}, mu_u{0.5, 0.5};
    const double sigma = 0.7;
    double worst = 0.0;
    for (double w : {0.0, 0.5, 1.75, 4.0})
      for (int t : {1, 30, 70, 100}) {
        const Vec z{rng.normal(), rng.normal()};
        const Image<double> zi({2, 1, 1}, z);
        const auto ec = Image<double>({2, 1, 1}, optimal_eps({2, {{1.0, mu_c, sigma}}}, z, t, s));
        const auto eu = Image<double>({2, 1, 1}, optimal_eps({2, {{1.0, mu_u, sigma}}}, z, t, s));
        const auto guided = combine(ec, eu, w);
        const Vec shifted{(1 + w) * mu_c[0] - w * mu_u[0], (1 + w) * mu_c[1] - w * mu_u[1]};
        const auto expect = optimal_eps({2, {{1.0, shifted, sigma}}}, z, t, s);
        for (int d = 0; d < 2; ++d) worst = std::max(worst, std::abs(guided[d] - expect[d]));
      }
    out.push_back({"guidance identity on Gaussians", worst < 1e-12, detail::fmt("max abs err %.3g", worst)});
  }
  {  // grid selection
    GmmGrid grid;
    const auto both = conditional_mixture(grid, {MaskCondition::filled(1, 1, 2, 1), TextCondition(1, 2)});
    const auto col = conditional_mixture(grid, {null_mask(1, 1, 2), TextCondition(1, 2)});
    const auto full = full_mixture(grid);
    const bool ok = both.components.size() == 1 && both.components[0].mean == Vec{3.0, 3.0} &&
                    col.components.size() == 2 && col.components[0].mean[0] == 3.0 && col.components[1].mean[0] == 3.0 &&
                    full.components.size() == 4;
    out.push_back({"conditional mixture selects grid cells", ok, ""});
  }
  {  // full sampling loops with the optimal denoiser recover the target. The
     // ancestral chain uses T = 1000: its fixed posterior variance ignores
     // Var[x0 | z_t], which shrinks samples noticeably on coarse 100-step grids.
    SamplerOptions o;
    o.guidance = 0.0;
    o.steps = 100;
    o.seed = Rng::derive(seed, 1).next_seed();
    const int n = 1000;
    const double sigma = 0.5;
    const Vec mu{3.0, -2.0};
    for (auto kind : {SamplerKind::Ddim, SamplerKind::Ancestral}) {
      o.sampler = kind;
      const auto s = NoiseSchedule::scaled_default(kind == SamplerKind::Ddim ? 100 : 1000);
      const auto r = recover_gaussian(mu, sigma, s, o, n, threads);
      bool ok = true;
      for (int d = 0; d < 2; ++d)
        ok = ok && std::abs(r.mean[d] - mu[d]) <= 4 * sigma / std::sqrt(double(n)) &&
             std::abs(r.variance[d] - sigma * sigma) <= 0.1 * sigma * sigma;
      out.push_back({std::string(kind == SamplerKind::Ddim ? "DDIM" : "ancestral") + " sampler recovers a Gaussian", ok,
                     detail::fmt("mean (%.4f, %.4f), var x %.4f", r.mean[0], r.mean[1], r.variance[0]) +
                         detail::fmt(", var y %.4f", r.variance[1])});
    }
  }
  {  // guided sampling through the grid oracle lands in the intersection
    const auto s = NoiseSchedule::scaled_default(100);
    GmmGrid grid;
    SamplerOptions o;
    o.guidance = 1.75;
    o.steps = 50;
    o.seed = Rng::derive(seed, 2).next_seed();
    const ConditionPair cond{MaskCondition::filled(1, 1, 2, 1), TextCondition(1, 2)};
    const auto samples = generate_each<double>(grid_model(grid, s), std::vector<ConditionPair>(200, cond), o, s,
                                               grid.image_shape(), threads, combine);
    int hits = 0;
    for (const auto& x : samples) hits += (x[0] > 0 && x[1] > 0) ? 1 : 0;
    out.push_back({"guided oracle sampling hits the joint quadrant", hits >= 190, detail::fmt("%.0f / 200", hits)});
  }
  return out;
}

}  // namespace pathdiff::oracle
