#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "pathdiff/conditioning.hpp"
#include "pathdiff/core.hpp"
#include "pathdiff/dataset.hpp"
#include "pathdiff/sample.hpp"
#include "pathdiff/schedule.hpp"

namespace pathdiff::oracle {

// Closed-form ground truth for isotropic Gaussian mixtures. Everything here
// is 64-bit.

using Vec = std::vector<double>;

struct Component {
  double weight = 1.0;
  Vec mean;
  double sigma = 1.0;
};

struct GaussianMixture {
  int dim = 0;
  std::vector<Component> components;

  void validate() const {
    require(dim >= 1 && !components.empty(), "mixture needs a dimension and at least one component");
    double total = 0.0;
    for (const auto& c : components) {
      require(c.weight > 0.0 && c.sigma > 0.0 && int(c.mean.size()) == dim, "invalid mixture component");
      total += c.weight;
    }
    require(std::abs(total - 1.0) < 1e-9, "mixture weights must sum to 1");
  }
};

/// Exact marginal at step t: (w, mu, s) -> (w, sqrt(ab) mu, sqrt(ab s^2 + 1 - ab)).
inline GaussianMixture diffused_mixture(const GaussianMixture& m, int t, const NoiseSchedule& s) {
  const double ab = s.alpha_bar(t);
  GaussianMixture out = m;
  for (auto& c : out.components) {
    for (auto& v : c.mean) v *= std::sqrt(ab);
    c.sigma = std::sqrt(ab * c.sigma * c.sigma + 1.0 - ab);
  }
  return out;
}

namespace detail {

inline std::vector<double> log_terms(const GaussianMixture& m, const Vec& z) {
  std::vector<double> terms;
  terms.reserve(m.components.size());
  for (const auto& c : m.components) {
    double sq = 0.0;
    for (int d = 0; d < m.dim; ++d) sq += (z[d] - c.mean[d]) * (z[d] - c.mean[d]);
    const double var = c.sigma * c.sigma;
    terms.push_back(std::log(c.weight) - 0.5 * m.dim * std::log(2.0 * std::numbers::pi * var) - 0.5 * sq / var);
  }
  return terms;
}

}  // namespace detail

inline double log_density(const GaussianMixture& m, const Vec& z) {
  const auto terms = detail::log_terms(m, z);
  const double mx = *std::max_element(terms.begin(), terms.end());
  double sum = 0.0;
  for (double v : terms) sum += std::exp(v - mx);
  return mx + std::log(sum);
}

/// Score of the mixture itself: responsibility-weighted -(z - mu) / s^2.
inline Vec mixture_score(const GaussianMixture& m, const Vec& z) {
  require(int(z.size()) == m.dim, "score point has the wrong dimension");
  const auto terms = detail::log_terms(m, z);
  const double mx = *std::max_element(terms.begin(), terms.end());
  std::vector<double> resp(terms.size());
  double total = 0.0;
  for (std::size_t k = 0; k < terms.size(); ++k) total += resp[k] = std::exp(terms[k] - mx);
  Vec score(std::size_t(m.dim), 0.0);
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const auto& c = m.components[k];
    const double r = resp[k] / total, var = c.sigma * c.sigma;
    for (int d = 0; d < m.dim; ++d) score[d] -= r * (z[d] - c.mean[d]) / var;
  }
  return score;
}

/// grad_z log p_t(z) for the forward marginal at step t.
inline Vec exact_score(const GaussianMixture& m, const Vec& z, int t, const NoiseSchedule& s) {
  return mixture_score(diffused_mixture(m, t, s), z);
}

/// The MSE-optimal noise prediction: -sqrt(1 - ab_t) * score.
inline Vec optimal_eps(const GaussianMixture& m, const Vec& z_t, int t, const NoiseSchedule& s) {
  Vec score = exact_score(m, z_t, t, s);
  const double k = -std::sqrt(1.0 - s.alpha_bar(t));
  for (auto& v : score) v *= k;
  return score;
}

inline Vec sample(const GaussianMixture& m, Rng& rng) {
  double u = rng.uniform(), acc = 0.0;
  const Component* pick = &m.components.back();
  for (const auto& c : m.components) {
    acc += c.weight;
    if (u < acc) {
      pick = &c;
      break;
    }
  }
  Vec x(std::size_t(m.dim));
  for (int d = 0; d < m.dim; ++d) x[d] = pick->mean[d] + pick->sigma * rng.normal();
  return x;
}

/// Components selected by a condition: text restricts to its column, the
/// 1x1 mask to its row; null conditions leave that axis free. Weights are
/// uniform over the selection.
inline GaussianMixture conditional_mixture(const GmmGrid& grid, const ConditionPair& cond) {
  grid.validate();
  require(cond.text.vocab_size() == grid.columns(), "text vocabulary does not match the grid columns");
  require(cond.mask.height() == 1 && cond.mask.width() == 1 && cond.mask.num_classes() == grid.rows(),
          "mask condition must be a 1x1 label over the grid rows");
  std::vector<int> cols, rows;
  for (int j = 0; j < grid.columns(); ++j)
    if (cond.text.is_null() || cond.text.token() == j) cols.push_back(j);
  for (int i = 0; i < grid.rows(); ++i)
    if (cond.mask.is_null() || cond.mask.at(0, 0) == i) rows.push_back(i);
  GaussianMixture m;
  m.dim = 2;
  const double w = 1.0 / double(cols.size() * rows.size());
  for (int i : rows)
    for (int j : cols) m.components.push_back({w, {grid.column_means[j], grid.row_means[i]}, grid.sigma});
  return m;
}

inline GaussianMixture full_mixture(const GmmGrid& grid) {
  return conditional_mixture(grid, {null_mask(1, 1, grid.rows()), null_text(grid.columns())});
}

/// Optimal denoiser for the grid world as a drop-in noise predictor on
/// (2, 1, 1) images.
inline EpsilonModel<double> grid_model(const GmmGrid& grid, const NoiseSchedule& s) {
  return [grid, &s](const Image<double>& z, int t, const ConditionPair& c) {
    const Vec eps = optimal_eps(conditional_mixture(grid, c), {z[0], z[1]}, t, s);
    return Image<double>(z.shape(), eps);
  };
}

/// Same, for a fixed mixture regardless of condition.
inline EpsilonModel<double> mixture_model(const GaussianMixture& m, const NoiseSchedule& s) {
  return [m, &s](const Image<double>& z, int t, const ConditionPair&) {
    return Image<double>(z.shape(), optimal_eps(m, Vec(z.values().begin(), z.values().end()), t, s));
  };
}

/// Monte-Carlo estimate of the irreducible loss E||eps - eps*(z_t, t)||^2 / d
/// with t ~ U{1..T}, x0 ~ m, eps ~ N(0, I). Returns {mean, standard error}.
inline std::pair<double, double> optimal_loss_mc(const GaussianMixture& m, const NoiseSchedule& s, int n, Rng& rng) {
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const int t = rng.integer(1, s.num_steps());
    const Vec x0 = sample(m, rng);
    Vec eps(x0.size()), z(x0.size());
    const double ab = s.alpha_bar(t);
    for (std::size_t d = 0; d < x0.size(); ++d) {
      eps[d] = rng.normal();
      z[d] = std::sqrt(ab) * x0[d] + std::sqrt(1.0 - ab) * eps[d];
    }
    const Vec opt = optimal_eps(m, z, t, s);
    double l = 0.0;
    for (std::size_t d = 0; d < x0.size(); ++d) l += (eps[d] - opt[d]) * (eps[d] - opt[d]);
    l /= double(x0.size());
    sum += l;
    sum_sq += l * l;
  }
  const double mean = sum / n;
  const double var = std::max(0.0, sum_sq / n - mean * mean);
  return {mean, std::sqrt(var / n)};
}

}  // namespace pathdiff::oracle
