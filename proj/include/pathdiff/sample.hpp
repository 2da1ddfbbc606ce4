#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathdiff/conditioning.hpp"
#include "pathdiff/core.hpp"
#include "pathdiff/denoiser.hpp"
#include "pathdiff/schedule.hpp"

namespace pathdiff {

/// Any noise predictor eps(z_t, t, c): the trained network or an oracle.
template <typename Real>
using EpsilonModel = std::function<Image<Real>(const Image<Real>&, int, const ConditionPair&)>;

template <typename Real>
EpsilonModel<Real> network_model(const Denoiser<Real>& model, const DenoiserParams<Real>& params) {
  return [&model, &params](const Image<Real>& z, int t, const ConditionPair& c) { return model.forward(params, z, t, c); };
}

/// (1 + w) eps_cond - w eps_uncond, evaluated in 64-bit.
template <typename Real>
Image<Real> cfg_combine(const Image<Real>& eps_cond, const Image<Real>& eps_uncond, double w) {
  require_same_shape(eps_cond, eps_uncond, "cfg_combine");
  Image<Real> out(eps_cond.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<Real>((1.0 + w) * double(eps_cond[i]) - w * double(eps_uncond[i]));
  return out;
}

/// Signature of the guidance combiner, swappable for fault-injection checks.
template <typename Real>
using CfgCombiner = Image<Real> (*)(const Image<Real>&, const Image<Real>&, double);

/// Classifier-free guided noise estimate. The unconditional branch always
/// receives the fully-null pair, whatever the mode of `cond`.
template <typename Real>
Image<Real> cfg_epsilon(const EpsilonModel<Real>& model, const Image<Real>& z_t, int t, const ConditionPair& cond, double w,
                        CfgCombiner<Real> combine = &cfg_combine<Real>) {
  const Image<Real> eps_cond = model(z_t, t, cond);
  const Image<Real> eps_uncond = model(z_t, t, unconditional(cond.mask, cond.text.vocab_size()));
  return combine(eps_cond, eps_uncond, w);
}

/// Uniform-stride step list T = t_0 > t_1 > ... > t_{S-1} >= 1 followed by
/// the terminal 0, with t_k = round(T (S - k) / S).
inline std::vector<int> make_ddim_subsequence(int num_steps, int sample_steps) {
  require(sample_steps >= 1 && sample_steps <= num_steps, "DDIM subsequence needs 1 <= S <= T");
  std::vector<int> steps;
  steps.reserve(std::size_t(sample_steps) + 1);
  for (int k = 0; k < sample_steps; ++k) {
    const std::int64_t num = std::int64_t(num_steps) * (sample_steps - k);
    steps.push_back(int((2 * num + sample_steps) / (2 * sample_steps)));
  }
  steps.push_back(0);
  return steps;
}

enum class SamplerKind { Ddim, Ancestral };

struct SamplerOptions {
  double guidance = 1.75;
  SamplerKind sampler = SamplerKind::Ddim;
  int steps = 50;  // DDIM subsequence length; ancestral always walks T..1
  double eta = 0.0;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const SamplerOptions& o) {
  j = {{"guidance", o.guidance},
       {"sampler", o.sampler == SamplerKind::Ddim ? "ddim" : "ancestral"},
       {"steps", o.steps},
       {"eta", o.eta},
       {"seed", o.seed}};
}

inline void from_json(const nlohmann::json& j, SamplerOptions& o) {
  j.at("guidance").get_to(o.guidance);
  const std::string kind = j.at("sampler").get<std::string>();
  require(kind == "ddim" || kind == "ancestral", "sampler must be \"ddim\" or \"ancestral\"");
  o.sampler = kind == "ddim" ? SamplerKind::Ddim : SamplerKind::Ancestral;
  j.at("steps").get_to(o.steps);
  j.at("eta").get_to(o.eta);
  j.at("seed").get_to(o.seed);
}

/// Guidance strength, condition and sampler for one generation request.
struct GuidanceSpec {
  SamplerOptions options;
  ConditionPair cond;
};

/// Runs one reverse chain from z_T ~ N(0, I) drawn from `rng`.
template <typename Real>
Image<Real> sample_one(const EpsilonModel<Real>& model, const ConditionPair& cond, const SamplerOptions& o,
                       const NoiseSchedule& s, Shape shape, Rng& rng, CfgCombiner<Real> combine = &cfg_combine<Real>) {
  require(o.guidance >= -1.0, "guidance strength must be >= -1");
  Image<Real> z = rng.normal_image<Real>(shape);
  auto check = [](const Image<Real>& img, int t) {
    if (!all_finite(img)) throw NumericalError("non-finite sampler state at step " + std::to_string(t));
  };
  if (o.sampler == SamplerKind::Ddim) {
    const auto steps = make_ddim_subsequence(s.num_steps(), o.steps);
    for (std::size_t k = 0; k + 1 < steps.size(); ++k) {
      const Image<Real> eps = cfg_epsilon(model, z, steps[k], cond, o.guidance, combine);
      z = ddim_step(z, eps, steps[k], steps[k + 1], o.eta, s, rng);
      check(z, steps[k]);
    }
  } else {
    for (int t = s.num_steps(); t >= 1; --t) {
      const Image<Real> eps = cfg_epsilon(model, z, t, cond, o.guidance, combine);
      const Image<Real> z0_hat = predict_x0(z, eps, t, s);
      z = ancestral_step(z, z0_hat, t, s, rng);
      check(z, t);
    }
  }
  return z;
}

/// One sample per condition; sample i draws from the stream (seed, i), so
/// results do not depend on `threads`.
template <typename Real>
std::vector<Image<Real>> generate_each(const EpsilonModel<Real>& model, const std::vector<ConditionPair>& conds,
                                       const SamplerOptions& o, const NoiseSchedule& s, Shape shape, int threads = 1,
                                       CfgCombiner<Real> combine = &cfg_combine<Real>) {
  std::vector<Image<Real>> out(conds.size());
  parallel_for(conds.size(), threads, [&](std::size_t i) {
    Rng rng = Rng::derive(o.seed, i);
    out[i] = sample_one(model, conds[i], o, s, shape, rng, combine);
  });
  return out;
}

template <typename Real>
std::vector<Image<Real>> generate(const EpsilonModel<Real>& model, const GuidanceSpec& spec, const NoiseSchedule& s,
                                  Shape shape, int n, int threads = 1) {
  require(n >= 1, "generate needs n >= 1");
  return generate_each(model, std::vector<ConditionPair>(std::size_t(n), spec.cond), spec.options, s, shape, threads);
}

}  // namespace pathdiff
