#pragma once

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathdiff/dataset.hpp"
#include "pathdiff/denoiser.hpp"
#include "pathdiff/schedule.hpp"

namespace pathdiff {

struct TrainConfig {
  double p_split = 0.5;   // probability of drawing from the T2I half
  double p_uncond = 0.1;  // probability of dropping the available condition
  double learning_rate = 3e-4;
  int warmup_steps = 100;
  int batch_size = 64;
  int epochs = 1;
  std::int64_t max_steps = 0;  // > 0 overrides the epoch budget
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    require(p_split >= 0.0 && p_split <= 1.0, "p_split must lie in [0,1]");
    require(p_uncond >= 0.0 && p_uncond < 1.0, "p_uncond must lie in [0,1)");
    require(learning_rate > 0.0, "learning rate must be positive");
    require(batch_size >= 1, "batch size must be positive");
    require(warmup_steps >= 0 && epochs >= 0 && max_steps >= 0, "warmup, epochs and max_steps must be non-negative");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0,
            "invalid Adam hyperparameters");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"p_split", c.p_split},       {"p_uncond", c.p_uncond},     {"learning_rate", c.learning_rate},
       {"warmup_steps", c.warmup_steps}, {"batch_size", c.batch_size}, {"epochs", c.epochs},
       {"max_steps", c.max_steps},   {"seed", c.seed},             {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2}, {"adam_eps", c.adam_eps}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("p_split").get_to(c.p_split);
  j.at("p_uncond").get_to(c.p_uncond);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("warmup_steps").get_to(c.warmup_steps);
  j.at("batch_size").get_to(c.batch_size);
  j.at("epochs").get_to(c.epochs);
  j.at("max_steps").get_to(c.max_steps);
  j.at("seed").get_to(c.seed);
  j.at("adam_beta1").get_to(c.adam_beta1);
  j.at("adam_beta2").get_to(c.adam_beta2);
  j.at("adam_eps").get_to(c.adam_eps);
}

enum class Source { T2I, M2I };

inline const char* to_string(Source s) { return s == Source::T2I ? "T2I" : "M2I"; }

struct DrawnExample {
  const ImageF* z0 = nullptr;
  ConditionPair cond;
  Source source = Source::T2I;
  bool dropped = false;
};

/// Per-example dataset switch with condition dropout.
///
/// u < p_split selects the T2I half (so p_split is the T2I probability);
/// the available condition is then replaced by its null with probability
/// p_uncond, which leaves the fully-null pair.
inline DrawnExample draw_training_example(const std::vector<Record>& t2i, const std::vector<Record>& m2i, double p_split,
                                          double p_uncond, Rng& rng) {
  require(!t2i.empty() && !m2i.empty(), "draw_training_example needs both datasets non-empty");
  DrawnExample ex;
  const bool from_t2i = rng.uniform() < p_split;
  const Record& r = from_t2i ? t2i[rng.index(t2i.size())] : m2i[rng.index(m2i.size())];
  ex.z0 = &r.image;
  ex.cond = r.cond;
  ex.source = from_t2i ? Source::T2I : Source::M2I;
  ex.dropped = rng.uniform() < p_uncond;
  if (ex.dropped) {
    if (from_t2i)
      ex.cond.text = null_text(ex.cond.text.vocab_size());
    else
      ex.cond.mask = null_mask(ex.cond.mask.height(), ex.cond.mask.width(), ex.cond.mask.num_classes());
  }
  return ex;
}

template <typename Real>
struct AdamState {
  std::vector<Real> m;
  std::vector<Real> v;
  std::int64_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, Real(0)), v(n, Real(0)) {}
};

inline double warmup_lr(const TrainConfig& c, std::int64_t step) {
  if (c.warmup_steps <= 0) return c.learning_rate;
  return c.learning_rate * std::min(1.0, double(step) / double(c.warmup_steps));
}

/// Bias-corrected Adam update; advances state.step.
template <typename Real>
void adam_update(std::vector<Real>& params, const std::vector<Real>& grads, AdamState<Real>& s, double lr,
                 const TrainConfig& c) {
  require(params.size() == grads.size() && s.m.size() == params.size(), "adam_update size mismatch");
  ++s.step;
  const double bc1 = 1.0 - std::pow(c.adam_beta1, double(s.step));
  const double bc2 = 1.0 - std::pow(c.adam_beta2, double(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double m = c.adam_beta1 * double(s.m[i]) + (1.0 - c.adam_beta1) * g;
    const double v = c.adam_beta2 * double(s.v[i]) + (1.0 - c.adam_beta2) * g * g;
    s.m[i] = Real(m);
    s.v[i] = Real(v);
    params[i] = Real(double(params[i]) - lr * (m / bc1) / (std::sqrt(v / bc2) + c.adam_eps));
  }
}

struct TrainLogEntry {
  std::int64_t step = 0;
  Source source = Source::T2I;
  double loss = 0.0;
  bool dropped = false;
  double lr = 0.0;
};

/// Per-example records plus running means of the two loss regimes.
struct TrainLog {
  std::vector<TrainLogEntry> entries;
  std::vector<double> step_losses;
  double running_t2i = 0.0;
  double running_m2i = 0.0;
  std::int64_t count_t2i = 0;
  std::int64_t count_m2i = 0;

  void add(const TrainLogEntry& e) {
    entries.push_back(e);
    if (e.source == Source::T2I)
      running_t2i += (e.loss - running_t2i) / double(++count_t2i);
    else
      running_m2i += (e.loss - running_m2i) / double(++count_m2i);
  }

  void write_csv(std::ostream& out) const {
    out << "step,source,loss,dropped,lr\n";
    char buf[128];
    for (const auto& e : entries) {
      std::snprintf(buf, sizeof buf, "%lld,%s,%.9g,%d,%.9g\n", static_cast<long long>(e.step), to_string(e.source),
                    e.loss, e.dropped ? 1 : 0, e.lr);
      out << buf;
    }
  }
};

/// Assembles a batch following the joint-training recipe: dataset switch,
/// condition dropout, t ~ U{1..T}, eps ~ N(0, I), z_t by forward diffusion.
template <typename Real>
std::vector<TrainingSample<Real>> draw_batch(const UnpairedCorpus& corpus, const TrainConfig& c, const NoiseSchedule& s,
                                             Rng& rng, std::vector<DrawnExample>* drawn = nullptr) {
  std::vector<TrainingSample<Real>> batch;
  batch.reserve(std::size_t(c.batch_size));
  if (drawn) drawn->clear();
  for (int b = 0; b < c.batch_size; ++b) {
    DrawnExample ex = draw_training_example(corpus.t2i, corpus.m2i, c.p_split, c.p_uncond, rng);
    const int t = rng.integer(1, s.num_steps());
    Image<Real> z0 = ex.z0->template cast<Real>();
    Image<Real> eps = rng.normal_image<Real>(z0.shape());
    batch.push_back({forward_diffuse(z0, t, eps, s), ex.cond, t, std::move(eps)});
    if (drawn) drawn->push_back(std::move(ex));
  }
  return batch;
}

struct StepResult {
  double loss = 0.0;
  std::vector<double> per_example;
  double lr = 0.0;
};

/// One optimizer step on a prepared batch.
template <typename Real>
StepResult train_step(const Denoiser<Real>& model, DenoiserParams<Real>& params, AdamState<Real>& state,
                      const std::vector<TrainingSample<Real>>& batch, const TrainConfig& c, int threads = 1) {
  auto lg = model.loss_and_grad(params, batch, threads);
  if (!std::isfinite(lg.loss)) throw NumericalError("non-finite loss at step " + std::to_string(state.step + 1));
  const double lr = warmup_lr(c, state.step + 1);
  adam_update(params.values, lg.grads, state, lr, c);
  params.grads = std::move(lg.grads);
  return {lg.loss, std::move(lg.per_example), lr};
}

template <typename Real>
struct TrainResult {
  DenoiserParams<Real> params;
  TrainLog log;
  std::int64_t steps = 0;
};

inline std::int64_t steps_per_epoch(const UnpairedCorpus& corpus, const TrainConfig& c) {
  const std::int64_t n = std::int64_t(corpus.t2i.size() + corpus.m2i.size());
  return (n + c.batch_size - 1) / c.batch_size;
}

inline std::int64_t total_steps(const UnpairedCorpus& corpus, const TrainConfig& c) {
  return c.max_steps > 0 ? c.max_steps : steps_per_epoch(corpus, c) * c.epochs;
}

template <typename Real>
using EpochCallback = std::function<void(int, std::int64_t, const DenoiserParams<Real>&, const TrainLog&)>;

/// Fixed epoch (or step) budget; `on_epoch(epoch, step, params)` fires after
/// each completed epoch and after the final step.
template <typename Real>
TrainResult<Real> train(const Denoiser<Real>& model, const UnpairedCorpus& corpus, const NoiseSchedule& schedule,
                        const TrainConfig& c, int threads = 1,
                        const std::type_identity_t<EpochCallback<Real>>& on_epoch = {}) {
  c.validate();
  validate_unpaired(corpus);
  TrainResult<Real> result{model.init_params(Rng::derive(c.seed, 0).next_seed()), {}, 0};
  AdamState<Real> state(result.params.count());
  Rng rng = Rng::derive(c.seed, 1);
  const std::int64_t per_epoch = steps_per_epoch(corpus, c);
  const std::int64_t budget = total_steps(corpus, c);
  std::vector<DrawnExample> drawn;
  for (std::int64_t step = 1; step <= budget; ++step) {
    auto batch = draw_batch<Real>(corpus, c, schedule, rng, &drawn);
    StepResult r = train_step(model, result.params, state, batch, c, threads);
    for (std::size_t i = 0; i < batch.size(); ++i)
      result.log.add({step, drawn[i].source, r.per_example[i], drawn[i].dropped, r.lr});
    result.log.step_losses.push_back(r.loss);
    result.steps = step;
    const bool epoch_end = step % per_epoch == 0 || step == budget;
    if (epoch_end && on_epoch) on_epoch(int((step + per_epoch - 1) / per_epoch), step, result.params, result.log);
  }
  return result;
}

/// Mean loss on a fixed, pre-drawn set of samples.
template <typename Real>
double evaluate_loss(const Denoiser<Real>& model, const DenoiserParams<Real>& params,
                     const std::vector<TrainingSample<Real>>& samples, int threads = 1) {
  std::vector<double> losses(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const auto& s = samples[i];
    auto eps_hat = model.forward(params, s.z_t, s.t, s.cond);
    double sq = 0.0;
    for (std::size_t j = 0; j < eps_hat.size(); ++j) {
      const double d = double(eps_hat[j]) - double(s.eps[j]);
      sq += d * d;
    }
    losses[i] = sq / double(eps_hat.size());
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / double(samples.size());
}

}  // namespace pathdiff
