#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathdiff/dataset.hpp"
#include "pathdiff/denoiser.hpp"
#include "pathdiff/io.hpp"
#include "pathdiff/sample.hpp"
#include "pathdiff/schedule.hpp"
#include "pathdiff/train.hpp"

namespace pathdiff {

struct WorldConfig {
  std::string kind = "toy";  // "toy" or "gmm"
  ToyWorldSpec toy;
  GmmGrid gmm;
  int n_t2i = 2000;
  int n_m2i = 2000;
  double split_ratio = 0.8;
};

/// Linear increments given at the 1000-step reference and multiplied by
/// 1000/T when `rescale` is set (capped at 0.999).
struct ScheduleConfig {
  int num_steps = 100;
  double increment_start = 1e-4;
  double increment_end = 0.02;
  bool rescale = true;

  NoiseSchedule build() const {
    require(num_steps >= 1, "schedule.num_steps must be >= 1");
    const double scale = rescale ? 1000.0 / num_steps : 1.0;
    return NoiseSchedule::linear(num_steps, std::min(increment_start * scale, 0.999),
                                 std::min(increment_end * scale, 0.999));
  }
};

struct EvalConfig {
  int num_samples = 100;
  int alignment_renders = 64;
  int segmenter_min_area = 2;
  std::vector<std::string> modes{"text", "mask", "both", "uncond", "silver", "random-pair"};
};

struct PathsConfig {
  std::string data_dir = "runs/data";
  std::string run_dir = "runs/run";
};

/// Every stage seed is derived from the single root `seed`, so the sections
/// below carry no seeds of their own.
struct ExperimentConfig {
  WorldConfig world;
  ScheduleConfig schedule;
  int base_width = 32;
  int time_embed_dim = 64;
  TrainConfig train;
  SamplerOptions sample;
  EvalConfig eval;
  PathsConfig paths;
  std::uint64_t seed = 0;

  enum Stream : std::uint64_t { kCorpus = 1, kSplit = 2, kTrain = 3, kSample = 4, kEval = 5 };
  std::uint64_t stage_seed(Stream s) const { return Rng::derive(seed, s).next_seed(); }

  Shape image_shape() const { return world.kind == "gmm" ? world.gmm.image_shape() : world.toy.image_shape(); }

  DenoiserConfig denoiser() const {
    const Shape s = image_shape();
    DenoiserConfig c;
    c.in_channels = s.channels;
    c.height = s.height;
    c.width = s.width;
    c.num_classes = world.kind == "gmm" ? world.gmm.rows() : world.toy.num_classes;
    c.vocab_size = world.kind == "gmm" ? world.gmm.columns() : world.toy.vocab_size();
    c.base_width = base_width;
    c.time_embed_dim = time_embed_dim;
    return c;
  }

  TrainConfig train_config() const {
    TrainConfig c = train;
    c.seed = stage_seed(kTrain);
    return c;
  }

  SamplerOptions sampler_options() const {
    SamplerOptions o = sample;
    o.seed = stage_seed(kSample);
    return o;
  }

  void validate() const {
    require(world.kind == "toy" || world.kind == "gmm", "world.kind must be \"toy\" or \"gmm\"");
    if (world.kind == "toy") world.toy.validate();
    else world.gmm.validate();
    require(world.n_t2i >= 2 && world.n_m2i >= 2, "world.n_t2i and world.n_m2i must be >= 2");
    require(world.split_ratio > 0.0 && world.split_ratio < 1.0, "world.split_ratio must lie in (0,1)");
    (void)schedule.build();
    denoiser().validate();
    train.validate();
    require(sample.steps >= 1 && sample.steps <= schedule.num_steps, "sample.steps must lie in [1, schedule.num_steps]");
    require(sample.guidance >= -1.0, "sample.guidance must be >= -1");
    require(sample.eta >= 0.0 && sample.eta <= 1.0, "sample.eta must lie in [0,1]");
    require(eval.num_samples >= 2 && eval.alignment_renders >= 1 && eval.segmenter_min_area >= 1,
            "eval.num_samples >= 2, eval.alignment_renders >= 1 and eval.segmenter_min_area >= 1 required");
    static const std::set<std::string> known{"text", "mask", "both", "uncond", "silver", "random-pair"};
    for (const auto& m : eval.modes) require(known.count(m) == 1, "unknown eval mode \"" + m + "\"");
  }
};

namespace detail {

inline nlohmann::json without(nlohmann::json j, const char* key) {
  j.erase(key);
  return j;
}

/// Overlays `given` on `defaults`, rejecting keys the defaults do not have.
inline nlohmann::json overlay(const nlohmann::json& defaults, const nlohmann::json& given, const std::string& where) {
  require(given.is_object(), where + " must be an object");
  nlohmann::json out = defaults;
  for (const auto& [key, value] : given.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    require(defaults.contains(key), "unknown config key " + path);
    if (defaults[key].is_object() && !defaults[key].empty())
      out[key] = overlay(defaults[key], value, path);
    else
      out[key] = value;
  }
  return out;
}

}  // namespace detail

inline nlohmann::json to_json_document(const ExperimentConfig& c) {
  nlohmann::json sample = detail::without(nlohmann::json(c.sample), "seed");
  return {{"world",
           {{"kind", c.world.kind},
            {"toy", detail::without(nlohmann::json(c.world.toy), "seed")},
            {"gmm", c.world.gmm},
            {"n_t2i", c.world.n_t2i},
            {"n_m2i", c.world.n_m2i},
            {"split_ratio", c.world.split_ratio}}},
          {"schedule",
           {{"num_steps", c.schedule.num_steps},
            {"increment_start", c.schedule.increment_start},
            {"increment_end", c.schedule.increment_end},
            {"rescale", c.schedule.rescale}}},
          {"denoiser", {{"base_width", c.base_width}, {"time_embed_dim", c.time_embed_dim}}},
          {"train", detail::without(nlohmann::json(c.train), "seed")},
          {"sample", sample},
          {"eval",
           {{"num_samples", c.eval.num_samples},
            {"alignment_renders", c.eval.alignment_renders},
            {"segmenter_min_area", c.eval.segmenter_min_area},
            {"modes", c.eval.modes}}},
          {"paths", {{"data_dir", c.paths.data_dir}, {"run_dir", c.paths.run_dir}}},
          {"seed", c.seed}};
}

/// Parses a (possibly partial) config document over the defaults. Unknown
/// keys and ill-typed values are validation errors.
inline ExperimentConfig parse_config(const nlohmann::json& given) {
  ExperimentConfig c;
  const nlohmann::json j = detail::overlay(to_json_document(c), given, "");
  try {
    const auto& w = j.at("world");
    w.at("kind").get_to(c.world.kind);
    nlohmann::json toy = w.at("toy");
    toy["seed"] = 0;
    toy.get_to(c.world.toy);
    w.at("gmm").get_to(c.world.gmm);
    w.at("n_t2i").get_to(c.world.n_t2i);
    w.at("n_m2i").get_to(c.world.n_m2i);
    w.at("split_ratio").get_to(c.world.split_ratio);
    const auto& s = j.at("schedule");
    s.at("num_steps").get_to(c.schedule.num_steps);
    s.at("increment_start").get_to(c.schedule.increment_start);
    s.at("increment_end").get_to(c.schedule.increment_end);
    s.at("rescale").get_to(c.schedule.rescale);
    j.at("denoiser").at("base_width").get_to(c.base_width);
    j.at("denoiser").at("time_embed_dim").get_to(c.time_embed_dim);
    nlohmann::json train = j.at("train");
    train["seed"] = 0;
    train.get_to(c.train);
    nlohmann::json sample = j.at("sample");
    sample["seed"] = 0;
    sample.get_to(c.sample);
    const auto& e = j.at("eval");
    e.at("num_samples").get_to(c.eval.num_samples);
    e.at("alignment_renders").get_to(c.eval.alignment_renders);
    e.at("segmenter_min_area").get_to(c.eval.segmenter_min_area);
    e.at("modes").get_to(c.eval.modes);
    j.at("paths").at("data_dir").get_to(c.paths.data_dir);
    j.at("paths").at("run_dir").get_to(c.paths.run_dir);
    j.at("seed").get_to(c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Applies a dotted override such as "train.epochs" = "5". The value is read
/// as JSON when it parses, otherwise as a string.
inline void apply_override(nlohmann::json& doc, const std::string& dotted, const std::string& value) {
  require(!dotted.empty(), "empty override key");
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require(!key.empty(), "malformed override key " + dotted);
    if (dot == std::string::npos) {
      nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
      return;
    }
    if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = nlohmann::json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path,
                                    const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    try {
      doc = nlohmann::json::parse(io::read_text(path));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("cannot parse config " + path.string() + ": " + e.what());
    }
  }
  for (const auto& [k, v] : overrides) apply_override(doc, k, v);
  return parse_config(doc);
}

}  // namespace pathdiff
