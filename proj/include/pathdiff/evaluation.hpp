#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathdiff/conditioning.hpp"
#include "pathdiff/dataset.hpp"
#include "pathdiff/metrics.hpp"
#include "pathdiff/sample.hpp"

namespace pathdiff {

// Evaluation protocol shared by the CLI and the acceptance suite.
//
//   text / mask / both / uncond   held-out scenes (withheld truth of the test
//                                 split); FS1 against the scene mask, FS2 and
//                                 alignment against the scene image and text
//   silver                        test T2I images: silver mask from the real
//                                 image, paired with that image's text
//   random-pair                   the same texts, each with a mask drawn
//                                 uniformly from the test M2I masks
//
// FS1 for silver and random-pair is measured against the silver mask of the
// T2I image whose text was used, so the two variants share a reference.

struct ModeConditions {
  std::string mode;
  std::vector<ConditionPair> conds;
  std::vector<ImageF> real;                     // reference images (FD/KID, FS2)
  std::vector<MaskCondition> reference_masks;   // FS1 reference, empty when not applicable
  std::vector<TextCondition> reference_texts;   // alignment reference, empty when not applicable
};

struct EvalContext {
  SegmenterSpec segmenter;
  FeatureExtractor features;
  AlignmentModel alignment;

  static EvalContext for_world(const ToyWorldSpec& world, int min_area, int renders, std::uint64_t seed) {
    EvalContext c;
    c.segmenter = SegmenterSpec::from_world(world, min_area);
    c.alignment = AlignmentModel::build(world, renders, seed, min_area);
    c.features = c.alignment.features;
    return c;
  }
};

inline std::vector<Scene> held_out_scenes(const UnpairedCorpus& test, std::size_t n) {
  require(!test.truth.empty(), "evaluation needs the withheld truth of the test split");
  std::vector<Scene> out(test.truth.begin(), test.truth.begin() + std::ptrdiff_t(std::min(n, test.truth.size())));
  return out;
}

inline ModeConditions conditions_for_mode(const std::string& mode, const UnpairedCorpus& test, std::size_t n,
                                          const SegmenterSpec& segmenter, std::uint64_t pairing_seed) {
  ModeConditions mc;
  mc.mode = mode;
  const int h = test.info.shape.height, w = test.info.shape.width;
  const int k = test.info.num_classes, v = test.info.vocab_size;
  if (mode == "text" || mode == "mask" || mode == "both" || mode == "uncond") {
    for (const auto& s : held_out_scenes(test, n)) {
      ConditionPair c{null_mask(h, w, k), null_text(v)};
      if (mode == "mask" || mode == "both") {
        c.mask = s.mask;
        mc.reference_masks.push_back(s.mask);
      }
      if (mode == "text" || mode == "both") {
        c.text = s.text;
        mc.reference_texts.push_back(s.text);
      }
      mc.conds.push_back(std::move(c));
      mc.real.push_back(s.image);
    }
    return mc;
  }
  require(mode == "silver" || mode == "random-pair", "unknown sampling mode \"" + mode + "\"");
  require(!test.t2i.empty() && !test.m2i.empty(), "silver and random-pair modes need both test halves");
  const std::size_t count = std::min(n, test.t2i.size());
  std::vector<TextCondition> texts;
  for (std::size_t i = 0; i < count; ++i) {
    const Record& r = test.t2i[i];
    mc.real.push_back(r.image);
    mc.reference_masks.push_back(rule_segmenter(r.image, segmenter));
    mc.reference_texts.push_back(r.cond.text);
    texts.push_back(r.cond.text);
  }
  if (mode == "silver") {
    for (std::size_t i = 0; i < count; ++i) mc.conds.push_back({mc.reference_masks[i], texts[i]});
  } else {
    std::vector<MaskCondition> pool;
    for (const auto& r : test.m2i) pool.push_back(r.cond.mask);
    mc.conds = random_pairing(pool, texts, pairing_seed);
  }
  return mc;
}

struct ModeReport {
  std::string mode;
  std::size_t count = 0;
  double toy_fd = 0.0;
  double toy_kid = 0.0;
  std::optional<double> fs1;
  std::optional<double> fs2;
  std::optional<double> alignment;
  std::optional<double> alignment_accuracy;
};

inline void to_json(nlohmann::json& j, const ModeReport& r) {
  j = {{"mode", r.mode}, {"count", r.count}, {"toy_fd", r.toy_fd}, {"toy_kid", r.toy_kid}};
  auto put = [&](const char* key, const std::optional<double>& v) { j[key] = v ? nlohmann::json(*v) : nlohmann::json(); };
  put("fs1", r.fs1);
  put("fs2", r.fs2);
  put("alignment", r.alignment);
  put("alignment_accuracy", r.alignment_accuracy);
}

inline void from_json(const nlohmann::json& j, ModeReport& r) {
  j.at("mode").get_to(r.mode);
  j.at("count").get_to(r.count);
  j.at("toy_fd").get_to(r.toy_fd);
  j.at("toy_kid").get_to(r.toy_kid);
  auto get = [&](const char* key, std::optional<double>& v) {
    v = j.at(key).is_null() ? std::nullopt : std::optional<double>(j.at(key).get<double>());
  };
  get("fs1", r.fs1);
  get("fs2", r.fs2);
  get("alignment", r.alignment);
  get("alignment_accuracy", r.alignment_accuracy);
}

/// Scores generated images against the references of their mode. FS2 is
/// reported where the conditioning mask describes the reference image.
inline ModeReport score_mode(const ModeConditions& mc, const std::vector<ImageF>& generated, const EvalContext& ctx,
                             int threads = 1) {
  require(generated.size() == mc.conds.size(), "one generated image per condition required");
  ModeReport r;
  r.mode = mc.mode;
  r.count = generated.size();
  const auto fg = ctx.features(generated, threads);
  const auto fr = ctx.features(mc.real, threads);
  r.toy_fd = frechet(fg, fr);
  r.toy_kid = kid(fg, fr);
  if (!mc.reference_masks.empty()) r.fs1 = fs1(generated, mc.reference_masks, ctx.segmenter);
  if (mc.mode == "mask" || mc.mode == "both" || mc.mode == "silver") r.fs2 = fs2(generated, mc.real, ctx.segmenter);
  if (!mc.reference_texts.empty()) {
    const auto a = alignment(ctx.alignment, generated, mc.reference_texts);
    r.alignment = a.mean_score;
    r.alignment_accuracy = a.accuracy;
  }
  return r;
}

/// Generates one sample per condition of the mode and scores it.
template <typename Real>
ModeReport evaluate_mode(const EpsilonModel<Real>& model, const ModeConditions& mc, const SamplerOptions& o,
                         const NoiseSchedule& s, const EvalContext& ctx, int threads = 1,
                         std::vector<ImageF>* generated_out = nullptr) {
  auto generated = generate_each(model, mc.conds, o, s, mc.real.front().shape(), threads);
  std::vector<ImageF> images;
  images.reserve(generated.size());
  for (auto& g : generated) images.push_back(g.template cast<float>());
  ModeReport r = score_mode(mc, images, ctx, threads);
  if (generated_out) *generated_out = std::move(images);
  return r;
}

// ---------------------------------------------------------------------------
// GMM worlds: samples are 2-D points; a sample is on target when the nearest
// column mean (x) and row mean (y) match the conditioned ones.
// ---------------------------------------------------------------------------

inline int nearest_index(const std::vector<double>& means, double v) {
  int best = 0;
  for (int i = 1; i < int(means.size()); ++i)
    if (std::abs(v - means[i]) < std::abs(v - means[best])) best = i;
  return best;
}

inline bool on_target(const GmmGrid& grid, const ConditionPair& c, double x, double y) {
  bool ok = true;
  if (!c.text.is_null()) ok = ok && nearest_index(grid.column_means, x) == c.text.token();
  if (!c.mask.is_null()) ok = ok && nearest_index(grid.row_means, y) == c.mask.at(0, 0);
  return ok;
}

struct GmmModeReport {
  std::string mode;
  std::size_t count = 0;
  double target_fraction = 0.0;
  double mean_x = 0.0;
  double mean_y = 0.0;
};

inline void to_json(nlohmann::json& j, const GmmModeReport& r) {
  j = {{"mode", r.mode}, {"count", r.count}, {"target_fraction", r.target_fraction}, {"mean_x", r.mean_x}, {"mean_y", r.mean_y}};
}

inline GmmModeReport score_gmm(const std::string& mode, const GmmGrid& grid, const std::vector<ConditionPair>& conds,
                               const std::vector<ImageF>& points) {
  require(conds.size() == points.size() && !points.empty(), "one point per condition required");
  GmmModeReport r;
  r.mode = mode;
  r.count = points.size();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double x = points[i][0], y = points[i][1];
    hits += on_target(grid, conds[i], x, y) ? 1 : 0;
    r.mean_x += x / double(points.size());
    r.mean_y += y / double(points.size());
  }
  r.target_fraction = double(hits) / double(points.size());
  return r;
}

/// Conditions for GMM modes cycle through the grid (column, row) pairs.
inline std::vector<ConditionPair> gmm_conditions(const std::string& mode, const GmmGrid& grid, std::size_t n) {
  std::vector<ConditionPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int col = int(i % std::size_t(grid.columns()));
    const int row = int((i / std::size_t(grid.columns())) % std::size_t(grid.rows()));
    ConditionPair c{null_mask(1, 1, grid.rows()), null_text(grid.columns())};
    if (mode == "text" || mode == "both") c.text = TextCondition(col, grid.columns());
    if (mode == "mask" || mode == "both") c.mask = MaskCondition::filled(1, 1, grid.rows(), row);
    require(mode == "text" || mode == "mask" || mode == "both" || mode == "uncond",
            "gmm worlds support the text, mask, both and uncond modes only");
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace pathdiff
