#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "pathdiff/conditioning.hpp"
#include "pathdiff/core.hpp"
#include "pathdiff/dataset.hpp"

namespace pathdiff {

// ---------------------------------------------------------------------------
// Rule-based segmenter
// ---------------------------------------------------------------------------

struct SegmenterSpec {
  std::vector<Color> prototypes;  // one per class, background first
  int min_area = 2;

  int num_classes() const { return int(prototypes.size()); }

  /// Class colour averaged over the hue tints of the world.
  static SegmenterSpec from_world(const ToyWorldSpec& world, int min_area = 2) {
    world.validate();
    SegmenterSpec s;
    s.min_area = min_area;
    for (int k = 0; k < world.num_classes; ++k) {
      Color c{0, 0, 0};
      for (int h = 0; h < world.n_hues; ++h) {
        const Color r = ToyWorldSpec::render_color(k, h);
        for (int i = 0; i < 3; ++i) c[i] += r[i] / world.n_hues;
      }
      s.prototypes.push_back(c);
    }
    return s;
  }
};

namespace detail {

/// Labels 4-connected components of `labels == cls`; returns the size of
/// each component and writes component ids (or -1) into `comp`.
inline std::vector<int> components(const std::vector<std::uint8_t>& labels, int h, int w, int cls, std::vector<int>& comp) {
  comp.assign(labels.size(), -1);
  std::vector<int> sizes, stack;
  for (int start = 0; start < h * w; ++start) {
    if (labels[start] != cls || comp[start] >= 0) continue;
    const int id = int(sizes.size());
    sizes.push_back(0);
    stack.push_back(start);
    comp[start] = id;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      ++sizes[id];
      const int y = p / w, x = p % w;
      const int nbrs[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& n : nbrs) {
        if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
        const int q = n[0] * w + n[1];
        if (labels[q] == cls && comp[q] < 0) {
          comp[q] = id;
          stack.push_back(q);
        }
      }
    }
  }
  return sizes;
}

}  // namespace detail

/// Nearest prototype per pixel (ties go to the lower class index), then
/// foreground components smaller than min_area become background.
inline MaskCondition rule_segmenter(const ImageF& image, const SegmenterSpec& spec) {
  require(image.channels() == 3, "segmenter expects 3-channel images");
  require(spec.num_classes() >= 1, "segmenter needs prototypes");
  const int h = image.height(), w = image.width();
  std::vector<std::uint8_t> labels(std::size_t(h) * w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int best = 0;
      double best_d = 0.0;
      for (int k = 0; k < spec.num_classes(); ++k) {
        double d = 0.0;
        for (int c = 0; c < 3; ++c) {
          const double diff = double(image.at(c, y, x)) - spec.prototypes[k][c];
          d += diff * diff;
        }
        if (k == 0 || d < best_d) {
          best = k;
          best_d = d;
        }
      }
      labels[std::size_t(y) * w + x] = std::uint8_t(best);
    }
  std::vector<int> comp;
  for (int k = 1; k < spec.num_classes(); ++k) {
    const auto sizes = detail::components(labels, h, w, k, comp);
    for (std::size_t p = 0; p < labels.size(); ++p)
      if (comp[p] >= 0 && sizes[comp[p]] < spec.min_area) labels[p] = 0;
  }
  return MaskCondition(h, w, spec.num_classes(), std::move(labels));
}

inline std::vector<MaskCondition> silver_masks(const std::vector<ImageF>& images, const SegmenterSpec& spec) {
  std::vector<MaskCondition> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(rule_segmenter(img, spec));
  return out;
}

// ---------------------------------------------------------------------------
// Dice and faithfulness
// ---------------------------------------------------------------------------

struct DiceResult {
  std::vector<std::optional<double>> per_class;  // empty when absent from both masks
  double macro = 1.0;       // over every present class, background included
  double cell_macro = 1.0;  // over present classes >= 1; 1 when neither mask has cells
};

inline DiceResult dice(const MaskCondition& a, const MaskCondition& b) {
  require(!a.is_null() && !b.is_null(), "dice is undefined for null masks");
  require(a.height() == b.height() && a.width() == b.width() && a.num_classes() == b.num_classes(),
          "dice needs masks of equal shape and class count");
  const int k = a.num_classes();
  std::vector<std::int64_t> inter(k, 0), ca(k, 0), cb(k, 0);
  for (std::size_t p = 0; p < a.labels().size(); ++p) {
    const int la = a.labels()[p], lb = b.labels()[p];
    ++ca[la];
    ++cb[lb];
    if (la == lb) ++inter[la];
  }
  DiceResult r;
  r.per_class.resize(k);
  double sum = 0.0, cell_sum = 0.0;
  int n = 0, cells = 0;
  for (int c = 0; c < k; ++c) {
    if (ca[c] + cb[c] == 0) continue;
    const double d = 2.0 * double(inter[c]) / double(ca[c] + cb[c]);
    r.per_class[c] = d;
    sum += d;
    ++n;
    if (c >= 1) {
      cell_sum += d;
      ++cells;
    }
  }
  if (n > 0) r.macro = sum / n;
  if (cells > 0) r.cell_macro = cell_sum / cells;
  return r;
}

/// Mean cell-class Dice between segmentations of generated images and the
/// masks they were conditioned on.
inline double fs1(const std::vector<ImageF>& generated, const std::vector<MaskCondition>& masks, const SegmenterSpec& spec) {
  require(generated.size() == masks.size() && !generated.empty(), "fs1 needs one mask per generated image");
  double total = 0.0;
  for (std::size_t i = 0; i < generated.size(); ++i) total += dice(rule_segmenter(generated[i], spec), masks[i]).cell_macro;
  return total / double(generated.size());
}

/// Mean cell-class Dice between segmentations of generated and paired real images.
inline double fs2(const std::vector<ImageF>& generated, const std::vector<ImageF>& real, const SegmenterSpec& spec) {
  require(generated.size() == real.size() && !generated.empty(), "fs2 needs one real image per generated image");
  double total = 0.0;
  for (std::size_t i = 0; i < generated.size(); ++i)
    total += dice(rule_segmenter(generated[i], spec), rule_segmenter(real[i], spec)).cell_macro;
  return total / double(generated.size());
}

// ---------------------------------------------------------------------------
// Toy features, Frechet distance, KID
// ---------------------------------------------------------------------------

using FeatureVector = std::vector<double>;

/// 3 x 8-bin colour histograms over [-1, 1], per-class area fractions of the
/// segmentation and per-class component counts divided by count_scale.
struct FeatureExtractor {
  SegmenterSpec segmenter;
  double count_scale = 4.0;

  static constexpr int kBins = 8;

  int dim() const { return 3 * kBins + 2 * segmenter.num_classes(); }

  FeatureVector operator()(const ImageF& image) const {
    require(image.channels() == 3, "features expect 3-channel images");
    const int k = segmenter.num_classes();
    FeatureVector f(std::size_t(dim()), 0.0);
    const double inv = 1.0 / double(image.height() * image.width());
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x) {
          const double v = std::clamp(double(image.at(c, y, x)), -1.0, 1.0);
          const int bin = std::min(kBins - 1, int((v + 1.0) * 0.5 * kBins));
          f[c * kBins + bin] += inv;
        }
    const MaskCondition mask = rule_segmenter(image, segmenter);
    for (auto l : mask.labels()) f[3 * kBins + l] += inv;
    std::vector<int> comp;
    for (int cls = 0; cls < k; ++cls)
      f[3 * kBins + k + cls] =
          double(detail::components(mask.labels(), mask.height(), mask.width(), cls, comp).size()) / count_scale;
    return f;
  }

  std::vector<FeatureVector> operator()(const std::vector<ImageF>& images, int threads = 1) const {
    std::vector<FeatureVector> out(images.size());
    parallel_for(images.size(), threads, [&](std::size_t i) { out[i] = (*this)(images[i]); });
    return out;
  }
};

namespace detail {

inline Eigen::MatrixXd to_matrix(const std::vector<FeatureVector>& rows) {
  require(!rows.empty(), "empty feature set");
  const auto d = Eigen::Index(rows.front().size());
  Eigen::MatrixXd m(Eigen::Index(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(Eigen::Index(rows[i].size()) == d, "feature vectors differ in length");
    for (Eigen::Index j = 0; j < d; ++j) m(Eigen::Index(i), j) = rows[i][j];
  }
  return m;
}

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// ||mu_A - mu_B||^2 + tr(S_A + S_B - 2 (S_A S_B)^(1/2)) between Gaussian fits.
/// The trace of the cross term is taken as tr((R S_B R)^(1/2)), R = S_A^(1/2),
/// with negative eigenvalues clipped. When either set has no more samples
/// than dimensions, 1e-6 I is added to both covariances.
inline double frechet(const std::vector<FeatureVector>& a, const std::vector<FeatureVector>& b) {
  require(a.size() >= 2 && b.size() >= 2, "frechet needs at least 2 samples per set");
  const Eigen::MatrixXd xa = detail::to_matrix(a), xb = detail::to_matrix(b);
  require(xa.cols() == xb.cols(), "feature sets differ in dimension");
  const Eigen::RowVectorXd ma = xa.colwise().mean(), mb = xb.colwise().mean();
  const Eigen::MatrixXd da = xa.rowwise() - ma, db = xb.rowwise() - mb;
  Eigen::MatrixXd sa = da.transpose() * da / double(xa.rows() - 1);
  Eigen::MatrixXd sb = db.transpose() * db / double(xb.rows() - 1);
  if (xa.rows() - 1 < xa.cols() || xb.rows() - 1 < xb.cols()) {
    sa.diagonal().array() += 1e-6;
    sb.diagonal().array() += 1e-6;
  }
  const Eigen::MatrixXd r = detail::psd_sqrt(sa);
  const Eigen::MatrixXd inner = r * sb * r;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * cross;
  return std::max(0.0, value);
}

inline double kid_kernel(const FeatureVector& x, const FeatureVector& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  const double v = s / double(x.size()) + 1.0;
  return v * v * v;
}

/// Unbiased squared MMD with the cubic polynomial kernel.
inline double kid(const std::vector<FeatureVector>& a, const std::vector<FeatureVector>& b) {
  require(a.size() >= 2 && b.size() >= 2, "kid needs at least 2 samples per set");
  const double m = double(a.size()), n = double(b.size());
  double kaa = 0.0, kbb = 0.0, kab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) kaa += kid_kernel(a[i], a[j]);
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = i + 1; j < b.size(); ++j) kbb += kid_kernel(b[i], b[j]);
  for (const auto& x : a)
    for (const auto& y : b) kab += kid_kernel(x, y);
  return 2.0 * kaa / (m * (m - 1.0)) + 2.0 * kbb / (n * (n - 1.0)) - 2.0 * kab / (m * n);
}

// ---------------------------------------------------------------------------
// Text-image alignment
// ---------------------------------------------------------------------------

inline double cosine(const FeatureVector& a, const FeatureVector& b) {
  require(a.size() == b.size(), "cosine needs equal lengths");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

/// Token prototypes are mean features of noiseless renders. Scores are
/// cosines after subtracting the mean prototype, so the shared background
/// signal does not dominate every comparison.
struct AlignmentModel {
  FeatureExtractor features;
  std::vector<FeatureVector> prototypes;
  FeatureVector center;

  static AlignmentModel build(const ToyWorldSpec& world, int renders_per_token = 64, std::uint64_t seed = 0,
                              int min_area = 2) {
    require(renders_per_token >= 1, "alignment prototypes need at least one render per token");
    ToyWorldSpec clean = world;
    clean.noise_sigma = 0.0;
    AlignmentModel m;
    m.features.segmenter = SegmenterSpec::from_world(world, min_area);
    const auto d = std::size_t(m.features.dim());
    m.center.assign(d, 0.0);
    for (int v = 0; v < world.vocab_size(); ++v) {
      FeatureVector mean(d, 0.0);
      for (int i = 0; i < renders_per_token; ++i) {
        Rng rng = Rng::derive(seed, std::uint64_t(v) * std::uint64_t(renders_per_token) + std::uint64_t(i));
        const auto f = m.features(gen_scene_for_token(clean, v, rng).image);
        for (std::size_t j = 0; j < d; ++j) mean[j] += f[j] / renders_per_token;
      }
      for (std::size_t j = 0; j < d; ++j) m.center[j] += mean[j] / world.vocab_size();
      m.prototypes.push_back(std::move(mean));
    }
    return m;
  }

  int vocab_size() const { return int(prototypes.size()); }

  double score(const FeatureVector& f, int token) const {
    require(token >= 0 && token < vocab_size(), "alignment needs a valid (non-null) token");
    FeatureVector a(f.size()), b(f.size());
    for (std::size_t j = 0; j < f.size(); ++j) {
      a[j] = f[j] - center[j];
      b[j] = prototypes[token][j] - center[j];
    }
    return cosine(a, b);
  }

  /// Argmax over tokens; ties go to the lower token.
  int classify(const FeatureVector& f) const {
    int best = 0;
    double best_s = score(f, 0);
    for (int v = 1; v < vocab_size(); ++v) {
      const double s = score(f, v);
      if (s > best_s) {
        best = v;
        best_s = s;
      }
    }
    return best;
  }
};

inline double alignment_score(const AlignmentModel& m, const ImageF& image, const TextCondition& text) {
  require(!text.is_null(), "alignment needs a valid (non-null) token");
  return m.score(m.features(image), text.token());
}

struct AlignmentSummary {
  double mean_score = 0.0;
  double accuracy = 0.0;
};

inline AlignmentSummary alignment(const AlignmentModel& m, const std::vector<ImageF>& images,
                                  const std::vector<TextCondition>& texts) {
  require(images.size() == texts.size() && !images.empty(), "alignment needs one text per image");
  AlignmentSummary s;
  for (std::size_t i = 0; i < images.size(); ++i) {
    require(!texts[i].is_null(), "alignment needs a valid (non-null) token");
    const auto f = m.features(images[i]);
    s.mean_score += m.score(f, texts[i].token());
    s.accuracy += m.classify(f) == texts[i].token() ? 1.0 : 0.0;
  }
  s.mean_score /= double(images.size());
  s.accuracy /= double(images.size());
  return s;
}

}  // namespace pathdiff
