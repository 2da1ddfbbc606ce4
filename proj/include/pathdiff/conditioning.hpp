#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pathdiff/core.hpp"

namespace pathdiff {

/// Per-pixel class labels in {0..K-1}, or the null mask where every pixel
/// carries the reserved label K. Label 0 is background, so an all-zero grid
/// is a valid (empty) mask, never the null one.
class MaskCondition {
 public:
  MaskCondition() = default;
  MaskCondition(int height, int width, int num_classes, std::vector<std::uint8_t> labels)
      : height_(height), width_(width), num_classes_(num_classes), labels_(std::move(labels)) {
    require(height >= 1 && width >= 1, "mask size must be positive");
    require(num_classes >= 1 && num_classes <= 254, "mask class count must lie in [1, 254]");
    require(labels_.size() == std::size_t(height) * std::size_t(width), "mask label count does not match its size");
    std::size_t nulls = 0;
    for (auto v : labels_) {
      require(v <= num_classes, "mask label " + std::to_string(v) + " exceeds null label " + std::to_string(num_classes));
      nulls += (v == num_classes);
    }
    require(nulls == 0 || nulls == labels_.size(), "mask mixes null and valid pixels");
  }

  static MaskCondition filled(int height, int width, int num_classes, int label) {
    return {height, width, num_classes,
            std::vector<std::uint8_t>(std::size_t(height) * std::size_t(width), std::uint8_t(label))};
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int num_classes() const { return num_classes_; }
  int null_label() const { return num_classes_; }
  bool is_null() const { return !labels_.empty() && labels_.front() == num_classes_; }

  int at(int y, int x) const { return labels_[std::size_t(y) * width_ + x]; }
  const std::vector<std::uint8_t>& labels() const { return labels_; }

  bool operator==(const MaskCondition&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int num_classes_ = 0;
  std::vector<std::uint8_t> labels_;
};

/// Categorical descriptor; token == vocab_size is the null (empty) text.
class TextCondition {
 public:
  TextCondition() = default;
  TextCondition(int token, int vocab_size) : token_(token), vocab_size_(vocab_size) {
    require(vocab_size >= 1, "vocabulary size must be positive");
    require(token >= 0 && token <= vocab_size, "text token " + std::to_string(token) + " outside [0, V]");
  }

  int token() const { return token_; }
  int vocab_size() const { return vocab_size_; }
  int null_token() const { return vocab_size_; }
  bool is_null() const { return token_ == vocab_size_; }

  bool operator==(const TextCondition&) const = default;

 private:
  int token_ = 0;
  int vocab_size_ = 0;
};

enum class ConditionMode { TextOnly, MaskOnly, Both, Unconditional };

inline const char* to_string(ConditionMode mode) {
  switch (mode) {
    case ConditionMode::TextOnly: return "text";
    case ConditionMode::MaskOnly: return "mask";
    case ConditionMode::Both: return "both";
    case ConditionMode::Unconditional: return "uncond";
  }
  return "?";
}

struct ConditionPair {
  MaskCondition mask;
  TextCondition text;

  ConditionMode mode() const {
    if (mask.is_null()) return text.is_null() ? ConditionMode::Unconditional : ConditionMode::TextOnly;
    return text.is_null() ? ConditionMode::MaskOnly : ConditionMode::Both;
  }
  bool operator==(const ConditionPair&) const = default;
};

inline MaskCondition null_mask(int height, int width, int num_classes) {
  require(height >= 1 && width >= 1 && num_classes >= 1, "null_mask needs positive H, W, K");
  return MaskCondition::filled(height, width, num_classes, num_classes);
}

inline TextCondition null_text(int vocab_size) { return {vocab_size, vocab_size}; }

inline ConditionPair unconditional(const MaskCondition& like_mask, int vocab_size) {
  return {null_mask(like_mask.height(), like_mask.width(), like_mask.num_classes()), null_text(vocab_size)};
}

/// One-hot (K+1, H, W) encoding; channel K is the null channel.
template <typename Real>
Image<Real> encode_mask(const MaskCondition& m) {
  require(m.height() >= 1, "cannot encode an empty mask");
  const int k1 = m.num_classes() + 1;
  Image<Real> out(Shape{k1, m.height(), m.width()});
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) out.at(m.at(y, x), y, x) = Real(1);
  return out;
}

/// Mask index chosen for each of `num_texts` texts, uniform and seeded.
inline std::vector<std::size_t> random_pairing_indices(std::size_t num_masks, std::size_t num_texts, std::uint64_t seed) {
  require(num_masks > 0 && num_texts > 0, "random_pairing needs non-empty mask and text lists");
  Rng rng(seed);
  std::vector<std::size_t> picks(num_texts);
  for (auto& p : picks) p = rng.index(num_masks);
  return picks;
}

/// PathDiff-R style pairing: each text gets a uniformly chosen mask.
inline std::vector<ConditionPair> random_pairing(const std::vector<MaskCondition>& masks,
                                                 const std::vector<TextCondition>& texts, std::uint64_t seed) {
  const auto picks = random_pairing_indices(masks.size(), texts.size(), seed);
  std::vector<ConditionPair> pairs;
  pairs.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) pairs.push_back({masks[picks[i]], texts[i]});
  return pairs;
}

}  // namespace pathdiff
