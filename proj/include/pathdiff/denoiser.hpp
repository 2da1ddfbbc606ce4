#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathdiff/conditioning.hpp"
#include "pathdiff/core.hpp"
#include "pathdiff/io.hpp"
#include "pathdiff/layers.hpp"

namespace pathdiff {

/// Compact conditional U-Net for noise prediction.
///
///   input  = concat(z_t, one_hot(mask))            (C + K + 1 channels)
///   embed  = MLP(sinusoid(t)) + text_table[token]
///   res1 -> [avgpool 2x] -> down conv -> res2 -> [nearest 2x] -> up conv
///   -> concat(skip = res1) -> merge conv -> res3 -> SiLU -> head
///
/// Every residual block adds a per-channel projection of SiLU(embed) after
/// its first convolution. Pooling is skipped when H or W is odd (e.g. 1x1
/// "images" of the Gaussian-mixture testbed), leaving the topology intact.
struct DenoiserConfig {
  int in_channels = 3;
  int height = 16;
  int width = 16;
  int num_classes = 4;
  int vocab_size = 6;
  int base_width = 32;
  int time_embed_dim = 64;

  int mask_channels() const { return num_classes + 1; }
  bool downsamples() const { return height % 2 == 0 && width % 2 == 0; }
  Shape image_shape() const { return {in_channels, height, width}; }

  void validate() const {
    require(in_channels >= 1 && height >= 1 && width >= 1, "denoiser image shape must be positive");
    require(num_classes >= 1 && vocab_size >= 1, "denoiser needs K >= 1 and V >= 1");
    require(base_width >= 1, "denoiser base width must be positive");
    require(time_embed_dim >= 2 && time_embed_dim % 2 == 0, "time embedding dimension must be even and >= 2");
  }
  bool operator==(const DenoiserConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const DenoiserConfig& c) {
  j = {{"in_channels", c.in_channels}, {"height", c.height},         {"width", c.width},
       {"num_classes", c.num_classes}, {"vocab_size", c.vocab_size}, {"base_width", c.base_width},
       {"time_embed_dim", c.time_embed_dim}};
}

inline void from_json(const nlohmann::json& j, DenoiserConfig& c) {
  j.at("in_channels").get_to(c.in_channels);
  j.at("height").get_to(c.height);
  j.at("width").get_to(c.width);
  j.at("num_classes").get_to(c.num_classes);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("base_width").get_to(c.base_width);
  j.at("time_embed_dim").get_to(c.time_embed_dim);
}

struct ParamGroup {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Flat parameter vector plus gradient storage of identical layout.
template <typename Real>
struct DenoiserParams {
  std::vector<ParamGroup> groups;
  std::vector<Real> values;
  std::vector<Real> grads;

  std::size_t count() const { return values.size(); }
  const ParamGroup& group(const std::string& name) const {
    for (const auto& g : groups)
      if (g.name == name) return g;
    throw ValidationError("unknown parameter group " + name);
  }
  std::span<Real> view(const std::string& name) {
    const auto& g = group(name);
    return {values.data() + g.offset, g.size};
  }
  std::span<Real> grad_view(const std::string& name) {
    const auto& g = group(name);
    return {grads.data() + g.offset, g.size};
  }
  void zero_grads() { std::fill(grads.begin(), grads.end(), Real(0)); }
};

/// One supervised example: noisy input, condition, step and target noise.
template <typename Real>
struct TrainingSample {
  Image<Real> z_t;
  ConditionPair cond;
  int t = 1;
  Image<Real> eps;
};

template <typename Real>
struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> per_example;
  std::vector<Real> grads;
};

template <typename Real>
class Denoiser {
 public:
  explicit Denoiser(DenoiserConfig config) : config_(config) {
    config_.validate();
    build_layout();
  }

  const DenoiserConfig& config() const { return config_; }
  std::size_t parameter_count() const { return total_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }

  /// He-normal hidden weights, zero biases. The mask slice of the input
  /// convolution and the whole output head start at zero.
  DenoiserParams<Real> init_params(std::uint64_t seed) const {
    DenoiserParams<Real> p;
    p.groups = groups_;
    p.values.assign(total_, Real(0));
    p.grads.assign(total_, Real(0));
    Rng rng(seed);
    for (const auto& g : groups_) {
      const bool is_bias = g.name.ends_with(".bias");
      if (is_bias || g.name.starts_with("head.")) continue;
      double stddev = 1.0;
      if (g.name != "text.embedding") {
        std::size_t fan_in = 1;
        for (std::size_t d = 1; d < g.shape.size(); ++d) fan_in *= std::size_t(g.shape[d]);
        stddev = std::sqrt(2.0 / double(fan_in));
      }
      for (std::size_t i = 0; i < g.size; ++i) p.values[g.offset + i] = Real(stddev * rng.normal());
    }
    // Zero the mask-conditioning branch of the input projection.
    const auto& in = p.group("conv_in.weight");
    const int cin = config_.in_channels + config_.mask_channels();
    for (int co = 0; co < config_.base_width; ++co)
      for (int ci = config_.in_channels; ci < cin; ++ci)
        for (int k = 0; k < 9; ++k) p.values[in.offset + (std::size_t(co) * cin + ci) * 9 + k] = Real(0);
    return p;
  }

  /// Activations retained for the backward pass.
  struct Cache {
    struct Block {
      std::vector<Real> x, a1, c1, a2, out;
    };
    std::vector<Real> x_in, h0;
    std::vector<Real> t_sin, u1, a_u1, e, se;
    Block r1, r2, r3;
    std::vector<Real> pooled, d, up, uc, cat, mg, a_head, out;
    std::vector<Real> col;
    int token = 0;
  };

  Image<Real> forward(const DenoiserParams<Real>& p, const Image<Real>& z_t, int t, const ConditionPair& c) const {
    Cache cache;
    return forward(p, z_t, t, c, cache);
  }

  Image<Real> forward(const DenoiserParams<Real>& p, const Image<Real>& z_t, int t, const ConditionPair& c,
                      Cache& k) const {
    check_inputs(z_t, t, c);
    const int C = config_.in_channels, H = config_.height, W = config_.width, w = config_.base_width;
    const int E = config_.time_embed_dim;
    const int H2 = config_.downsamples() ? H / 2 : H, W2 = config_.downsamples() ? W / 2 : W;
    const std::size_t hw = std::size_t(H) * W, hw2 = std::size_t(H2) * W2;
    const Real* P = p.values.data();

    // Embedding: MLP(sinusoid(t)) + text row. Null text is just row V.
    k.t_sin.resize(E);
    layers::sinusoidal_embedding(double(t), E, k.t_sin.data());
    k.u1.resize(E);
    layers::linear_forward(E, E, k.t_sin.data(), P + off_.time_fc1_w, P + off_.time_fc1_b, k.u1.data());
    k.a_u1.resize(E);
    layers::silu_forward<Real>(k.u1, k.a_u1);
    k.e.resize(E);
    layers::linear_forward(E, E, k.a_u1.data(), P + off_.time_fc2_w, P + off_.time_fc2_b, k.e.data());
    k.token = c.text.token();
    const Real* row = P + off_.text_table + std::size_t(k.token) * E;
    for (int i = 0; i < E; ++i) k.e[i] += row[i];
    k.se.resize(E);
    layers::silu_forward<Real>(k.e, k.se);

    // Input: concat(z_t, one_hot(mask)). Null mask is just channel K.
    const int cin = C + config_.mask_channels();
    k.x_in.assign(std::size_t(cin) * hw, Real(0));
    std::copy(z_t.storage().begin(), z_t.storage().end(), k.x_in.begin());
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) k.x_in[(std::size_t(C + c.mask.at(y, x)) * H + y) * W + x] = Real(1);
    k.h0.resize(std::size_t(w) * hw);
    layers::conv3x3_forward({cin, w, H, W}, k.x_in.data(), P + off_.conv_in_w, P + off_.conv_in_b, k.h0.data(), k.col);

    block_forward(p, off_.res1, w, H, W, k.h0, k.se, k.r1, k.col);

    const std::vector<Real>* pooled = &k.r1.out;
    if (config_.downsamples()) {
      k.pooled.resize(std::size_t(w) * hw2);
      layers::avgpool2_forward(w, H, W, k.r1.out.data(), k.pooled.data());
      pooled = &k.pooled;
    }
    k.d.resize(std::size_t(2 * w) * hw2);
    layers::conv3x3_forward({w, 2 * w, H2, W2}, pooled->data(), P + off_.down_w, P + off_.down_b, k.d.data(), k.col);

    block_forward(p, off_.res2, 2 * w, H2, W2, k.d, k.se, k.r2, k.col);

    const std::vector<Real>* up = &k.r2.out;
    if (config_.downsamples()) {
      k.up.resize(std::size_t(2 * w) * hw);
      layers::upsample2_forward(2 * w, H2, W2, k.r2.out.data(), k.up.data());
      up = &k.up;
    }
    k.uc.resize(std::size_t(w) * hw);
    layers::conv3x3_forward({2 * w, w, H, W}, up->data(), P + off_.up_w, P + off_.up_b, k.uc.data(), k.col);

    k.cat.resize(std::size_t(2 * w) * hw);
    std::copy(k.uc.begin(), k.uc.end(), k.cat.begin());
    std::copy(k.r1.out.begin(), k.r1.out.end(), k.cat.begin() + std::ptrdiff_t(k.uc.size()));
    k.mg.resize(std::size_t(w) * hw);
    layers::conv3x3_forward({2 * w, w, H, W}, k.cat.data(), P + off_.merge_w, P + off_.merge_b, k.mg.data(), k.col);

    block_forward(p, off_.res3, w, H, W, k.mg, k.se, k.r3, k.col);

    k.a_head.resize(k.r3.out.size());
    layers::silu_forward<Real>(k.r3.out, k.a_head);
    k.out.resize(std::size_t(C) * hw);
    layers::conv3x3_forward({w, C, H, W}, k.a_head.data(), P + off_.head_w, P + off_.head_b, k.out.data(), k.col);
    return Image<Real>(z_t.shape(), k.out);
  }

  /// Accumulates dLoss/dtheta into `grads` given dLoss/d(eps_hat).
  void backward(const DenoiserParams<Real>& p, Cache& k, std::span<const Real> out_grad, std::vector<Real>& grads) const {
    const int C = config_.in_channels, H = config_.height, W = config_.width, w = config_.base_width;
    const int E = config_.time_embed_dim;
    const int H2 = config_.downsamples() ? H / 2 : H, W2 = config_.downsamples() ? W / 2 : W;
    const std::size_t hw = std::size_t(H) * W, hw2 = std::size_t(H2) * W2;
    const Real* P = p.values.data();
    Real* G = grads.data();
    std::vector<Real> d_se(E, Real(0));

    std::vector<Real> d_a_head(std::size_t(w) * hw);
    layers::conv3x3_backward({w, C, H, W}, k.a_head.data(), P + off_.head_w, out_grad.data(), G + off_.head_w,
                             G + off_.head_b, d_a_head.data(), k.col);
    std::vector<Real> d_r3(d_a_head.size());
    layers::silu_backward<Real>(k.r3.out, d_a_head, d_r3);

    std::vector<Real> d_mg = block_backward(p, off_.res3, w, H, W, k.r3, k.se, d_r3, d_se, G, k.col);

    std::vector<Real> d_cat(std::size_t(2 * w) * hw);
    layers::conv3x3_backward({2 * w, w, H, W}, k.cat.data(), P + off_.merge_w, d_mg.data(), G + off_.merge_w,
                             G + off_.merge_b, d_cat.data(), k.col);
    std::vector<Real> d_uc(d_cat.begin(), d_cat.begin() + std::ptrdiff_t(std::size_t(w) * hw));
    std::vector<Real> d_r1(d_cat.begin() + std::ptrdiff_t(std::size_t(w) * hw), d_cat.end());

    const std::vector<Real>& up_in = config_.downsamples() ? k.up : k.r2.out;
    std::vector<Real> d_up(std::size_t(2 * w) * hw);
    layers::conv3x3_backward({2 * w, w, H, W}, up_in.data(), P + off_.up_w, d_uc.data(), G + off_.up_w, G + off_.up_b,
                             d_up.data(), k.col);
    std::vector<Real> d_r2(std::size_t(2 * w) * hw2);
    if (config_.downsamples())
      layers::upsample2_backward(2 * w, H2, W2, d_up.data(), d_r2.data());
    else
      d_r2 = d_up;

    std::vector<Real> d_d = block_backward(p, off_.res2, 2 * w, H2, W2, k.r2, k.se, d_r2, d_se, G, k.col);

    const std::vector<Real>& pooled = config_.downsamples() ? k.pooled : k.r1.out;
    std::vector<Real> d_pooled(std::size_t(w) * hw2);
    layers::conv3x3_backward({w, 2 * w, H2, W2}, pooled.data(), P + off_.down_w, d_d.data(), G + off_.down_w,
                             G + off_.down_b, d_pooled.data(), k.col);
    if (config_.downsamples()) {
      std::vector<Real> tmp(std::size_t(w) * hw);
      layers::avgpool2_backward(w, H, W, d_pooled.data(), tmp.data());
      for (std::size_t i = 0; i < tmp.size(); ++i) d_r1[i] += tmp[i];
    } else {
      for (std::size_t i = 0; i < d_pooled.size(); ++i) d_r1[i] += d_pooled[i];
    }

    std::vector<Real> d_h0 = block_backward(p, off_.res1, w, H, W, k.r1, k.se, d_r1, d_se, G, k.col);

    const int cin = C + config_.mask_channels();
    layers::conv3x3_backward({cin, w, H, W}, k.x_in.data(), P + off_.conv_in_w, d_h0.data(), G + off_.conv_in_w,
                             G + off_.conv_in_b, static_cast<Real*>(nullptr), k.col);

    std::vector<Real> d_e(E);
    layers::silu_backward<Real>(k.e, d_se, d_e);
    Real* row = G + off_.text_table + std::size_t(k.token) * E;
    for (int i = 0; i < E; ++i) row[i] += d_e[i];
    std::vector<Real> d_a_u1(E), d_u1(E);
    layers::linear_backward(E, E, k.a_u1.data(), P + off_.time_fc2_w, d_e.data(), G + off_.time_fc2_w,
                            G + off_.time_fc2_b, d_a_u1.data());
    layers::silu_backward<Real>(k.u1, d_a_u1, d_u1);
    layers::linear_backward(E, E, k.t_sin.data(), P + off_.time_fc1_w, d_u1.data(), G + off_.time_fc1_w,
                            G + off_.time_fc1_b, static_cast<Real*>(nullptr));
  }

  /// Mean squared error over batch and elements, with exact gradients.
  ///
  /// Examples are processed in fixed groups of `kGroup`; each group has its
  /// own gradient buffer and groups are reduced in index order, so the result
  /// is independent of the worker count.
  LossAndGrad<Real> loss_and_grad(const DenoiserParams<Real>& p, const std::vector<TrainingSample<Real>>& batch,
                                  int threads = 1) const {
    require(!batch.empty(), "loss_and_grad needs a non-empty batch");
    const std::size_t n_groups = (batch.size() + kGroup - 1) / kGroup;
    const double scale = 1.0 / double(batch.size());
    std::vector<std::vector<Real>> group_grads(n_groups);
    LossAndGrad<Real> result;
    result.per_example.assign(batch.size(), 0.0);
    parallel_for(n_groups, threads, [&](std::size_t gi) {
      auto& g = group_grads[gi];
      g.assign(total_, Real(0));
      Cache cache;
      for (std::size_t i = gi * kGroup; i < std::min(batch.size(), (gi + 1) * kGroup); ++i) {
        const auto& s = batch[i];
        require_same_shape(s.z_t, s.eps, "loss_and_grad");
        Image<Real> eps_hat = forward(p, s.z_t, s.t, s.cond, cache);
        const double n = double(eps_hat.size());
        std::vector<Real> d_out(eps_hat.size());
        double sq = 0.0;
        for (std::size_t j = 0; j < eps_hat.size(); ++j) {
          const double diff = double(eps_hat[j]) - double(s.eps[j]);
          sq += diff * diff;
          d_out[j] = Real(2.0 * diff * scale / n);
        }
        result.per_example[i] = sq / n;
        if (!std::isfinite(result.per_example[i]))
          throw NumericalError("non-finite loss at batch index " + std::to_string(i));
        backward(p, cache, d_out, g);
      }
    });
    result.grads.assign(total_, Real(0));
    for (const auto& g : group_grads)
      for (std::size_t j = 0; j < total_; ++j) result.grads[j] += g[j];
    for (double l : result.per_example) result.loss += l;
    result.loss *= scale;
    return result;
  }

  static constexpr std::size_t kGroup = 4;

 private:
  struct BlockOffsets {
    std::size_t conv1_w, conv1_b, emb_w, emb_b, conv2_w, conv2_b;
  };
  struct Offsets {
    std::size_t time_fc1_w, time_fc1_b, time_fc2_w, time_fc2_b, text_table;
    std::size_t conv_in_w, conv_in_b;
    BlockOffsets res1, res2, res3;
    std::size_t down_w, down_b, up_w, up_b, merge_w, merge_b, head_w, head_b;
  };

  std::size_t add(const std::string& name, std::vector<int> shape) {
    std::size_t size = 1;
    for (int d : shape) size *= std::size_t(d);
    groups_.push_back({name, std::move(shape), total_, size});
    total_ += size;
    return groups_.back().offset;
  }

  BlockOffsets add_block(const std::string& name, int channels) {
    const int E = config_.time_embed_dim;
    BlockOffsets b;
    b.conv1_w = add(name + ".conv1.weight", {channels, channels, 3, 3});
    b.conv1_b = add(name + ".conv1.bias", {channels});
    b.emb_w = add(name + ".emb.weight", {channels, E});
    b.emb_b = add(name + ".emb.bias", {channels});
    b.conv2_w = add(name + ".conv2.weight", {channels, channels, 3, 3});
    b.conv2_b = add(name + ".conv2.bias", {channels});
    return b;
  }

  void build_layout() {
    const int E = config_.time_embed_dim, w = config_.base_width, C = config_.in_channels;
    off_.time_fc1_w = add("time.fc1.weight", {E, E});
    off_.time_fc1_b = add("time.fc1.bias", {E});
    off_.time_fc2_w = add("time.fc2.weight", {E, E});
    off_.time_fc2_b = add("time.fc2.bias", {E});
    off_.text_table = add("text.embedding", {config_.vocab_size + 1, E});
    off_.conv_in_w = add("conv_in.weight", {w, C + config_.mask_channels(), 3, 3});
    off_.conv_in_b = add("conv_in.bias", {w});
    off_.res1 = add_block("res1", w);
    off_.down_w = add("down.weight", {2 * w, w, 3, 3});
    off_.down_b = add("down.bias", {2 * w});
    off_.res2 = add_block("res2", 2 * w);
    off_.up_w = add("up.weight", {w, 2 * w, 3, 3});
    off_.up_b = add("up.bias", {w});
    off_.merge_w = add("merge.weight", {w, 2 * w, 3, 3});
    off_.merge_b = add("merge.bias", {w});
    off_.res3 = add_block("res3", w);
    off_.head_w = add("head.weight", {C, w, 3, 3});
    off_.head_b = add("head.bias", {C});
  }

  void check_inputs(const Image<Real>& z_t, int t, const ConditionPair& c) const {
    require(z_t.shape() == config_.image_shape(),
            "denoiser input shape " + to_string(z_t.shape()) + " != " + to_string(config_.image_shape()));
    require(t >= 1, "denoiser step must be >= 1");
    require(c.mask.height() == config_.height && c.mask.width() == config_.width &&
                c.mask.num_classes() == config_.num_classes,
            "mask condition does not match the denoiser configuration");
    require(c.text.vocab_size() == config_.vocab_size, "text condition vocabulary does not match the denoiser");
  }

  void block_forward(const DenoiserParams<Real>& p, const BlockOffsets& o, int ch, int H, int W, const std::vector<Real>& x,
                     const std::vector<Real>& se, typename Cache::Block& b, std::vector<Real>& col) const {
    const Real* P = p.values.data();
    const std::size_t hw = std::size_t(H) * W, n = std::size_t(ch) * hw;
    const int E = config_.time_embed_dim;
    b.x = x;
    b.a1.resize(n);
    layers::silu_forward<Real>(b.x, b.a1);
    b.c1.resize(n);
    layers::conv3x3_forward({ch, ch, H, W}, b.a1.data(), P + o.conv1_w, P + o.conv1_b, b.c1.data(), col);
    std::vector<Real> shift(ch);
    layers::linear_forward(E, ch, se.data(), P + o.emb_w, P + o.emb_b, shift.data());
    for (int c = 0; c < ch; ++c)
      for (std::size_t i = 0; i < hw; ++i) b.c1[c * hw + i] += shift[c];
    b.a2.resize(n);
    layers::silu_forward<Real>(b.c1, b.a2);
    b.out.resize(n);
    layers::conv3x3_forward({ch, ch, H, W}, b.a2.data(), P + o.conv2_w, P + o.conv2_b, b.out.data(), col);
    for (std::size_t i = 0; i < n; ++i) b.out[i] += b.x[i];
  }

  std::vector<Real> block_backward(const DenoiserParams<Real>& p, const BlockOffsets& o, int ch, int H, int W,
                                   typename Cache::Block& b, const std::vector<Real>& se, const std::vector<Real>& d_out,
                                   std::vector<Real>& d_se, Real* G, std::vector<Real>& col) const {
    const Real* P = p.values.data();
    const std::size_t hw = std::size_t(H) * W, n = std::size_t(ch) * hw;
    const int E = config_.time_embed_dim;
    std::vector<Real> d_a2(n), d_c1(n), d_a1(n), d_x(n);
    layers::conv3x3_backward({ch, ch, H, W}, b.a2.data(), P + o.conv2_w, d_out.data(), G + o.conv2_w, G + o.conv2_b,
                             d_a2.data(), col);
    layers::silu_backward<Real>(b.c1, d_a2, d_c1);
    std::vector<Real> d_shift(ch, Real(0)), d_se_local(E);
    for (int c = 0; c < ch; ++c) {
      Real s = 0;
      for (std::size_t i = 0; i < hw; ++i) s += d_c1[c * hw + i];
      d_shift[c] = s;
    }
    layers::linear_backward(E, ch, se.data(), P + o.emb_w, d_shift.data(), G + o.emb_w, G + o.emb_b, d_se_local.data());
    for (int i = 0; i < E; ++i) d_se[i] += d_se_local[i];
    layers::conv3x3_backward({ch, ch, H, W}, b.a1.data(), P + o.conv1_w, d_c1.data(), G + o.conv1_w, G + o.conv1_b,
                             d_a1.data(), col);
    layers::silu_backward<Real>(b.x, d_a1, d_x);
    for (std::size_t i = 0; i < n; ++i) d_x[i] += d_out[i];
    return d_x;
  }

  DenoiserConfig config_;
  std::vector<ParamGroup> groups_;
  std::size_t total_ = 0;
  Offsets off_{};
};

// ---------------------------------------------------------------------------
// Checkpoints: <stem>.json header + <stem>.bin float32 little-endian blob in
// manifest order. Per-group and whole-blob CRC32 guard against corruption.
// ---------------------------------------------------------------------------

struct CheckpointHeader {
  DenoiserConfig config;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();
  std::string blob_crc32;
};

template <typename Real>
std::string save_checkpoint(const std::filesystem::path& stem, const DenoiserConfig& config,
                            const DenoiserParams<Real>& params, std::int64_t step, std::uint64_t seed,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  io::Bytes blob;
  blob.reserve(params.count() * 4);
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& g : params.groups) {
    const std::size_t begin = blob.size();
    for (std::size_t i = 0; i < g.size; ++i) io::append_f32_le(blob, static_cast<float>(params.values[g.offset + i]));
    manifest.push_back({{"name", g.name}, {"shape", g.shape}, {"offset", g.offset}, {"size", g.size},
                        {"crc32", io::crc32_hex(blob.data() + begin, blob.size() - begin)}});
  }
  const std::string crc = io::crc32_hex(blob);
  auto bin = stem;
  bin += ".bin";
  auto hdr = stem;
  hdr += ".json";
  nlohmann::json header{{"format", "pathdiff-checkpoint"},
                        {"version", 1},
                        {"config", config},
                        {"step", step},
                        {"seed", seed},
                        {"parameter_count", params.count()},
                        {"parameters", manifest},
                        {"blob", bin.filename().string()},
                        {"blob_crc32", crc},
                        {"extra", extra}};
  io::write_bytes(bin, blob);
  io::write_text(hdr, header.dump(2) + "\n");
  return crc;
}

template <typename Real>
DenoiserParams<Real> load_checkpoint(const std::filesystem::path& header_path, CheckpointHeader* header_out = nullptr) {
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(io::read_text(header_path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("corrupt checkpoint header " + header_path.string() + ": " + e.what());
  }
  if (h.value("format", "") != "pathdiff-checkpoint") throw ValidationError(header_path.string() + " is not a checkpoint");
  CheckpointHeader header;
  header.config = h.at("config").get<DenoiserConfig>();
  header.step = h.at("step").get<std::int64_t>();
  header.seed = h.at("seed").get<std::uint64_t>();
  header.extra = h.value("extra", nlohmann::json::object());
  header.blob_crc32 = h.at("blob_crc32").get<std::string>();
  const auto blob_path = header_path.parent_path() / h.at("blob").get<std::string>();
  const io::Bytes blob = io::read_bytes(blob_path);
  if (io::crc32_hex(blob) != header.blob_crc32) throw ValidationError("checksum mismatch in " + blob_path.string());

  Denoiser<Real> model(header.config);
  DenoiserParams<Real> params = model.init_params(0);
  require(blob.size() == params.count() * 4, "checkpoint blob size does not match its configuration");
  const auto& manifest = h.at("parameters");
  require(manifest.size() == params.groups.size(), "checkpoint parameter manifest does not match the architecture");
  for (std::size_t gi = 0; gi < params.groups.size(); ++gi) {
    const auto& g = params.groups[gi];
    require(manifest[gi].at("name").get<std::string>() == g.name && manifest[gi].at("size").get<std::size_t>() == g.size,
            "checkpoint group " + g.name + " does not match the architecture");
  }
  for (std::size_t i = 0; i < params.count(); ++i) params.values[i] = Real(io::read_f32_le(blob.data() + 4 * i));
  if (header_out) *header_out = header;
  return params;
}

}  // namespace pathdiff
