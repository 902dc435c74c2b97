#pragma once

#include <array>
#include <vector>

#include "ssf/nn.hpp"

namespace ssf {

struct EncoderConfig {
  int patch_size = 4;
  int window_size = 7;
  int embed_dim = 128;
  std::vector<int> depths = {2, 2, 18, 2};
  std::vector<int> num_heads = {4, 8, 16, 32};
  double mlp_ratio = 4.0;
  int in_channels = 3;

  int stage_dim(int s) const { return embed_dim << s; }
  int mlp_hidden(int dim) const { return static_cast<int>(mlp_ratio * dim); }
  void validate() const;  // throws ConfigError
};

// Per-stage feature pyramid: (H/4,W/4,C), (H/8,W/8,2C), (H/16,W/16,4C),
// (H/32,W/32,8C) relative to the padded input.
struct MultiScaleFeatures {
  std::array<Tensor, 4> features;
};

struct BlockWeights {
  NormWeights norm1;
  LinearWeights qkv;
  Tensor bias_table;  // ((2M-1)^2, num_heads)
  LinearWeights proj;
  NormWeights norm2;
  LinearWeights fc1, fc2;
};

struct StageWeights {
  std::vector<BlockWeights> blocks;
  bool has_merge = false;
  NormWeights merge_norm;     // over 4*dim
  Tensor merge_reduction;     // (4*dim, 2*dim), bias-free
};

// (h,w,c) -> (num_windows, M*M, c); windows row-major over the window grid,
// tokens row-major within each window.
Tensor window_partition(const Tensor& x, int window);
Tensor window_reverse(const Tensor& windows, int window, int h, int w);

// Relative-position lookup: for every (query, key) token pair in an MxM
// window, the row of the (2M-1)^2-entry bias table that holds its offset.
std::vector<int> relative_index_table(int window);

// Attention mask for one padded stage map: 0 where a token pair may attend,
// -1e9 where it may not. Pairs are blocked when either token lies in the
// zero-padding beyond (h_valid, w_valid), or, under a cyclic shift, when the
// two tokens wrapped around different image edges and are not genuine
// spatial neighbours. Returns an undefined tensor when nothing is blocked.
Tensor build_attention_mask(int hp, int wp, int window, int shift, int h_valid, int w_valid);

// Multi-head self-attention over independent windows with learned relative
// position bias: softmax(q k^T / sqrt(d) + bias + mask) v per head.
Tensor window_attention(const Tensor& windows, const LinearWeights& qkv, const Tensor& bias_table,
                        const LinearWeights& proj, int num_heads, const Tensor& mask);

// 2x2 neighbourhood gather, (h,w,c) -> (h/2,w/2,4c) with channel blocks in
// the order top-left, bottom-left, top-right, bottom-right.
Tensor patch_merge_gather(const Tensor& x);
Tensor patch_merging(const Tensor& x, const NormWeights& norm, const Tensor& reduction);

Tensor patch_embed(const Tensor& image, const EncoderConfig& cfg, const LinearWeights& proj,
                   const NormWeights& norm);

// Pre-norm residual block: x + attn(LN(x)) then + MLP(LN(.)). Odd block
// indices cyclically shift the grid by floor(M/2) before windowing and
// shift back after. Input dims that do not divide the window size are
// zero-padded, masked out of attention, and cropped from the result.
Tensor swin_block(const Tensor& x, const BlockWeights& wts, int block_index,
                  const EncoderConfig& cfg);

class SwinEncoder {
 public:
  SwinEncoder(EncoderConfig cfg, Rng& rng);

  const EncoderConfig& config() const { return cfg_; }

  // Accepts any (H,W,in_channels) image with H,W >= patch size; pads to the
  // next multiple of patch_size * 8 so every stage halves cleanly.
  MultiScaleFeatures forward(const Tensor& image) const;

  void collect_parameters(std::vector<Parameter>& out) const;

  const std::vector<StageWeights>& stages() const { return stages_; }

 private:
  EncoderConfig cfg_;
  LinearWeights embed_;
  NormWeights embed_norm_;
  std::vector<StageWeights> stages_;
};

}  // namespace ssf
