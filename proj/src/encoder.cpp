#include "ssf/encoder.hpp"

#include <cmath>
#include <cstring>

namespace ssf {

namespace {

constexpr float kMaskOff = -1e9f;

int infer_stage(const EncoderConfig& cfg, int channels) {
  for (int s = 0; s < 4; ++s) {
    if (cfg.stage_dim(s) == channels) return s;
  }
  throw ShapeError("tensor with " + std::to_string(channels) +
                   " channels does not match any stage of embed_dim " +
                   std::to_string(cfg.embed_dim));
}

// 0 = interior, 1 = bottom/right band that stayed in place, 2 = band that
// wrapped around the image edge under the cyclic shift.
int shift_band(int v, int size, int window, int shift) {
  if (shift == 0) return 0;
  if (v < size - window) return 0;
  if (v < size - shift) return 1;
  return 2;
}

}  // namespace

void EncoderConfig::validate() const {
  if (depths.size() != 4 || num_heads.size() != 4) {
    throw ConfigError("encoder: depths and num_heads must list exactly 4 stages");
  }
  if (patch_size < 1) throw ConfigError("encoder: patch_size must be >= 1");
  if (window_size < 1) throw ConfigError("encoder: window_size must be >= 1");
  if (embed_dim < 1) throw ConfigError("encoder: embed_dim must be >= 1");
  if (in_channels < 1) throw ConfigError("encoder: in_channels must be >= 1");
  if (mlp_ratio <= 0.0) throw ConfigError("encoder: mlp_ratio must be positive");
  for (int s = 0; s < 4; ++s) {
    if (depths[static_cast<std::size_t>(s)] < 1) {
      throw ConfigError("encoder: every stage needs at least one block");
    }
    const int nh = num_heads[static_cast<std::size_t>(s)];
    if (nh < 1 || stage_dim(s) % nh != 0) {
      throw ConfigError("encoder: stage " + std::to_string(s) + " dim " +
                        std::to_string(stage_dim(s)) + " not divisible by " +
                        std::to_string(nh) + " heads");
    }
  }
}

Tensor window_partition(const Tensor& x, int window) {
  if (x.rank() != 3) throw ShapeError("window_partition: expected (h,w,c), got " + shape_str(x.shape()));
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h % window != 0 || w % window != 0) {
    throw ShapeError("window_partition: " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by window " + std::to_string(window));
  }
  Tensor t = reshape(x, {h / window, window, w / window, window, c});
  t = permute(t, {0, 2, 1, 3, 4});
  return reshape(t, {(h / window) * (w / window), window * window, c});
}

Tensor window_reverse(const Tensor& windows, int window, int h, int w) {
  if (windows.rank() != 3) {
    throw ShapeError("window_reverse: expected (nw,tokens,c), got " + shape_str(windows.shape()));
  }
  const int c = windows.dim(2);
  if (h % window != 0 || w % window != 0 ||
      windows.dim(0) != (h / window) * (w / window) || windows.dim(1) != window * window) {
    throw ShapeError("window_reverse: windows " + shape_str(windows.shape()) +
                     " do not tile " + std::to_string(h) + "x" + std::to_string(w));
  }
  Tensor t = reshape(windows, {h / window, w / window, window, window, c});
  t = permute(t, {0, 2, 1, 3, 4});
  return reshape(t, {h, w, c});
}

std::vector<int> relative_index_table(int window) {
  const int n = window * window;
  const int span = 2 * window - 1;
  std::vector<int> idx(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int ri = i / window, ci = i % window;
    for (int j = 0; j < n; ++j) {
      const int rj = j / window, cj = j % window;
      idx[static_cast<std::size_t>(i) * n + j] =
          (ri - rj + window - 1) * span + (ci - cj + window - 1);
    }
  }
  return idx;
}

Tensor build_attention_mask(int hp, int wp, int window, int shift, int h_valid, int w_valid) {
  const bool padded = h_valid < hp || w_valid < wp;
  if (shift == 0 && !padded) return Tensor();
  const int gh = hp / window, gw = wp / window;
  const int n = window * window;
  // Token ids on the shifted grid: -1 marks zero-padding; otherwise the
  // wrap-band pair, so equal ids mean "genuine spatial neighbours".
  std::vector<int> ids(static_cast<std::size_t>(hp) * static_cast<std::size_t>(wp));
  for (int r = 0; r < hp; ++r) {
    for (int c = 0; c < wp; ++c) {
      const int pre_r = (r + shift) % hp;
      const int pre_c = (c + shift) % wp;
      int id = -1;
      if (pre_r < h_valid && pre_c < w_valid) {
        id = shift_band(r, hp, window, shift) * 3 + shift_band(c, wp, window, shift);
      }
      ids[static_cast<std::size_t>(r) * wp + c] = id;
    }
  }
  Tensor mask(Shape{gh * gw, n, n}, 0.0f);
  float* pm = mask.data().data();
  for (int wi = 0; wi < gh; ++wi) {
    for (int wj = 0; wj < gw; ++wj) {
      const int widx = wi * gw + wj;
      float* block = pm + static_cast<std::int64_t>(widx) * n * n;
      for (int p = 0; p < n; ++p) {
        const int rp = wi * window + p / window;
        const int cp = wj * window + p % window;
        const int idp = ids[static_cast<std::size_t>(rp) * wp + cp];
        for (int q = 0; q < n; ++q) {
          const int rq = wi * window + q / window;
          const int cq = wj * window + q % window;
          const int idq = ids[static_cast<std::size_t>(rq) * wp + cq];
          if (idp != idq) block[static_cast<std::int64_t>(p) * n + q] = kMaskOff;
        }
      }
    }
  }
  return mask;
}

Tensor window_attention(const Tensor& windows, const LinearWeights& qkv, const Tensor& bias_table,
                        const LinearWeights& proj, int num_heads, const Tensor& mask) {
  if (windows.rank() != 3) {
    throw ShapeError("window_attention: expected (nw,tokens,c), got " + shape_str(windows.shape()));
  }
  const int nw = windows.dim(0), n = windows.dim(1), c = windows.dim(2);
  if (num_heads < 1 || c % num_heads != 0) {
    throw ShapeError("window_attention: " + std::to_string(c) + " channels not divisible by " +
                     std::to_string(num_heads) + " heads");
  }
  const int span = bias_table.dim(0);
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(span))));
  const int window = (side + 1) / 2;
  if (side * side != span || side != 2 * window - 1 || window * window != n ||
      bias_table.dim(1) != num_heads) {
    throw ShapeError("window_attention: bias table " + shape_str(bias_table.shape()) +
                     " does not fit " + std::to_string(n) + " tokens / " +
                     std::to_string(num_heads) + " heads");
  }
  if (mask.defined() &&
      (mask.rank() != 3 || mask.dim(0) != nw || mask.dim(1) != n || mask.dim(2) != n)) {
    throw ShapeError("window_attention: mask " + shape_str(mask.shape()) + " does not match " +
                     std::to_string(nw) + " windows of " + std::to_string(n) + " tokens");
  }
  const int dh = c / num_heads;

  Tensor qkv_all = linear(windows, qkv);                       // (nw, n, 3c)
  qkv_all = reshape(qkv_all, {nw, n, 3, num_heads, dh});
  qkv_all = permute(qkv_all, {2, 0, 3, 1, 4});                 // (3, nw, nh, n, dh)
  auto take = [&](int which) {
    Tensor t = slice(qkv_all, {which, 0, 0, 0, 0}, {1, nw, num_heads, n, dh});
    return reshape(t, {nw, num_heads, n, dh});
  };
  Tensor q = scale(take(0), 1.0f / std::sqrt(static_cast<float>(dh)));
  Tensor k = take(1);
  Tensor v = take(2);

  Tensor attn = matmul(q, permute(k, {0, 1, 3, 2}));           // (nw, nh, n, n)

  Tensor bias = gather_rows(bias_table, relative_index_table(window));  // (n*n, nh)
  bias = permute(reshape(bias, {n, n, num_heads}), {2, 0, 1});          // (nh, n, n)
  attn = add(attn, bias);

  if (mask.defined()) {
    // constant, so tile it across heads up front
    Tensor tiled(Shape{nw, num_heads, n, n});
    const float* src = mask.data().data();
    float* dst = tiled.data().data();
    const std::size_t block = static_cast<std::size_t>(n) * static_cast<std::size_t>(n);
    for (int wi = 0; wi < nw; ++wi) {
      for (int hd = 0; hd < num_heads; ++hd) {
        std::memcpy(dst + (static_cast<std::size_t>(wi) * num_heads + hd) * block,
                    src + static_cast<std::size_t>(wi) * block, block * sizeof(float));
      }
    }
    attn = add(attn, tiled);
  }

  attn = softmax(attn, 3);
  Tensor out = matmul(attn, v);                                // (nw, nh, n, dh)
  out = permute(out, {0, 2, 1, 3});
  out = reshape(out, {nw, n, c});
  return linear(out, proj);
}

Tensor patch_merge_gather(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("patch_merging: expected (h,w,c), got " + shape_str(x.shape()));
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("patch_merging: dims " + std::to_string(h) + "x" + std::to_string(w) +
                     " must be even");
  }
  Tensor t = reshape(x, {h / 2, 2, w / 2, 2, c});
  t = permute(t, {0, 2, 3, 1, 4});  // (i, j, dj, di, c)
  return reshape(t, {h / 2, w / 2, 4 * c});
}

Tensor patch_merging(const Tensor& x, const NormWeights& norm, const Tensor& reduction) {
  Tensor t = patch_merge_gather(x);
  t = layernorm(t, norm.gamma, norm.beta);
  return matmul(t, reduction);
}

Tensor patch_embed(const Tensor& image, const EncoderConfig& cfg, const LinearWeights& proj,
                   const NormWeights& norm) {
  if (image.rank() != 3) throw ShapeError("patch_embed: expected (H,W,c), got " + shape_str(image.shape()));
  const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const int p = cfg.patch_size;
  if (h % p != 0 || w % p != 0) {
    throw ShapeError("patch_embed: " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by patch size " + std::to_string(p) +
                     "; caller pads first");
  }
  Tensor t = reshape(image, {h / p, p, w / p, p, c});
  t = permute(t, {0, 2, 1, 3, 4});
  t = reshape(t, {h / p, w / p, p * p * c});
  t = linear(t, proj);
  return layernorm(t, norm.gamma, norm.beta);
}

Tensor swin_block(const Tensor& x, const BlockWeights& wts, int block_index,
                  const EncoderConfig& cfg) {
  if (x.rank() != 3) throw ShapeError("swin_block: expected (h,w,c), got " + shape_str(x.shape()));
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int stage = infer_stage(cfg, c);
  const int m = cfg.window_size;
  const int shift = (block_index % 2 == 1) ? m / 2 : 0;
  const int hp = ceil_mult(h, m), wp = ceil_mult(w, m);

  Tensor y = layernorm(x, wts.norm1.gamma, wts.norm1.beta);
  if (hp != h || wp != w) y = pad(y, {0, 0, 0}, {hp - h, wp - w, 0});
  if (shift > 0) y = cyclic_roll(y, {-shift, -shift, 0});

  Tensor mask = build_attention_mask(hp, wp, m, shift, h, w);
  Tensor wins = window_partition(y, m);
  wins = window_attention(wins, wts.qkv, wts.bias_table, wts.proj,
                          cfg.num_heads[static_cast<std::size_t>(stage)], mask);
  y = window_reverse(wins, m, hp, wp);

  if (shift > 0) y = cyclic_roll(y, {shift, shift, 0});
  if (hp != h || wp != w) y = slice(y, {0, 0, 0}, {h, w, c});
  Tensor x1 = add(x, y);

  Tensor z = layernorm(x1, wts.norm2.gamma, wts.norm2.beta);
  z = linear(z, wts.fc1);
  z = gelu(z);
  z = linear(z, wts.fc2);
  return add(x1, z);
}

SwinEncoder::SwinEncoder(EncoderConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int p = cfg_.patch_size;
  const int m = cfg_.window_size;
  embed_ = init_linear(rng, p * p * cfg_.in_channels, cfg_.embed_dim);
  embed_norm_ = init_norm(cfg_.embed_dim);
  stages_.resize(4);
  for (int s = 0; s < 4; ++s) {
    StageWeights& st = stages_[static_cast<std::size_t>(s)];
    const int dim = cfg_.stage_dim(s);
    const int nh = cfg_.num_heads[static_cast<std::size_t>(s)];
    const int hidden = cfg_.mlp_hidden(dim);
    st.blocks.resize(static_cast<std::size_t>(cfg_.depths[static_cast<std::size_t>(s)]));
    for (BlockWeights& b : st.blocks) {
      b.norm1 = init_norm(dim);
      b.qkv = init_linear(rng, dim, 3 * dim);
      std::vector<float> table(static_cast<std::size_t>((2 * m - 1) * (2 * m - 1)) *
                               static_cast<std::size_t>(nh));
      for (float& v : table) v = static_cast<float>(rng.normal(0.0, 0.02));
      b.bias_table = Tensor(Shape{(2 * m - 1) * (2 * m - 1), nh}, std::move(table));
      b.bias_table.set_requires_grad(true);
      b.proj = init_linear(rng, dim, dim);
      b.norm2 = init_norm(dim);
      b.fc1 = init_linear(rng, dim, hidden);
      b.fc2 = init_linear(rng, hidden, dim);
    }
    if (s < 3) {
      st.has_merge = true;
      st.merge_norm = init_norm(4 * dim);
      st.merge_reduction = init_linear(rng, 4 * dim, 2 * dim, /*bias=*/false).w;
    }
  }
}

MultiScaleFeatures SwinEncoder::forward(const Tensor& image) const {
  if (image.rank() != 3) {
    throw ShapeError("encoder: expected (H,W,c) image, got " + shape_str(image.shape()));
  }
  if (image.dim(2) != cfg_.in_channels) {
    throw ShapeError("encoder: image has " + std::to_string(image.dim(2)) +
                     " channels, config expects " + std::to_string(cfg_.in_channels));
  }
  const int h = image.dim(0), w = image.dim(1);
  const int p = cfg_.patch_size;
  if (h < p || w < p) {
    throw ShapeError("encoder: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " smaller than patch size " + std::to_string(p));
  }
  const int unit = p * 8;  // keeps all three patch mergings even-sized
  const int hp = ceil_mult(h, unit), wp = ceil_mult(w, unit);
  Tensor x = image;
  if (hp != h || wp != w) x = pad(x, {0, 0, 0}, {hp - h, wp - w, 0});

  x = patch_embed(x, cfg_, embed_, embed_norm_);
  MultiScaleFeatures out;
  for (int s = 0; s < 4; ++s) {
    const StageWeights& st = stages_[static_cast<std::size_t>(s)];
    for (std::size_t b = 0; b < st.blocks.size(); ++b) {
      x = swin_block(x, st.blocks[b], static_cast<int>(b), cfg_);
    }
    out.features[static_cast<std::size_t>(s)] = x;
    if (st.has_merge) x = patch_merging(x, st.merge_norm, st.merge_reduction);
  }
  return out;
}

void SwinEncoder::collect_parameters(std::vector<Parameter>& out) const {
  out.push_back({"encoder.patch_embed.proj.weight", embed_.w});
  out.push_back({"encoder.patch_embed.proj.bias", embed_.b});
  out.push_back({"encoder.patch_embed.norm.gamma", embed_norm_.gamma});
  out.push_back({"encoder.patch_embed.norm.beta", embed_norm_.beta});
  for (int s = 0; s < 4; ++s) {
    const StageWeights& st = stages_[static_cast<std::size_t>(s)];
    const std::string sp = "encoder.stage" + std::to_string(s);
    for (std::size_t b = 0; b < st.blocks.size(); ++b) {
      const BlockWeights& bw = st.blocks[b];
      const std::string bp = sp + ".block" + std::to_string(b);
      out.push_back({bp + ".norm1.gamma", bw.norm1.gamma});
      out.push_back({bp + ".norm1.beta", bw.norm1.beta});
      out.push_back({bp + ".attn.qkv.weight", bw.qkv.w});
      out.push_back({bp + ".attn.qkv.bias", bw.qkv.b});
      out.push_back({bp + ".attn.bias_table", bw.bias_table});
      out.push_back({bp + ".attn.proj.weight", bw.proj.w});
      out.push_back({bp + ".attn.proj.bias", bw.proj.b});
      out.push_back({bp + ".norm2.gamma", bw.norm2.gamma});
      out.push_back({bp + ".norm2.beta", bw.norm2.beta});
      out.push_back({bp + ".mlp.fc1.weight", bw.fc1.w});
      out.push_back({bp + ".mlp.fc1.bias", bw.fc1.b});
      out.push_back({bp + ".mlp.fc2.weight", bw.fc2.w});
      out.push_back({bp + ".mlp.fc2.bias", bw.fc2.b});
    }
    if (st.has_merge) {
      out.push_back({sp + ".merge.norm.gamma", st.merge_norm.gamma});
      out.push_back({sp + ".merge.norm.beta", st.merge_norm.beta});
      out.push_back({sp + ".merge.reduction.weight", st.merge_reduction});
    }
  }
}

}  // namespace ssf
