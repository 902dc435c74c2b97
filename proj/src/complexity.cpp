#include "ssf/complexity.hpp"

#include <nlohmann/json.hpp>

namespace ssf {

namespace {

using u128 = unsigned __int128;

std::uint64_t checked_u64(u128 v, const char* what) {
  if (v > static_cast<u128>(UINT64_MAX)) {
    throw NumericError(std::string(what) + ": value exceeds 64-bit range");
  }
  return static_cast<std::uint64_t>(v);
}

struct Walk {
  std::vector<LayerCost>* out;
  std::int64_t params = 0;
  std::int64_t flops = 0;

  void layer(std::string name, std::int64_t p, std::int64_t f) {
    params += p;
    flops += f;
    if (out != nullptr) out->push_back({std::move(name), p, f});
  }
};

// One pass over every layer of the architecture. Token counts follow the
// real dataflow: the image pads to a multiple of patch_size*8, each stage
// map pads to a multiple of the window size for attention and is cropped
// back before merging and decoding.
void walk_layers(const EncoderConfig& enc, const DecoderConfig& dec, int input_h, int input_w,
                 Walk& wk) {
  const int p = enc.patch_size;
  const int m = enc.window_size;
  const std::int64_t m2 = static_cast<std::int64_t>(m) * m;
  const int unit = p * 8;
  const int hp = ceil_mult(input_h, unit);
  const int wp = ceil_mult(input_w, unit);
  int gh = hp / p, gw = wp / p;

  const std::int64_t c0 = enc.embed_dim;
  const std::int64_t t0 = static_cast<std::int64_t>(gh) * gw;
  const std::int64_t pin = static_cast<std::int64_t>(p) * p * enc.in_channels;
  wk.layer("encoder.patch_embed.proj", pin * c0 + c0, t0 * pin * c0);
  wk.layer("encoder.patch_embed.norm", 2 * c0, t0 * c0);

  for (int s = 0; s < 4; ++s) {
    const std::int64_t d = enc.stage_dim(s);
    const std::int64_t nh = enc.num_heads[static_cast<std::size_t>(s)];
    const std::int64_t hidden = enc.mlp_hidden(static_cast<int>(d));
    const std::int64_t table = static_cast<std::int64_t>(2 * m - 1) * (2 * m - 1) * nh;
    const std::int64_t gph = ceil_mult(gh, m), gpw = ceil_mult(gw, m);
    const std::int64_t tokens = gph * gpw;  // window-padded tokens seen by each block
    const std::int64_t nwin = tokens / m2;
    const std::string sp = "encoder.stage" + std::to_string(s);
    for (int b = 0; b < enc.depths[static_cast<std::size_t>(s)]; ++b) {
      const std::string bp = sp + ".block" + std::to_string(b);
      wk.layer(bp + ".norm1", 2 * d, tokens * d);
      wk.layer(bp + ".attn.qkv", 3 * d * d + 3 * d, tokens * d * 3 * d);
      wk.layer(bp + ".attn.bias_table", table, 0);
      wk.layer(bp + ".attn.window", 0, nwin * 2 * m2 * m2 * d + nwin * nh * m2 * m2);
      wk.layer(bp + ".attn.proj", d * d + d, tokens * d * d);
      wk.layer(bp + ".norm2", 2 * d, tokens * d);
      wk.layer(bp + ".mlp.fc1", d * hidden + hidden, tokens * d * hidden);
      wk.layer(bp + ".mlp.act", 0, tokens * hidden);
      wk.layer(bp + ".mlp.fc2", hidden * d + d, tokens * hidden * d);
    }
    if (s < 3) {
      const std::int64_t mt = static_cast<std::int64_t>(gh / 2) * (gw / 2);
      wk.layer(sp + ".merge.norm", 2 * 4 * d, mt * 4 * d);
      wk.layer(sp + ".merge.reduction", 4 * d * 2 * d, mt * 4 * d * 2 * d);
      gh /= 2;
      gw /= 2;
    }
  }

  const std::int64_t cd = dec.embed_dim;
  const std::int64_t ncls = dec.num_classes;
  const std::int64_t d0h = hp / p, d0w = wp / p;
  const std::int64_t dt0 = d0h * d0w;
  for (int s = 0; s < 4; ++s) {
    const std::int64_t ds = enc.stage_dim(s);
    const std::int64_t ts = (d0h >> s) * (d0w >> s);
    wk.layer("decoder.proj" + std::to_string(s), ds * cd + cd, ts * ds * cd);
    if (s > 0) wk.layer("decoder.upsample" + std::to_string(s), 0, dt0 * cd * 4);
  }
  wk.layer("decoder.fuse", 4 * cd * cd + cd, dt0 * 4 * cd * cd);
  wk.layer("decoder.fuse.act", 0, dt0 * cd);
  wk.layer("decoder.classifier", cd * ncls + ncls, dt0 * cd * ncls);
  wk.layer("decoder.final_upsample", 0, static_cast<std::int64_t>(hp) * wp * ncls * 4);
}

}  // namespace

std::uint64_t omega_ssformer(const ComplexityInputs& in) {
  if (in.h <= 0 || in.w <= 0 || in.embed_dim <= 0 || in.window <= 0 || in.num_classes <= 0) {
    throw NumericError("omega_ssformer: all inputs must be positive");
  }
  const u128 hw = static_cast<u128>(in.h) * static_cast<u128>(in.w);
  const u128 c = static_cast<u128>(in.embed_dim);
  const u128 msq = static_cast<u128>(in.window) * static_cast<u128>(in.window);
  const u128 ncls = static_cast<u128>(in.num_classes);
  const u128 total = 4 * hw * c * c + 2 * msq * hw * c + hw * c * c + 4 * hw * c * ncls;
  return checked_u64(total, "omega_ssformer");
}

std::int64_t count_params(const EncoderConfig& enc, const DecoderConfig& dec,
                          std::vector<LayerCost>* breakdown) {
  enc.validate();
  dec.validate();
  Walk wk{breakdown};
  walk_layers(enc, dec, 8 * enc.patch_size, 8 * enc.patch_size, wk);
  return wk.params;
}

std::uint64_t count_flops_detailed(const EncoderConfig& enc, const DecoderConfig& dec, int input_h,
                                   int input_w, std::vector<LayerCost>* breakdown) {
  enc.validate();
  dec.validate();
  if (input_h < enc.patch_size || input_w < enc.patch_size) {
    throw ConfigError("count_flops_detailed: input smaller than one patch");
  }
  Walk wk{breakdown};
  walk_layers(enc, dec, input_h, input_w, wk);
  return static_cast<std::uint64_t>(wk.flops);
}

ComplexityReport analyze(const std::string& profile_name, const EncoderConfig& enc,
                         const DecoderConfig& dec, int input_h, int input_w) {
  ComplexityReport rep;
  rep.profile = profile_name;
  rep.input_h = input_h;
  rep.input_w = input_w;
  rep.flops_detailed = count_flops_detailed(enc, dec, input_h, input_w, &rep.per_layer);
  std::int64_t params = 0;
  for (const LayerCost& lc : rep.per_layer) params += lc.params;
  rep.params_total = params;
  const int unit = enc.patch_size * 8;
  rep.omega_eq1 = omega_ssformer({ceil_mult(input_h, unit) / enc.patch_size,
                                  ceil_mult(input_w, unit) / enc.patch_size, enc.embed_dim,
                                  enc.window_size, dec.num_classes});
  return rep;
}

std::string report_to_json(const ComplexityReport& report) {
  nlohmann::json j;
  j["profile"] = report.profile;
  j["input_h"] = report.input_h;
  j["input_w"] = report.input_w;
  j["params_total"] = report.params_total;
  j["omega_eq1"] = report.omega_eq1;
  j["flops_detailed"] = report.flops_detailed;
  j["flop_unit"] = "1 multiply-accumulate = 1 FLOP";
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerCost& lc : report.per_layer) {
    layers.push_back({{"name", lc.name}, {"params", lc.params}, {"flops", lc.flops}});
  }
  j["per_layer"] = std::move(layers);
  return j.dump(2);
}

}  // namespace ssf
