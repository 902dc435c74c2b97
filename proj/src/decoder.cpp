#include "ssf/decoder.hpp"

namespace ssf {

void DecoderConfig::validate() const {
  if (num_classes < 2) throw ConfigError("decoder: num_classes must be >= 2");
  if (embed_dim < 1) throw ConfigError("decoder: embed_dim must be >= 1");
}

MlpDecoder::MlpDecoder(const EncoderConfig& enc, DecoderConfig cfg, Rng& rng)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  for (int s = 0; s < 4; ++s) {
    stage_dims_[static_cast<std::size_t>(s)] = enc.stage_dim(s);
    proj_[static_cast<std::size_t>(s)] = init_linear(rng, enc.stage_dim(s), cfg_.embed_dim);
  }
  fuse_ = init_linear(rng, 4 * cfg_.embed_dim, cfg_.embed_dim);
  classifier_ = init_linear(rng, cfg_.embed_dim, cfg_.num_classes);
}

Tensor MlpDecoder::forward(const MultiScaleFeatures& f) const {
  for (int s = 0; s < 4; ++s) {
    const Tensor& t = f.features[static_cast<std::size_t>(s)];
    if (!t.defined() || t.rank() != 3) {
      throw ShapeError("decoder: pyramid level " + std::to_string(s) + " missing or not (h,w,c)");
    }
    if (t.dim(2) != stage_dims_[static_cast<std::size_t>(s)]) {
      throw ShapeError("decoder: level " + std::to_string(s) + " has " +
                       std::to_string(t.dim(2)) + " channels, expected " +
                       std::to_string(stage_dims_[static_cast<std::size_t>(s)]));
    }
    if (s > 0) {
      const Tensor& prev = f.features[static_cast<std::size_t>(s - 1)];
      if (prev.dim(0) != 2 * t.dim(0) || prev.dim(1) != 2 * t.dim(1)) {
        throw ShapeError("decoder: level " + std::to_string(s) + " is " + shape_str(t.shape()) +
                         ", expected half of " + shape_str(prev.shape()));
      }
    }
  }
  const int h0 = f.features[0].dim(0), w0 = f.features[0].dim(1);
  std::vector<Tensor> mapped;
  mapped.reserve(4);
  for (int s = 0; s < 4; ++s) {
    Tensor p = linear(f.features[static_cast<std::size_t>(s)], proj_[static_cast<std::size_t>(s)]);
    if (s > 0) p = bilinear_upsample(p, h0, w0);
    mapped.push_back(p);
  }
  Tensor fused = concat(mapped, 2);           // (h0, w0, 4*Cd), stage order 1..4
  fused = gelu(linear(fused, fuse_));
  return linear(fused, classifier_);          // (h0, w0, num_classes)
}

void MlpDecoder::collect_parameters(std::vector<Parameter>& out) const {
  for (int s = 0; s < 4; ++s) {
    const std::string p = "decoder.proj" + std::to_string(s);
    out.push_back({p + ".weight", proj_[static_cast<std::size_t>(s)].w});
    out.push_back({p + ".bias", proj_[static_cast<std::size_t>(s)].b});
  }
  out.push_back({"decoder.fuse.weight", fuse_.w});
  out.push_back({"decoder.fuse.bias", fuse_.b});
  out.push_back({"decoder.classifier.weight", classifier_.w});
  out.push_back({"decoder.classifier.bias", classifier_.b});
}

}  // namespace ssf
