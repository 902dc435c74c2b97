#include "ssf/model.hpp"

#include <unordered_set>

namespace ssf {

namespace {

SwinEncoder make_encoder(EncoderConfig enc, std::uint64_t seed) {
  Rng rng(seed);
  return SwinEncoder(std::move(enc), rng);
}

MlpDecoder make_decoder(const SwinEncoder& encoder, DecoderConfig dec, std::uint64_t seed) {
  // separate stream so decoder init does not depend on encoder draw count
  Rng rng(seed ^ 0xd1b54a32d192ed03ull);
  return MlpDecoder(encoder.config(), std::move(dec), rng);
}

}  // namespace

SSformer::SSformer(EncoderConfig enc, DecoderConfig dec, std::uint64_t init_seed)
    : encoder_(make_encoder(std::move(enc), init_seed)),
      decoder_(make_decoder(encoder_, std::move(dec), init_seed)) {
  encoder_.collect_parameters(params_);
  decoder_.collect_parameters(params_);
  std::unordered_set<std::string> seen;
  for (const Parameter& p : params_) {
    if (!seen.insert(p.name).second) {
      throw ConfigError("duplicate parameter name: " + p.name);
    }
  }
}

Tensor SSformer::forward(const Tensor& image) const {
  const int h = image.dim(0), w = image.dim(1);
  MultiScaleFeatures feats = encoder_.forward(image);
  Tensor logits = decoder_.forward(feats);
  const int p = encoder_.config().patch_size;
  logits = bilinear_upsample(logits, logits.dim(0) * p, logits.dim(1) * p);
  if (logits.dim(0) != h || logits.dim(1) != w) {
    logits = slice(logits, {0, 0, 0}, {h, w, logits.dim(2)});
  }
  return logits;
}

void SSformer::zero_grads() {
  for (Parameter& p : params_) p.tensor.zero_grad();
}

std::int64_t SSformer::parameter_count() const {
  std::int64_t n = 0;
  for (const Parameter& p : params_) n += p.tensor.numel();
  return n;
}

}  // namespace ssf
