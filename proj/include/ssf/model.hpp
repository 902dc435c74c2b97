#pragma once

#include "ssf/decoder.hpp"
#include "ssf/encoder.hpp"

namespace ssf {

// Encoder + decoder with a stable, named parameter registry.
class SSformer {
 public:
  SSformer(EncoderConfig enc, DecoderConfig dec, std::uint64_t init_seed);

  const SwinEncoder& encoder() const { return encoder_; }
  const MlpDecoder& decoder() const { return decoder_; }

  // Full-resolution class logits (H, W, num_classes) for an (H, W, c) image.
  Tensor forward(const Tensor& image) const;

  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Parameter>& parameters() { return params_; }
  void zero_grads();

  std::int64_t parameter_count() const;

 private:
  SwinEncoder encoder_;
  MlpDecoder decoder_;
  std::vector<Parameter> params_;
};

}  // namespace ssf
