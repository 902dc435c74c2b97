#pragma once

#include "ssf/encoder.hpp"

namespace ssf {

struct DecoderConfig {
  int embed_dim = 128;     // decoder channel width, tied to encoder C by default
  int num_classes = 150;
  int ignore_index = 255;
  void validate() const;
};

// All-MLP fusion head: project each pyramid level to a common width,
// upsample the coarse levels to the finest one, concatenate in stage order,
// fuse, classify. Output lives at 1/patch_size of the input resolution.
class MlpDecoder {
 public:
  MlpDecoder(const EncoderConfig& enc, DecoderConfig cfg, Rng& rng);

  const DecoderConfig& config() const { return cfg_; }

  Tensor forward(const MultiScaleFeatures& f) const;

  void collect_parameters(std::vector<Parameter>& out) const;

 private:
  DecoderConfig cfg_;
  std::array<int, 4> stage_dims_;
  std::array<LinearWeights, 4> proj_;
  LinearWeights fuse_;
  LinearWeights classifier_;
};

}  // namespace ssf
