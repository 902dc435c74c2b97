#pragma once

#include <string>
#include <vector>

#include "ssf/decoder.hpp"
#include "ssf/encoder.hpp"

namespace ssf {

struct ComplexityInputs {
  std::int64_t h;            // patch-grid height H/P
  std::int64_t w;            // patch-grid width W/P
  std::int64_t embed_dim;    // C
  std::int64_t window;       // M
  std::int64_t num_classes;  // N_cls
};

// Closed-form multiply-accumulate count
//   4hwC^2 + 2M^2hwC + hwC^2 + 4hwC*N_cls
// evaluated exactly; throws NumericError if the result cannot be held in 64
// bits. The first two terms cost one W-MSA block, the last two the decoder;
// the detailed counter below is the whole-network figure.
std::uint64_t omega_ssformer(const ComplexityInputs& in);

struct LayerCost {
  std::string name;
  std::int64_t params = 0;
  std::int64_t flops = 0;
};

struct ComplexityReport {
  std::string profile;
  int input_h = 0, input_w = 0;
  std::uint64_t omega_eq1 = 0;
  std::uint64_t flops_detailed = 0;
  std::int64_t params_total = 0;
  std::vector<LayerCost> per_layer;
};

// Analytic parameter count per layer; sums to exactly the element count of
// an instantiated model with the same configs.
std::int64_t count_params(const EncoderConfig& enc, const DecoderConfig& dec,
                          std::vector<LayerCost>* breakdown = nullptr);

// Walks the forward graph for an HxW input, padding included, counting
// multiply-accumulates: linear layers at tokens*c_in*c_out, attention at
// 2*M^2*M^2*c per window plus projections, norms/activations at one
// MAC-equivalent per element, bilinear resampling at 4 per output element.
// Reported unit: 1 MAC = 1 FLOP.
std::uint64_t count_flops_detailed(const EncoderConfig& enc, const DecoderConfig& dec, int input_h,
                                   int input_w, std::vector<LayerCost>* breakdown = nullptr);

ComplexityReport analyze(const std::string& profile_name, const EncoderConfig& enc,
                         const DecoderConfig& dec, int input_h, int input_w);

std::string report_to_json(const ComplexityReport& report);

}  // namespace ssf
