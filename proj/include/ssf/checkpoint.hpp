#pragma once

#include <string>

#include "ssf/model.hpp"
#include "ssf/optim.hpp"

namespace ssf {

// Stable digest of the architecture a checkpoint was built for; save embeds
// it and load refuses a model whose digest differs.
std::uint64_t config_digest(const EncoderConfig& enc, const DecoderConfig& dec);

// Binary layout, little-endian throughout:
//   "SSFM" | u32 version | u64 digest | u32 n_params
//   per parameter: u32 name_len | name | u32 rank | u32 dims[rank] | f32 data[]
//   u8 has_optimizer | (u64 step | per parameter: f32 m[] | f32 v[])
void save_checkpoint(const std::string& path, const SSformer& model, const AdamW* opt = nullptr);

// Restores every parameter bit-exactly; optimizer state is restored when
// both the file carries it and opt is non-null.
void load_checkpoint(const std::string& path, SSformer& model, AdamW* opt = nullptr);

}  // namespace ssf
