#pragma once

#include "ssf/tensor.hpp"

namespace ssf {

struct AdamWConfig {
  float lr = 6e-5f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float weight_decay = 0.01f;
  float eps = 1e-8f;
};

// Decoupled weight decay:
//   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
// A missing grad buffer counts as zero gradient (decay still applies);
// a NaN gradient aborts with the parameter name.
class AdamW {
 public:
  AdamW(std::vector<Parameter> params, AdamWConfig cfg);

  void step();
  void zero_grads();

  std::int64_t step_count() const { return t_; }
  const std::vector<Parameter>& params() const { return params_; }

  // exposed for checkpointing
  const std::vector<std::vector<float>>& moments_m() const { return m_; }
  const std::vector<std::vector<float>>& moments_v() const { return v_; }
  void restore_state(std::int64_t t, std::vector<std::vector<float>> m,
                     std::vector<std::vector<float>> v);

 private:
  std::vector<Parameter> params_;
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace ssf
