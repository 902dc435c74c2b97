#include "ssf/optim.hpp"

#include <cmath>

namespace ssf {

AdamW::AdamW(std::vector<Parameter> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.lr < 0.0f) throw ConfigError("adamw: lr must be non-negative");
  if (cfg_.beta1 < 0.0f || cfg_.beta1 >= 1.0f || cfg_.beta2 < 0.0f || cfg_.beta2 >= 1.0f) {
    throw ConfigError("adamw: betas must lie in [0,1)");
  }
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Parameter& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
    v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
  }
}

void AdamW::step() {
  ++t_;
  const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = params_[i];
    auto w = p.tensor.data();
    auto g = p.tensor.grad();
    float* m = m_[i].data();
    float* v = v_[i].data();
    const std::size_t n = w.size();
    for (std::size_t j = 0; j < n; ++j) {
      const float gj = g.empty() ? 0.0f : g[j];
      if (std::isnan(gj)) {
        throw NumericError("adamw: NaN gradient in " + p.name + " at element " +
                           std::to_string(j));
      }
      m[j] = cfg_.beta1 * m[j] + (1.0f - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0f - cfg_.beta2) * gj * gj;
      const float mhat = m[j] / bc1;
      const float vhat = v[j] / bc2;
      w[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[j]);
    }
  }
}

void AdamW::zero_grads() {
  for (Parameter& p : params_) p.tensor.zero_grad();
}

void AdamW::restore_state(std::int64_t t, std::vector<std::vector<float>> m,
                          std::vector<std::vector<float>> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw ConfigError("adamw: restored state does not match parameter list");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (m[i].size() != static_cast<std::size_t>(params_[i].tensor.numel()) ||
        v[i].size() != static_cast<std::size_t>(params_[i].tensor.numel())) {
      throw ConfigError("adamw: restored moment shape mismatch for " + params_[i].name);
    }
  }
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace ssf
