#include "ssf/nn.hpp"

namespace ssf {

LinearWeights init_linear(Rng& rng, int in, int out, bool bias, float stddev) {
  LinearWeights l;
  std::vector<float> w(static_cast<std::size_t>(in) * static_cast<std::size_t>(out));
  for (float& v : w) v = static_cast<float>(rng.normal(0.0, stddev));
  l.w = Tensor(Shape{in, out}, std::move(w));
  l.w.set_requires_grad(true);
  if (bias) {
    l.b = Tensor(Shape{out}, 0.0f);
    l.b.set_requires_grad(true);
  }
  return l;
}

NormWeights init_norm(int c) {
  NormWeights n;
  n.gamma = Tensor(Shape{c}, 1.0f);
  n.beta = Tensor(Shape{c}, 0.0f);
  n.gamma.set_requires_grad(true);
  n.beta.set_requires_grad(true);
  return n;
}

}  // namespace ssf
