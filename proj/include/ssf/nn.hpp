#pragma once

#include "ssf/tensor.hpp"

namespace ssf {

struct LinearWeights {
  Tensor w;  // (in, out)
  Tensor b;  // (out); undefined for bias-free layers
};

struct NormWeights {
  Tensor gamma;
  Tensor beta;
};

LinearWeights init_linear(Rng& rng, int in, int out, bool bias = true, float stddev = 0.02f);
NormWeights init_norm(int c);

inline Tensor linear(const Tensor& x, const LinearWeights& l) {
  Tensor y = matmul(x, l.w);
  return l.b.defined() ? add(y, l.b) : y;
}

inline int ceil_mult(int v, int m) { return ((v + m - 1) / m) * m; }

}  // namespace ssf
