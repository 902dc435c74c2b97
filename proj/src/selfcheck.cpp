#include "ssf/selfcheck.hpp"

#include <cmath>
#include <cstring>

#include "ssf/encoder.hpp"

namespace ssf {

namespace {

Tensor random_tensor(Rng& rng, Shape shape, float scale = 1.0f) {
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
  for (float& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0)) * scale;
  return Tensor(std::move(shape), std::move(v));
}

CheckResult check_window_roundtrip() {
  CheckResult res{"window partition/reverse roundtrip bit-exact", true, ""};
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = static_cast<int>(rng.uniform_int(1, 8));
    const int h = m * static_cast<int>(rng.uniform_int(1, 5));
    const int w = m * static_cast<int>(rng.uniform_int(1, 5));
    const int c = static_cast<int>(rng.uniform_int(1, 8));
    Tensor x = random_tensor(rng, {h, w, c});
    Tensor back = window_reverse(window_partition(x, m), m, h, w);
    if (std::memcmp(x.data().data(), back.data().data(),
                    static_cast<std::size_t>(x.numel()) * sizeof(float)) != 0) {
      res.pass = false;
      res.detail = "mismatch at h=" + std::to_string(h) + " w=" + std::to_string(w) +
                   " M=" + std::to_string(m);
      return res;
    }
  }
  res.detail = "50 randomized cases";
  return res;
}

CheckResult check_shift_mask() {
  CheckResult res{"shifted-window mask blocks cross-window pairs", true, ""};
  Rng rng(11);
  double worst = 0.0;
  for (const int m : {4, 7}) {
    const int shift = m / 2;
    for (const int size : {2 * m, 4 * m}) {
      Tensor mask = build_attention_mask(size, size, m, shift, size, size);
      const int n = m * m;
      const int grid = size / m;
      const int nw = grid * grid;
      // oracle: a pair may attend iff both tokens wrapped the same way
      // around each axis under the cyclic shift
      auto wrapped = [&](int v) { return v >= size - shift; };
      Tensor scores = random_tensor(rng, {nw, n, n}, 3.0f);
      Tensor probs = softmax(add(scores, mask), 2);
      for (int row = 0; row < nw * n; ++row) {
        double sum = 0.0;
        for (int q = 0; q < n; ++q) sum += probs.data()[static_cast<std::size_t>(row * n + q)];
        if (std::abs(sum - 1.0) > 1e-5) {
          res.pass = false;
          res.detail = "masked attention row sums to " + std::to_string(sum);
          return res;
        }
      }
      for (int wi = 0; wi < grid; ++wi) {
        for (int wj = 0; wj < grid; ++wj) {
          const int widx = wi * grid + wj;
          for (int p = 0; p < n; ++p) {
            const int rp = wi * m + p / m, cp = wj * m + p % m;
            for (int q = 0; q < n; ++q) {
              const int rq = wi * m + q / m, cq = wj * m + q % m;
              const bool allowed = wrapped(rp) == wrapped(rq) && wrapped(cp) == wrapped(cq);
              const float mv = mask.data()[static_cast<std::size_t>((widx * n + p) * n + q)];
              if (allowed != (mv == 0.0f)) {
                res.pass = false;
                res.detail = "mask disagrees with oracle at M=" + std::to_string(m) +
                             " size=" + std::to_string(size);
                return res;
              }
              if (!allowed) {
                worst = std::max(
                    worst, static_cast<double>(
                               probs.data()[static_cast<std::size_t>((widx * n + p) * n + q)]));
              }
            }
          }
        }
      }
    }
  }
  if (worst >= 1e-7) {
    res.pass = false;
    res.detail = "blocked attention weight " + std::to_string(worst);
  } else {
    res.detail = "max blocked weight < 1e-7";
  }
  return res;
}

CheckResult check_softmax_rows() {
  CheckResult res{"softmax slices sum to 1 within 1e-5", true, ""};
  Rng rng(13);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int rows = static_cast<int>(rng.uniform_int(1, 16));
    const int cols = static_cast<int>(rng.uniform_int(2, 32));
    const float mag = trial % 2 == 0 ? 1.0f : 1e4f;
    Tensor x = random_tensor(rng, {rows, cols}, mag);
    Tensor y = softmax(x, 1);
    for (int r = 0; r < rows; ++r) {
      double sum = 0.0;
      for (int c = 0; c < cols; ++c) {
        const float v = y.data()[static_cast<std::size_t>(r * cols + c)];
        if (v < 0.0f) {
          res.pass = false;
          res.detail = "negative probability";
          return res;
        }
        sum += v;
      }
      worst = std::max(worst, std::abs(sum - 1.0));
    }
  }
  Tensor spike = softmax(Tensor(Shape{2}, std::vector<float>{1000.0f, 0.0f}), 0);
  if (std::abs(spike.data()[0] - 1.0f) > 1e-7f || spike.data()[1] > 1e-7f) {
    res.pass = false;
    res.detail = "large-magnitude case unstable";
    return res;
  }
  if (worst > 1e-5) {
    res.pass = false;
    res.detail = "worst deviation " + std::to_string(worst);
  } else {
    res.detail = "worst deviation " + std::to_string(worst);
  }
  return res;
}

CheckResult check_patch_merging_shape() {
  CheckResult res{"patch merging (4,4,3) -> (2,2,6)", true, ""};
  Rng rng(17);
  Tensor x = random_tensor(rng, {4, 4, 3});
  NormWeights norm = init_norm(12);
  Tensor reduction = init_linear(rng, 12, 6, false).w;
  Tensor y = patch_merging(x, norm, reduction);
  if (y.shape() != Shape{2, 2, 6}) {
    res.pass = false;
    res.detail = "got " + shape_str(y.shape());
    return res;
  }
  Tensor small = patch_merging(random_tensor(rng, {2, 2, 5}), init_norm(20),
                               init_linear(rng, 20, 10, false).w);
  if (small.shape() != Shape{1, 1, 10}) {
    res.pass = false;
    res.detail = "smallest case got " + shape_str(small.shape());
  }
  return res;
}

}  // namespace

std::vector<CheckResult> run_selftest() {
  return {
      check_window_roundtrip(),
      check_shift_mask(),
      check_softmax_rows(),
      check_patch_merging_shape(),
  };
}

}  // namespace ssf
