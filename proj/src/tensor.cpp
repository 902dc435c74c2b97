#include "ssf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <utility>

namespace ssf {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size());
  std::int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = acc;
    acc *= s[static_cast<std::size_t>(i)];
  }
  return st;
}

// C[m,n] += A[m,k] * B[k,n]
void mm_nn_acc(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<std::int64_t>(i) * k;
    float* crow = c + static_cast<std::int64_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const float av = arow[l];
      const float* brow = b + static_cast<std::int64_t>(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += A[m,n] * B[k,n]^T
void mm_nt_acc(const float* a, const float* b, float* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<std::int64_t>(i) * n;
    float* crow = c + static_cast<std::int64_t>(i) * k;
    for (int j = 0; j < k; ++j) {
      const float* brow = b + static_cast<std::int64_t>(j) * n;
      float acc = 0.0f;
      for (int l = 0; l < n; ++l) acc += arow[l] * brow[l];
      crow[j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void mm_tn_acc(const float* a, const float* b, float* c, int k, int m, int n) {
  for (int l = 0; l < m; ++l) {
    const float* arow = a + static_cast<std::int64_t>(l) * k;
    const float* brow = b + static_cast<std::int64_t>(l) * n;
    for (int i = 0; i < k; ++i) {
      const float av = arow[i];
      float* crow = c + static_cast<std::int64_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dst[o] (+)= src[view(o)] where the view walks `oshape` with per-axis
// strides into src starting at `off`. Covers permute and slice reads.
template <bool Acc>
void gather_view(const float* src, std::int64_t off, const Shape& oshape,
                 const std::vector<std::int64_t>& vstride, float* dst) {
  const int r = static_cast<int>(oshape.size());
  const std::int64_t n = shape_numel(oshape);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t soff = off;
  for (std::int64_t o = 0; o < n; ++o) {
    if constexpr (Acc) {
      dst[o] += src[soff];
    } else {
      dst[o] = src[soff];
    }
    for (int ax = r - 1; ax >= 0; --ax) {
      const auto a = static_cast<std::size_t>(ax);
      if (++idx[a] < oshape[a]) {
        soff += vstride[a];
        break;
      }
      idx[a] = 0;
      soff -= vstride[a] * (oshape[a] - 1);
    }
  }
}

// dst[view(o)] (+)= src[o]; the write-side mirror of gather_view. Covers
// concat/pad writes and the backward of permute/slice.
template <bool Acc>
void scatter_view(float* dst, std::int64_t off, const Shape& oshape,
                  const std::vector<std::int64_t>& vstride, const float* src) {
  const int r = static_cast<int>(oshape.size());
  const std::int64_t n = shape_numel(oshape);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t doff = off;
  for (std::int64_t o = 0; o < n; ++o) {
    if constexpr (Acc) {
      dst[doff] += src[o];
    } else {
      dst[doff] = src[o];
    }
    for (int ax = r - 1; ax >= 0; --ax) {
      const auto a = static_cast<std::size_t>(ax);
      if (++idx[a] < oshape[a]) {
        doff += vstride[a];
        break;
      }
      idx[a] = 0;
      doff -= vstride[a] * (oshape[a] - 1);
    }
  }
}

void ensure_grad(const std::shared_ptr<TensorImpl>& t) {
  if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0f);
}

enum class Bcast { Same, Scalar, Leading };

Bcast bcast_kind(const Shape& a, const Shape& b, const char* opname) {
  if (a == b) return Bcast::Same;
  if (shape_numel(b) == 1) return Bcast::Scalar;
  if (b.size() <= a.size()) {
    bool suffix = true;
    const std::size_t off = a.size() - b.size();
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (a[off + i] != b[i]) {
        suffix = false;
        break;
      }
    }
    if (suffix) return Bcast::Leading;
  }
  throw ShapeError(std::string(opname) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                   " do not match (broadcast is limited to scalars and leading batch dims)");
}

struct EwisePlan {
  Bcast kind;
  std::int64_t nb;  // numel of b (tile length for Leading)
};

EwisePlan ewise_plan(const Tensor& a, const Tensor& b, const char* opname) {
  Bcast k = bcast_kind(a.shape(), b.shape(), opname);
  return {k, b.numel()};
}

void record_op(TapeOp op) {
  Tape* t = Tape::active();
  bool any_rg = false;
  for (const auto& in : op.inputs) any_rg = any_rg || in->requires_grad;
  if (t != nullptr && any_rg) {
    op.out->requires_grad = true;
    t->record(std::move(op));
  }
}

struct AxisSplit {
  std::int64_t outer, n, inner;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit sp{1, s[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

constexpr float kGeluAlpha = 0.7978845608f;  // sqrt(2/pi), tanh approximation
constexpr float kGeluCubic = 0.044715f;

struct UpsampleTaps {
  std::vector<int> i0, i1;
  std::vector<float> w1;  // weight of i1; i0 gets 1 - w1
};

UpsampleTaps upsample_taps(int src, int dst) {
  UpsampleTaps t;
  t.i0.resize(static_cast<std::size_t>(dst));
  t.i1.resize(static_cast<std::size_t>(dst));
  t.w1.resize(static_cast<std::size_t>(dst));
  const double ratio = static_cast<double>(src) / static_cast<double>(dst);
  for (int d = 0; d < dst; ++d) {
    const double s = (d + 0.5) * ratio - 0.5;
    const double f = std::floor(s);
    int lo = static_cast<int>(f);
    float frac = static_cast<float>(s - f);
    int hi = lo + 1;
    lo = std::clamp(lo, 0, src - 1);
    hi = std::clamp(hi, 0, src - 1);
    t.i0[static_cast<std::size_t>(d)] = lo;
    t.i1[static_cast<std::size_t>(d)] = hi;
    t.w1[static_cast<std::size_t>(d)] = frac;
  }
  return t;
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<TensorImpl>()) {
  impl_->shape = std::move(shape);
  for (int d : impl_->shape) {
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(impl_->shape));
  }
  impl_->data.assign(static_cast<std::size_t>(shape_numel(impl_->shape)), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : impl_(std::make_shared<TensorImpl>()) {
  impl_->shape = std::move(shape);
  if (shape_numel(impl_->shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(impl_->shape));
  }
  impl_->data = std::move(data);
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() requires a scalar, got shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor Tensor::clone() const {
  Tensor t(impl_->shape, impl_->data);
  return t;
}

Tape::Tape() {
  if (g_active_tape != nullptr) {
    throw NumericError("a tape is already active on this thread");
  }
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = nullptr; }

Tape* Tape::active() { return g_active_tape; }

// ---------------------------------------------------------------------------
// forward ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw ShapeError("matmul requires rank >= 2 operands, got " + shape_str(sa) + " and " +
                     shape_str(sb));
  }
  const int m = sa[sa.size() - 2];
  const int k = sa[sa.size() - 1];
  const int kb = sb[sb.size() - 2];
  const int n = sb[sb.size() - 1];
  const bool shared_b = sb.size() == 2;
  if (k != kb) {
    throw ShapeError("matmul: inner dims disagree for " + shape_str(sa) + " and " + shape_str(sb));
  }
  if (!shared_b) {
    if (sa.size() != sb.size() ||
        !std::equal(sa.begin(), sa.end() - 2, sb.begin())) {
      throw ShapeError("matmul: batch dims disagree for " + shape_str(sa) + " and " +
                       shape_str(sb));
    }
  }
  Shape so(sa);
  so[so.size() - 1] = n;
  Tensor out(so);
  const std::int64_t batch = shape_numel(sa) / (static_cast<std::int64_t>(m) * k);
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* pc = out.data().data();
  const std::int64_t asz = static_cast<std::int64_t>(m) * k;
  const std::int64_t bsz = static_cast<std::int64_t>(k) * n;
  const std::int64_t csz = static_cast<std::int64_t>(m) * n;
  for (std::int64_t i = 0; i < batch; ++i) {
    mm_nn_acc(pa + i * asz, shared_b ? pb : pb + i * bsz, pc + i * csz, m, k, n);
  }
  record_op({OpKind::MatMul, {a.node(), b.node()}, out.node()});
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  EwisePlan sp = ewise_plan(a, b, "add");
  Tensor out(a.shape());
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  const std::int64_t n = a.numel();
  switch (sp.kind) {
    case Bcast::Same:
      for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
      break;
    case Bcast::Scalar: {
      const float c = pb[0];
      for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + c;
      break;
    }
    case Bcast::Leading:
      for (std::int64_t base = 0; base < n; base += sp.nb) {
        for (std::int64_t t = 0; t < sp.nb; ++t) po[base + t] = pa[base + t] + pb[t];
      }
      break;
  }
  record_op({OpKind::Add, {a.node(), b.node()}, out.node()});
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  EwisePlan sp = ewise_plan(a, b, "mul");
  Tensor out(a.shape());
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  const std::int64_t n = a.numel();
  switch (sp.kind) {
    case Bcast::Same:
      for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
      break;
    case Bcast::Scalar: {
      const float c = pb[0];
      for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
      break;
    }
    case Bcast::Leading:
      for (std::int64_t base = 0; base < n; base += sp.nb) {
        for (std::int64_t t = 0; t < sp.nb; ++t) po[base + t] = pa[base + t] * pb[t];
      }
      break;
  }
  record_op({OpKind::Mul, {a.node(), b.node()}, out.node()});
  return out;
}

Tensor scale(const Tensor& x, float c) {
  Tensor out(x.shape());
  const float* px = x.data().data();
  float* po = out.data().data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] * c;
  TapeOp op{OpKind::Scale, {x.node()}, out.node()};
  op.scalar = c;
  record_op(std::move(op));
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  const float* px = x.data().data();
  float* po = out.data().data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const float v = px[i];
    const float u = kGeluAlpha * (v + kGeluCubic * v * v * v);
    po[i] = 0.5f * v * (1.0f + std::tanh(u));
  }
  record_op({OpKind::Gelu, {x.node()}, out.node()});
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                     shape_str(x.shape()));
  }
  AxisSplit sp = split_at(x.shape(), axis);
  Tensor out(x.shape());
  const float* px = x.data().data();
  float* po = out.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t in = 0; in < sp.inner; ++in) {
      const std::int64_t base = o * sp.n * sp.inner + in;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::int64_t j = 0; j < sp.n; ++j) {
        const float v = px[base + j * sp.inner];
        if (std::isnan(v)) throw NumericError("softmax: NaN in input");
        mx = std::max(mx, v);
      }
      double sum = 0.0;
      for (std::int64_t j = 0; j < sp.n; ++j) {
        const float e = std::exp(px[base + j * sp.inner] - mx);
        po[base + j * sp.inner] = e;
        sum += e;
      }
      const float inv = static_cast<float>(1.0 / sum);
      for (std::int64_t j = 0; j < sp.n; ++j) po[base + j * sp.inner] *= inv;
    }
  }
  TapeOp op{OpKind::Softmax, {x.node()}, out.node()};
  op.axis = axis;
  record_op(std::move(op));
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (eps <= 0.0f) throw NumericError("layernorm: eps must be positive");
  const int c = x.dim(x.rank() - 1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("layernorm: feature dim " + std::to_string(c) +
                     " does not match gamma " + shape_str(gamma.shape()) + " / beta " +
                     shape_str(beta.shape()));
  }
  const std::int64_t rows = x.numel() / c;
  Tensor out(x.shape());
  const float* px = x.data().data();
  const float* pg = gamma.data().data();
  const float* pb = beta.data().data();
  float* po = out.data().data();
  std::vector<float> saved(static_cast<std::size_t>(2 * rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* row = px + r * c;
    double m = 0.0;
    for (int j = 0; j < c; ++j) m += row[j];
    m /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = row[j] - m;
      var += d * d;
    }
    var /= c;
    const float mean = static_cast<float>(m);
    const float rstd = static_cast<float>(1.0 / std::sqrt(var + eps));
    saved[static_cast<std::size_t>(r)] = mean;
    saved[static_cast<std::size_t>(rows + r)] = rstd;
    float* orow = po + r * c;
    for (int j = 0; j < c; ++j) orow[j] = (row[j] - mean) * rstd * pg[j] + pb[j];
  }
  TapeOp op{OpKind::LayerNorm, {x.node(), gamma.node(), beta.node()}, out.node()};
  op.scalar = eps;
  op.saved = std::move(saved);
  record_op(std::move(op));
  return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  }
  Tensor out(std::move(new_shape), std::vector<float>(x.data().begin(), x.data().end()));
  record_op({OpKind::Reshape, {x.node()}, out.node()});
  return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) {
    throw ShapeError("permute: order has " + std::to_string(perm.size()) + " axes for rank " +
                     std::to_string(r));
  }
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)]) {
      throw ShapeError("permute: invalid axis order");
    }
    seen[static_cast<std::size_t>(p)] = true;
  }
  auto sstride = strides_of(x.shape());
  Shape oshape(static_cast<std::size_t>(r));
  std::vector<std::int64_t> vstride(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    oshape[static_cast<std::size_t>(i)] = x.dim(perm[static_cast<std::size_t>(i)]);
    vstride[static_cast<std::size_t>(i)] = sstride[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  Tensor out(oshape);
  gather_view<false>(x.data().data(), 0, oshape, vstride, out.data().data());
  TapeOp op{OpKind::Permute, {x.node()}, out.node()};
  op.ints = perm;
  record_op(std::move(op));
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  const int r = static_cast<int>(s0.size());
  if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
  int total = 0;
  for (const Tensor& t : xs) {
    if (t.rank() != r) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != axis && t.dim(i) != s0[static_cast<std::size_t>(i)]) {
        throw ShapeError("concat: shapes " + shape_str(s0) + " and " + shape_str(t.shape()) +
                         " differ off-axis");
      }
    }
    total += t.dim(axis);
  }
  Shape so(s0);
  so[static_cast<std::size_t>(axis)] = total;
  Tensor out(so);
  auto ostride = strides_of(so);
  int off_axis = 0;
  for (const Tensor& t : xs) {
    scatter_view<false>(out.data().data(), off_axis * ostride[static_cast<std::size_t>(axis)],
                        t.shape(), ostride, t.data().data());
    off_axis += t.dim(axis);
  }
  TapeOp op{OpKind::Concat, {}, out.node()};
  for (const Tensor& t : xs) op.inputs.push_back(t.node());
  op.axis = axis;
  record_op(std::move(op));
  return out;
}

Tensor slice(const Tensor& x, const std::vector<int>& offsets, const std::vector<int>& sizes) {
  const int r = x.rank();
  if (static_cast<int>(offsets.size()) != r || static_cast<int>(sizes.size()) != r) {
    throw ShapeError("slice: offsets/sizes rank mismatch");
  }
  Shape oshape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int o = offsets[static_cast<std::size_t>(i)];
    const int sz = sizes[static_cast<std::size_t>(i)];
    if (o < 0 || sz <= 0 || o + sz > x.dim(i)) {
      throw ShapeError("slice: window out of bounds for " + shape_str(x.shape()));
    }
    oshape[static_cast<std::size_t>(i)] = sz;
  }
  auto sstride = strides_of(x.shape());
  std::int64_t off = 0;
  for (int i = 0; i < r; ++i) off += static_cast<std::int64_t>(offsets[static_cast<std::size_t>(i)]) * sstride[static_cast<std::size_t>(i)];
  Tensor out(oshape);
  gather_view<false>(x.data().data(), off, oshape, sstride, out.data().data());
  TapeOp op{OpKind::Slice, {x.node()}, out.node()};
  op.ints = offsets;
  op.ints.insert(op.ints.end(), sizes.begin(), sizes.end());
  record_op(std::move(op));
  return out;
}

Tensor pad(const Tensor& x, const std::vector<int>& before, const std::vector<int>& after) {
  const int r = x.rank();
  if (static_cast<int>(before.size()) != r || static_cast<int>(after.size()) != r) {
    throw ShapeError("pad: before/after rank mismatch");
  }
  Shape oshape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    if (before[static_cast<std::size_t>(i)] < 0 || after[static_cast<std::size_t>(i)] < 0) {
      throw ShapeError("pad: negative padding");
    }
    oshape[static_cast<std::size_t>(i)] = x.dim(i) + before[static_cast<std::size_t>(i)] + after[static_cast<std::size_t>(i)];
  }
  Tensor out(oshape, 0.0f);
  auto ostride = strides_of(oshape);
  std::int64_t off = 0;
  for (int i = 0; i < r; ++i) off += static_cast<std::int64_t>(before[static_cast<std::size_t>(i)]) * ostride[static_cast<std::size_t>(i)];
  scatter_view<false>(out.data().data(), off, x.shape(), ostride, x.data().data());
  TapeOp op{OpKind::Pad, {x.node()}, out.node()};
  op.ints = before;
  op.ints.insert(op.ints.end(), after.begin(), after.end());
  record_op(std::move(op));
  return out;
}

Tensor cyclic_roll(const Tensor& x, const std::vector<int>& shifts) {
  const int r = x.rank();
  if (static_cast<int>(shifts.size()) != r) throw ShapeError("cyclic_roll: shifts rank mismatch");
  std::vector<int> norm(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int d = x.dim(i);
    norm[static_cast<std::size_t>(i)] = ((shifts[static_cast<std::size_t>(i)] % d) + d) % d;
  }
  Tensor out(x.shape());
  const float* px = x.data().data();
  float* po = out.data().data();
  auto stride = strides_of(x.shape());
  const std::int64_t n = x.numel();
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  // out[i] = in[(i - s) mod d]: walk outputs, track source offset.
  std::int64_t soff = 0;
  for (int i = 0; i < r; ++i) {
    const int d = x.dim(i);
    const int j = (0 - norm[static_cast<std::size_t>(i)] + d) % d;
    soff += static_cast<std::int64_t>(j) * stride[static_cast<std::size_t>(i)];
  }
  std::vector<std::int64_t> src_idx(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int d = x.dim(i);
    src_idx[static_cast<std::size_t>(i)] = (0 - norm[static_cast<std::size_t>(i)] + d) % d;
  }
  for (std::int64_t o = 0; o < n; ++o) {
    po[o] = px[soff];
    for (int ax = r - 1; ax >= 0; --ax) {
      const auto a = static_cast<std::size_t>(ax);
      const int d = x.dim(ax);
      if (++idx[a] < d) {
        if (++src_idx[a] == d) {
          src_idx[a] = 0;
          soff -= static_cast<std::int64_t>(d - 1) * stride[a];
        } else {
          soff += stride[a];
        }
        break;
      }
      idx[a] = 0;
      // rewind this axis back to its o=0 source position
      const std::int64_t j0 = (0 - norm[a] + d) % d;
      soff -= (src_idx[a] - j0) * stride[a];
      src_idx[a] = j0;
    }
  }
  TapeOp op{OpKind::Roll, {x.node()}, out.node()};
  op.ints = shifts;
  record_op(std::move(op));
  return out;
}

Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  Tensor out(Shape{1}, std::vector<float>{static_cast<float>(s / static_cast<double>(x.numel()))});
  record_op({OpKind::Mean, {x.node()}, out.node()});
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, int ignore_index) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: logits must be (rows, classes), got " +
                     shape_str(logits.shape()));
  }
  const std::int64_t rows = logits.dim(0);
  const int c = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  const float* px = logits.data().data();
  double loss = 0.0;
  std::int64_t valid = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    const int lab = labels[static_cast<std::size_t>(r)];
    if (lab == ignore_index) continue;
    if (lab < 0 || lab >= c) {
      throw DataError("cross_entropy: label " + std::to_string(lab) + " out of range [0," +
                      std::to_string(c) + ") at row " + std::to_string(r));
    }
    const float* row = px + r * c;
    float mx = -std::numeric_limits<float>::infinity();
    for (int j = 0; j < c; ++j) {
      if (std::isnan(row[j])) throw NumericError("cross_entropy: NaN logit at row " + std::to_string(r));
      mx = std::max(mx, row[j]);
    }
    double sum = 0.0;
    for (int j = 0; j < c; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    loss += mx + std::log(sum) - row[lab];
    ++valid;
  }
  if (valid == 0) throw DataError("cross_entropy: every label is ignore_index");
  Tensor out(Shape{1}, std::vector<float>{static_cast<float>(loss / static_cast<double>(valid))});
  TapeOp op{OpKind::CrossEntropy, {logits.node()}, out.node()};
  op.axis = ignore_index;
  op.index = labels;
  op.ints = {static_cast<int>(valid)};
  record_op(std::move(op));
  return out;
}

Tensor bilinear_upsample(const Tensor& x, int target_h, int target_w) {
  if (x.rank() != 3) {
    throw ShapeError("bilinear_upsample: expected (H,W,C), got " + shape_str(x.shape()));
  }
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (target_h < h || target_w < w) {
    throw ShapeError("bilinear_upsample: target " + std::to_string(target_h) + "x" +
                     std::to_string(target_w) + " smaller than source " + std::to_string(h) + "x" +
                     std::to_string(w) + " (downsampling is out of contract)");
  }
  if (target_h == h && target_w == w) {
    // identity mapping; keep the payload bit-for-bit
    Tensor out(x.shape(), std::vector<float>(x.data().begin(), x.data().end()));
    TapeOp op{OpKind::Upsample, {x.node()}, out.node()};
    op.ints = {target_h, target_w};
    record_op(std::move(op));
    return out;
  }
  UpsampleTaps ty = upsample_taps(h, target_h);
  UpsampleTaps tx = upsample_taps(w, target_w);
  Tensor out(Shape{target_h, target_w, c});
  const float* px = x.data().data();
  float* po = out.data().data();
  for (int oy = 0; oy < target_h; ++oy) {
    const int y0 = ty.i0[static_cast<std::size_t>(oy)], y1 = ty.i1[static_cast<std::size_t>(oy)];
    const float fy = ty.w1[static_cast<std::size_t>(oy)];
    for (int ox = 0; ox < target_w; ++ox) {
      const int x0 = tx.i0[static_cast<std::size_t>(ox)], x1 = tx.i1[static_cast<std::size_t>(ox)];
      const float fx = tx.w1[static_cast<std::size_t>(ox)];
      const float w00 = (1.0f - fy) * (1.0f - fx);
      const float w01 = (1.0f - fy) * fx;
      const float w10 = fy * (1.0f - fx);
      const float w11 = fy * fx;
      const float* p00 = px + (static_cast<std::int64_t>(y0) * w + x0) * c;
      const float* p01 = px + (static_cast<std::int64_t>(y0) * w + x1) * c;
      const float* p10 = px + (static_cast<std::int64_t>(y1) * w + x0) * c;
      const float* p11 = px + (static_cast<std::int64_t>(y1) * w + x1) * c;
      float* dst = po + (static_cast<std::int64_t>(oy) * target_w + ox) * c;
      for (int ch = 0; ch < c; ++ch) {
        dst[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
      }
    }
  }
  TapeOp op{OpKind::Upsample, {x.node()}, out.node()};
  op.ints = {target_h, target_w};
  record_op(std::move(op));
  return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& rows) {
  if (table.rank() != 2) {
    throw ShapeError("gather_rows: table must be rank 2, got " + shape_str(table.shape()));
  }
  const int r = table.dim(0), c = table.dim(1);
  Tensor out(Shape{static_cast<int>(rows.size()), c});
  const float* pt = table.data().data();
  float* po = out.data().data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int idx = rows[i];
    if (idx < 0 || idx >= r) {
      throw DataError("gather_rows: index " + std::to_string(idx) + " out of range [0," +
                      std::to_string(r) + ")");
    }
    std::memcpy(po + i * static_cast<std::size_t>(c), pt + static_cast<std::int64_t>(idx) * c,
                sizeof(float) * static_cast<std::size_t>(c));
  }
  TapeOp op{OpKind::GatherRows, {table.node()}, out.node()};
  op.index = rows;
  record_op(std::move(op));
  return out;
}

std::vector<int> argmax_last(const Tensor& x) {
  const int c = x.dim(x.rank() - 1);
  const std::int64_t rows = x.numel() / c;
  std::vector<int> out(static_cast<std::size_t>(rows));
  const float* px = x.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* row = px + r * c;
    int best = 0;
    for (int j = 1; j < c; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// backward

namespace {

void backward_matmul(const TapeOp& op) {
  const auto& a = op.inputs[0];
  const auto& b = op.inputs[1];
  const Shape& sa = a->shape;
  const Shape& sb = b->shape;
  const int m = sa[sa.size() - 2];
  const int k = sa[sa.size() - 1];
  const int n = sb[sb.size() - 1];
  const bool shared_b = sb.size() == 2;
  const std::int64_t batch = shape_numel(sa) / (static_cast<std::int64_t>(m) * k);
  const std::int64_t asz = static_cast<std::int64_t>(m) * k;
  const std::int64_t bsz = static_cast<std::int64_t>(k) * n;
  const std::int64_t csz = static_cast<std::int64_t>(m) * n;
  const float* g = op.out->grad.data();
  if (a->requires_grad) {
    ensure_grad(a);
    for (std::int64_t i = 0; i < batch; ++i) {
      mm_nt_acc(g + i * csz, b->data.data() + (shared_b ? 0 : i * bsz),
                a->grad.data() + i * asz, m, n, k);
    }
  }
  if (b->requires_grad) {
    ensure_grad(b);
    for (std::int64_t i = 0; i < batch; ++i) {
      mm_tn_acc(a->data.data() + i * asz, g + i * csz,
                b->grad.data() + (shared_b ? 0 : i * bsz), k, m, n);
    }
  }
}

void backward_ewise(const TapeOp& op, bool is_mul) {
  const auto& a = op.inputs[0];
  const auto& b = op.inputs[1];
  const std::int64_t n = static_cast<std::int64_t>(op.out->data.size());
  const std::int64_t nb = static_cast<std::int64_t>(b->data.size());
  const float* g = op.out->grad.data();
  if (a->requires_grad) {
    ensure_grad(a);
    float* ga = a->grad.data();
    if (is_mul) {
      const float* pb = b->data.data();
      for (std::int64_t base = 0; base < n; base += nb) {
        for (std::int64_t t = 0; t < nb; ++t) ga[base + t] += g[base + t] * pb[t];
      }
    } else {
      for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
    }
  }
  if (b->requires_grad) {
    ensure_grad(b);
    float* gb = b->grad.data();
    if (is_mul) {
      const float* pa = a->data.data();
      for (std::int64_t base = 0; base < n; base += nb) {
        for (std::int64_t t = 0; t < nb; ++t) gb[t] += g[base + t] * pa[base + t];
      }
    } else {
      for (std::int64_t base = 0; base < n; base += nb) {
        for (std::int64_t t = 0; t < nb; ++t) gb[t] += g[base + t];
      }
    }
  }
}

void backward_gelu(const TapeOp& op) {
  const auto& x = op.inputs[0];
  if (!x->requires_grad) return;
  ensure_grad(x);
  const float* px = x->data.data();
  const float* g = op.out->grad.data();
  float* gx = x->grad.data();
  const std::int64_t n = static_cast<std::int64_t>(x->data.size());
  for (std::int64_t i = 0; i < n; ++i) {
    const float v = px[i];
    const float u = kGeluAlpha * (v + kGeluCubic * v * v * v);
    const float t = std::tanh(u);
    const float du = kGeluAlpha * (1.0f + 3.0f * kGeluCubic * v * v);
    gx[i] += g[i] * (0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du);
  }
}

void backward_softmax(const TapeOp& op) {
  const auto& x = op.inputs[0];
  if (!x->requires_grad) return;
  ensure_grad(x);
  AxisSplit sp = split_at(op.out->shape, op.axis);
  const float* y = op.out->data.data();
  const float* g = op.out->grad.data();
  float* gx = x->grad.data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t in = 0; in < sp.inner; ++in) {
      const std::int64_t base = o * sp.n * sp.inner + in;
      double dot = 0.0;
      for (std::int64_t j = 0; j < sp.n; ++j) {
        const std::int64_t at = base + j * sp.inner;
        dot += static_cast<double>(g[at]) * y[at];
      }
      const float s = static_cast<float>(dot);
      for (std::int64_t j = 0; j < sp.n; ++j) {
        const std::int64_t at = base + j * sp.inner;
        gx[at] += (g[at] - s) * y[at];
      }
    }
  }
}

void backward_layernorm(const TapeOp& op) {
  const auto& x = op.inputs[0];
  const auto& gamma = op.inputs[1];
  const auto& beta = op.inputs[2];
  const int c = x->shape.back();
  const std::int64_t rows = static_cast<std::int64_t>(x->data.size()) / c;
  const float* px = x->data.data();
  const float* pg = gamma->data.data();
  const float* g = op.out->grad.data();
  const float* mean = op.saved.data();
  const float* rstd = op.saved.data() + rows;
  if (x->requires_grad) ensure_grad(x);
  if (gamma->requires_grad) ensure_grad(gamma);
  if (beta->requires_grad) ensure_grad(beta);
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* xrow = px + r * c;
    const float* grow = g + r * c;
    const float m = mean[r];
    const float rs = rstd[r];
    if (gamma->requires_grad || beta->requires_grad) {
      for (int j = 0; j < c; ++j) {
        const float xhat = (xrow[j] - m) * rs;
        if (gamma->requires_grad) gamma->grad[static_cast<std::size_t>(j)] += grow[j] * xhat;
        if (beta->requires_grad) beta->grad[static_cast<std::size_t>(j)] += grow[j];
      }
    }
    if (x->requires_grad) {
      double m1 = 0.0, m2 = 0.0;
      for (int j = 0; j < c; ++j) {
        const float xhat = (xrow[j] - m) * rs;
        const float dxh = grow[j] * pg[j];
        m1 += dxh;
        m2 += static_cast<double>(dxh) * xhat;
      }
      m1 /= c;
      m2 /= c;
      float* gxrow = x->grad.data() + r * c;
      for (int j = 0; j < c; ++j) {
        const float xhat = (xrow[j] - m) * rs;
        const float dxh = grow[j] * pg[j];
        gxrow[j] += rs * (dxh - static_cast<float>(m1) - xhat * static_cast<float>(m2));
      }
    }
  }
}

void backward_permute(const TapeOp& op) {
  const auto& x = op.inputs[0];
  if (!x->requires_grad) return;
  ensure_grad(x);
  auto sstride = strides_of(x->shape);
  const int r = static_cast<int>(x->shape.size());
  std::vector<std::int64_t> vstride(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    vstride[static_cast<std::size_t>(i)] = sstride[static_cast<std::size_t>(op.ints[static_cast<std::size_t>(i)])];
  }
  scatter_view<true>(x->grad.data(), 0, op.out->shape, vstride, op.out->grad.data());
}

void backward_concat(const TapeOp& op) {
  auto ostride = strides_of(op.out->shape);
  int off_axis = 0;
  for (const auto& in : op.inputs) {
    if (in->requires_grad) {
      ensure_grad(in);
      gather_view<true>(op.out->grad.data(),
                        off_axis * ostride[static_cast<std::size_t>(op.axis)], in->shape, ostride,
                        in->grad.data());
    }
    off_axis += in->shape[static_cast<std::size_t>(op.axis)];
  }
}

void backward_slice(const TapeOp& op) {
  const auto& x = op.inputs[0];
  if (!x->requires_grad) return;
  ensure_grad(x);
  const int r = static_cast<int>(x->shape.size());
  auto sstride = strides_of(x->shape);
  std::int64_t off = 0;
  for (int i = 0; i < r; ++i) off += static_cast<std::int64_t>(op.ints[static_cast<std::size_t>(i)]) * sstride[static_cast<std::size_t>(i)];
  scatter_view<true>(x->grad.data(), off, op.out->shape, sstride, op.out->grad.data());
}

void backward_pad(const TapeOp& op) {
  const auto& x = op.inputs[0];
  if (!x->requires_grad) return;
  ensure_grad(x);
  const int r = static_cast<int>(x->shape.size());
  auto ostride = strides_of(op.out->shape);
  std::int64_t off = 0;
  for (int i = 0; i < r; ++i) off += static_cast<std::int64_t>(op.ints[static_cast<std::size_t>(i)]) * ostride[static_cast<std::size_t>(i)];
  gather_view<true>(op.out->grad.data(), off, x->shape, ostride, x->grad.data());
}

void backward_roll(const TapeOp& op) {
  const auto& x = op.inputs[0];
  if (!x->requires_grad) return;
  ensure_grad(x);
  // out[i] = in[(i - s) mod d]  =>  gin[j] += gout[(j + s) mod d]
  const int r = static_cast<int>(x->shape.size());
  auto stride = strides_of(x->shape);
  const float* g = op.out->grad.data();
  float* gx = x->grad.data();
  const std::int64_t n = static_cast<std::int64_t>(x->data.size());
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  for (std::int64_t j = 0; j < n; ++j) {
    std::int64_t goff = 0;
    for (int i = 0; i < r; ++i) {
      const int d = x->shape[static_cast<std::size_t>(i)];
      const int s = ((op.ints[static_cast<std::size_t>(i)] % d) + d) % d;
      goff += ((idx[static_cast<std::size_t>(i)] + s) % d) * stride[static_cast<std::size_t>(i)];
    }
    gx[j] += g[goff];
    for (int ax = r - 1; ax >= 0; --ax) {
      const auto a = static_cast<std::size_t>(ax);
      if (++idx[a] < x->shape[a]) break;
      idx[a] = 0;
    }
  }
}

void backward_mean(const TapeOp& op) {
  const auto& x = op.inputs[0];
  if (!x->requires_grad) return;
  ensure_grad(x);
  const float g = op.out->grad[0] / static_cast<float>(x->data.size());
  for (float& v : x->grad) v += g;
}

void backward_cross_entropy(const TapeOp& op) {
  const auto& x = op.inputs[0];
  if (!x->requires_grad) return;
  ensure_grad(x);
  const std::int64_t rows = x->shape[0];
  const int c = x->shape[1];
  const int ignore = op.axis;
  const float gscale = op.out->grad[0] / static_cast<float>(op.ints[0]);
  const float* px = x->data.data();
  float* gx = x->grad.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const int lab = op.index[static_cast<std::size_t>(r)];
    if (lab == ignore) continue;
    const float* row = px + r * c;
    float mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    float* grow = gx + r * c;
    for (int j = 0; j < c; ++j) {
      const float p = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / sum);
      grow[j] += (p - (j == lab ? 1.0f : 0.0f)) * gscale;
    }
  }
}

void backward_upsample(const TapeOp& op) {
  const auto& x = op.inputs[0];
  if (!x->requires_grad) return;
  ensure_grad(x);
  const int h = x->shape[0], w = x->shape[1], c = x->shape[2];
  const int th = op.ints[0], tw = op.ints[1];
  UpsampleTaps ty = upsample_taps(h, th);
  UpsampleTaps tx = upsample_taps(w, tw);
  const float* g = op.out->grad.data();
  float* gx = x->grad.data();
  for (int oy = 0; oy < th; ++oy) {
    const int y0 = ty.i0[static_cast<std::size_t>(oy)], y1 = ty.i1[static_cast<std::size_t>(oy)];
    const float fy = ty.w1[static_cast<std::size_t>(oy)];
    for (int ox = 0; ox < tw; ++ox) {
      const int x0 = tx.i0[static_cast<std::size_t>(ox)], x1 = tx.i1[static_cast<std::size_t>(ox)];
      const float fx = tx.w1[static_cast<std::size_t>(ox)];
      const float w00 = (1.0f - fy) * (1.0f - fx);
      const float w01 = (1.0f - fy) * fx;
      const float w10 = fy * (1.0f - fx);
      const float w11 = fy * fx;
      const float* grow = g + (static_cast<std::int64_t>(oy) * tw + ox) * c;
      float* g00 = gx + (static_cast<std::int64_t>(y0) * w + x0) * c;
      float* g01 = gx + (static_cast<std::int64_t>(y0) * w + x1) * c;
      float* g10 = gx + (static_cast<std::int64_t>(y1) * w + x0) * c;
      float* g11 = gx + (static_cast<std::int64_t>(y1) * w + x1) * c;
      for (int ch = 0; ch < c; ++ch) {
        g00[ch] += w00 * grow[ch];
        g01[ch] += w01 * grow[ch];
        g10[ch] += w10 * grow[ch];
        g11[ch] += w11 * grow[ch];
      }
    }
  }
}

void backward_gather_rows(const TapeOp& op) {
  const auto& t = op.inputs[0];
  if (!t->requires_grad) return;
  ensure_grad(t);
  const int c = t->shape[1];
  const float* g = op.out->grad.data();
  float* gt = t->grad.data();
  for (std::size_t i = 0; i < op.index.size(); ++i) {
    const float* grow = g + i * static_cast<std::size_t>(c);
    float* trow = gt + static_cast<std::int64_t>(op.index[i]) * c;
    for (int j = 0; j < c; ++j) trow[j] += grow[j];
  }
}

void backward_op(const TapeOp& op) {
  switch (op.kind) {
    case OpKind::MatMul:
      backward_matmul(op);
      break;
    case OpKind::Add:
      backward_ewise(op, false);
      break;
    case OpKind::Mul:
      backward_ewise(op, true);
      break;
    case OpKind::Scale: {
      const auto& x = op.inputs[0];
      if (x->requires_grad) {
        ensure_grad(x);
        const float* g = op.out->grad.data();
        float* gx = x->grad.data();
        const std::int64_t n = static_cast<std::int64_t>(x->data.size());
        for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] * op.scalar;
      }
      break;
    }
    case OpKind::Gelu:
      backward_gelu(op);
      break;
    case OpKind::Softmax:
      backward_softmax(op);
      break;
    case OpKind::LayerNorm:
      backward_layernorm(op);
      break;
    case OpKind::Reshape: {
      const auto& x = op.inputs[0];
      if (x->requires_grad) {
        ensure_grad(x);
        const float* g = op.out->grad.data();
        float* gx = x->grad.data();
        const std::int64_t n = static_cast<std::int64_t>(x->data.size());
        for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i];
      }
      break;
    }
    case OpKind::Permute:
      backward_permute(op);
      break;
    case OpKind::Concat:
      backward_concat(op);
      break;
    case OpKind::Slice:
      backward_slice(op);
      break;
    case OpKind::Pad:
      backward_pad(op);
      break;
    case OpKind::Roll:
      backward_roll(op);
      break;
    case OpKind::Mean:
      backward_mean(op);
      break;
    case OpKind::CrossEntropy:
      backward_cross_entropy(op);
      break;
    case OpKind::Upsample:
      backward_upsample(op);
      break;
    case OpKind::GatherRows:
      backward_gather_rows(op);
      break;
  }
}

}  // namespace

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  loss.node()->grad.assign(1, 1.0f);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (it->out->grad.empty()) continue;
    backward_op(*it);
  }
}

}  // namespace ssf
