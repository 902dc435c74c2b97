#pragma once

#include <memory>
#include <span>
#include <vector>

#include "ssf/common.hpp"

namespace ssf {

// Dense row-major float32 tensor. Value-semantic handle over shared storage;
// copies are cheap and alias the same buffer, clone() deep-copies.
struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until backward reaches this node
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, float v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(float v) { return Tensor(Shape{1}, std::vector<float>{v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::span<float> data() { return impl_->data; }
  std::span<const float> data() const { return impl_->data; }
  float item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<float> grad() { return impl_->grad; }
  std::span<const float> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& node() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Named trainable tensor; names are unique within a model and stable across
// checkpoint save/load.
struct Parameter {
  std::string name;
  Tensor tensor;
};

enum class OpKind {
  MatMul,
  Add,
  Mul,
  Scale,
  Gelu,
  Softmax,
  LayerNorm,
  Reshape,
  Permute,
  Concat,
  Slice,
  Pad,
  Roll,
  Mean,
  CrossEntropy,
  Upsample,
  GatherRows,
};

// One recorded step of a forward pass. `ints`/`index`/`saved` carry whatever
// the op kind needs to replay forward or run backward:
//   Permute: ints = axis order          Roll: ints = per-axis shifts
//   Slice:   ints = offsets then sizes  Pad:  ints = before then after per axis
//   Upsample: ints = {target_h, target_w}
//   CrossEntropy: index = labels, axis = ignore_index, ints = {valid_count}
//   GatherRows: index = row indices
//   LayerNorm: scalar = eps, saved = per-row mean then rstd
struct TapeOp {
  OpKind kind;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<TensorImpl> out;
  int axis = 0;
  float scalar = 0.0f;
  std::vector<int> ints;
  std::vector<int> index;
  std::vector<float> saved;
};

// Define-by-run gradient tape. Constructing a Tape makes it the active tape
// for the current thread; ops record onto it whenever an input requires
// grad. One tape per thread at a time, rebuilt for every forward pass.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Seeds d(loss)/d(loss) = 1 and runs every recorded op's backward rule in
  // reverse order. loss must be scalar.
  void backward(const Tensor& loss);

  std::size_t size() const { return ops_.size(); }
  const std::vector<TapeOp>& ops() const { return ops_; }

  static Tape* active();
  void record(TapeOp op) { ops_.push_back(std::move(op)); }

 private:
  std::vector<TapeOp> ops_;
};

// Forward ops. Each records a backward rule on the active tape when an
// input requires grad. Binary ops broadcast the right operand when it is
// scalar or matches the trailing dims of the left (leading-batch broadcast).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float c);
Tensor gelu(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, const std::vector<int>& offsets, const std::vector<int>& sizes);
Tensor pad(const Tensor& x, const std::vector<int>& before, const std::vector<int>& after);
Tensor cyclic_roll(const Tensor& x, const std::vector<int>& shifts);
Tensor mean(const Tensor& x);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, int ignore_index);
Tensor bilinear_upsample(const Tensor& x, int target_h, int target_w);
Tensor gather_rows(const Tensor& table, const std::vector<int>& rows);

inline void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

// argmax over the last axis; no tape interaction.
std::vector<int> argmax_last(const Tensor& x);

}  // namespace ssf
