#pragma once

// Dense float32 tensors with a define-by-run reverse-mode tape.
// The tape is rebuilt every step; ops record a backward closure only when
// an input participates in gradient tracking. Reductions (softmax sums,
// layer-norm statistics, loss means) accumulate in double.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace lafs {

std::string shape_str(const std::vector<int>& shape);

struct TensorStorage {
  std::vector<float> v;
  std::vector<float> g;  // empty until a backward pass touches this tensor
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, float fill = 0.0f);
  Tensor(std::vector<int> shape, std::vector<float> values);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, float value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(float value) { return Tensor({1}, std::vector<float>{value}); }

  const std::vector<int>& shape() const { return shape_; }
  int dim(size_t i) const { return shape_.at(i); }
  size_t ndim() const { return shape_.size(); }
  int64_t numel() const;
  bool defined() const { return static_cast<bool>(st_); }

  float* data() { return st_->v.data(); }
  const float* data() const { return st_->v.data(); }
  float item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool b) { requires_grad_ = b; }

  bool has_grad() const { return st_ && !st_->g.empty(); }
  float* grad_data();
  const float* grad_data() const;      // nullptr when no grad buffer
  void ensure_grad();                  // allocate zero-filled grad buffer
  void clear_grad();                   // drop the grad buffer
  void accumulate_grad(const float* g, int64_t n);

  // Same storage, detached from gradient tracking.
  Tensor detached() const;

  // A deep copy (fresh storage, no grad).
  Tensor clone() const;

  // Reshape sharing storage; numel must match.
  Tensor view(std::vector<int> new_shape) const;

  bool shares_storage_with(const Tensor& other) const { return st_ == other.st_; }

 private:
  std::vector<int> shape_;
  std::shared_ptr<TensorStorage> st_;
  bool requires_grad_ = false;
};

// Ordered record of differentiable operations for one forward pass.
class Tape {
 public:
  struct Entry {
    const char* op;
    std::function<void()> backward;
  };

  void record(const char* op, std::function<void()> backward) {
    entries_.push_back({op, std::move(backward)});
  }
  size_t size() const { return entries_.size(); }

  // Seeds root's gradient with 1 and replays entries in reverse, once each.
  void backward(Tensor& root);

 private:
  std::vector<Entry> entries_;
};

// -------------------------------------------------------------------------
// differentiable ops; tape may be nullptr for a no-grad forward pass

Tensor add(Tape* tape, Tensor a, Tensor b);
Tensor sub(Tape* tape, Tensor a, Tensor b);
Tensor mul(Tape* tape, Tensor a, Tensor b);
Tensor scale(Tape* tape, Tensor a, float c);
Tensor add_rowvec(Tape* tape, Tensor x, Tensor bias);  // [n,d] + [d]
Tensor matmul(Tape* tape, Tensor a, Tensor b);         // [m,k]x[k,n]
Tensor transpose(Tape* tape, Tensor a);                       // 2-D
Tensor slice_cols(Tape* tape, Tensor x, int c0, int c1);
Tensor slice_rows(Tape* tape, Tensor x, int r0, int r1);
Tensor concat_cols(Tape* tape, std::vector<Tensor> parts);
Tensor concat_rows(Tape* tape, std::vector<Tensor> parts);
Tensor take_row(Tape* tape, Tensor x, int row);               // [n,d] -> [d]
Tensor reshape(Tape* tape, Tensor x, std::vector<int> shape);
Tensor relu(Tape* tape, Tensor x);
Tensor gelu(Tape* tape, Tensor x);                            // tanh approximation
Tensor softmax_t(Tape* tape, Tensor logits, float temperature);
Tensor layer_norm(Tape* tape, Tensor x, Tensor gamma, Tensor beta,
                  float eps = 1e-5f);
Tensor l2_normalize_rows(Tape* tape, Tensor x, float eps = 1e-6f);
Tensor conv2d(Tape* tape, Tensor input, Tensor kernel, int stride);
Tensor add_channel_bias(Tape* tape, Tensor x, Tensor bias);  // [C,H,W] + [C]
Tensor sum_all(Tape* tape, Tensor x);
Tensor mean_all(Tape* tape, Tensor x);

// -a log softmax(logits / temperature) against a constant soft target.
Tensor cross_entropy_soft(Tape* tape, Tensor logits, const std::vector<float>& target,
                          float temperature);
// Cross-entropy of softmax(logits) against a hard label.
Tensor cross_entropy_hard(Tape* tape, Tensor logits, int label);

// Per-column min-max scaling: each column mapped so min -> 0, max -> 1.
Tensor minmax_normalize_cols(Tape* tape, Tensor x);

// Mean over rows of the euclidean distance between rows of a and rows of the
// constant b; differentiable w.r.t. a only.
Tensor mean_rowwise_l2(Tape* tape, Tensor a, Tensor b_const, float eps = 1e-12f);

// -------------------------------------------------------------------------
// parameters and optimization

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParamRefs = std::vector<Tensor*>;

// AdamW with bias-corrected moments and decoupled weight decay.
struct AdamW {
  float lr = 1e-3f;
  float weight_decay = 0.0f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;

  int64_t step_count = 0;
  std::vector<std::vector<float>> m, v;

  // Applies one update from the accumulated gradients. A missing grad buffer
  // counts as zero gradient. Returns false (and touches nothing) if any
  // gradient contains NaN; *diagnostic then names the offending parameter.
  bool step(const ParamRefs& params, std::string* diagnostic = nullptr,
            const std::vector<float>* lr_scales = nullptr);
};

void zero_grads(const ParamRefs& params);

// -------------------------------------------------------------------------
// finite-difference verification

// f maps (tape, inputs) to a scalar tensor. Compares tape gradients of every
// input element against central differences (f(x+h)-f(x-h))/2h and returns the
// max relative error |a-n| / max(1, |a|, |n|).
double gradcheck(const std::function<Tensor(Tape*, std::vector<Tensor>&)>& f,
                 std::vector<Tensor> inputs, double h = 1e-3);

}  // namespace lafs
