// Dense rank-2 tensors with reverse-mode automatic differentiation.
//
// All values are 64-bit floats. Every tensor is a (rows x cols) matrix;
// scalars are 1x1, vectors are 1xN rows. Operations record their backward
// closure on the thread-local active Tape (see TapeScope); with no active
// tape they run in inference mode and track nothing.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace sopamorph {

class Tensor {
 public:
  Tensor() : impl_(nullptr) {}

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor full(std::size_t rows, std::size_t cols, double value);
  static Tensor scalar(double value);
  static Tensor from(std::vector<double> values, std::size_t rows, std::size_t cols,
                     bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  std::size_t rows() const { return impl_->rows; }
  std::size_t cols() const { return impl_->cols; }
  std::size_t numel() const { return impl_->data.size(); }
  std::vector<std::size_t> shape() const { return {rows(), cols()}; }

  double at(std::size_t r, std::size_t c) const { return impl_->data[r * impl_->cols + c]; }
  double& at(std::size_t r, std::size_t c) { return impl_->data[r * impl_->cols + c]; }
  double item() const;  // numel()==1 only

  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& data() { return impl_->data; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  // Lazily allocated, zero-initialized. Same shape as data.
  std::vector<double>& grad();
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  void zero_grad();

  // Identity of the underlying storage; copies of a Tensor share it.
  const void* storage_id() const { return impl_.get(); }

 private:
  struct Impl {
    std::size_t rows = 0, cols = 0;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  static Tensor make(std::size_t rows, std::size_t cols, bool requires_grad);
};

// Ordered record of primitive ops. Replaying it backward visits nodes in
// reverse creation order, which is a reverse topological order; gradients
// accumulate additively at fan-out.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_op) { ops_.push_back(std::move(backward_op)); }
  std::size_t size() const { return ops_.size(); }

  // Seeds d(loss)/d(loss)=1 and replays the tape backward. The loss must be
  // a 1x1 tensor produced while this tape was active. Calling backward a
  // second time without clear() is an error.
  void backward(Tensor loss);

  void clear();

 private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

// RAII activation of a tape for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// ---- primitive ops ---------------------------------------------------------
// Shapes: binary elementwise ops accept equal shapes, a 1x1 scalar against
// anything, a 1xC row against RxC, or an Rx1 column against RxC.

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, double b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor log_sigmoid(const Tensor& a);  // stable for large negative inputs

// Elementwise max; ties route the gradient to `a`.
Tensor maximum(const Tensor& a, const Tensor& b);

// Reductions. axis 0 collapses rows (result 1xC), axis 1 collapses cols
// (result Rx1). Max routes its gradient to the first argmax on ties.
Tensor reduce_sum(const Tensor& t, int axis);
Tensor reduce_mean(const Tensor& t, int axis);
Tensor reduce_max(const Tensor& t, int axis);
std::vector<std::size_t> argmax(const Tensor& t, int axis);
Tensor sum(const Tensor& t);   // full reduce, 1x1
Tensor mean(const Tensor& t);  // full reduce, 1x1

// Normalizers, computed with max-subtraction stability.
Tensor softmax(const Tensor& t, int axis);
Tensor log_softmax_rows(const Tensor& t);  // axis 1

// Copying views; backward scatter-adds into the source region.
Tensor slice_rows(const Tensor& t, std::size_t lo, std::size_t hi);
Tensor slice_cols(const Tensor& t, std::size_t lo, std::size_t hi);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

// out[i,:] = table[indices[i],:]; backward scatter-adds into table rows.
Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices);
// out[r,0] = t[r, indices[r]].
Tensor take_per_row(const Tensor& t, const std::vector<std::size_t>& indices);

// ---- optimizer -------------------------------------------------------------

// Standard Adam with bias correction. Throws on non-finite gradients so a
// training run can abort the step and report.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  long step_count() const { return step_count_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long step_count_ = 0;
};

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_grad_norm(const std::vector<Tensor>& params, double max_norm);

// ---- rng -------------------------------------------------------------------

// Seedable generator with hand-rolled distributions so that sequences are
// reproducible independent of the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  std::uint64_t below(std::uint64_t bound);  // unbiased [0, bound)

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  // Deterministic child stream.
  Rng derive(std::uint64_t stream) const;

 private:
  std::uint64_t state_;
  std::uint64_t seed_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Parameter initializers.
Tensor init_uniform(std::size_t rows, std::size_t cols, Rng& rng, double lo = -0.08,
                    double hi = 0.08);
Tensor init_embedding(std::size_t rows, std::size_t cols, Rng& rng);  // N(0,1) * 0.1

}  // namespace sopamorph
