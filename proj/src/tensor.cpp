#include "sopamorph/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sopamorph {

namespace {

thread_local Tape* g_active_tape = nullptr;

void check(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_log_sigmoid(double x) {
  // Never log(sigmoid(x)); that underflows to -inf for large negative x.
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

}  // namespace

Tensor Tensor::make(std::size_t rows, std::size_t cols, bool requires_grad) {
  auto impl = std::make_shared<Impl>();
  impl->rows = rows;
  impl->cols = cols;
  impl->data.assign(rows * cols, 0.0);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  check(rows > 0 && cols > 0, "tensor: zero-sized dimension");
  return make(rows, cols, requires_grad);
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double value) {
  Tensor t = zeros(rows, cols, false);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return full(1, 1, value); }

Tensor Tensor::from(std::vector<double> values, std::size_t rows, std::size_t cols,
                    bool requires_grad) {
  check(values.size() == rows * cols, "tensor: data size does not match shape");
  Tensor t = make(rows, cols, requires_grad);
  t.data() = std::move(values);
  return t;
}

double Tensor::item() const {
  check(numel() == 1, "tensor: item() requires a scalar");
  return impl_->data[0];
}

std::vector<double>& Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }
}

// ---- tape ------------------------------------------------------------------

void Tape::backward(Tensor loss) {
  if (consumed_) {
    throw std::logic_error("tape: backward called twice without clear()");
  }
  if (loss.numel() != 1) {
    throw std::logic_error("tape: backward requires a scalar loss");
  }
  consumed_ = true;
  loss.grad()[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

void Tape::clear() {
  ops_.clear();
  consumed_ = false;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

namespace {

bool taping(const Tensor& a) { return g_active_tape != nullptr && a.requires_grad(); }
bool taping(const Tensor& a, const Tensor& b) {
  return g_active_tape != nullptr && (a.requires_grad() || b.requires_grad());
}

void mark_and_record(Tensor& out, std::function<void()> op) {
  out.set_requires_grad(true);
  g_active_tape->record(std::move(op));
}

}  // namespace

// ---- elementwise with broadcasting -----------------------------------------

namespace {

struct BroadcastPlan {
  std::size_t rows, cols;       // output shape
  std::size_t ar, ac, br, bc;   // operand strides (0 when broadcast)
};

BroadcastPlan plan_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  const std::size_t arows = a.rows(), acols = a.cols();
  const std::size_t brows = b.rows(), bcols = b.cols();
  if (!((arows == brows || arows == 1 || brows == 1) &&
        (acols == bcols || acols == 1 || bcols == 1))) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes");
  }
  BroadcastPlan p;
  p.rows = std::max(arows, brows);
  p.cols = std::max(acols, bcols);
  p.ar = (arows == 1) ? 0 : acols;
  p.ac = (acols == 1) ? 0 : 1;
  p.br = (brows == 1) ? 0 : bcols;
  p.bc = (bcols == 1) ? 0 : 1;
  return p;
}

// Adds `contrib` (in the output shape) into the grad of `t`, summing over
// any broadcast dimensions.
void scatter_reduced(Tensor& t, const std::vector<double>& contrib, std::size_t rows,
                     std::size_t cols) {
  if (!t.requires_grad()) return;
  auto& g = t.grad();
  const std::size_t tr = t.rows(), tc = t.cols();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      g[(tr == 1 ? 0 : i) * tc + (tc == 1 ? 0 : j)] += contrib[i * cols + j];
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const BroadcastPlan p = plan_broadcast(a, b, "add");
  Tensor out = Tensor::zeros(p.rows, p.cols);
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < p.rows; ++i) {
    for (std::size_t j = 0; j < p.cols; ++j) {
      ov[i * p.cols + j] = av[i * p.ar + j * p.ac] + bv[i * p.br + j * p.bc];
    }
  }
  if (taping(a, b)) {
    Tensor ta = a, tb = b, to = out;
    mark_and_record(out, [ta, tb, to, p]() mutable {
      const auto& g = to.grad();
      scatter_reduced(ta, g, p.rows, p.cols);
      scatter_reduced(tb, g, p.rows, p.cols);
    });
  }
  return out;
}

Tensor add(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }

Tensor neg(const Tensor& a) {
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = -a.data()[i];
  if (taping(a)) {
    Tensor ta = a, to = out;
    mark_and_record(out, [ta, to]() mutable {
      const auto& g = to.grad();
      auto& ag = ta.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ag[i] -= g[i];
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  const BroadcastPlan p = plan_broadcast(a, b, "mul");
  Tensor out = Tensor::zeros(p.rows, p.cols);
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < p.rows; ++i) {
    for (std::size_t j = 0; j < p.cols; ++j) {
      ov[i * p.cols + j] = av[i * p.ar + j * p.ac] * bv[i * p.br + j * p.bc];
    }
  }
  if (taping(a, b)) {
    Tensor ta = a, tb = b, to = out;
    mark_and_record(out, [ta, tb, to, p]() mutable {
      const auto& g = to.grad();
      const auto& av = ta.data();
      const auto& bv = tb.data();
      std::vector<double> contrib(p.rows * p.cols);
      if (ta.requires_grad()) {
        for (std::size_t i = 0; i < p.rows; ++i)
          for (std::size_t j = 0; j < p.cols; ++j)
            contrib[i * p.cols + j] = g[i * p.cols + j] * bv[i * p.br + j * p.bc];
        scatter_reduced(ta, contrib, p.rows, p.cols);
      }
      if (tb.requires_grad()) {
        for (std::size_t i = 0; i < p.rows; ++i)
          for (std::size_t j = 0; j < p.cols; ++j)
            contrib[i * p.cols + j] = g[i * p.cols + j] * av[i * p.ar + j * p.ac];
        scatter_reduced(tb, contrib, p.rows, p.cols);
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }

namespace {

// Shared scaffolding for unary elementwise ops whose derivative is a
// function of (input, output).
template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd) {
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = fwd(a.data()[i]);
  if (taping(a)) {
    Tensor ta = a, to = out;
    mark_and_record(out, [ta, to, bwd]() mutable {
      const auto& g = to.grad();
      const auto& x = ta.data();
      const auto& y = to.data();
      auto& ag = ta.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ag[i] += g[i] * bwd(x[i], y[i]);
    });
  }
  return out;
}

}  // namespace

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor log_sigmoid(const Tensor& a) {
  return unary_op(
      a, [](double x) { return stable_log_sigmoid(x); },
      [](double x, double) { return stable_sigmoid(-x); });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "maximum: shapes must match");
  Tensor out = Tensor::zeros(a.rows(), a.cols());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = std::max(av[i], bv[i]);
  if (taping(a, b)) {
    Tensor ta = a, tb = b, to = out;
    mark_and_record(out, [ta, tb, to]() mutable {
      const auto& g = to.grad();
      const auto& av = ta.data();
      const auto& bv = tb.data();
      const bool ga = ta.requires_grad(), gb = tb.requires_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (av[i] >= bv[i]) {  // ties go to a
          if (ga) ta.grad()[i] += g[i];
        } else if (gb) {
          tb.grad()[i] += g[i];
        }
      }
    });
  }
  return out;
}

// ---- matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.cols() == b.rows(), "matmul: inner dimensions disagree");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros(m, n);
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  double* op = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double av = ap[i * k + l];
      if (av == 0.0) continue;
      const double* brow = bp + l * n;
      double* orow = op + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  if (taping(a, b)) {
    Tensor ta = a, tb = b, to = out;
    mark_and_record(out, [ta, tb, to, m, k, n]() mutable {
      const auto& g = to.grad();
      if (ta.requires_grad()) {
        auto& ag = ta.grad();
        const auto& bv = tb.data();
        // dA = G * B^T
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t l = 0; l < k; ++l) {
            double acc = 0.0;
            const double* grow = g.data() + i * n;
            const double* brow = bv.data() + l * n;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ag[i * k + l] += acc;
          }
        }
      }
      if (tb.requires_grad()) {
        auto& bg = tb.grad();
        const auto& av = ta.data();
        // dB = A^T * G
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * n;
          for (std::size_t l = 0; l < k; ++l) {
            const double aval = av[i * k + l];
            if (aval == 0.0) continue;
            double* brow = bg.data() + l * n;
            for (std::size_t j = 0; j < n; ++j) brow[j] += aval * grow[j];
          }
        }
      }
    });
  }
  return out;
}

// ---- reductions -------------------------------------------------------------

namespace {

void check_axis(const Tensor& t, int axis) {
  check(axis == 0 || axis == 1, "reduce: axis must be 0 or 1");
  (void)t;
}

}  // namespace

Tensor reduce_sum(const Tensor& t, int axis) {
  check_axis(t, axis);
  const std::size_t r = t.rows(), c = t.cols();
  Tensor out = (axis == 0) ? Tensor::zeros(1, c) : Tensor::zeros(r, 1);
  const auto& v = t.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out.data()[axis == 0 ? j : i] += v[i * c + j];
  if (taping(t)) {
    Tensor tt = t, to = out;
    mark_and_record(out, [tt, to, r, c, axis]() mutable {
      const auto& g = to.grad();
      auto& tg = tt.grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) tg[i * c + j] += g[axis == 0 ? j : i];
    });
  }
  return out;
}

Tensor reduce_mean(const Tensor& t, int axis) {
  check_axis(t, axis);
  const double n = static_cast<double>(axis == 0 ? t.rows() : t.cols());
  return mul(reduce_sum(t, axis), 1.0 / n);
}

Tensor reduce_max(const Tensor& t, int axis) {
  check_axis(t, axis);
  const std::size_t r = t.rows(), c = t.cols();
  const std::size_t out_n = (axis == 0) ? c : r;
  Tensor out = (axis == 0) ? Tensor::zeros(1, c) : Tensor::zeros(r, 1);
  std::vector<std::size_t> arg(out_n);
  const auto& v = t.data();
  for (std::size_t o = 0; o < out_n; ++o) {
    const std::size_t lanes = (axis == 0) ? r : c;
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_i = 0;
    for (std::size_t l = 0; l < lanes; ++l) {
      const double x = (axis == 0) ? v[l * c + o] : v[o * c + l];
      if (x > best) {  // first index wins ties
        best = x;
        best_i = l;
      }
    }
    out.data()[o] = best;
    arg[o] = best_i;
  }
  if (taping(t)) {
    Tensor tt = t, to = out;
    mark_and_record(out, [tt, to, arg, c, axis]() mutable {
      const auto& g = to.grad();
      auto& tg = tt.grad();
      for (std::size_t o = 0; o < arg.size(); ++o) {
        const std::size_t flat = (axis == 0) ? arg[o] * c + o : o * c + arg[o];
        tg[flat] += g[o];
      }
    });
  }
  return out;
}

std::vector<std::size_t> argmax(const Tensor& t, int axis) {
  check_axis(t, axis);
  const std::size_t r = t.rows(), c = t.cols();
  const std::size_t out_n = (axis == 0) ? c : r;
  std::vector<std::size_t> arg(out_n);
  const auto& v = t.data();
  for (std::size_t o = 0; o < out_n; ++o) {
    const std::size_t lanes = (axis == 0) ? r : c;
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_i = 0;
    for (std::size_t l = 0; l < lanes; ++l) {
      const double x = (axis == 0) ? v[l * c + o] : v[o * c + l];
      if (x > best) {
        best = x;
        best_i = l;
      }
    }
    arg[o] = best_i;
  }
  return arg;
}

Tensor sum(const Tensor& t) {
  return (t.rows() == 1) ? reduce_sum(t, 1) : reduce_sum(reduce_sum(t, 0), 1);
}

Tensor mean(const Tensor& t) { return mul(sum(t), 1.0 / static_cast<double>(t.numel())); }

Tensor softmax(const Tensor& t, int axis) {
  check_axis(t, axis);
  const std::size_t r = t.rows(), c = t.cols();
  check((axis == 0 ? r : c) > 0, "softmax: empty axis");
  Tensor out = Tensor::zeros(r, c);
  const auto& v = t.data();
  auto& ov = out.data();
  const std::size_t slices = (axis == 0) ? c : r;
  const std::size_t lanes = (axis == 0) ? r : c;
  auto flat = [c, axis](std::size_t s, std::size_t l) {
    return (axis == 0) ? l * c + s : s * c + l;
  };
  for (std::size_t s = 0; s < slices; ++s) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < lanes; ++l) hi = std::max(hi, v[flat(s, l)]);
    double z = 0.0;
    for (std::size_t l = 0; l < lanes; ++l) {
      const double e = std::exp(v[flat(s, l)] - hi);
      ov[flat(s, l)] = e;
      z += e;
    }
    for (std::size_t l = 0; l < lanes; ++l) ov[flat(s, l)] /= z;
  }
  if (taping(t)) {
    Tensor tt = t, to = out;
    mark_and_record(out, [tt, to, slices, lanes, flat]() mutable {
      const auto& g = to.grad();
      const auto& y = to.data();
      auto& tg = tt.grad();
      for (std::size_t s = 0; s < slices; ++s) {
        double dot = 0.0;
        for (std::size_t l = 0; l < lanes; ++l) dot += g[flat(s, l)] * y[flat(s, l)];
        for (std::size_t l = 0; l < lanes; ++l) {
          tg[flat(s, l)] += y[flat(s, l)] * (g[flat(s, l)] - dot);
        }
      }
    });
  }
  return out;
}

Tensor log_softmax_rows(const Tensor& t) {
  const std::size_t r = t.rows(), c = t.cols();
  Tensor out = Tensor::zeros(r, c);
  const auto& v = t.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < r; ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) hi = std::max(hi, v[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(v[i * c + j] - hi);
    const double lz = hi + std::log(z);
    for (std::size_t j = 0; j < c; ++j) ov[i * c + j] = v[i * c + j] - lz;
  }
  if (taping(t)) {
    Tensor tt = t, to = out;
    mark_and_record(out, [tt, to, r, c]() mutable {
      const auto& g = to.grad();
      const auto& y = to.data();
      auto& tg = tt.grad();
      for (std::size_t i = 0; i < r; ++i) {
        double gsum = 0.0;
        for (std::size_t j = 0; j < c; ++j) gsum += g[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          tg[i * c + j] += g[i * c + j] - std::exp(y[i * c + j]) * gsum;
        }
      }
    });
  }
  return out;
}

// ---- slicing / gathering -----------------------------------------------------

Tensor slice_rows(const Tensor& t, std::size_t lo, std::size_t hi) {
  check(lo < hi && hi <= t.rows(), "slice_rows: bad range");
  const std::size_t c = t.cols();
  Tensor out = Tensor::zeros(hi - lo, c);
  std::copy(t.data().begin() + lo * c, t.data().begin() + hi * c, out.data().begin());
  if (taping(t)) {
    Tensor tt = t, to = out;
    mark_and_record(out, [tt, to, lo, c]() mutable {
      const auto& g = to.grad();
      auto& tg = tt.grad();
      for (std::size_t i = 0; i < g.size(); ++i) tg[lo * c + i] += g[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& t, std::size_t lo, std::size_t hi) {
  check(lo < hi && hi <= t.cols(), "slice_cols: bad range");
  const std::size_t r = t.rows(), c = t.cols(), w = hi - lo;
  Tensor out = Tensor::zeros(r, w);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy(t.data().begin() + i * c + lo, t.data().begin() + i * c + hi,
              out.data().begin() + i * w);
  }
  if (taping(t)) {
    Tensor tt = t, to = out;
    mark_and_record(out, [tt, to, lo, r, c, w]() mutable {
      const auto& g = to.grad();
      auto& tg = tt.grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) tg[i * c + lo + j] += g[i * w + j];
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_rows: empty argument list");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    check(p.cols() == c, "concat_rows: column counts differ");
    r += p.rows();
    any_grad = any_grad || p.requires_grad();
  }
  Tensor out = Tensor::zeros(r, c);
  std::size_t row = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + row * c);
    row += p.rows();
  }
  if (g_active_tape && any_grad) {
    std::vector<Tensor> ps = parts;
    Tensor to = out;
    mark_and_record(out, [ps, to, c]() mutable {
      const auto& g = to.grad();
      std::size_t row = 0;
      for (auto& p : ps) {
        if (p.requires_grad()) {
          auto& pg = p.grad();
          for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g[row * c + i];
        }
        row += p.rows();
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols: empty argument list");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    check(p.rows() == r, "concat_cols: row counts differ");
    c += p.cols();
    any_grad = any_grad || p.requires_grad();
  }
  Tensor out = Tensor::zeros(r, c);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.cols();
    for (std::size_t i = 0; i < r; ++i) {
      std::copy(p.data().begin() + i * pc, p.data().begin() + (i + 1) * pc,
                out.data().begin() + i * c + col);
    }
    col += pc;
  }
  if (g_active_tape && any_grad) {
    std::vector<Tensor> ps = parts;
    Tensor to = out;
    mark_and_record(out, [ps, to, r, c]() mutable {
      const auto& g = to.grad();
      std::size_t col = 0;
      for (auto& p : ps) {
        const std::size_t pc = p.cols();
        if (p.requires_grad()) {
          auto& pg = p.grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < pc; ++j) pg[i * pc + j] += g[i * c + col + j];
        }
        col += pc;
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices) {
  check(!indices.empty(), "gather_rows: empty index list");
  const std::size_t c = table.cols();
  for (std::size_t ix : indices) check(ix < table.rows(), "gather_rows: index out of range");
  Tensor out = Tensor::zeros(indices.size(), c);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy(table.data().begin() + indices[i] * c,
              table.data().begin() + (indices[i] + 1) * c, out.data().begin() + i * c);
  }
  if (taping(table)) {
    Tensor tt = table, to = out;
    mark_and_record(out, [tt, to, indices, c]() mutable {
      const auto& g = to.grad();
      auto& tg = tt.grad();
      for (std::size_t i = 0; i < indices.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) tg[indices[i] * c + j] += g[i * c + j];
    });
  }
  return out;
}

Tensor take_per_row(const Tensor& t, const std::vector<std::size_t>& indices) {
  check(indices.size() == t.rows(), "take_per_row: one index per row required");
  const std::size_t c = t.cols();
  for (std::size_t ix : indices) check(ix < c, "take_per_row: index out of range");
  Tensor out = Tensor::zeros(t.rows(), 1);
  for (std::size_t i = 0; i < t.rows(); ++i) out.data()[i] = t.at(i, indices[i]);
  if (taping(t)) {
    Tensor tt = t, to = out;
    mark_and_record(out, [tt, to, indices, c]() mutable {
      const auto& g = to.grad();
      auto& tg = tt.grad();
      for (std::size_t i = 0; i < indices.size(); ++i) tg[i * c + indices[i]] += g[i];
    });
  }
  return out;
}

// ---- Adam --------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].numel(), 0.0);
    v_[i].assign(params_[i].numel(), 0.0);
  }
}

void Adam::step() {
  for (auto& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) {
        throw std::runtime_error("adam: non-finite gradient, step aborted");
      }
    }
  }
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    auto& w = p.data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : const_cast<Tensor&>(p).grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (const auto& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : const_cast<Tensor&>(p).grad()) g *= scale;
    }
  }
  return norm;
}

// ---- rng ---------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : state_(seed), seed_(seed) {}

std::uint64_t Rng::next() { return splitmix64(state_); }

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal(double mean, double stddev) {
  if (have_spare_) {
    have_spare_ = false;
    return mean + stddev * spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.141592653589793238462643 * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return mean + stddev * r * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = next();
    if (r >= threshold) return r % bound;
  }
}

Rng Rng::derive(std::uint64_t stream) const {
  std::uint64_t s = seed_ + 0x9E3779B97F4A7C15ULL * (stream + 1);
  std::uint64_t mixed = splitmix64(s);
  return Rng(mixed);
}

Tensor init_uniform(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi) {
  Tensor t = Tensor::zeros(rows, cols, true);
  for (auto& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

Tensor init_embedding(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t = Tensor::zeros(rows, cols, true);
  for (auto& x : t.data()) x = rng.normal(0.0, 1.0) * 0.1;
  return t;
}

}  // namespace sopamorph
