#include "lafs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace lafs {

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

static int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("tensor: negative extent in " + shape_str(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape, float fill) : shape_(std::move(shape)) {
  st_ = std::make_shared<TensorStorage>();
  st_->v.assign(static_cast<size_t>(shape_numel(shape_)), fill);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> values) : shape_(std::move(shape)) {
  if (shape_numel(shape_) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("tensor: " + shape_str(shape_) + " does not hold " +
                                std::to_string(values.size()) + " values");
  st_ = std::make_shared<TensorStorage>();
  st_->v = std::move(values);
}

int64_t Tensor::numel() const { return st_ ? static_cast<int64_t>(st_->v.size()) : 0; }

float Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item: tensor is not a scalar, shape " + shape_str(shape_));
  return st_->v[0];
}

float* Tensor::grad_data() { return (st_ && !st_->g.empty()) ? st_->g.data() : nullptr; }
const float* Tensor::grad_data() const { return (st_ && !st_->g.empty()) ? st_->g.data() : nullptr; }

void Tensor::ensure_grad() {
  if (st_->g.empty()) st_->g.assign(st_->v.size(), 0.0f);
}

void Tensor::clear_grad() {
  if (st_) st_->g.clear();
}

void Tensor::accumulate_grad(const float* g, int64_t n) {
  ensure_grad();
  float* dst = st_->g.data();
  for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.requires_grad_ = false;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.st_ = std::make_shared<TensorStorage>();
  t.st_->v = st_->v;
  return t;
}

Tensor Tensor::view(std::vector<int> new_shape) const {
  if (shape_numel(new_shape) != numel())
    throw std::invalid_argument("view: cannot reshape " + shape_str(shape_) + " to " +
                                shape_str(new_shape));
  Tensor t = *this;
  t.shape_ = std::move(new_shape);
  return t;
}

void Tape::backward(Tensor& root) {
  if (root.numel() != 1)
    throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                shape_str(root.shape()));
  root.ensure_grad();
  root.grad_data()[0] = 1.0f;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
}

// -------------------------------------------------------------------------

#ifndef NDEBUG
static void check_finite(const char* op, const Tensor& t) {
  const float* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(p[i]))
      throw std::logic_error(std::string(op) + ": non-finite value in output");
}
#define LAFS_CHECK_FINITE(op, t) check_finite(op, t)
#else
#define LAFS_CHECK_FINITE(op, t) ((void)0)
#endif

static bool track2(Tape* tape, Tensor a, Tensor b) {
  return tape && (a.requires_grad() || b.requires_grad());
}
static bool track1(Tape* tape, Tensor a) { return tape && a.requires_grad(); }

static void require_same_shape(const char* op, Tensor a, Tensor b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

Tensor add(Tape* tape, Tensor a, Tensor b) {
  require_same_shape("add", a, b);
  const int64_t n = a.numel();
  Tensor out(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (track2(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record("add", [a, b, out, n]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      if (a.requires_grad()) a.accumulate_grad(go, n);
      if (b.requires_grad()) b.accumulate_grad(go, n);
    });
  }
  LAFS_CHECK_FINITE("add", out);
  return out;
}

Tensor sub(Tape* tape, Tensor a, Tensor b) {
  require_same_shape("sub", a, b);
  const int64_t n = a.numel();
  Tensor out(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  if (track2(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record("sub", [a, b, out, n]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      if (a.requires_grad()) a.accumulate_grad(go, n);
      if (b.requires_grad()) {
        std::vector<float> neg(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) neg[i] = -go[i];
        b.accumulate_grad(neg.data(), n);
      }
    });
  }
  LAFS_CHECK_FINITE("sub", out);
  return out;
}

Tensor mul(Tape* tape, Tensor a, Tensor b) {
  require_same_shape("mul", a, b);
  const int64_t n = a.numel();
  Tensor out(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (track2(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record("mul", [a, b, out, n]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      std::vector<float> tmp(static_cast<size_t>(n));
      if (a.requires_grad()) {
        const float* pb2 = b.data();
        for (int64_t i = 0; i < n; ++i) tmp[i] = go[i] * pb2[i];
        a.accumulate_grad(tmp.data(), n);
      }
      if (b.requires_grad()) {
        const float* pa2 = a.data();
        for (int64_t i = 0; i < n; ++i) tmp[i] = go[i] * pa2[i];
        b.accumulate_grad(tmp.data(), n);
      }
    });
  }
  LAFS_CHECK_FINITE("mul", out);
  return out;
}

Tensor scale(Tape* tape, Tensor a, float c) {
  const int64_t n = a.numel();
  Tensor out(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
  if (track1(tape, a)) {
    out.set_requires_grad(true);
    tape->record("scale", [a, out, c, n]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      std::vector<float> tmp(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) tmp[i] = go[i] * c;
      a.accumulate_grad(tmp.data(), n);
    });
  }
  LAFS_CHECK_FINITE("scale", out);
  return out;
}

Tensor add_rowvec(Tape* tape, Tensor x, Tensor bias) {
  if (x.ndim() != 2 || bias.ndim() != 1 || x.dim(1) != bias.dim(0))
    throw std::invalid_argument("add_rowvec: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(bias.shape()));
  const int n = x.dim(0), d = x.dim(1);
  Tensor out(x.shape());
  const float* px = x.data();
  const float* pb = bias.data();
  float* po = out.data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) po[i * d + j] = px[i * d + j] + pb[j];
  if (track2(tape, x, bias)) {
    out.set_requires_grad(true);
    tape->record("add_rowvec", [x, bias, out, n, d]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      if (x.requires_grad()) x.accumulate_grad(go, static_cast<int64_t>(n) * d);
      if (bias.requires_grad()) {
        std::vector<float> gb(static_cast<size_t>(d), 0.0f);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j) gb[j] += go[i * d + j];
        bias.accumulate_grad(gb.data(), d);
      }
    });
  }
  LAFS_CHECK_FINITE("add_rowvec", out);
  return out;
}

// c[i,:] += a[i,k] * b[k,:], vectorizable over the row of c
static void matmul_accum(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<int64_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const float aik = a[static_cast<int64_t>(i) * k + kk];
      const float* brow = b + static_cast<int64_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

Tensor matmul(Tape* tape, Tensor a, Tensor b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  matmul_accum(a.data(), b.data(), out.data(), m, k, n);
  if (track2(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record("matmul", [a, b, out, m, k, n]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      if (a.requires_grad()) {
        // dA = dC . B^T
        std::vector<float> da(static_cast<size_t>(m) * k, 0.0f);
        const float* pb = b.data();
        for (int i = 0; i < m; ++i) {
          const float* grow = go + static_cast<int64_t>(i) * n;
          for (int kk = 0; kk < k; ++kk) {
            const float* brow = pb + static_cast<int64_t>(kk) * n;
            float s = 0.0f;
            for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
            da[static_cast<size_t>(i) * k + kk] = s;
          }
        }
        a.accumulate_grad(da.data(), static_cast<int64_t>(m) * k);
      }
      if (b.requires_grad()) {
        // dB = A^T . dC
        std::vector<float> db(static_cast<size_t>(k) * n, 0.0f);
        const float* pa = a.data();
        for (int i = 0; i < m; ++i) {
          const float* grow = go + static_cast<int64_t>(i) * n;
          for (int kk = 0; kk < k; ++kk) {
            const float aik = pa[static_cast<int64_t>(i) * k + kk];
            float* drow = db.data() + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) drow[j] += aik * grow[j];
          }
        }
        b.accumulate_grad(db.data(), static_cast<int64_t>(k) * n);
      }
    });
  }
  LAFS_CHECK_FINITE("matmul", out);
  return out;
}

Tensor transpose(Tape* tape, Tensor a) {
  if (a.ndim() != 2)
    throw std::invalid_argument("transpose: expected 2-D, got " + shape_str(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  const float* pa = a.data();
  float* po = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) po[static_cast<int64_t>(j) * m + i] = pa[static_cast<int64_t>(i) * n + j];
  if (track1(tape, a)) {
    out.set_requires_grad(true);
    tape->record("transpose", [a, out, m, n]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      std::vector<float> ga(static_cast<size_t>(m) * n);
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < m; ++i) ga[static_cast<size_t>(i) * n + j] = go[static_cast<int64_t>(j) * m + i];
      a.accumulate_grad(ga.data(), static_cast<int64_t>(m) * n);
    });
  }
  return out;
}

Tensor slice_cols(Tape* tape, Tensor x, int c0, int c1) {
  if (x.ndim() != 2 || c0 < 0 || c1 > x.dim(1) || c0 >= c1)
    throw std::invalid_argument("slice_cols: invalid range [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") for " + shape_str(x.shape()));
  const int n = x.dim(0), d = x.dim(1), w = c1 - c0;
  Tensor out({n, w});
  const float* px = x.data();
  float* po = out.data();
  for (int i = 0; i < n; ++i)
    std::memcpy(po + static_cast<int64_t>(i) * w, px + static_cast<int64_t>(i) * d + c0,
                sizeof(float) * w);
  if (track1(tape, x)) {
    out.set_requires_grad(true);
    tape->record("slice_cols", [x, out, n, d, w, c0]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      std::vector<float> gx(static_cast<size_t>(n) * d, 0.0f);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j) gx[static_cast<size_t>(i) * d + c0 + j] = go[static_cast<int64_t>(i) * w + j];
      x.accumulate_grad(gx.data(), static_cast<int64_t>(n) * d);
    });
  }
  return out;
}

Tensor slice_rows(Tape* tape, Tensor x, int r0, int r1) {
  if (x.ndim() != 2 || r0 < 0 || r1 > x.dim(0) || r0 >= r1)
    throw std::invalid_argument("slice_rows: invalid range [" + std::to_string(r0) + "," +
                                std::to_string(r1) + ") for " + shape_str(x.shape()));
  const int d = x.dim(1), h = r1 - r0;
  Tensor out({h, d});
  std::memcpy(out.data(), x.data() + static_cast<int64_t>(r0) * d, sizeof(float) * out.numel());
  if (track1(tape, x)) {
    out.set_requires_grad(true);
    tape->record("slice_rows", [x, out, r0, d, h]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      std::vector<float> gx(static_cast<size_t>(x.numel()), 0.0f);
      std::memcpy(gx.data() + static_cast<size_t>(r0) * d, go, sizeof(float) * h * d);
      x.accumulate_grad(gx.data(), x.numel());
    });
  }
  return out;
}

Tensor concat_cols(Tape* tape, std::vector<Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int n = parts[0].dim(0);
  int total = 0;
  bool any = false;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.dim(0) != n)
      throw std::invalid_argument("concat_cols: row mismatch " + shape_str(p.shape()));
    total += p.dim(1);
    any = any || p.requires_grad();
  }
  Tensor out({n, total});
  float* po = out.data();
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.dim(1);
    const float* pp = p.data();
    for (int i = 0; i < n; ++i)
      std::memcpy(po + static_cast<int64_t>(i) * total + off, pp + static_cast<int64_t>(i) * w,
                  sizeof(float) * w);
    off += w;
  }
  if (tape && any) {
    out.set_requires_grad(true);
    auto parts_copy = parts;
    tape->record("concat_cols", [parts_copy, out, n, total]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      int off2 = 0;
      for (auto& p : parts_copy) {
        const int w = p.dim(1);
        if (p.requires_grad()) {
          std::vector<float> gp(static_cast<size_t>(n) * w);
          for (int i = 0; i < n; ++i)
            std::memcpy(gp.data() + static_cast<size_t>(i) * w,
                        go + static_cast<int64_t>(i) * total + off2, sizeof(float) * w);
          p.accumulate_grad(gp.data(), static_cast<int64_t>(n) * w);
        }
        off2 += w;
      }
    });
  }
  return out;
}

Tensor concat_rows(Tape* tape, std::vector<Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const int d = parts[0].dim(1);
  int total = 0;
  bool any = false;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.dim(1) != d)
      throw std::invalid_argument("concat_rows: col mismatch " + shape_str(p.shape()));
    total += p.dim(0);
    any = any || p.requires_grad();
  }
  Tensor out({total, d});
  float* po = out.data();
  int off = 0;
  for (const auto& p : parts) {
    std::memcpy(po + static_cast<int64_t>(off) * d, p.data(), sizeof(float) * p.numel());
    off += p.dim(0);
  }
  if (tape && any) {
    out.set_requires_grad(true);
    auto parts_copy = parts;
    tape->record("concat_rows", [parts_copy, out, d]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      int off2 = 0;
      for (auto& p : parts_copy) {
        if (p.requires_grad())
          p.accumulate_grad(go + static_cast<int64_t>(off2) * d, p.numel());
        off2 += p.dim(0);
      }
    });
  }
  return out;
}

Tensor take_row(Tape* tape, Tensor x, int row) {
  if (x.ndim() != 2 || row < 0 || row >= x.dim(0))
    throw std::invalid_argument("take_row: row " + std::to_string(row) + " out of range for " +
                                shape_str(x.shape()));
  const int d = x.dim(1);
  Tensor out({d});
  std::memcpy(out.data(), x.data() + static_cast<int64_t>(row) * d, sizeof(float) * d);
  if (track1(tape, x)) {
    out.set_requires_grad(true);
    tape->record("take_row", [x, out, row, d]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      std::vector<float> gx(static_cast<size_t>(x.numel()), 0.0f);
      std::memcpy(gx.data() + static_cast<size_t>(row) * d, go, sizeof(float) * d);
      x.accumulate_grad(gx.data(), x.numel());
    });
  }
  return out;
}

Tensor reshape(Tape*, Tensor x, std::vector<int> shape) {
  // Pure metadata: output shares both value and grad storage, so gradients
  // flow through without a tape entry.
  return x.view(std::move(shape));
}

Tensor relu(Tape* tape, Tensor x) {
  const int64_t n = x.numel();
  Tensor out(x.shape());
  const float* px = x.data();
  float* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] > 0.0f ? px[i] : 0.0f;
  if (track1(tape, x)) {
    out.set_requires_grad(true);
    tape->record("relu", [x, out, n]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      const float* px2 = x.data();
      std::vector<float> gx(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) gx[i] = px2[i] > 0.0f ? go[i] : 0.0f;
      x.accumulate_grad(gx.data(), n);
    });
  }
  return out;
}

static constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

Tensor gelu(Tape* tape, Tensor x) {
  const int64_t n = x.numel();
  Tensor out(x.shape());
  const float* px = x.data();
  float* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    const double v = px[i];
    const double u = kGeluC * (v + 0.044715 * v * v * v);
    po[i] = static_cast<float>(0.5 * v * (1.0 + std::tanh(u)));
  }
  if (track1(tape, x)) {
    out.set_requires_grad(true);
    tape->record("gelu", [x, out, n]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      const float* px2 = x.data();
      std::vector<float> gx(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) {
        const double v = px2[i];
        const double u = kGeluC * (v + 0.044715 * v * v * v);
        const double t = std::tanh(u);
        const double sech2 = 1.0 - t * t;
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
        gx[i] = static_cast<float>(go[i] * (0.5 * (1.0 + t) + 0.5 * v * sech2 * du));
      }
      x.accumulate_grad(gx.data(), n);
    });
  }
  LAFS_CHECK_FINITE("gelu", out);
  return out;
}

Tensor softmax_t(Tape* tape, Tensor logits, float temperature) {
  if (!(temperature > 0.0f))
    throw std::invalid_argument("softmax_t: temperature must be > 0, got " +
                                std::to_string(temperature));
  const int k = logits.dim(logits.ndim() - 1);
  const int64_t rows = logits.numel() / k;
  Tensor out(logits.shape());
  const float* px = logits.data();
  float* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = px + r * k;
    float* yr = po + r * k;
    float mx = xr[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
      const double e = std::exp((static_cast<double>(xr[j]) - mx) / temperature);
      yr[j] = static_cast<float>(e);
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < k; ++j) yr[j] = static_cast<float>(yr[j] * inv);
  }
  if (track1(tape, logits)) {
    out.set_requires_grad(true);
    tape->record("softmax_t", [logits, out, rows, k, temperature]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      const float* py = out.data();
      std::vector<float> gx(static_cast<size_t>(rows) * k);
      for (int64_t r = 0; r < rows; ++r) {
        const float* yr = py + r * k;
        const float* gr = go + r * k;
        double dot = 0.0;
        for (int j = 0; j < k; ++j) dot += static_cast<double>(gr[j]) * yr[j];
        for (int j = 0; j < k; ++j)
          gx[r * k + j] = static_cast<float>(yr[j] * (gr[j] - dot) / temperature);
      }
      logits.accumulate_grad(gx.data(), static_cast<int64_t>(rows) * k);
    });
  }
  LAFS_CHECK_FINITE("softmax_t", out);
  return out;
}

Tensor layer_norm(Tape* tape, Tensor x, Tensor gamma, Tensor beta, float eps) {
  const int d = x.dim(x.ndim() - 1);
  if (gamma.numel() != d || beta.numel() != d)
    throw std::invalid_argument("layer_norm: affine shape " + shape_str(gamma.shape()) +
                                " does not match feature dim " + std::to_string(d));
  const int64_t rows = x.numel() / d;
  Tensor out(x.shape());
  std::vector<float> xhat(static_cast<size_t>(x.numel()));
  std::vector<float> inv_std(static_cast<size_t>(rows));
  const float* px = x.data();
  const float* pg = gamma.data();
  const float* pb = beta.data();
  float* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = px + r * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<float>(inv);
    for (int j = 0; j < d; ++j) {
      const float h = static_cast<float>((xr[j] - mean) * inv);
      xhat[r * d + j] = h;
      po[r * d + j] = pg[j] * h + pb[j];
    }
  }
  if (tape && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    out.set_requires_grad(true);
    tape->record("layer_norm",
                 [x, gamma, beta, out, rows, d, xhat = std::move(xhat),
                  inv_std = std::move(inv_std)]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      const float* pg2 = gamma.data();
      if (gamma.requires_grad() || beta.requires_grad()) {
        std::vector<float> ggam(static_cast<size_t>(d), 0.0f), gbet(static_cast<size_t>(d), 0.0f);
        for (int64_t r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j) {
            ggam[j] += go[r * d + j] * xhat[r * d + j];
            gbet[j] += go[r * d + j];
          }
        if (gamma.requires_grad()) gamma.accumulate_grad(ggam.data(), d);
        if (beta.requires_grad()) beta.accumulate_grad(gbet.data(), d);
      }
      if (x.requires_grad()) {
        std::vector<float> gx(static_cast<size_t>(rows) * d);
        for (int64_t r = 0; r < rows; ++r) {
          double mean_g = 0.0, mean_gh = 0.0;
          for (int j = 0; j < d; ++j) {
            const double gg = static_cast<double>(go[r * d + j]) * pg2[j];
            mean_g += gg;
            mean_gh += gg * xhat[r * d + j];
          }
          mean_g /= d;
          mean_gh /= d;
          for (int j = 0; j < d; ++j) {
            const double gg = static_cast<double>(go[r * d + j]) * pg2[j];
            gx[r * d + j] =
                static_cast<float>(inv_std[r] * (gg - mean_g - xhat[r * d + j] * mean_gh));
          }
        }
        x.accumulate_grad(gx.data(), static_cast<int64_t>(rows) * d);
      }
    });
  }
  LAFS_CHECK_FINITE("layer_norm", out);
  return out;
}

Tensor l2_normalize_rows(Tape* tape, Tensor x, float eps) {
  const int d = x.dim(x.ndim() - 1);
  const int64_t rows = x.numel() / d;
  Tensor out(x.shape());
  std::vector<float> inv_norm(static_cast<size_t>(rows));
  const float* px = x.data();
  float* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += static_cast<double>(px[r * d + j]) * px[r * d + j];
    const double norm = std::sqrt(s);
    const double inv = 1.0 / std::max(norm, static_cast<double>(eps));
    inv_norm[r] = static_cast<float>(inv);
    for (int j = 0; j < d; ++j) po[r * d + j] = static_cast<float>(px[r * d + j] * inv);
  }
  if (track1(tape, x)) {
    out.set_requires_grad(true);
    tape->record("l2_normalize_rows", [x, out, rows, d, inv_norm = std::move(inv_norm)]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      const float* py = out.data();
      std::vector<float> gx(static_cast<size_t>(rows) * d);
      for (int64_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += static_cast<double>(go[r * d + j]) * py[r * d + j];
        for (int j = 0; j < d; ++j)
          gx[r * d + j] = static_cast<float>(inv_norm[r] * (go[r * d + j] - py[r * d + j] * dot));
      }
      x.accumulate_grad(gx.data(), static_cast<int64_t>(rows) * d);
    });
  }
  return out;
}

Tensor conv2d(Tape* tape, Tensor input, Tensor kernel, int stride) {
  if (input.ndim() != 3 || kernel.ndim() != 4 || input.dim(0) != kernel.dim(1))
    throw std::invalid_argument("conv2d: shape mismatch " + shape_str(input.shape()) + " vs " +
                                shape_str(kernel.shape()));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kh > h || kw > w)
    throw std::invalid_argument("conv2d: kernel " + shape_str(kernel.shape()) +
                                " larger than input " + shape_str(input.shape()));
  const int oh = (h - kh) / stride + 1, ow = (w - kw) / stride + 1;
  Tensor out({co, oh, ow});
  const float* pin = input.data();
  const float* pk = kernel.data();
  float* po = out.data();
  for (int oc = 0; oc < co; ++oc)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double s = 0.0;
        for (int ic = 0; ic < ci; ++ic) {
          const float* in_c = pin + static_cast<int64_t>(ic) * h * w;
          const float* k_c = pk + ((static_cast<int64_t>(oc) * ci + ic) * kh) * kw;
          for (int ky = 0; ky < kh; ++ky) {
            const float* in_row = in_c + static_cast<int64_t>(oy * stride + ky) * w + ox * stride;
            const float* k_row = k_c + static_cast<int64_t>(ky) * kw;
            for (int kx = 0; kx < kw; ++kx) s += static_cast<double>(in_row[kx]) * k_row[kx];
          }
        }
        po[(static_cast<int64_t>(oc) * oh + oy) * ow + ox] = static_cast<float>(s);
      }
  if (track2(tape, input, kernel)) {
    out.set_requires_grad(true);
    tape->record("conv2d", [input, kernel, out, stride, ci, h, w, co, kh, kw, oh, ow]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      if (input.requires_grad()) {
        std::vector<float> gi(static_cast<size_t>(ci) * h * w, 0.0f);
        const float* pk2 = kernel.data();
        for (int oc = 0; oc < co; ++oc)
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
              const float g = go[(static_cast<int64_t>(oc) * oh + oy) * ow + ox];
              if (g == 0.0f) continue;
              for (int ic = 0; ic < ci; ++ic)
                for (int ky = 0; ky < kh; ++ky)
                  for (int kx = 0; kx < kw; ++kx)
                    gi[(static_cast<size_t>(ic) * h + oy * stride + ky) * w + ox * stride + kx] +=
                        g * pk2[((static_cast<int64_t>(oc) * ci + ic) * kh + ky) * kw + kx];
            }
        input.accumulate_grad(gi.data(), static_cast<int64_t>(ci) * h * w);
      }
      if (kernel.requires_grad()) {
        std::vector<float> gk(static_cast<size_t>(co) * ci * kh * kw, 0.0f);
        const float* pin2 = input.data();
        for (int oc = 0; oc < co; ++oc)
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
              const float g = go[(static_cast<int64_t>(oc) * oh + oy) * ow + ox];
              if (g == 0.0f) continue;
              for (int ic = 0; ic < ci; ++ic)
                for (int ky = 0; ky < kh; ++ky)
                  for (int kx = 0; kx < kw; ++kx)
                    gk[((static_cast<size_t>(oc) * ci + ic) * kh + ky) * kw + kx] +=
                        g * pin2[(static_cast<int64_t>(ic) * h + oy * stride + ky) * w +
                                 ox * stride + kx];
            }
        kernel.accumulate_grad(gk.data(), static_cast<int64_t>(co) * ci * kh * kw);
      }
    });
  }
  LAFS_CHECK_FINITE("conv2d", out);
  return out;
}

Tensor add_channel_bias(Tape* tape, Tensor x, Tensor bias) {
  if (x.ndim() != 3 || bias.ndim() != 1 || x.dim(0) != bias.dim(0))
    throw std::invalid_argument("add_channel_bias: shape mismatch " + shape_str(x.shape()) +
                                " vs " + shape_str(bias.shape()));
  const int c = x.dim(0);
  const int64_t hw = static_cast<int64_t>(x.dim(1)) * x.dim(2);
  Tensor out(x.shape());
  const float* px = x.data();
  const float* pb = bias.data();
  float* po = out.data();
  for (int ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < hw; ++i) po[ch * hw + i] = px[ch * hw + i] + pb[ch];
  if (track2(tape, x, bias)) {
    out.set_requires_grad(true);
    tape->record("add_channel_bias", [x, bias, out, c, hw]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      if (x.requires_grad()) x.accumulate_grad(go, c * hw);
      if (bias.requires_grad()) {
        std::vector<float> gb(static_cast<size_t>(c), 0.0f);
        for (int ch = 0; ch < c; ++ch) {
          double s = 0.0;
          for (int64_t i = 0; i < hw; ++i) s += go[ch * hw + i];
          gb[ch] = static_cast<float>(s);
        }
        bias.accumulate_grad(gb.data(), c);
      }
    });
  }
  return out;
}

Tensor sum_all(Tape* tape, Tensor x) {
  const int64_t n = x.numel();
  double s = 0.0;
  const float* px = x.data();
  for (int64_t i = 0; i < n; ++i) s += px[i];
  Tensor out = Tensor::scalar(static_cast<float>(s));
  if (track1(tape, x)) {
    out.set_requires_grad(true);
    tape->record("sum_all", [x, out, n]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      std::vector<float> gx(static_cast<size_t>(n), go[0]);
      x.accumulate_grad(gx.data(), n);
    });
  }
  return out;
}

Tensor mean_all(Tape* tape, Tensor x) {
  const int64_t n = x.numel();
  if (n == 0) throw std::invalid_argument("mean_all: empty tensor");
  double s = 0.0;
  const float* px = x.data();
  for (int64_t i = 0; i < n; ++i) s += px[i];
  Tensor out = Tensor::scalar(static_cast<float>(s / n));
  if (track1(tape, x)) {
    out.set_requires_grad(true);
    tape->record("mean_all", [x, out, n]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      std::vector<float> gx(static_cast<size_t>(n), go[0] / n);
      x.accumulate_grad(gx.data(), n);
    });
  }
  return out;
}

Tensor cross_entropy_soft(Tape* tape, Tensor logits, const std::vector<float>& target,
                          float temperature) {
  if (!(temperature > 0.0f))
    throw std::invalid_argument("cross_entropy_soft: temperature must be > 0");
  const int k = static_cast<int>(logits.numel());
  if (k != static_cast<int>(target.size()))
    throw std::invalid_argument("cross_entropy_soft: logits " + shape_str(logits.shape()) +
                                " vs target size " + std::to_string(target.size()));
  const float* px = logits.data();
  double mx = px[0] / temperature;
  for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(px[j]) / temperature);
  double sum = 0.0;
  for (int j = 0; j < k; ++j) sum += std::exp(px[j] / temperature - mx);
  const double lse = mx + std::log(sum);
  double loss = 0.0;
  for (int j = 0; j < k; ++j) loss += static_cast<double>(target[j]) * (lse - px[j] / temperature);
  Tensor out = Tensor::scalar(static_cast<float>(loss));
  if (track1(tape, logits)) {
    out.set_requires_grad(true);
    tape->record("cross_entropy_soft", [logits, out, target, temperature, k, mx, sum]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      const float* px2 = logits.data();
      double qsum = 0.0;
      for (int j = 0; j < k; ++j) qsum += target[j];
      std::vector<float> gx(static_cast<size_t>(k));
      for (int j = 0; j < k; ++j) {
        const double p = std::exp(px2[j] / temperature - mx) / sum;
        gx[j] = static_cast<float>(go[0] * (p * qsum - target[j]) / temperature);
      }
      logits.accumulate_grad(gx.data(), k);
    });
  }
  return out;
}

Tensor cross_entropy_hard(Tape* tape, Tensor logits, int label) {
  const int k = static_cast<int>(logits.numel());
  if (label < 0 || label >= k)
    throw std::invalid_argument("cross_entropy_hard: label " + std::to_string(label) +
                                " out of range for " + std::to_string(k) + " classes");
  const float* px = logits.data();
  double mx = px[0];
  for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(px[j]));
  double sum = 0.0;
  for (int j = 0; j < k; ++j) sum += std::exp(px[j] - mx);
  const double lse = mx + std::log(sum);
  Tensor out = Tensor::scalar(static_cast<float>(lse - px[label]));
  if (track1(tape, logits)) {
    out.set_requires_grad(true);
    tape->record("cross_entropy_hard", [logits, out, label, k, mx, sum]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      const float* px2 = logits.data();
      std::vector<float> gx(static_cast<size_t>(k));
      for (int j = 0; j < k; ++j) {
        const double p = std::exp(px2[j] - mx) / sum;
        gx[j] = static_cast<float>(go[0] * (p - (j == label ? 1.0 : 0.0)));
      }
      logits.accumulate_grad(gx.data(), k);
    });
  }
  return out;
}

Tensor minmax_normalize_cols(Tape* tape, Tensor x) {
  if (x.ndim() != 2) throw std::invalid_argument("minmax_normalize_cols: expected 2-D");
  const int n = x.dim(0), c = x.dim(1);
  if (n < 2)
    throw std::invalid_argument("minmax_normalize_cols: need at least 2 rows, got " +
                                std::to_string(n));
  Tensor out(x.shape());
  std::vector<int> amin(static_cast<size_t>(c)), amax(static_cast<size_t>(c));
  std::vector<float> range(static_cast<size_t>(c));
  const float* px = x.data();
  float* po = out.data();
  for (int j = 0; j < c; ++j) {
    int imin = 0, imax = 0;
    for (int i = 1; i < n; ++i) {
      if (px[static_cast<int64_t>(i) * c + j] < px[static_cast<int64_t>(imin) * c + j]) imin = i;
      if (px[static_cast<int64_t>(i) * c + j] > px[static_cast<int64_t>(imax) * c + j]) imax = i;
    }
    amin[j] = imin;
    amax[j] = imax;
    const float mn = px[static_cast<int64_t>(imin) * c + j];
    const float r = px[static_cast<int64_t>(imax) * c + j] - mn;
    range[j] = r;
    for (int i = 0; i < n; ++i)
      po[static_cast<int64_t>(i) * c + j] = r > 0.0f ? (px[static_cast<int64_t>(i) * c + j] - mn) / r : 0.5f;
  }
  if (track1(tape, x)) {
    out.set_requires_grad(true);
    tape->record("minmax_normalize_cols",
                 [x, out, n, c, amin = std::move(amin), amax = std::move(amax),
                  range = std::move(range)]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      const float* py = out.data();
      std::vector<float> gx(static_cast<size_t>(n) * c, 0.0f);
      for (int j = 0; j < c; ++j) {
        if (range[j] <= 0.0f) continue;
        const double inv = 1.0 / range[j];
        double gsum = 0.0, gysum = 0.0;
        for (int i = 0; i < n; ++i) {
          const double g = go[static_cast<int64_t>(i) * c + j];
          gsum += g;
          gysum += g * py[static_cast<int64_t>(i) * c + j];
        }
        for (int i = 0; i < n; ++i)
          gx[static_cast<size_t>(i) * c + j] = static_cast<float>(go[static_cast<int64_t>(i) * c + j] * inv);
        gx[static_cast<size_t>(amin[j]) * c + j] += static_cast<float>((-gsum + gysum) * inv);
        gx[static_cast<size_t>(amax[j]) * c + j] += static_cast<float>(-gysum * inv);
      }
      x.accumulate_grad(gx.data(), static_cast<int64_t>(n) * c);
    });
  }
  return out;
}

Tensor mean_rowwise_l2(Tape* tape, Tensor a, Tensor b_const, float eps) {
  if (a.shape() != b_const.shape())
    throw std::invalid_argument("mean_rowwise_l2: shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b_const.shape()));
  if (a.ndim() != 2) throw std::invalid_argument("mean_rowwise_l2: expected 2-D");
  const int n = a.dim(0), c = a.dim(1);
  std::vector<float> dist(static_cast<size_t>(n));
  const float* pa = a.data();
  const float* pb = b_const.data();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      const double df = static_cast<double>(pa[static_cast<int64_t>(i) * c + j]) -
                        pb[static_cast<int64_t>(i) * c + j];
      s += df * df;
    }
    dist[i] = static_cast<float>(std::sqrt(s));
    total += dist[i];
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / n));
  if (track1(tape, a)) {
    out.set_requires_grad(true);
    tape->record("mean_rowwise_l2", [a, b_const, out, n, c, eps, dist = std::move(dist)]() mutable {
      const float* go = out.grad_data();
      if (!go) return;
      const float* pa2 = a.data();
      const float* pb2 = b_const.data();
      std::vector<float> ga(static_cast<size_t>(n) * c, 0.0f);
      for (int i = 0; i < n; ++i) {
        if (dist[i] <= eps) continue;
        const double coef = go[0] / (static_cast<double>(n) * dist[i]);
        for (int j = 0; j < c; ++j)
          ga[static_cast<size_t>(i) * c + j] = static_cast<float>(
              coef * (pa2[static_cast<int64_t>(i) * c + j] - pb2[static_cast<int64_t>(i) * c + j]));
      }
      a.accumulate_grad(ga.data(), static_cast<int64_t>(n) * c);
    });
  }
  return out;
}

// -------------------------------------------------------------------------

bool AdamW::step(const ParamRefs& params, std::string* diagnostic,
                 const std::vector<float>* lr_scales) {
  if (lr_scales && lr_scales->size() != params.size())
    throw std::invalid_argument("AdamW: lr_scales size mismatch");
  for (size_t p = 0; p < params.size(); ++p) {
    const float* g = params[p]->grad_data();
    if (!g) continue;
    for (int64_t i = 0; i < params[p]->numel(); ++i)
      if (std::isnan(g[i])) {
        if (diagnostic)
          *diagnostic = "NaN gradient in parameter " + std::to_string(p) + " at element " +
                        std::to_string(i);
        return false;
      }
  }
  if (m.size() != params.size()) {
    m.assign(params.size(), {});
    v.assign(params.size(), {});
    for (size_t p = 0; p < params.size(); ++p) {
      m[p].assign(static_cast<size_t>(params[p]->numel()), 0.0f);
      v[p].assign(static_cast<size_t>(params[p]->numel()), 0.0f);
    }
  }
  ++step_count;
  const double bc1 = 1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(step_count));
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    const float* g = t.grad_data();
    float* w = t.data();
    const float eff_lr = lr * (lr_scales ? (*lr_scales)[p] : 1.0f);
    const int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) {
      const float gi = g ? g[i] : 0.0f;
      m[p][i] = beta1 * m[p][i] + (1.0f - beta1) * gi;
      v[p][i] = beta2 * v[p][i] + (1.0f - beta2) * gi * gi;
      const double mhat = m[p][i] / bc1;
      const double vhat = v[p][i] / bc2;
      // decoupled weight decay, applied separately from the adaptive step
      w[i] -= eff_lr * weight_decay * w[i];
      w[i] -= static_cast<float>(eff_lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
  return true;
}

void zero_grads(const ParamRefs& params) {
  for (Tensor* t : params) t->clear_grad();
}

double gradcheck(const std::function<Tensor(Tape*, std::vector<Tensor>&)>& f,
                 std::vector<Tensor> inputs, double h) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  Tape tape;
  Tensor out = f(&tape, inputs);
  if (out.numel() != 1) throw std::invalid_argument("gradcheck: f must be scalar-valued");
  tape.backward(out);
  std::vector<std::vector<float>> analytic;
  for (auto& t : inputs) {
    std::vector<float> g(static_cast<size_t>(t.numel()), 0.0f);
    if (const float* gp = t.grad_data()) std::copy(gp, gp + t.numel(), g.begin());
    analytic.push_back(std::move(g));
  }
  double max_rel = 0.0;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& t = inputs[ti];
    float* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) {
      const float orig = p[i];
      p[i] = static_cast<float>(orig + h);
      const double fp = f(nullptr, inputs).item();
      p[i] = static_cast<float>(orig - h);
      const double fm = f(nullptr, inputs).item();
      p[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[ti][static_cast<size_t>(i)];
      const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace lafs
