#include "cpg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace cpg {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::atomic<long>& TensorImpl::live_count() {
  static std::atomic<long> count{0};
  return count;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(numel(impl->shape), 0.0);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->ensure_grad();
  return Tensor(impl);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.vec().begin(), t.vec().end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (static_cast<std::int64_t>(data.size()) != numel(shape))
    throw ShapeError("from_data: " + std::to_string(data.size()) +
                     " values for shape " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->ensure_grad();
  return Tensor(impl);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev,
                     bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : t.vec()) x = dist(rng);
  return t;
}

void Tensor::set_requires_grad(bool rg) {
  impl_->requires_grad = rg;
  if (rg) impl_->ensure_grad();
}

double* Tensor::grad() {
  impl_->ensure_grad();
  return impl_->grad.data();
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty())
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  const Shape& s = impl_->shape;
  if (idx.size() != s.size()) throw ShapeError("at(): rank mismatch");
  std::int64_t off = 0;
  auto it = idx.begin();
  for (std::size_t i = 0; i < s.size(); ++i, ++it) off = off * s[i] + *it;
  return impl_->data[off];
}

// ---------------------------------------------------------------------------
// Graph ops
// ---------------------------------------------------------------------------

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

void require_finite(const char* op, const Tensor& t) {
  for (double x : t.vec())
    if (!std::isfinite(x)) throw ValueError(std::string(op) + ": non-finite value");
}

}  // namespace

Tensor Graph::make_out(Shape shape, bool requires_grad) {
  return Tensor::zeros(std::move(shape), requires_grad && grad_enabled_);
}

void Graph::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ValueError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad())
    throw ValueError("backward: loss does not require grad");
  Tensor l = loss;
  l.grad()[0] += 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
}

#define BINARY_PROLOGUE(name)                                   \
  require_same_shape(name, a, b);                               \
  bool rg = track(a) || track(b);                               \
  Tensor out = make_out(a.shape(), rg);                         \
  const std::int64_t n = a.size();

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  BINARY_PROLOGUE("add")
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (rg) {
    record([a2 = a, b2 = b, o = out]() mutable {
      const double* g = o.grad();
      if (a2.requires_grad())
        for (std::int64_t i = 0; i < o.size(); ++i) a2.grad()[i] += g[i];
      if (b2.requires_grad())
        for (std::int64_t i = 0; i < o.size(); ++i) b2.grad()[i] += g[i];
    });
  }
  return out;
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
  BINARY_PROLOGUE("sub")
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (rg) {
    record([a2 = a, b2 = b, o = out]() mutable {
      const double* g = o.grad();
      if (a2.requires_grad())
        for (std::int64_t i = 0; i < o.size(); ++i) a2.grad()[i] += g[i];
      if (b2.requires_grad())
        for (std::int64_t i = 0; i < o.size(); ++i) b2.grad()[i] -= g[i];
    });
  }
  return out;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  BINARY_PROLOGUE("mul")
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (rg) {
    record([a2 = a, b2 = b, o = out]() mutable {
      const double* g = o.grad();
      if (a2.requires_grad())
        for (std::int64_t i = 0; i < o.size(); ++i) a2.grad()[i] += g[i] * b2.data()[i];
      if (b2.requires_grad())
        for (std::int64_t i = 0; i < o.size(); ++i) b2.grad()[i] += g[i] * a2.data()[i];
    });
  }
  return out;
}

Tensor Graph::div(const Tensor& a, const Tensor& b) {
  BINARY_PROLOGUE("div")
  for (std::int64_t i = 0; i < n; ++i) {
    if (b.data()[i] == 0.0) throw ValueError("div: division by zero");
    out.data()[i] = a.data()[i] / b.data()[i];
  }
  if (rg) {
    record([a2 = a, b2 = b, o = out]() mutable {
      const double* g = o.grad();
      for (std::int64_t i = 0; i < o.size(); ++i) {
        double inv = 1.0 / b2.data()[i];
        if (a2.requires_grad()) a2.grad()[i] += g[i] * inv;
        if (b2.requires_grad()) b2.grad()[i] -= g[i] * a2.data()[i] * inv * inv;
      }
    });
  }
  return out;
}

Tensor Graph::maximum(const Tensor& a, const Tensor& b) {
  BINARY_PROLOGUE("maximum")
  for (std::int64_t i = 0; i < n; ++i)
    out.data()[i] = std::max(a.data()[i], b.data()[i]);
  if (rg) {
    record([a2 = a, b2 = b, o = out]() mutable {
      const double* g = o.grad();
      for (std::int64_t i = 0; i < o.size(); ++i) {
        // ties route to a
        if (a2.data()[i] >= b2.data()[i]) {
          if (a2.requires_grad()) a2.grad()[i] += g[i];
        } else if (b2.requires_grad()) {
          b2.grad()[i] += g[i];
        }
      }
    });
  }
  return out;
}

Tensor Graph::minimum(const Tensor& a, const Tensor& b) {
  BINARY_PROLOGUE("minimum")
  for (std::int64_t i = 0; i < n; ++i)
    out.data()[i] = std::min(a.data()[i], b.data()[i]);
  if (rg) {
    record([a2 = a, b2 = b, o = out]() mutable {
      const double* g = o.grad();
      for (std::int64_t i = 0; i < o.size(); ++i) {
        if (a2.data()[i] <= b2.data()[i]) {
          if (a2.requires_grad()) a2.grad()[i] += g[i];
        } else if (b2.requires_grad()) {
          b2.grad()[i] += g[i];
        }
      }
    });
  }
  return out;
}

#undef BINARY_PROLOGUE

Tensor Graph::add_scalar(const Tensor& a, double s) {
  Tensor out = make_out(a.shape(), track(a));
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + s;
  if (out.requires_grad()) {
    record([a2 = a, o = out]() mutable {
      for (std::int64_t i = 0; i < o.size(); ++i) a2.grad()[i] += o.grad()[i];
    });
  }
  return out;
}

Tensor Graph::mul_scalar(const Tensor& a, double s) {
  Tensor out = make_out(a.shape(), track(a));
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * s;
  if (out.requires_grad()) {
    record([a2 = a, o = out, s]() mutable {
      for (std::int64_t i = 0; i < o.size(); ++i) a2.grad()[i] += o.grad()[i] * s;
    });
  }
  return out;
}

Tensor Graph::clamp_min(const Tensor& a, double lo) {
  Tensor out = make_out(a.shape(), track(a));
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = std::max(a.data()[i], lo);
  if (out.requires_grad()) {
    record([a2 = a, o = out, lo]() mutable {
      for (std::int64_t i = 0; i < o.size(); ++i)
        if (a2.data()[i] >= lo) a2.grad()[i] += o.grad()[i];
    });
  }
  return out;
}

Tensor Graph::clamp_max(const Tensor& a, double hi) {
  Tensor out = make_out(a.shape(), track(a));
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = std::min(a.data()[i], hi);
  if (out.requires_grad()) {
    record([a2 = a, o = out, hi]() mutable {
      for (std::int64_t i = 0; i < o.size(); ++i)
        if (a2.data()[i] <= hi) a2.grad()[i] += o.grad()[i];
    });
  }
  return out;
}

Tensor Graph::exp(const Tensor& a) {
  Tensor out = make_out(a.shape(), track(a));
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = std::exp(a.data()[i]);
  require_finite("exp", out);
  if (out.requires_grad()) {
    record([a2 = a, o = out]() mutable {
      for (std::int64_t i = 0; i < o.size(); ++i)
        a2.grad()[i] += o.grad()[i] * o.data()[i];
    });
  }
  return out;
}

Tensor Graph::log(const Tensor& a) {
  Tensor out = make_out(a.shape(), track(a));
  for (std::int64_t i = 0; i < a.size(); ++i) {
    if (a.data()[i] <= 0.0)
      throw ValueError("log: non-positive argument " + std::to_string(a.data()[i]));
    out.data()[i] = std::log(a.data()[i]);
  }
  if (out.requires_grad()) {
    record([a2 = a, o = out]() mutable {
      for (std::int64_t i = 0; i < o.size(); ++i)
        a2.grad()[i] += o.grad()[i] / a2.data()[i];
    });
  }
  return out;
}

Tensor Graph::sigmoid(const Tensor& a) {
  Tensor out = make_out(a.shape(), track(a));
  for (std::int64_t i = 0; i < a.size(); ++i)
    out.data()[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
  if (out.requires_grad()) {
    record([a2 = a, o = out]() mutable {
      for (std::int64_t i = 0; i < o.size(); ++i) {
        double y = o.data()[i];
        a2.grad()[i] += o.grad()[i] * y * (1.0 - y);
      }
    });
  }
  return out;
}

Tensor Graph::gelu(const Tensor& a) {
  // exact erf form
  Tensor out = make_out(a.shape(), track(a));
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    double x = a.data()[i];
    out.data()[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  if (out.requires_grad()) {
    record([a2 = a, o = out]() mutable {
      constexpr double kInvSqrt2Pi = 0.3989422804014326779;
      for (std::int64_t i = 0; i < o.size(); ++i) {
        double x = a2.data()[i];
        double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        a2.grad()[i] += o.grad()[i] * (cdf + x * pdf);
      }
    });
  }
  return out;
}

Tensor Graph::relu(const Tensor& a) { return clamp_min(a, 0.0); }

Tensor Graph::abs(const Tensor& a) {
  Tensor out = make_out(a.shape(), track(a));
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = std::fabs(a.data()[i]);
  if (out.requires_grad()) {
    record([a2 = a, o = out]() mutable {
      for (std::int64_t i = 0; i < o.size(); ++i)
        a2.grad()[i] += o.grad()[i] * (a2.data()[i] >= 0.0 ? 1.0 : -1.0);
    });
  }
  return out;
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor out = make_out({n, m}, track(a) || track(b));
  const double* A = a.data();
  const double* B = b.data();
  double* C = out.data();
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < k; ++p) {
      double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * m;
      double* crow = C + i * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  if (out.requires_grad()) {
    record([a2 = a, b2 = b, o = out, n, k, m]() mutable {
      const double* G = o.grad();
      if (a2.requires_grad()) {
        double* gA = a2.grad();
        const double* B2 = b2.data();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j) {
            double gv = G[i * m + j];
            if (gv == 0.0) continue;
            for (int p = 0; p < k; ++p) gA[i * k + p] += gv * B2[p * m + j];
          }
      }
      if (b2.requires_grad()) {
        double* gB = b2.grad();
        const double* A2 = a2.data();
        for (int i = 0; i < n; ++i)
          for (int p = 0; p < k; ++p) {
            double av = A2[i * k + p];
            if (av == 0.0) continue;
            const double* grow = G + i * m;
            double* brow = gB + p * m;
            for (int j = 0; j < m; ++j) brow[j] += av * grow[j];
          }
      }
    });
  }
  return out;
}

Tensor Graph::transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: need 2D, got " + shape_str(a.shape()));
  const int n = a.dim(0), m = a.dim(1);
  Tensor out = make_out({m, n}, track(a));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out.data()[j * n + i] = a.data()[i * m + j];
  if (out.requires_grad()) {
    record([a2 = a, o = out, n, m]() mutable {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) a2.grad()[i * m + j] += o.grad()[j * n + i];
    });
  }
  return out;
}

Tensor Graph::add_bias(const Tensor& a, const Tensor& bias) {
  if (a.rank() != 2 || bias.rank() != 1 || bias.dim(0) != a.dim(1))
    throw ShapeError("add_bias: " + shape_str(a.shape()) + " + " +
                     shape_str(bias.shape()));
  const int n = a.dim(0), m = a.dim(1);
  Tensor out = make_out({n, m}, track(a) || track(bias));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out.data()[i * m + j] = a.data()[i * m + j] + bias.data()[j];
  if (out.requires_grad()) {
    record([a2 = a, b2 = bias, o = out, n, m]() mutable {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
          double g = o.grad()[i * m + j];
          if (a2.requires_grad()) a2.grad()[i * m + j] += g;
          if (b2.requires_grad()) b2.grad()[j] += g;
        }
    });
  }
  return out;
}

Tensor Graph::concat(const Tensor& a, const Tensor& b, int axis) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("concat: need 2D inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  const int keep = 1 - axis;
  if (a.dim(keep) != b.dim(keep))
    throw ShapeError("concat: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Shape s = a.shape();
  s[axis] += b.dim(axis);
  Tensor out = make_out(s, track(a) || track(b));
  const int n = s[0], m = s[1];
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double v;
      if (axis == 0)
        v = i < a.dim(0) ? a.data()[i * m + j] : b.data()[(i - a.dim(0)) * m + j];
      else
        v = j < a.dim(1) ? a.data()[i * a.dim(1) + j]
                         : b.data()[i * b.dim(1) + (j - a.dim(1))];
      out.data()[i * m + j] = v;
    }
  if (out.requires_grad()) {
    record([a2 = a, b2 = b, o = out, axis, n, m]() mutable {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
          double g = o.grad()[i * m + j];
          if (axis == 0) {
            if (i < a2.dim(0)) {
              if (a2.requires_grad()) a2.grad()[i * m + j] += g;
            } else if (b2.requires_grad()) {
              b2.grad()[(i - a2.dim(0)) * m + j] += g;
            }
          } else {
            if (j < a2.dim(1)) {
              if (a2.requires_grad()) a2.grad()[i * a2.dim(1) + j] += g;
            } else if (b2.requires_grad()) {
              b2.grad()[i * b2.dim(1) + (j - a2.dim(1))] += g;
            }
          }
        }
    });
  }
  return out;
}

Tensor Graph::slice(const Tensor& a, int r0, int r1, int c0, int c1) {
  if (a.rank() != 2) throw ShapeError("slice: need 2D, got " + shape_str(a.shape()));
  if (r0 < 0 || r1 > a.dim(0) || c0 < 0 || c1 > a.dim(1) || r0 >= r1 || c0 >= c1)
    throw ShapeError("slice: bad range on " + shape_str(a.shape()));
  const int m = a.dim(1), rows = r1 - r0, cols = c1 - c0;
  Tensor out = make_out({rows, cols}, track(a));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      out.data()[i * cols + j] = a.data()[(r0 + i) * m + (c0 + j)];
  if (out.requires_grad()) {
    record([a2 = a, o = out, r0, c0, m, rows, cols]() mutable {
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
          a2.grad()[(r0 + i) * m + (c0 + j)] += o.grad()[i * cols + j];
    });
  }
  return out;
}

Tensor Graph::reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor out = make_out(shape, track(a));
  std::copy(a.vec().begin(), a.vec().end(), out.vec().begin());
  if (out.requires_grad()) {
    record([a2 = a, o = out]() mutable {
      for (std::int64_t i = 0; i < o.size(); ++i) a2.grad()[i] += o.grad()[i];
    });
  }
  return out;
}

namespace {
// Normalizes reduction geometry: 2D (n,m) with axis 0 -> out m, axis 1 -> out n,
// axis -1 -> scalar; 1D treated as (1,n).
struct Red {
  int n, m, axis;
  Shape out_shape;
};
Red red_geom(const Tensor& a, int axis) {
  Red r;
  if (a.rank() == 1) {
    r.n = 1;
    r.m = a.dim(0);
    if (axis == 0) axis = 1;  // reduce over the vector
  } else if (a.rank() == 2) {
    r.n = a.dim(0);
    r.m = a.dim(1);
  } else {
    throw ShapeError("reduce: need 1D/2D, got " + shape_str(a.shape()));
  }
  r.axis = axis;
  if (axis == -1)
    r.out_shape = {1};
  else if (axis == 0)
    r.out_shape = {r.m};
  else if (axis == 1)
    r.out_shape = {r.n};
  else
    throw ShapeError("reduce: bad axis");
  return r;
}
}  // namespace

Tensor Graph::reduce_sum(const Tensor& a, int axis) {
  Red r = red_geom(a, axis);
  Tensor out = make_out(r.out_shape, track(a));
  for (int i = 0; i < r.n; ++i)
    for (int j = 0; j < r.m; ++j) {
      double v = a.data()[i * r.m + j];
      if (r.axis == -1)
        out.data()[0] += v;
      else if (r.axis == 0)
        out.data()[j] += v;
      else
        out.data()[i] += v;
    }
  if (out.requires_grad()) {
    record([a2 = a, o = out, r]() mutable {
      for (int i = 0; i < r.n; ++i)
        for (int j = 0; j < r.m; ++j) {
          double g = r.axis == -1 ? o.grad()[0]
                     : r.axis == 0 ? o.grad()[j]
                                   : o.grad()[i];
          a2.grad()[i * r.m + j] += g;
        }
    });
  }
  return out;
}

Tensor Graph::reduce_mean(const Tensor& a, int axis) {
  Red r = red_geom(a, axis);
  double denom = r.axis == -1 ? double(r.n) * r.m : r.axis == 0 ? r.n : r.m;
  Tensor s = reduce_sum(a, axis);
  return mul_scalar(s, 1.0 / denom);
}

Tensor Graph::reduce_max(const Tensor& a, int axis) {
  Red r = red_geom(a, axis);
  Tensor out = make_out(r.out_shape, track(a));
  std::vector<std::int64_t> argmax(numel(r.out_shape), -1);
  std::fill(out.vec().begin(), out.vec().end(),
            -std::numeric_limits<double>::infinity());
  for (int i = 0; i < r.n; ++i)
    for (int j = 0; j < r.m; ++j) {
      double v = a.data()[i * r.m + j];
      std::int64_t k = r.axis == -1 ? 0 : r.axis == 0 ? j : i;
      if (v > out.data()[k]) {
        out.data()[k] = v;
        argmax[k] = i * r.m + j;
      }
    }
  if (out.requires_grad()) {
    record([a2 = a, o = out, argmax]() mutable {
      for (std::size_t k = 0; k < argmax.size(); ++k)
        a2.grad()[argmax[k]] += o.grad()[k];
    });
  }
  return out;
}

Tensor Graph::softmax(const Tensor& a, int axis) {
  if (a.rank() == 1) {
    if (axis != 0) throw ShapeError("softmax: 1D tensor needs axis 0");
  } else if (a.rank() != 2 || (axis != 0 && axis != 1)) {
    throw ShapeError("softmax: need 1D axis 0 or 2D axis 0|1");
  }
  const int n = a.rank() == 1 ? 1 : a.dim(0);
  const int m = a.rank() == 1 ? a.dim(0) : a.dim(1);
  const bool rows = a.rank() == 1 || axis == 1;
  Tensor out = make_out(a.shape(), track(a));
  const int groups = rows ? n : m;
  const int len = rows ? m : n;
  auto idx = [rows, m](int g, int k) { return rows ? g * m + k : k * m + g; };
  for (int g = 0; g < groups; ++g) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < len; ++k) mx = std::max(mx, a.data()[idx(g, k)]);
    double z = 0.0;
    for (int k = 0; k < len; ++k) z += std::exp(a.data()[idx(g, k)] - mx);
    for (int k = 0; k < len; ++k) out.data()[idx(g, k)] = std::exp(a.data()[idx(g, k)] - mx) / z;
  }
  if (out.requires_grad()) {
    record([a2 = a, o = out, groups, len, idx]() mutable {
      for (int g = 0; g < groups; ++g) {
        double dot = 0.0;
        for (int k = 0; k < len; ++k) dot += o.data()[idx(g, k)] * o.grad()[idx(g, k)];
        for (int k = 0; k < len; ++k)
          a2.grad()[idx(g, k)] += o.data()[idx(g, k)] * (o.grad()[idx(g, k)] - dot);
      }
    });
  }
  return out;
}

Tensor Graph::layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                         double eps) {
  if (a.rank() != 2) throw ShapeError("layer_norm: need 2D input");
  const int n = a.dim(0), m = a.dim(1);
  if (gamma.rank() != 1 || gamma.dim(0) != m || beta.rank() != 1 || beta.dim(0) != m)
    throw ShapeError("layer_norm: gamma/beta must be (" + std::to_string(m) + ")");
  Tensor out = make_out({n, m}, track(a) || track(gamma) || track(beta));
  std::vector<double> mean(n), rstd(n), xhat(std::size_t(n) * m);
  for (int i = 0; i < n; ++i) {
    double mu = 0.0;
    for (int j = 0; j < m; ++j) mu += a.data()[i * m + j];
    mu /= m;
    double var = 0.0;
    for (int j = 0; j < m; ++j) {
      double d = a.data()[i * m + j] - mu;
      var += d * d;
    }
    var /= m;
    double rs = 1.0 / std::sqrt(var + eps);
    mean[i] = mu;
    rstd[i] = rs;
    for (int j = 0; j < m; ++j) {
      double xh = (a.data()[i * m + j] - mu) * rs;
      xhat[i * m + j] = xh;
      out.data()[i * m + j] = xh * gamma.data()[j] + beta.data()[j];
    }
  }
  if (out.requires_grad()) {
    record([a2 = a, g2 = gamma, b2 = beta, o = out, n, m, rstd, xhat]() mutable {
      for (int i = 0; i < n; ++i) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (int j = 0; j < m; ++j) {
          double gy = o.grad()[i * m + j];
          double gxh = gy * g2.data()[j];
          sum_g += gxh;
          sum_gx += gxh * xhat[i * m + j];
          if (g2.requires_grad()) g2.grad()[j] += gy * xhat[i * m + j];
          if (b2.requires_grad()) b2.grad()[j] += gy;
        }
        if (a2.requires_grad()) {
          for (int j = 0; j < m; ++j) {
            double gxh = o.grad()[i * m + j] * g2.data()[j];
            a2.grad()[i * m + j] +=
                rstd[i] * (gxh - sum_g / m - xhat[i * m + j] * sum_gx / m);
          }
        }
      }
    });
  }
  return out;
}

Tensor Graph::embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be 2D");
  const int v = table.dim(0), d = table.dim(1);
  const int n = static_cast<int>(ids.size());
  for (int id : ids)
    if (id < 0 || id >= v)
      throw ValueError("embedding_lookup: id " + std::to_string(id) +
                       " out of range [0," + std::to_string(v) + ")");
  Tensor out = make_out({n, d}, track(table));
  for (int i = 0; i < n; ++i)
    std::copy_n(table.data() + std::size_t(ids[i]) * d, d, out.data() + std::size_t(i) * d);
  if (out.requires_grad()) {
    record([t2 = table, o = out, ids, d]() mutable {
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < d; ++j)
          t2.grad()[std::size_t(ids[i]) * d + j] += o.grad()[i * d + j];
    });
  }
  return out;
}

Tensor Graph::masked_fill(const Tensor& a, const std::vector<std::uint8_t>& mask,
                          double value) {
  if (static_cast<std::int64_t>(mask.size()) != a.size())
    throw ShapeError("masked_fill: mask size " + std::to_string(mask.size()) +
                     " vs tensor " + shape_str(a.shape()));
  Tensor out = make_out(a.shape(), track(a));
  for (std::int64_t i = 0; i < a.size(); ++i)
    out.data()[i] = mask[i] ? value : a.data()[i];
  if (out.requires_grad()) {
    record([a2 = a, o = out, mask]() mutable {
      for (std::int64_t i = 0; i < o.size(); ++i)
        if (!mask[i]) a2.grad()[i] += o.grad()[i];
    });
  }
  return out;
}

Tensor Graph::im2col(const Tensor& image, int kernel, int stride, int pad) {
  if (image.rank() != 3) throw ShapeError("im2col: need (C,H,W) input");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int oh = (h + 2 * pad - kernel) / stride + 1;
  const int ow = (w + 2 * pad - kernel) / stride + 1;
  const int cols = c * kernel * kernel;
  // source index per output element, -1 for zero padding
  std::vector<std::int64_t> src(std::size_t(oh) * ow * cols, -1);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      std::int64_t row = std::int64_t(oy) * ow + ox;
      int col = 0;
      for (int ch = 0; ch < c; ++ch)
        for (int ky = 0; ky < kernel; ++ky)
          for (int kx = 0; kx < kernel; ++kx, ++col) {
            int y = oy * stride - pad + ky;
            int x = ox * stride - pad + kx;
            if (y >= 0 && y < h && x >= 0 && x < w)
              src[row * cols + col] = (std::int64_t(ch) * h + y) * w + x;
          }
    }
  Tensor out = make_out({oh * ow, cols}, track(image));
  for (std::size_t i = 0; i < src.size(); ++i)
    out.data()[i] = src[i] >= 0 ? image.data()[src[i]] : 0.0;
  if (out.requires_grad()) {
    record([img = image, o = out, src = std::move(src)]() mutable {
      for (std::size_t i = 0; i < src.size(); ++i)
        if (src[i] >= 0) img.grad()[src[i]] += o.grad()[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::step() {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, step_count_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, step_count_);
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    if (!p.has_grad())
      throw ValueError("adamw_step: parameter " + std::to_string(pi) + " has no grad");
    double* w = p.data();
    const std::vector<double>& g = p.grad_vec();
    for (std::int64_t i = 0; i < p.size(); ++i) {
      m_[pi][i] = cfg_.beta1 * m_[pi][i] + (1.0 - cfg_.beta1) * g[i];
      v_[pi][i] = cfg_.beta2 * v_[pi][i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mhat = m_[pi][i] / bc1;
      double vhat = v_[pi][i] / bc2;
      w[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

double finite_difference_grad(const std::function<double()>& f, Tensor param,
                              int index, double eps) {
  double* w = param.data();
  const double saved = w[index];
  w[index] = saved + eps;
  double up = f();
  w[index] = saved - eps;
  double down = f();
  w[index] = saved;
  return (up - down) / (2.0 * eps);
}

double fd_check_param(const std::function<double()>& f, Tensor param,
                      const std::vector<double>& analytic, int n_probes,
                      std::mt19937_64& rng, double eps) {
  double worst = 0.0;
  std::uniform_int_distribution<std::int64_t> pick(0, param.size() - 1);
  for (int k = 0; k < n_probes; ++k) {
    std::int64_t i = pick(rng);
    double fd = finite_difference_grad(f, param, static_cast<int>(i), eps);
    double an = analytic[i];
    double rel = std::fabs(fd - an) / std::max({1.0, std::fabs(fd), std::fabs(an)});
    worst = std::max(worst, rel);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// checkpoint format: one JSON header line, then raw little-endian float64
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors,
                     const std::string& extras_json) {
  nlohmann::json header;
  header["format"] = "cpg-checkpoint-v1";
  header["extras"] = extras_json.empty() ? nlohmann::json(nullptr)
                                         : nlohmann::json::parse(extras_json);
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    entries.push_back({{"name", name}, {"shape", t.shape()}});
  }
  header["tensors"] = entries;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValueError("save_checkpoint: cannot open " + path);
  out << header.dump() << "\n";
  for (const auto& [name, t] : tensors) {
    static_assert(sizeof(double) == 8);
    out.write(reinterpret_cast<const char*>(t.data()), t.size() * 8);
  }
  if (!out) throw ValueError("save_checkpoint: write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValueError("load_checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw ValueError("load_checkpoint: missing header in " + path);
  nlohmann::json header = nlohmann::json::parse(line);
  if (header.value("format", "") != "cpg-checkpoint-v1")
    throw ValueError("load_checkpoint: bad format tag in " + path);
  Checkpoint ck;
  if (!header["extras"].is_null()) ck.extras_json = header["extras"].dump();
  for (const auto& e : header["tensors"]) {
    Shape shape = e["shape"].get<Shape>();
    std::vector<double> data(numel(shape));
    in.read(reinterpret_cast<char*>(data.data()), data.size() * 8);
    if (!in)
      throw ValueError("load_checkpoint: truncated payload for tensor " +
                       e["name"].get<std::string>());
    ck.tensors.emplace_back(e["name"].get<std::string>(),
                            Tensor::from_data(shape, std::move(data)));
  }
  return ck;
}

Tensor Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw ValueError("checkpoint: missing tensor " + name);
}

}  // namespace cpg
