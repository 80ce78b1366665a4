#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpg {

using Shape = std::vector<int>;

struct EngineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : EngineError {
  using EngineError::EngineError;
};
struct ValueError : EngineError {
  using EngineError::EngineError;
};

std::string shape_str(const Shape& s);
std::int64_t numel(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily, same length as data
  bool requires_grad = false;

  TensorImpl() { ++live_count(); }
  ~TensorImpl() { --live_count(); }
  TensorImpl(const TensorImpl&) = delete;
  TensorImpl& operator=(const TensorImpl&) = delete;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }

  // Live-buffer counter; used by tape-hygiene tests.
  static std::atomic<long>& live_count();
};

// Value-semantics handle over a shared dense float64 buffer, row-major.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape[i]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(impl_->data.size()); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& vec() { return impl_->data; }
  const std::vector<double>& vec() const { return impl_->data; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool rg);
  double* grad();
  const std::vector<double>& grad_vec() const { return impl_->grad; }
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  void zero_grad();

  double item() const;
  double at(std::initializer_list<int> idx) const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  bool same_impl(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Records differentiable ops; one Graph per execution context, never shared
// across threads. backward() replays the tape in reverse, visiting each
// recorded node exactly once.
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t num_nodes() const { return tape_.size(); }
  void clear() { tape_.clear(); }

  void backward(const Tensor& loss);

  // --- elementwise, same shape ---
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor div(const Tensor& a, const Tensor& b);  // checked: b != 0
  Tensor maximum(const Tensor& a, const Tensor& b);
  Tensor minimum(const Tensor& a, const Tensor& b);

  // --- scalar variants ---
  Tensor add_scalar(const Tensor& a, double s);
  Tensor mul_scalar(const Tensor& a, double s);
  Tensor clamp_min(const Tensor& a, double lo);
  Tensor clamp_max(const Tensor& a, double hi);

  // --- unary ---
  Tensor exp(const Tensor& a);
  Tensor log(const Tensor& a);  // checked: a > 0
  Tensor sigmoid(const Tensor& a);
  Tensor gelu(const Tensor& a);
  Tensor relu(const Tensor& a);
  Tensor abs(const Tensor& a);

  // --- linear algebra / structure ---
  Tensor matmul(const Tensor& a, const Tensor& b);          // (n,k)x(k,m)
  Tensor transpose(const Tensor& a);                        // 2D
  Tensor add_bias(const Tensor& a, const Tensor& bias);     // (n,m)+(m)
  Tensor concat(const Tensor& a, const Tensor& b, int axis);  // 2D, axis 0|1
  Tensor slice(const Tensor& a, int r0, int r1, int c0, int c1);  // 2D
  Tensor reshape(const Tensor& a, Shape shape);

  // --- reductions (2D input; axis -1 = all -> scalar) ---
  Tensor reduce_sum(const Tensor& a, int axis = -1);
  Tensor reduce_mean(const Tensor& a, int axis = -1);
  Tensor reduce_max(const Tensor& a, int axis = -1);

  // --- nn ---
  Tensor softmax(const Tensor& a, int axis);  // 1D: axis 0; 2D: axis 0|1
  Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                    double eps = 1e-5);  // per row of 2D
  Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
  Tensor masked_fill(const Tensor& a, const std::vector<std::uint8_t>& mask,
                     double value);
  // Patch extraction over a (C,H,W) tensor -> (out_h*out_w, C*k*k); zero pad.
  Tensor im2col(const Tensor& image, int kernel, int stride, int pad);

 private:
  bool grad_enabled_;
  std::vector<std::function<void()>> tape_;

  bool track(const Tensor& a) const { return grad_enabled_ && a.requires_grad(); }
  Tensor make_out(Shape shape, bool requires_grad);
  void record(std::function<void()> fn) { tape_.push_back(std::move(fn)); }
};

// --- AdamW-style optimizer (decoupled weight decay) ---
struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg);

  void step();        // requires grads populated on every parameter
  void zero_grad();   // explicit, per contract
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  long step_count() const { return step_count_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamWConfig cfg_;
  long step_count_ = 0;
};

// --- finite-difference harness (first-class, reusable by model checks) ---
// f re-evaluates the scalar objective from scratch on current param values.
double finite_difference_grad(const std::function<double()>& f, Tensor param,
                              int index, double eps = 1e-5);

// Runs backward-vs-central-difference comparison on `n_probes` randomly chosen
// coordinates of `param`; `analytic` is param's grad after backward. Returns
// max relative error (|a-b| / max(1, |a|, |b|)).
double fd_check_param(const std::function<double()>& f, Tensor param,
                      const std::vector<double>& analytic, int n_probes,
                      std::mt19937_64& rng, double eps = 1e-5);

// --- checkpoint I/O: JSON header line + raw little-endian float64 payload ---
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors,
                     const std::string& extras_json);
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::string extras_json;
  Tensor find(const std::string& name) const;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cpg
