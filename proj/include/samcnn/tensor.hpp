#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "samcnn/rng.hpp"

namespace samcnn {

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool backward_done = false;
  std::string name;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Thread-local switch: while disabled, ops compute values but record no
// graph edges. Inference paths use this to skip tape construction.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major f64 tensor, value handle onto a shared graph node.
// Copies share the node; ops are the free functions below.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng,
                        bool requires_grad = false);

  bool defined() const { return node != nullptr; }
  const Shape& shape() const { return node->shape; }
  int ndim() const { return static_cast<int>(node->shape.size()); }
  int dim(int i) const { return node->shape[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return node->data.size(); }

  std::span<const double> data() const { return node->data; }
  std::span<double> mutable_data() { return node->data; }
  std::span<const double> grad() const { return node->grad; }
  bool has_grad() const { return !node->grad.empty(); }
  bool requires_grad() const { return node->requires_grad; }

  double item() const;                    // scalar tensors only
  double at(std::initializer_list<int> idx) const;

  Tensor& set_name(std::string name) {
    node->name = std::move(name);
    return *this;
  }
  const std::string& name() const { return node->name; }

  void zero_grad() {
    if (!node->grad.empty()) std::fill(node->grad.begin(), node->grad.end(), 0.0);
  }

  std::shared_ptr<detail::TensorNode> node;
};

// ---- graph ops -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

// x:[N] or [B x N], w:[N x H], b:[H] -> [H] or [B x H]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Narrow/valid convolution: input [m x d], kernels [F x k x d], bias [F]
// -> [(m-k+1) x F]. Summation order matches the plain index-loop form.
Tensor conv1d(const Tensor& input, const Tensor& kernels, const Tensor& bias);

// Same output layout but one kernel slice per window position:
// kernels_per_position [(m-k+1) x F x k x d].
Tensor positionwise_conv1d(const Tensor& input,
                           const Tensor& kernels_per_position,
                           const Tensor& bias);

// input [t x F] -> [F]; ties route the gradient to the first max row.
Tensor max_pool_over_time(const Tensor& input);

// Elementwise with right-aligned broadcasting (trailing dims match or are 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& x);
Tensor clamp01(const Tensor& x);

// Inverted dropout: train scales kept units by 1/(1-p); eval is identity.
Tensor dropout(const Tensor& x, double p, bool train_mode, Rng& rng);

// Row-stable softmax / log-softmax over the last dimension of a 1-d or
// 2-d tensor.
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  void init(int features) {
    running_mean.assign(static_cast<std::size_t>(features), 0.0);
    running_var.assign(static_cast<std::size_t>(features), 1.0);
  }
};

// x [B x C] (or [C], treated as one row). Train mode normalizes with batch
// statistics and updates the running state; eval mode reads the state.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool train_mode,
                  double momentum = 0.1, double eps = 1e-5);

// log_probs [B x C] (or [C]) against integer labels; mean negative
// log-likelihood.
Tensor nll_loss(const Tensor& log_probs, std::span<const int> labels);

// cos(u, v) with the zero-vector convention: if either norm is zero the
// result is 0 and no gradient flows.
Tensor cosine(const Tensor& u, const Tensor& v);

Tensor sum(const Tensor& x);
Tensor average(std::span<const Tensor> parts);   // same-shape mean
Tensor concat(std::span<const Tensor> parts);    // 1-d concatenation
Tensor stack(std::span<const Tensor> parts);     // new leading axis

Tensor reshape(const Tensor& x, Shape shape);    // same element count
Tensor row(const Tensor& x, int i);              // [m x d] -> [d]

// table [V x d] -> [ids.size() x d]; gradient accumulates into looked-up
// rows only. frozen_row (if >= 0) receives no gradient; the embedding
// layer freezes the pad row this way.
Tensor lookup_rows(const Tensor& table, std::span<const int> ids,
                   int frozen_row = -1);

// Reverse pass from a scalar loss. Errors on non-scalar input and on a
// second call over the same graph.
void backward(const Tensor& loss);

// p <- p - lr * grad for every parameter, then zeroes the grads.
// A parameter with no populated gradient is an error naming it.
void sgd_step(std::span<Tensor> params, double lr);

}  // namespace samcnn
