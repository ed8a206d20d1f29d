#include "samcnn/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace samcnn {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

using NodePtr = std::shared_ptr<detail::TensorNode>;

Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<NodePtr> parents,
                   std::function<void(detail::TensorNode&)> bwd) {
  Tensor t;
  t.node = std::make_shared<detail::TensorNode>();
  t.node->shape = std::move(shape);
  t.node->data = std::move(data);
  bool req = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) req = req || (p && p->requires_grad);
  }
  t.node->requires_grad = req;
  if (req) {
    t.node->parents = std::move(parents);
    t.node->backward_fn = std::move(bwd);
  }
  return t;
}

[[noreturn]] void shape_error(const std::string& msg) {
  throw std::invalid_argument(msg);
}

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) shape_error(std::string(op) + ": undefined tensor operand");
}

// Right-aligned broadcast strides: dims of size 1 (or missing on the left)
// get stride 0 against the output shape.
std::vector<std::size_t> bcast_strides(const Shape& shape, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t run = 1;
  std::size_t off = out.size() - shape.size();
  for (std::size_t r = shape.size(); r-- > 0;) {
    strides[off + r] = (shape[r] == 1) ? 0 : run;
    run *= static_cast<std::size_t>(shape[r]);
  }
  for (std::size_t r = 0; r < out.size(); ++r) {
    if (out[r] == 1) strides[r] = 0;
  }
  return strides;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t r = 0; r < rank; ++r) {
    const int da = r < rank - a.size() ? 1 : a[r - (rank - a.size())];
    const int db = r < rank - b.size() ? 1 : b[r - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      shape_error(std::string(op) + ": shapes " + shape_str(a) + " and " +
                  shape_str(b) + " are not broadcast-compatible");
    }
    out[r] = std::max(da, db);
  }
  return out;
}

template <typename F>
void for_each_broadcast(const Shape& out_shape,
                        const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& fn) {
  const std::size_t total = shape_size(out_shape);
  const std::size_t rank = out_shape.size();
  if (rank == 0) {
    if (total) fn(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    fn(flat, ia, ib);
    for (std::size_t r = rank; r-- > 0;) {
      ++idx[r];
      ia += sa[r];
      ib += sb[r];
      if (idx[r] < static_cast<std::size_t>(out_shape[r])) break;
      ia -= sa[r] * idx[r];
      ib -= sb[r] * idx[r];
      idx[r] = 0;
    }
  }
}

enum class BinKind { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind,
                 const char* opname) {
  check_defined(a, opname);
  check_defined(b, opname);
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), opname);
  const auto sa = bcast_strides(a.shape(), out_shape);
  const auto sb = bcast_strides(b.shape(), out_shape);

  std::vector<double> out(shape_size(out_shape));
  const double* pa = a.node->data.data();
  const double* pb = b.node->data.data();
  switch (kind) {
    case BinKind::Add:
      for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
        out[o] = pa[i] + pb[j];
      });
      break;
    case BinKind::Sub:
      for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
        out[o] = pa[i] - pb[j];
      });
      break;
    case BinKind::Mul:
      for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
        out[o] = pa[i] * pb[j];
      });
      break;
  }

  NodePtr an = a.node, bn = b.node;
  Shape oshape = out_shape;
  return make_result(
      out_shape, std::move(out), {an, bn},
      [an, bn, sa, sb, oshape, kind](detail::TensorNode& self) {
        const double* g = self.grad.data();
        const bool da = an->requires_grad;
        const bool db = bn->requires_grad;
        if (da) an->ensure_grad();
        if (db) bn->ensure_grad();
        switch (kind) {
          case BinKind::Add:
            for_each_broadcast(oshape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
              if (da) an->grad[i] += g[o];
              if (db) bn->grad[j] += g[o];
            });
            break;
          case BinKind::Sub:
            for_each_broadcast(oshape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
              if (da) an->grad[i] += g[o];
              if (db) bn->grad[j] -= g[o];
            });
            break;
          case BinKind::Mul:
            for_each_broadcast(oshape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
              if (da) an->grad[i] += g[o] * bn->data[j];
              if (db) bn->grad[j] += g[o] * an->data[i];
            });
            break;
        }
      });
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (int d : shape) {
    if (d <= 0) shape_error("tensor shape must have positive dims, got " + shape_str(shape));
  }
  Tensor t;
  t.node = std::make_shared<detail::TensorNode>();
  t.node->data.assign(shape_size(shape), value);
  t.node->shape = std::move(shape);
  t.node->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    shape_error("tensor data length " + std::to_string(values.size()) +
                " does not match shape " + shape_str(shape));
  }
  Tensor t;
  t.node = std::make_shared<detail::TensorNode>();
  t.node->shape = std::move(shape);
  t.node->data = std::move(values);
  t.node->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng,
                       bool requires_grad) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return from(std::move(shape), std::move(v), requires_grad);
}

double Tensor::item() const {
  if (size() != 1) {
    shape_error("item(): tensor is not scalar, shape " + shape_str(shape()));
  }
  return node->data[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  const Shape& s = node->shape;
  if (idx.size() != s.size()) shape_error("at(): rank mismatch");
  std::size_t off = 0;
  std::size_t r = 0;
  for (int i : idx) {
    off = off * static_cast<std::size_t>(s[r]) + static_cast<std::size_t>(i);
    ++r;
  }
  return node->data[off];
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    shape_error("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  CMapMat A(a.node->data.data(), m, k);
  CMapMat B(b.node->data.data(), k, n);
  MapMat(out.data(), m, n).noalias() = A * B;

  NodePtr an = a.node, bn = b.node;
  return make_result(
      {m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](detail::TensorNode& self) {
        CMapMat G(self.grad.data(), m, n);
        CMapMat A(an->data.data(), m, k);
        CMapMat B(bn->data.data(), k, n);
        if (an->requires_grad) {
          an->ensure_grad();
          MapMat(an->grad.data(), m, k).noalias() += G * B.transpose();
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          MapMat(bn->grad.data(), k, n).noalias() += A.transpose() * G;
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_defined(x, "linear");
  check_defined(w, "linear");
  check_defined(b, "linear");
  if (w.ndim() != 2 || b.ndim() != 1 || b.dim(0) != w.dim(1)) {
    shape_error("linear: weight " + shape_str(w.shape()) + " and bias " +
                shape_str(b.shape()) + " are inconsistent");
  }
  const bool batched = x.ndim() == 2;
  if ((batched ? x.dim(1) : x.dim(0)) != w.dim(0)) {
    shape_error("linear: input " + shape_str(x.shape()) + " does not match weight " +
                shape_str(w.shape()));
  }
  const int B = batched ? x.dim(0) : 1;
  const int N = w.dim(0), H = w.dim(1);
  std::vector<double> out(static_cast<std::size_t>(B) * H);
  {
    CMapMat X(x.node->data.data(), B, N);
    CMapMat W(w.node->data.data(), N, H);
    MapMat O(out.data(), B, H);
    O.noalias() = X * W;
    O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.node->data.data(), H);
  }
  Shape oshape = batched ? Shape{B, H} : Shape{H};
  NodePtr xn = x.node, wn = w.node, bn = b.node;
  return make_result(
      std::move(oshape), std::move(out), {xn, wn, bn},
      [xn, wn, bn, B, N, H](detail::TensorNode& self) {
        CMapMat G(self.grad.data(), B, H);
        CMapMat X(xn->data.data(), B, N);
        CMapMat W(wn->data.data(), N, H);
        if (xn->requires_grad) {
          xn->ensure_grad();
          MapMat(xn->grad.data(), B, N).noalias() += G * W.transpose();
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          MapMat(wn->grad.data(), N, H).noalias() += X.transpose() * G;
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          Eigen::Map<Eigen::RowVectorXd>(bn->grad.data(), H) += G.colwise().sum();
        }
      });
}

Tensor conv1d(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  check_defined(input, "conv1d");
  check_defined(kernels, "conv1d");
  check_defined(bias, "conv1d");
  if (input.ndim() != 2 || kernels.ndim() != 3) {
    shape_error("conv1d: expected input [m x d] and kernels [F x k x d], got " +
                shape_str(input.shape()) + " and " + shape_str(kernels.shape()));
  }
  const int m = input.dim(0), d = input.dim(1);
  const int F = kernels.dim(0), k = kernels.dim(1);
  if (kernels.dim(2) != d) {
    shape_error("conv1d: kernel depth mismatch, input " + shape_str(input.shape()) +
                " vs kernels " + shape_str(kernels.shape()));
  }
  if (bias.ndim() != 1 || bias.dim(0) != F) {
    shape_error("conv1d: bias " + shape_str(bias.shape()) + " does not match F=" +
                std::to_string(F));
  }
  if (m < k) {
    shape_error("conv1d: input length m=" + std::to_string(m) +
                " is shorter than kernel window k=" + std::to_string(k) +
                "; pad the sequence to at least k tokens first");
  }
  const int P = m - k + 1;
  const int kd = k * d;
  std::vector<double> out(static_cast<std::size_t>(P) * F);
  {
    const double* in = input.node->data.data();
    const double* ker = kernels.node->data.data();
    const double* bs = bias.node->data.data();
    for (int j = 0; j < P; ++j) {
      const double* window = in + static_cast<std::size_t>(j) * d;
      for (int f = 0; f < F; ++f) {
        const double* kf = ker + static_cast<std::size_t>(f) * kd;
        double acc = bs[f];
        for (int t = 0; t < kd; ++t) acc += kf[t] * window[t];
        out[static_cast<std::size_t>(j) * F + f] = acc;
      }
    }
  }
  NodePtr in_n = input.node, ker_n = kernels.node, b_n = bias.node;
  return make_result(
      {P, F}, std::move(out), {in_n, ker_n, b_n},
      [in_n, ker_n, b_n, P, F, kd, d](detail::TensorNode& self) {
        const double* g = self.grad.data();
        if (b_n->requires_grad) {
          b_n->ensure_grad();
          for (int j = 0; j < P; ++j)
            for (int f = 0; f < F; ++f)
              b_n->grad[f] += g[static_cast<std::size_t>(j) * F + f];
        }
        if (ker_n->requires_grad) {
          ker_n->ensure_grad();
          for (int j = 0; j < P; ++j) {
            const double* window = in_n->data.data() + static_cast<std::size_t>(j) * d;
            for (int f = 0; f < F; ++f) {
              const double gj = g[static_cast<std::size_t>(j) * F + f];
              double* kg = ker_n->grad.data() + static_cast<std::size_t>(f) * kd;
              for (int t = 0; t < kd; ++t) kg[t] += gj * window[t];
            }
          }
        }
        if (in_n->requires_grad) {
          in_n->ensure_grad();
          for (int j = 0; j < P; ++j) {
            double* wg = in_n->grad.data() + static_cast<std::size_t>(j) * d;
            for (int f = 0; f < F; ++f) {
              const double gj = g[static_cast<std::size_t>(j) * F + f];
              const double* kf = ker_n->data.data() + static_cast<std::size_t>(f) * kd;
              for (int t = 0; t < kd; ++t) wg[t] += gj * kf[t];
            }
          }
        }
      });
}

Tensor positionwise_conv1d(const Tensor& input, const Tensor& kernels_per_position,
                           const Tensor& bias) {
  check_defined(input, "positionwise_conv1d");
  check_defined(kernels_per_position, "positionwise_conv1d");
  check_defined(bias, "positionwise_conv1d");
  if (input.ndim() != 2 || kernels_per_position.ndim() != 4) {
    shape_error(
        "positionwise_conv1d: expected input [m x d] and kernels [(m-k+1) x F x k x d], got " +
        shape_str(input.shape()) + " and " + shape_str(kernels_per_position.shape()));
  }
  const int m = input.dim(0), d = input.dim(1);
  const int P = kernels_per_position.dim(0);
  const int F = kernels_per_position.dim(1);
  const int k = kernels_per_position.dim(2);
  if (kernels_per_position.dim(3) != d) {
    shape_error("positionwise_conv1d: kernel depth mismatch, input " +
                shape_str(input.shape()) + " vs kernels " +
                shape_str(kernels_per_position.shape()));
  }
  if (m < k || P != m - k + 1) {
    shape_error("positionwise_conv1d: kernels carry " + std::to_string(P) +
                " positions but input of length " + std::to_string(m) +
                " with k=" + std::to_string(k) + " has " + std::to_string(m - k + 1));
  }
  if (bias.ndim() != 1 || bias.dim(0) != F) {
    shape_error("positionwise_conv1d: bias " + shape_str(bias.shape()) +
                " does not match F=" + std::to_string(F));
  }
  const int kd = k * d;
  const std::size_t slice = static_cast<std::size_t>(F) * kd;
  std::vector<double> out(static_cast<std::size_t>(P) * F);
  {
    const double* in = input.node->data.data();
    const double* ker = kernels_per_position.node->data.data();
    const double* bs = bias.node->data.data();
    for (int j = 0; j < P; ++j) {
      const double* window = in + static_cast<std::size_t>(j) * d;
      const double* kj = ker + static_cast<std::size_t>(j) * slice;
      for (int f = 0; f < F; ++f) {
        const double* kf = kj + static_cast<std::size_t>(f) * kd;
        double acc = bs[f];
        for (int t = 0; t < kd; ++t) acc += kf[t] * window[t];
        out[static_cast<std::size_t>(j) * F + f] = acc;
      }
    }
  }
  NodePtr in_n = input.node, ker_n = kernels_per_position.node, b_n = bias.node;
  return make_result(
      {P, F}, std::move(out), {in_n, ker_n, b_n},
      [in_n, ker_n, b_n, P, F, kd, d, slice](detail::TensorNode& self) {
        const double* g = self.grad.data();
        if (b_n->requires_grad) {
          b_n->ensure_grad();
          for (int j = 0; j < P; ++j)
            for (int f = 0; f < F; ++f)
              b_n->grad[f] += g[static_cast<std::size_t>(j) * F + f];
        }
        if (ker_n->requires_grad) {
          ker_n->ensure_grad();
          for (int j = 0; j < P; ++j) {
            const double* window = in_n->data.data() + static_cast<std::size_t>(j) * d;
            double* kjg = ker_n->grad.data() + static_cast<std::size_t>(j) * slice;
            for (int f = 0; f < F; ++f) {
              const double gj = g[static_cast<std::size_t>(j) * F + f];
              double* kg = kjg + static_cast<std::size_t>(f) * kd;
              for (int t = 0; t < kd; ++t) kg[t] += gj * window[t];
            }
          }
        }
        if (in_n->requires_grad) {
          in_n->ensure_grad();
          for (int j = 0; j < P; ++j) {
            double* wg = in_n->grad.data() + static_cast<std::size_t>(j) * d;
            const double* kj = ker_n->data.data() + static_cast<std::size_t>(j) * slice;
            for (int f = 0; f < F; ++f) {
              const double gj = g[static_cast<std::size_t>(j) * F + f];
              const double* kf = kj + static_cast<std::size_t>(f) * kd;
              for (int t = 0; t < kd; ++t) wg[t] += gj * kf[t];
            }
          }
        }
      });
}

Tensor max_pool_over_time(const Tensor& input) {
  check_defined(input, "max_pool_over_time");
  if (input.ndim() != 2) {
    shape_error("max_pool_over_time: expected [t x F], got " + shape_str(input.shape()));
  }
  const int t = input.dim(0), F = input.dim(1);
  if (t < 1) shape_error("max_pool_over_time: empty time axis");
  std::vector<double> out(static_cast<std::size_t>(F));
  std::vector<int> argmax(static_cast<std::size_t>(F), 0);
  const double* in = input.node->data.data();
  for (int f = 0; f < F; ++f) {
    double best = in[f];
    int best_row = 0;
    for (int r = 1; r < t; ++r) {
      const double v = in[static_cast<std::size_t>(r) * F + f];
      if (v > best) {  // strict: ties keep the first row
        best = v;
        best_row = r;
      }
    }
    out[f] = best;
    argmax[f] = best_row;
  }
  NodePtr in_n = input.node;
  return make_result({F}, std::move(out), {in_n},
                     [in_n, F, argmax](detail::TensorNode& self) {
                       if (!in_n->requires_grad) return;
                       in_n->ensure_grad();
                       for (int f = 0; f < F; ++f) {
                         in_n->grad[static_cast<std::size_t>(argmax[f]) * F + f] +=
                             self.grad[f];
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Mul, "mul"); }

Tensor scale(const Tensor& a, double c) {
  check_defined(a, "scale");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.node->data[i];
  NodePtr an = a.node;
  return make_result(a.shape(), std::move(out), {an},
                     [an, c](detail::TensorNode& self) {
                       if (!an->requires_grad) return;
                       an->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         an->grad[i] += c * self.grad[i];
                     });
}

Tensor relu(const Tensor& x) {
  check_defined(x, "relu");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x.node->data[i] > 0.0 ? x.node->data[i] : 0.0;
  NodePtr xn = x.node;
  return make_result(x.shape(), std::move(out), {xn},
                     [xn](detail::TensorNode& self) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         if (xn->data[i] > 0.0) xn->grad[i] += self.grad[i];
                     });
}

Tensor clamp01(const Tensor& x) {
  check_defined(x, "clamp01");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(1.0, std::max(0.0, x.node->data[i]));
  NodePtr xn = x.node;
  return make_result(x.shape(), std::move(out), {xn},
                     [xn](detail::TensorNode& self) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         if (xn->data[i] > 0.0 && xn->data[i] < 1.0)
                           xn->grad[i] += self.grad[i];
                     });
}

Tensor dropout(const Tensor& x, double p, bool train_mode, Rng& rng) {
  check_defined(x, "dropout");
  if (p < 0.0 || p >= 1.0) {
    shape_error("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (!train_mode || p == 0.0) return x;  // identity, same node
  const double keep = 1.0 - p;
  const double inv_keep = 1.0 / keep;
  std::vector<double> mask(x.size());
  for (double& v : mask) v = rng.uniform01() < keep ? inv_keep : 0.0;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.node->data[i] * mask[i];
  NodePtr xn = x.node;
  return make_result(x.shape(), std::move(out), {xn},
                     [xn, mask = std::move(mask)](detail::TensorNode& self) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         xn->grad[i] += self.grad[i] * mask[i];
                     });
}

namespace {

void rows_cols(const Tensor& x, const char* op, int* rows, int* cols) {
  if (x.ndim() == 1) {
    *rows = 1;
    *cols = x.dim(0);
  } else if (x.ndim() == 2) {
    *rows = x.dim(0);
    *cols = x.dim(1);
  } else {
    shape_error(std::string(op) + ": expected 1-d or 2-d tensor, got " +
                shape_str(x.shape()));
  }
}

}  // namespace

Tensor softmax_rows(const Tensor& x) {
  check_defined(x, "softmax");
  int R, C;
  rows_cols(x, "softmax", &R, &C);
  std::vector<double> out(x.size());
  const double* in = x.node->data.data();
  for (int r = 0; r < R; ++r) {
    const double* row = in + static_cast<std::size_t>(r) * C;
    double* orow = out.data() + static_cast<std::size_t>(r) * C;
    double mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (int c = 0; c < C; ++c) {
      orow[c] = std::exp(row[c] - mx);
      s += orow[c];
    }
    for (int c = 0; c < C; ++c) orow[c] /= s;
  }
  NodePtr xn = x.node;
  std::vector<double> probs = out;
  return make_result(x.shape(), std::move(out), {xn},
                     [xn, R, C, probs = std::move(probs)](detail::TensorNode& self) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (int r = 0; r < R; ++r) {
                         const std::size_t off = static_cast<std::size_t>(r) * C;
                         double dot = 0.0;
                         for (int c = 0; c < C; ++c) dot += self.grad[off + c] * probs[off + c];
                         for (int c = 0; c < C; ++c)
                           xn->grad[off + c] += probs[off + c] * (self.grad[off + c] - dot);
                       }
                     });
}

Tensor log_softmax_rows(const Tensor& x) {
  check_defined(x, "log_softmax");
  int R, C;
  rows_cols(x, "log_softmax", &R, &C);
  std::vector<double> out(x.size());
  const double* in = x.node->data.data();
  for (int r = 0; r < R; ++r) {
    const double* row = in + static_cast<std::size_t>(r) * C;
    double* orow = out.data() + static_cast<std::size_t>(r) * C;
    double mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += std::exp(row[c] - mx);
    const double lse = mx + std::log(s);
    for (int c = 0; c < C; ++c) orow[c] = row[c] - lse;
  }
  NodePtr xn = x.node;
  std::vector<double> logp = out;
  return make_result(x.shape(), std::move(out), {xn},
                     [xn, R, C, logp = std::move(logp)](detail::TensorNode& self) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (int r = 0; r < R; ++r) {
                         const std::size_t off = static_cast<std::size_t>(r) * C;
                         double gsum = 0.0;
                         for (int c = 0; c < C; ++c) gsum += self.grad[off + c];
                         for (int c = 0; c < C; ++c)
                           xn->grad[off + c] +=
                               self.grad[off + c] - std::exp(logp[off + c]) * gsum;
                       }
                     });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool train_mode, double momentum,
                  double eps) {
  check_defined(x, "batch_norm");
  check_defined(gamma, "batch_norm");
  check_defined(beta, "batch_norm");
  int B, C;
  rows_cols(x, "batch_norm", &B, &C);
  if (gamma.ndim() != 1 || gamma.dim(0) != C || beta.ndim() != 1 || beta.dim(0) != C) {
    shape_error("batch_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                shape_str(beta.shape()) + " do not match " + std::to_string(C) +
                " features");
  }
  if (state.running_mean.size() != static_cast<std::size_t>(C)) {
    shape_error("batch_norm: state holds " + std::to_string(state.running_mean.size()) +
                " features, input has " + std::to_string(C));
  }
  const double* in = x.node->data.data();
  const double* gm = gamma.node->data.data();
  const double* bt = beta.node->data.data();

  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(static_cast<std::size_t>(C));
  std::vector<double> out(x.size());

  if (train_mode) {
    for (int c = 0; c < C; ++c) {
      double mean = 0.0;
      for (int b = 0; b < B; ++b) mean += in[static_cast<std::size_t>(b) * C + c];
      mean /= B;
      double var = 0.0;
      for (int b = 0; b < B; ++b) {
        const double dv = in[static_cast<std::size_t>(b) * C + c] - mean;
        var += dv * dv;
      }
      var /= B;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      for (int b = 0; b < B; ++b) {
        const std::size_t i = static_cast<std::size_t>(b) * C + c;
        xhat[i] = (in[i] - mean) * inv_std[c];
        out[i] = gm[c] * xhat[i] + bt[c];
      }
      const double running_var_update = B > 1 ? var * B / (B - 1) : var;
      state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * mean;
      state.running_var[c] =
          (1.0 - momentum) * state.running_var[c] + momentum * running_var_update;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
      for (int b = 0; b < B; ++b) {
        const std::size_t i = static_cast<std::size_t>(b) * C + c;
        xhat[i] = (in[i] - state.running_mean[c]) * inv_std[c];
        out[i] = gm[c] * xhat[i] + bt[c];
      }
    }
  }

  NodePtr xn = x.node, gn = gamma.node, bn = beta.node;
  return make_result(
      x.shape(), std::move(out), {xn, gn, bn},
      [xn, gn, bn, B, C, train_mode, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](detail::TensorNode& self) {
        const double* g = self.grad.data();
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int b = 0; b < B; ++b) {
              const std::size_t i = static_cast<std::size_t>(b) * C + c;
              s += g[i] * xhat[i];
            }
            gn->grad[c] += s;
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int b = 0; b < B; ++b) s += g[static_cast<std::size_t>(b) * C + c];
            bn->grad[c] += s;
          }
        }
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        if (train_mode) {
          for (int c = 0; c < C; ++c) {
            double gsum = 0.0, gxhat = 0.0;
            for (int b = 0; b < B; ++b) {
              const std::size_t i = static_cast<std::size_t>(b) * C + c;
              gsum += g[i];
              gxhat += g[i] * xhat[i];
            }
            const double gmc = gn->data[c] * inv_std[c];
            for (int b = 0; b < B; ++b) {
              const std::size_t i = static_cast<std::size_t>(b) * C + c;
              xn->grad[i] += gmc * (g[i] - gsum / B - xhat[i] * gxhat / B);
            }
          }
        } else {
          for (int c = 0; c < C; ++c) {
            const double gmc = gn->data[c] * inv_std[c];
            for (int b = 0; b < B; ++b) {
              const std::size_t i = static_cast<std::size_t>(b) * C + c;
              xn->grad[i] += gmc * g[i];
            }
          }
        }
      });
}

Tensor nll_loss(const Tensor& log_probs, std::span<const int> labels) {
  check_defined(log_probs, "nll_loss");
  int B, C;
  rows_cols(log_probs, "nll_loss", &B, &C);
  if (labels.size() != static_cast<std::size_t>(B)) {
    shape_error("nll_loss: " + std::to_string(labels.size()) + " labels for " +
                std::to_string(B) + " rows");
  }
  double acc = 0.0;
  for (int b = 0; b < B; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= C) {
      shape_error("nll_loss: label " + std::to_string(y) + " out of range [0, " +
                  std::to_string(C) + ")");
    }
    acc -= log_probs.node->data[static_cast<std::size_t>(b) * C + y];
  }
  acc /= B;
  NodePtr ln = log_probs.node;
  std::vector<int> labs(labels.begin(), labels.end());
  return make_result({1}, {acc}, {ln},
                     [ln, C, labs = std::move(labs)](detail::TensorNode& self) {
                       if (!ln->requires_grad) return;
                       ln->ensure_grad();
                       const double g = self.grad[0] / static_cast<double>(labs.size());
                       for (std::size_t b = 0; b < labs.size(); ++b)
                         ln->grad[b * C + labs[b]] -= g;
                     });
}

Tensor cosine(const Tensor& u, const Tensor& v) {
  check_defined(u, "cosine");
  check_defined(v, "cosine");
  if (u.ndim() != 1 || v.ndim() != 1 || u.dim(0) != v.dim(0)) {
    shape_error("cosine: expected equal-length vectors, got " + shape_str(u.shape()) +
                " and " + shape_str(v.shape()));
  }
  const int d = u.dim(0);
  const double* pu = u.node->data.data();
  const double* pv = v.node->data.data();
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (int i = 0; i < d; ++i) {
    uu += pu[i] * pu[i];
    vv += pv[i] * pv[i];
    uv += pu[i] * pv[i];
  }
  const double nu = std::sqrt(uu);
  const double nv = std::sqrt(vv);
  if (nu == 0.0 || nv == 0.0) {
    // zero-vector convention: similarity 0, treated as a constant
    return make_result({1}, {0.0}, {}, nullptr);
  }
  const double c = uv / (nu * nv);
  NodePtr un = u.node, vn = v.node;
  return make_result(
      {1}, {c}, {un, vn}, [un, vn, d, c, nu, nv](detail::TensorNode& self) {
        const double g = self.grad[0];
        const double inv = 1.0 / (nu * nv);
        if (un->requires_grad) {
          un->ensure_grad();
          for (int i = 0; i < d; ++i)
            un->grad[i] += g * (vn->data[i] * inv - c * un->data[i] / (nu * nu));
        }
        if (vn->requires_grad) {
          vn->ensure_grad();
          for (int i = 0; i < d; ++i)
            vn->grad[i] += g * (un->data[i] * inv - c * vn->data[i] / (nv * nv));
        }
      });
}

Tensor sum(const Tensor& x) {
  check_defined(x, "sum");
  double acc = 0.0;
  for (double v : x.node->data) acc += v;
  NodePtr xn = x.node;
  return make_result({1}, {acc}, {xn}, [xn](detail::TensorNode& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (double& g : xn->grad) g += self.grad[0];
  });
}

Tensor average(std::span<const Tensor> parts) {
  if (parts.empty()) shape_error("average: no tensors given");
  const Shape& s = parts[0].shape();
  for (const Tensor& t : parts) {
    check_defined(t, "average");
    if (t.shape() != s) {
      shape_error("average: mixed shapes " + shape_str(s) + " and " +
                  shape_str(t.shape()));
    }
  }
  const double inv_n = 1.0 / static_cast<double>(parts.size());
  std::vector<double> out(shape_size(s), 0.0);
  std::vector<NodePtr> nodes;
  nodes.reserve(parts.size());
  for (const Tensor& t : parts) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += t.node->data[i];
    nodes.push_back(t.node);
  }
  for (double& v : out) v *= inv_n;
  std::vector<NodePtr> parents = nodes;
  return make_result(s, std::move(out), std::move(parents),
                     [nodes = std::move(nodes), inv_n](detail::TensorNode& self) {
                       for (const NodePtr& p : nodes) {
                         if (!p->requires_grad) continue;
                         p->ensure_grad();
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           p->grad[i] += inv_n * self.grad[i];
                       }
                     });
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) shape_error("concat: no tensors given");
  std::vector<double> out;
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> offsets;
  for (const Tensor& t : parts) {
    check_defined(t, "concat");
    if (t.ndim() != 1) {
      shape_error("concat: expected 1-d parts, got " + shape_str(t.shape()));
    }
    offsets.push_back(out.size());
    out.insert(out.end(), t.node->data.begin(), t.node->data.end());
    nodes.push_back(t.node);
  }
  const int total = static_cast<int>(out.size());
  std::vector<NodePtr> parents = nodes;
  return make_result(
      {total}, std::move(out), std::move(parents),
      [nodes = std::move(nodes), offsets = std::move(offsets)](detail::TensorNode& self) {
        for (std::size_t p = 0; p < nodes.size(); ++p) {
          if (!nodes[p]->requires_grad) continue;
          nodes[p]->ensure_grad();
          for (std::size_t i = 0; i < nodes[p]->data.size(); ++i)
            nodes[p]->grad[i] += self.grad[offsets[p] + i];
        }
      });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) shape_error("stack: no tensors given");
  const Shape& s = parts[0].shape();
  std::vector<double> out;
  std::vector<NodePtr> nodes;
  for (const Tensor& t : parts) {
    check_defined(t, "stack");
    if (t.shape() != s) {
      shape_error("stack: mixed shapes " + shape_str(s) + " and " + shape_str(t.shape()));
    }
    out.insert(out.end(), t.node->data.begin(), t.node->data.end());
    nodes.push_back(t.node);
  }
  Shape oshape;
  oshape.push_back(static_cast<int>(parts.size()));
  oshape.insert(oshape.end(), s.begin(), s.end());
  const std::size_t slice = shape_size(s);
  std::vector<NodePtr> parents = nodes;
  return make_result(std::move(oshape), std::move(out), std::move(parents),
                     [nodes = std::move(nodes), slice](detail::TensorNode& self) {
                       for (std::size_t p = 0; p < nodes.size(); ++p) {
                         if (!nodes[p]->requires_grad) continue;
                         nodes[p]->ensure_grad();
                         const double* g = self.grad.data() + p * slice;
                         for (std::size_t i = 0; i < slice; ++i)
                           nodes[p]->grad[i] += g[i];
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  check_defined(x, "reshape");
  if (shape_size(shape) != x.size()) {
    shape_error("reshape: cannot view " + shape_str(x.shape()) + " as " +
                shape_str(shape));
  }
  NodePtr xn = x.node;
  std::vector<double> out(x.node->data);
  return make_result(std::move(shape), std::move(out), {xn},
                     [xn](detail::TensorNode& self) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         xn->grad[i] += self.grad[i];
                     });
}

Tensor row(const Tensor& x, int i) {
  check_defined(x, "row");
  if (x.ndim() != 2) shape_error("row: expected 2-d tensor, got " + shape_str(x.shape()));
  const int m = x.dim(0), d = x.dim(1);
  if (i < 0 || i >= m) {
    shape_error("row: index " + std::to_string(i) + " outside " + shape_str(x.shape()));
  }
  std::vector<double> out(x.node->data.begin() + static_cast<std::size_t>(i) * d,
                          x.node->data.begin() + static_cast<std::size_t>(i + 1) * d);
  NodePtr xn = x.node;
  return make_result({d}, std::move(out), {xn},
                     [xn, i, d](detail::TensorNode& self) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       double* dst = xn->grad.data() + static_cast<std::size_t>(i) * d;
                       for (int c = 0; c < d; ++c) dst[c] += self.grad[c];
                     });
}

Tensor lookup_rows(const Tensor& table, std::span<const int> ids, int frozen_row) {
  check_defined(table, "lookup_rows");
  if (table.ndim() != 2) {
    shape_error("lookup_rows: table must be 2-d, got " + shape_str(table.shape()));
  }
  const int V = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * static_cast<std::size_t>(d));
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const int id = ids[r];
    if (id < 0 || id >= V) {
      throw std::logic_error("lookup_rows: id " + std::to_string(id) +
                             " outside vocabulary of size " + std::to_string(V) +
                             " (vocabulary construction bug)");
    }
    std::copy_n(table.node->data.begin() + static_cast<std::size_t>(id) * d, d,
                out.begin() + r * static_cast<std::size_t>(d));
  }
  NodePtr tn = table.node;
  std::vector<int> idv(ids.begin(), ids.end());
  return make_result({static_cast<int>(ids.size()), d}, std::move(out), {tn},
                     [tn, d, frozen_row, idv = std::move(idv)](detail::TensorNode& self) {
                       if (!tn->requires_grad) return;
                       tn->ensure_grad();
                       for (std::size_t r = 0; r < idv.size(); ++r) {
                         if (idv[r] == frozen_row) continue;
                         double* dst = tn->grad.data() +
                                       static_cast<std::size_t>(idv[r]) * d;
                         const double* g = self.grad.data() + r * static_cast<std::size_t>(d);
                         for (int c = 0; c < d; ++c) dst[c] += g[c];
                       }
                     });
}

void backward(const Tensor& loss) {
  check_defined(loss, "backward");
  if (loss.size() != 1) {
    shape_error("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (loss.node->backward_done) {
    throw std::runtime_error(
        "backward: graph already consumed; rebuild the forward pass before "
        "calling backward again");
  }

  // Iterative post-order DFS over parent edges.
  std::vector<detail::TensorNode*> topo;
  std::unordered_set<detail::TensorNode*> visited;
  struct Frame {
    detail::TensorNode* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stk;
  stk.push_back({loss.node.get(), 0});
  visited.insert(loss.node.get());
  while (!stk.empty()) {
    Frame& f = stk.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::TensorNode* p = f.node->parents[f.next_parent++].get();
      if (p && !visited.count(p)) {
        visited.insert(p);
        stk.push_back({p, 0});
      }
    } else {
      topo.push_back(f.node);
      stk.pop_back();
    }
  }

  loss.node->ensure_grad();
  loss.node->grad[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    detail::TensorNode* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (detail::TensorNode* n : topo) {
    n->backward_done = true;
    n->parents.clear();
    n->backward_fn = nullptr;
  }
}

void sgd_step(std::span<Tensor> params, double lr) {
  for (Tensor& p : params) {
    if (!p.defined() || !p.requires_grad()) {
      throw std::runtime_error("sgd_step: parameter '" +
                               (p.defined() ? p.name() : std::string("<undefined>")) +
                               "' is not a trainable tensor");
    }
    if (!p.has_grad()) {
      throw std::runtime_error("sgd_step: parameter '" + p.name() +
                               "' has no gradient; run backward() first");
    }
  }
  for (Tensor& p : params) {
    auto& data = p.node->data;
    auto& grad = p.node->grad;
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr * grad[i];
    std::fill(grad.begin(), grad.end(), 0.0);
  }
}

}  // namespace samcnn
