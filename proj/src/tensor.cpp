// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moemoe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>
#include <utility>

#include <fmt/format.h>

namespace moemoe {

using detail::Node;

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return node;
}

// Builds an op result; records the tape entry only when some input needs grad.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> fn) {
  auto node = new_node(std::move(shape), std::move(data));
  if (g_grad_enabled) {
    bool any = false;
    for (const Tensor* t : inputs) any = any || t->requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const Tensor* t : inputs) node->parents.push_back(t->node_ptr());
      node->backward_fn = std::move(fn);
    }
  }
  return Tensor(std::move(node));
}

Tensor make_result_n(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                     std::function<void(Node&)> fn) {
  auto node = new_node(std::move(shape), std::move(data));
  if (g_grad_enabled) {
    bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const Tensor& t : inputs) node->parents.push_back(t.node_ptr());
      node->backward_fn = std::move(fn);
    }
  }
  return Tensor(std::move(node));
}

// Returns the parent's grad buffer, or nullptr when it does not need one.
std::vector<double>* pgrad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  return &p.ensure_grad();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(fmt::format("{}: shape mismatch {} vs {}", op, shape_str(a.shape()), shape_str(b.shape())));
  }
}

void require_2d(const Tensor& a, const char* op) {
  if (a.dim() != 2) throw DimensionError(fmt::format("{}: expected 2-D tensor, got {}", op, shape_str(a.shape())));
}

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& a, Fwd fwd, Bwd dfdx) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  return make_result(a.shape(), std::move(out), {&a}, [dfdx](Node& self) {
    auto* g = pgrad(self, 0);
    if (!g) return;
    const auto& x = self.parents[0]->data;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * dfdx(x[i], self.data[i]);
  });
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError(fmt::format("tensor data length {} does not match shape {}", values.size(), shape_str(shape)));
  }
  auto node = new_node(std::move(shape), std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::extent(std::size_t axis) const { return node_->shape.at(axis); }
std::size_t Tensor::numel() const { return node_->data.size(); }
std::size_t Tensor::rows() const { return node_->shape.at(0); }
std::size_t Tensor::cols() const { return node_->shape.size() > 1 ? node_->shape.at(1) : 1; }
std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }
std::vector<double> Tensor::to_vector() const { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t i) const { return node_->data.at(i); }
double Tensor::at(std::size_t r, std::size_t c) const { return node_->data.at(r * cols() + c); }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool value) { node_->requires_grad = value; }
bool Tensor::has_grad() const { return node_->grad.size() == node_->data.size(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->grad; }
void Tensor::zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }
void Tensor::clear_grad() {
  node_->grad.clear();
  node_->grad.shrink_to_fit();
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }
Tensor Tensor::clone() const {
  Tensor t = from(shape(), node_->data, node_->requires_grad);
  return t;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Mask

Mask Mask::all(std::size_t rows, std::size_t cols) { return Mask{rows, cols, std::vector<std::uint8_t>(rows * cols, 1)}; }

Mask Mask::causal(std::size_t n) {
  Mask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c <= r; ++c) m.allowed[r * n + c] = 1;
  return m;
}

Mask Mask::key_padding(std::size_t rows, const std::vector<std::uint8_t>& key_valid) {
  Mask m{rows, key_valid.size(), {}};
  m.allowed.reserve(rows * key_valid.size());
  for (std::size_t r = 0; r < rows; ++r) m.allowed.insert(m.allowed.end(), key_valid.begin(), key_valid.end());
  return m;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = pgrad(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    if (auto* g = pgrad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = pgrad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const auto& x = self.parents[0]->data;
    const auto& y = self.parents[1]->data;
    if (auto* g = pgrad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * y[i];
    if (auto* g = pgrad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * x[i];
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const auto& y = self.parents[1]->data;
    if (auto* g = pgrad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] / y[i];
    if (auto* g = pgrad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i] * self.data[i] / y[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sqrt(const Tensor& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_bias");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.numel() != n) {
    throw DimensionError(fmt::format("add_bias: bias {} does not match {}", shape_str(bias.shape()), shape_str(x.shape())));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  auto b = bias.data();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += b[c];
  return make_result(x.shape(), std::move(out), {&x, &bias}, [m, n](Node& self) {
    if (auto* g = pgrad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = pgrad(self, 1))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) (*g)[c] += self.grad[r * n + c];
  });
}

Tensor mul_rows(const Tensor& x, const Tensor& w) {
  require_2d(x, "mul_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (w.numel() != m) {
    throw DimensionError(fmt::format("mul_rows: weights {} do not match {}", shape_str(w.shape()), shape_str(x.shape())));
  }
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x.data()[r * n + c] * w.data()[r];
  return make_result(x.shape(), std::move(out), {&x, &w}, [m, n](Node& self) {
    const auto& xv = self.parents[0]->data;
    const auto& wv = self.parents[1]->data;
    if (auto* g = pgrad(self, 0))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) (*g)[r * n + c] += self.grad[r * n + c] * wv[r];
    if (auto* g = pgrad(self, 1))
      for (std::size_t r = 0; r < m; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < n; ++c) acc += self.grad[r * n + c] * xv[r * n + c];
        (*g)[r] += acc;
      }
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({1}, {s}, {&a}, [](Node& self) {
    if (auto* g = pgrad(self, 0))
      for (double& v : *g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    throw DimensionError(fmt::format("dot: length mismatch {} vs {}", shape_str(a.shape()), shape_str(b.shape())));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.data()[i] * b.data()[i];
  return make_result({1}, {s}, {&a, &b}, [](Node& self) {
    const auto& x = self.parents[0]->data;
    const auto& y = self.parents[1]->data;
    const double g0 = self.grad[0];
    if (auto* g = pgrad(self, 0))
      for (std::size_t i = 0; i < x.size(); ++i) (*g)[i] += g0 * y[i];
    if (auto* g = pgrad(self, 1))
      for (std::size_t i = 0; i < x.size(); ++i) (*g)[i] += g0 * x[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and shape

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.cols() != b.rows()) {
    throw DimensionError(fmt::format("matmul: incompatible shapes {} and {}", shape_str(a.shape()), shape_str(b.shape())));
  }
  const std::size_t m = a.rows(), p = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = A[i * p + k];
      const double* brow = B + k * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aik * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {&a, &b}, [m, p, n](Node& self) {
    const double* A = self.parents[0]->data.data();
    const double* B = self.parents[1]->data.data();
    const double* G = self.grad.data();
    if (auto* ga = pgrad(self, 0)) {
      double* dA = ga->data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < p; ++k) {
          const double* grow = G + i * n;
          const double* brow = B + k * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          dA[i * p + k] += acc;
        }
    }
    if (auto* gb = pgrad(self, 1)) {
      double* dB = gb->data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < p; ++k) {
          const double aik = A[i * p + k];
          const double* grow = G + i * n;
          double* drow = dB + k * n;
          for (std::size_t j = 0; j < n; ++j) drow[j] += aik * grow[j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c * m + r] = a.data()[r * n + c];
  return make_result({n, m}, std::move(out), {&a}, [m, n](Node& self) {
    if (auto* g = pgrad(self, 0))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) (*g)[r * n + c] += self.grad[c * m + r];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError(fmt::format("reshape: cannot view {} as {}", shape_str(a.shape()), shape_str(shape)));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {&a}, [](Node& self) {
    if (auto* g = pgrad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_2d(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (count == 0 || start + count > n) {
    throw DimensionError(fmt::format("slice_cols: [{}, {}) out of range for {}", start, start + count, shape_str(x.shape())));
  }
  std::vector<double> out(m * count);
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(x.data().data() + r * n + start, count, out.data() + r * count);
  return make_result({m, count}, std::move(out), {&x}, [m, n, start, count](Node& self) {
    if (auto* g = pgrad(self, 0))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < count; ++c) (*g)[r * n + start + c] += self.grad[r * count + c];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != m) throw DimensionError("concat_cols: row count mismatch " + shape_str(p.shape()));
    widths.push_back(p.cols());
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(parts[k].data().data() + r * widths[k], widths[k], out.data() + r * n + off);
    off += widths[k];
  }
  return make_result_n({m, n}, std::move(out), parts, [m, n, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (auto* g = pgrad(self, k))
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) (*g)[r * widths[k] + c] += self.grad[r * n + off + c];
      off += widths[k];
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  require_2d(x, "slice_rows");
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), start);
  if (count == 0 || start + count > x.rows()) {
    throw DimensionError(fmt::format("slice_rows: [{}, {}) out of range for {}", start, start + count, shape_str(x.shape())));
  }
  return gather_rows(x, idx);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    require_2d(p, "concat_rows");
    if (p.cols() != n) throw DimensionError("concat_rows: column count mismatch " + shape_str(p.shape()));
    m += p.rows();
    sizes.push_back(p.numel());
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result_n({m, n}, std::move(out), parts, [sizes](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (auto* g = pgrad(self, k))
        for (std::size_t i = 0; i < sizes[k]; ++i) (*g)[i] += self.grad[off + i];
      off += sizes[k];
    }
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& index) {
  require_2d(x, "gather_rows");
  const std::size_t n = x.cols();
  if (index.empty()) throw DimensionError("gather_rows: empty index");
  std::vector<double> out(index.size() * n);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= x.rows()) {
      throw DimensionError(fmt::format("gather_rows: row {} out of range for {}", index[r], shape_str(x.shape())));
    }
    std::copy_n(x.data().data() + index[r] * n, n, out.data() + r * n);
  }
  return make_result({index.size(), n}, std::move(out), {&x}, [index, n](Node& self) {
    if (auto* g = pgrad(self, 0))
      for (std::size_t r = 0; r < index.size(); ++r)
        for (std::size_t c = 0; c < n; ++c) (*g)[index[r] * n + c] += self.grad[r * n + c];
  });
}

Tensor scatter_rows(const Tensor& x, const std::vector<std::size_t>& index, std::size_t out_rows) {
  require_2d(x, "scatter_rows");
  const std::size_t n = x.cols();
  if (index.size() != x.rows()) throw DimensionError("scatter_rows: index length does not match rows");
  std::vector<double> out(out_rows * n, 0.0);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= out_rows) throw DimensionError("scatter_rows: destination row out of range");
    std::copy_n(x.data().data() + r * n, n, out.data() + index[r] * n);
  }
  return make_result({out_rows, n}, std::move(out), {&x}, [index, n](Node& self) {
    if (auto* g = pgrad(self, 0))
      for (std::size_t r = 0; r < index.size(); ++r)
        for (std::size_t c = 0; c < n; ++c) (*g)[r * n + c] += self.grad[index[r] * n + c];
  });
}

Tensor gather(const Tensor& x, const std::vector<std::size_t>& flat_index) {
  if (flat_index.empty()) throw DimensionError("gather: empty index");
  std::vector<double> out(flat_index.size());
  for (std::size_t i = 0; i < flat_index.size(); ++i) {
    if (flat_index[i] >= x.numel()) throw DimensionError("gather: index out of range for " + shape_str(x.shape()));
    out[i] = x.data()[flat_index[i]];
  }
  return make_result({flat_index.size()}, std::move(out), {&x}, [flat_index](Node& self) {
    if (auto* g = pgrad(self, 0))
      for (std::size_t i = 0; i < flat_index.size(); ++i) (*g)[flat_index[i]] += self.grad[i];
  });
}

Tensor column(const Tensor& x, std::size_t col) {
  require_2d(x, "column");
  if (col >= x.cols()) throw DimensionError("column: index out of range for " + shape_str(x.shape()));
  std::vector<std::size_t> idx(x.rows());
  for (std::size_t r = 0; r < idx.size(); ++r) idx[r] = r * x.cols() + col;
  return gather(x, idx);
}

// ---------------------------------------------------------------------------
// Normalizations and losses

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.dim()) throw DimensionError(fmt::format("softmax: axis {} invalid for {}", axis, shape_str(x.shape())));
  const auto& sh = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
  for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
  const std::size_t len = sh[axis];
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * len * inner + j;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < len; ++t) mx = std::max(mx, in[base + t * inner]);
      double z = 0.0;
      for (std::size_t t = 0; t < len; ++t) {
        double e = std::exp(in[base + t * inner] - mx);
        out[base + t * inner] = e;
        z += e;
      }
      for (std::size_t t = 0; t < len; ++t) out[base + t * inner] /= z;
    }
  return make_result(sh, std::move(out), {&x}, [outer, inner, len](Node& self) {
    auto* g = pgrad(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t base = o * len * inner + j;
        double s = 0.0;
        for (std::size_t t = 0; t < len; ++t) s += self.grad[base + t * inner] * self.data[base + t * inner];
        for (std::size_t t = 0; t < len; ++t) {
          const std::size_t i = base + t * inner;
          (*g)[i] += self.data[i] * (self.grad[i] - s);
        }
      }
  });
}

Tensor masked_softmax(const Tensor& x, const Mask& mask) {
  require_2d(x, "masked_softmax");
  const std::size_t m = x.rows(), n = x.cols();
  if (mask.rows != m || mask.cols != n) {
    throw DimensionError(fmt::format("masked_softmax: mask [{}x{}] does not match {}", mask.rows, mask.cols, shape_str(x.shape())));
  }
  std::vector<double> out(m * n, 0.0);
  auto in = x.data();
  for (std::size_t r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c)
      if (mask.ok(r, c)) mx = std::max(mx, in[r * n + c]);
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw std::invalid_argument(fmt::format("masked_softmax: row {} has no attendable position", r));
    }
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c)
      if (mask.ok(r, c)) {
        out[r * n + c] = std::exp(in[r * n + c] - mx);
        z += out[r * n + c];
      }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= z;
  }
  return make_result({m, n}, std::move(out), {&x}, [m, n](Node& self) {
    auto* g = pgrad(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < m; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) s += self.grad[r * n + c] * self.data[r * n + c];
      for (std::size_t c = 0; c < n; ++c) {
        const std::size_t i = r * n + c;
        (*g)[i] += self.data[i] * (self.grad[i] - s);
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, double eps) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d) {
    throw DimensionError(fmt::format("layer_norm: gain {} does not match {}", shape_str(gain.shape()), shape_str(x.shape())));
  }
  const std::size_t m = x.numel() / d;
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(m);
  auto in = x.data();
  auto gv = gain.data();
  for (std::size_t r = 0; r < m; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += in[r * d + c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (in[r * d + c] - mu) * (in[r * d + c] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (in[r * d + c] - mu) * inv;
      (*xhat)[r * d + c] = h;
      out[r * d + c] = h * gv[c];
    }
  }
  return make_result(x.shape(), std::move(out), {&x, &gain}, [m, d, xhat, inv_std](Node& self) {
    const auto& gv = self.parents[1]->data;
    if (auto* gx = pgrad(self, 0)) {
      std::vector<double> dh(d);
      for (std::size_t r = 0; r < m; ++r) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          dh[c] = self.grad[r * d + c] * gv[c];
          mean_dh += dh[c];
          mean_dh_h += dh[c] * (*xhat)[r * d + c];
        }
        mean_dh /= static_cast<double>(d);
        mean_dh_h /= static_cast<double>(d);
        for (std::size_t c = 0; c < d; ++c)
          (*gx)[r * d + c] += (*inv_std)[r] * (dh[c] - mean_dh - (*xhat)[r * d + c] * mean_dh_h);
      }
    }
    if (auto* gg = pgrad(self, 1))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < d; ++c) (*gg)[c] += self.grad[r * d + c] * (*xhat)[r * d + c];
  });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int pad_id) {
  require_2d(logits, "cross_entropy");
  const std::size_t T = logits.rows(), V = logits.cols();
  if (targets.size() != T) {
    throw DimensionError(fmt::format("cross_entropy: {} targets for logits {}", targets.size(), shape_str(logits.shape())));
  }
  auto probs = std::make_shared<std::vector<double>>(T * V, 0.0);
  double loss = 0.0;
  std::size_t count = 0;
  auto in = logits.data();
  for (std::size_t t = 0; t < T; ++t) {
    if (targets[t] == pad_id) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= V) {
      throw std::invalid_argument(fmt::format("cross_entropy: target {} at position {} outside [0, {})", targets[t], t, V));
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < V; ++v) mx = std::max(mx, in[t * V + v]);
    double z = 0.0;
    for (std::size_t v = 0; v < V; ++v) z += std::exp(in[t * V + v] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t v = 0; v < V; ++v) (*probs)[t * V + v] = std::exp(in[t * V + v] - lse);
    loss += lse - in[t * V + static_cast<std::size_t>(targets[t])];
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: every target position is padding");
  const double inv = 1.0 / static_cast<double>(count);
  return make_result({1}, {loss * inv}, {&logits}, [T, V, inv, probs, targets, pad_id](Node& self) {
    auto* g = pgrad(self, 0);
    if (!g) return;
    const double g0 = self.grad[0] * inv;
    for (std::size_t t = 0; t < T; ++t) {
      if (targets[t] == pad_id) continue;
      for (std::size_t v = 0; v < V; ++v) (*g)[t * V + v] += g0 * (*probs)[t * V + v];
      (*g)[t * V + static_cast<std::size_t>(targets[t])] -= g0;
    }
  });
}

// ---------------------------------------------------------------------------
// Reverse pass

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("backward: loss must be a scalar, got " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->is_leaf())
      n->ensure_grad();
    else
      n->grad.assign(n->data.size(), 0.0);
  }
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
  }
}

}  // namespace moemoe
