// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace moemoe {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Thrown when operand extents are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first touched by backward/zero_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major f64 array participating in a dynamic reverse-mode tape.
///
/// A Tensor is a handle: copies refer to the same storage and graph node.
/// Use clone() for an independent deep copy of the values.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  /// Allocates (if needed) and zeroes the gradient buffer.
  void zero_grad();
  /// Drops the gradient buffer entirely.
  void clear_grad();

  Tensor detach() const;
  Tensor clone() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Boolean attention mask; allowed[r * cols + c] != 0 means query r may see key c.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;

  static Mask all(std::size_t rows, std::size_t cols);
  static Mask causal(std::size_t n);
  static Mask key_padding(std::size_t rows, const std::vector<std::uint8_t>& key_valid);
  bool ok(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

// Elementwise and shape ops. All are differentiable unless noted.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor relu(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);

/// x[m x n] + bias[n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// x[m x n] with row r scaled by w[r].
Tensor mul_rows(const Tensor& x, const Tensor& w);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& index);
/// Places row i of x at output row index[i]; other rows are zero. Indices must be distinct.
Tensor scatter_rows(const Tensor& x, const std::vector<std::size_t>& index, std::size_t out_rows);
/// Flat-index gather into a 1-D tensor.
Tensor gather(const Tensor& x, const std::vector<std::size_t>& flat_index);
Tensor column(const Tensor& x, std::size_t col);

Tensor softmax(const Tensor& x, std::size_t axis);
/// Row softmax of a 2-D tensor with disallowed entries given zero weight.
Tensor masked_softmax(const Tensor& x, const Mask& mask);
Tensor layer_norm(const Tensor& x, const Tensor& gain, double eps = 1e-6);

/// Mean NLL over the positions whose target differs from pad_id.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int pad_id);

/// Reverse pass from a scalar. Leaf gradients accumulate across calls.
void backward(const Tensor& loss);

}  // namespace moemoe
