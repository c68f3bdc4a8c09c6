#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "simmtm/errors.hpp"

namespace simmtm {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixMap = Eigen::Map<RowMatrix>;
using ConstRowMatrixMap = Eigen::Map<const RowMatrix>;

Index numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  Eigen::VectorXd value;
  Eigen::VectorXd grad;  // empty until first touched by backward
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs that require it.
  std::function<void(Node&)> backward;

  Eigen::VectorXd& grad_buffer() {
    if (grad.size() != value.size()) grad = Eigen::VectorXd::Zero(value.size());
    return grad;
  }
};

}  // namespace detail

// Dense row-major float64 tensor with reverse-mode differentiation.
//
// A Tensor is a cheap handle; copies share the same node. Operations build
// a graph only when at least one input requires a gradient and grad mode
// is enabled (see NoGradGuard).
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor from_vector(Shape shape, const Eigen::VectorXd& values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  Index dim(int axis) const;
  int rank() const { return static_cast<int>(shape().size()); }
  Index numel() const { return node_->value.size(); }

  const Eigen::VectorXd& values() const { return node_->value; }
  // Direct write access to a leaf's storage (optimizer steps, perturbation).
  Eigen::VectorXd& mutable_values();
  double item() const;
  double at(std::initializer_list<Index> index) const;
  ConstRowMatrixMap matrix() const;  // rank-2 view

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const { return node_->is_leaf; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  // Gradient buffer; zeros when backward has not reached this tensor.
  Eigen::VectorXd grad() const;
  void zero_grad();

  Tensor detach() const;
  Tensor clone() const;

  // Seeds d(this)/d(this) = 1 and propagates to every reachable leaf.
  // Leaf gradients accumulate across calls until zero_grad().
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph construction in the current thread while alive.
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

// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, double b) { return add(a, -b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator/(const Tensor& a, double b) { return mul(a, 1.0 / b); }
Tensor operator-(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form
Tensor clamp_min(const Tensor& a, double floor);

// Reductions. `axis` accepts negative values counted from the back.
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis, bool keepdim = false);

// a[..., m, k] x b[k, n] (shared right operand) or a[B..., m, k] x
// b[B..., k, n] (matching leading dimensions).
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& order);
Tensor transpose(const Tensor& a, int axis0, int axis1);
Tensor transpose(const Tensor& a);  // rank-2
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, Index start, Index length);
// Selects entries of axis 0.
Tensor index_select(const Tensor& a, std::span<const Index> rows);

Tensor softmax(const Tensor& a, int axis = -1);
Tensor log_softmax(const Tensor& a, int axis = -1);
// Softmax over the last axis restricted to entries where `include` is
// nonzero; excluded entries come out as exactly 0. `include` has a.numel()
// entries and every row must include at least one entry.
Tensor masked_softmax(const Tensor& a, std::span<const std::uint8_t> include);
Tensor masked_log_softmax(const Tensor& a, std::span<const std::uint8_t> include);

// Normalizes over the last axis with population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Same-padded stride-1 convolution over time. x[B, L, Cin], weight[K, Cin, Cout],
// bias[Cout] -> [B, L, Cout].
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);

}  // namespace simmtm
