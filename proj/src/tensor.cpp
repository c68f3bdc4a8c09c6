#include "simmtm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace simmtm {

using detail::Node;

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kIngestion: return "ingestion";
    case ErrorKind::kEmptyInput: return "empty_input";
    case ErrorKind::kInsufficientData: return "insufficient_data";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kDegenerateInput: return "degenerate_input";
    case ErrorKind::kVersion: return "version";
    case ErrorKind::kShapeMismatch: return "shape_mismatch";
    case ErrorKind::kIntegrity: return "integrity";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kMissingFile: return "missing_file";
    case ErrorKind::kDivergence: return "divergence";
  }
  return "unknown";
}

Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

namespace {

thread_local bool g_grad_enabled = true;

using IndexList = std::shared_ptr<const std::vector<Index>>;

void validate_shape(const Shape& shape) {
  for (Index d : shape) {
    if (d <= 0) fail(ErrorKind::kDimension, "tensor dimensions must be positive, got " + shape_string(shape));
  }
}

void check_finite(const Eigen::VectorXd& v, const char* op) {
  if (!v.allFinite()) fail(ErrorKind::kNumeric, std::string("non-finite value produced by ") + op);
}

int normalize_axis(int axis, int rank, const char* op) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) fail(ErrorKind::kDimension, std::string(op) + ": axis out of range");
  return a;
}

// Packages an op result; wires the graph only when a gradient is needed.
Tensor finish(Shape shape, Eigen::VectorXd value, const char* op, std::initializer_list<Tensor> inputs,
              std::function<void(Node&)> backward) {
  check_finite(value, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->is_leaf = false;
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tensor finish_many(Shape shape, Eigen::VectorXd value, const char* op, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward) {
  check_finite(value, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->is_leaf = false;
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

bool wants(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    Index da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    Index db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      fail(ErrorKind::kDimension,
           std::string(op) + ": cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// For each element of `out`, the flat index of the source element it reads.
IndexList broadcast_index(const Shape& src, const Shape& out) {
  if (src == out) return nullptr;
  const std::size_t rank = out.size();
  const std::size_t offset = rank - src.size();
  std::vector<Index> stride(rank, 0);
  Index s = 1;
  for (std::size_t i = rank; i-- > offset;) {
    const Index d = src[i - offset];
    stride[i] = d == 1 ? 0 : s;
    s *= d;
  }
  auto idx = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(numel(out)));
  std::vector<Index> counter(rank, 0);
  Index pos = 0;
  for (Index j = 0; j < static_cast<Index>(idx->size()); ++j) {
    (*idx)[j] = pos;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++counter[ax];
      pos += stride[ax];
      if (counter[ax] < out[ax]) break;
      pos -= stride[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return idx;
}

Eigen::VectorXd expand(const Eigen::VectorXd& v, const IndexList& idx) {
  if (!idx) return v;
  return v(*idx);
}

void scatter_add(Eigen::VectorXd& dst, const Eigen::VectorXd& src, const IndexList& idx) {
  if (!idx) {
    dst += src;
    return;
  }
  const auto& ix = *idx;
  for (std::size_t j = 0; j < ix.size(); ++j) dst[ix[j]] += src[static_cast<Index>(j)];
}

template <class Forward, class GradA, class GradB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Forward forward, GradA grad_a, GradB grad_b) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), op);
  IndexList ia = broadcast_index(a.shape(), out_shape);
  IndexList ib = broadcast_index(b.shape(), out_shape);
  Eigen::VectorXd value = forward(expand(a.values(), ia), expand(b.values(), ib));
  return finish(std::move(out_shape), std::move(value), op, {a, b}, [ia, ib, grad_a, grad_b](Node& self) {
    const Eigen::VectorXd av = expand(self.inputs[0]->value, ia);
    const Eigen::VectorXd bv = expand(self.inputs[1]->value, ib);
    if (wants(self, 0)) scatter_add(self.inputs[0]->grad_buffer(), grad_a(self.grad, av, bv), ia);
    if (wants(self, 1)) scatter_add(self.inputs[1]->grad_buffer(), grad_b(self.grad, av, bv), ib);
  });
}

template <class Forward, class Grad>
Tensor unary(const Tensor& a, const char* op, Forward forward, Grad grad) {
  Eigen::VectorXd value = forward(a.values());
  return finish(a.shape(), std::move(value), op, {a}, [grad](Node& self) {
    if (wants(self, 0)) self.inputs[0]->grad_buffer() += grad(self.grad, self.inputs[0]->value, self.value);
  });
}

Tensor gather(const Tensor& a, Shape out_shape, IndexList idx, const char* op) {
  Eigen::VectorXd value = a.values()(*idx);
  return finish(std::move(out_shape), std::move(value), op, {a}, [idx](Node& self) {
    if (wants(self, 0)) scatter_add(self.inputs[0]->grad_buffer(), self.grad, idx);
  });
}

struct Lanes {
  Index outer;
  Index n;
  Index inner;
};

Lanes lanes_for(const Shape& shape, int axis) {
  Lanes l{1, shape[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) l.outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  validate_shape(shape);
  Eigen::VectorXd v = Eigen::VectorXd::Constant(simmtm::numel(shape), value);
  return from_vector(std::move(shape), v, requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full({1}, value, requires_grad); }

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return from_vector(std::move(shape), Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Index>(values.size())),
              requires_grad);
}

Tensor Tensor::from_vector(Shape shape, const Eigen::VectorXd& values, bool requires_grad) {
  validate_shape(shape);
  if (simmtm::numel(shape) != values.size()) {
    fail(ErrorKind::kDimension, "shape " + shape_string(shape) + " does not match " +
                                    std::to_string(values.size()) + " values");
  }
  check_finite(values, "tensor construction");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = values;
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

const Shape& Tensor::shape() const {
  if (!node_) fail(ErrorKind::kContract, "use of an undefined tensor");
  return node_->shape;
}

Index Tensor::dim(int axis) const {
  return shape()[static_cast<std::size_t>(normalize_axis(axis, rank(), "dim"))];
}

Eigen::VectorXd& Tensor::mutable_values() {
  if (!node_->is_leaf) fail(ErrorKind::kContract, "only leaf tensors may be written in place");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) fail(ErrorKind::kContract, "item() requires a single-element tensor");
  return node_->value[0];
}

double Tensor::at(std::initializer_list<Index> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) fail(ErrorKind::kDimension, "at(): index rank mismatch");
  Index flat = 0;
  std::size_t i = 0;
  for (Index v : index) {
    if (v < 0 || v >= s[i]) fail(ErrorKind::kDimension, "at(): index out of range");
    flat = flat * s[i] + v;
    ++i;
  }
  return node_->value[flat];
}

ConstRowMatrixMap Tensor::matrix() const {
  if (rank() != 2) fail(ErrorKind::kDimension, "matrix() requires rank 2, got " + shape_string(shape()));
  return ConstRowMatrixMap(node_->value.data(), shape()[0], shape()[1]);
}

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!node_->is_leaf) fail(ErrorKind::kContract, "requires_grad can only be set on leaves");
  node_->requires_grad = flag;
  return *this;
}

Eigen::VectorXd Tensor::grad() const {
  if (has_grad()) return node_->grad;
  return Eigen::VectorXd::Zero(numel());
}

void Tensor::zero_grad() {
  if (node_->grad.size() > 0) node_->grad.setZero();
}

Tensor Tensor::detach() const { return from_vector(shape(), node_->value, false); }

Tensor Tensor::clone() const { return from_vector(shape(), node_->value, requires_grad() && is_leaf()); }

void Tensor::backward() const {
  if (numel() != 1) {
    fail(ErrorKind::kContract, "backward() requires a scalar loss, got shape " + shape_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (!n->is_leaf) n->grad = Eigen::VectorXd::Zero(n->value.size());
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf && n->backward) n->backward(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](const Eigen::VectorXd& x, const Eigen::VectorXd& y) -> Eigen::VectorXd { return x + y; },
      [](const Eigen::VectorXd& g, const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::VectorXd { return g; },
      [](const Eigen::VectorXd& g, const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::VectorXd { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](const Eigen::VectorXd& x, const Eigen::VectorXd& y) -> Eigen::VectorXd { return x - y; },
      [](const Eigen::VectorXd& g, const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::VectorXd { return g; },
      [](const Eigen::VectorXd& g, const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::VectorXd { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul",
      [](const Eigen::VectorXd& x, const Eigen::VectorXd& y) -> Eigen::VectorXd { return x.cwiseProduct(y); },
      [](const Eigen::VectorXd& g, const Eigen::VectorXd&, const Eigen::VectorXd& y) -> Eigen::VectorXd {
        return g.cwiseProduct(y);
      },
      [](const Eigen::VectorXd& g, const Eigen::VectorXd& x, const Eigen::VectorXd&) -> Eigen::VectorXd {
        return g.cwiseProduct(x);
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div",
      [](const Eigen::VectorXd& x, const Eigen::VectorXd& y) -> Eigen::VectorXd { return x.cwiseQuotient(y); },
      [](const Eigen::VectorXd& g, const Eigen::VectorXd&, const Eigen::VectorXd& y) -> Eigen::VectorXd {
        return g.cwiseQuotient(y);
      },
      [](const Eigen::VectorXd& g, const Eigen::VectorXd& x, const Eigen::VectorXd& y) -> Eigen::VectorXd {
        return -(g.array() * x.array() / y.array().square()).matrix();
      });
}

Tensor add(const Tensor& a, double b) {
  return unary(
      a, "add_scalar", [b](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x.array() + b; },
      [](const Eigen::VectorXd& g, const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::VectorXd { return g; });
}

Tensor mul(const Tensor& a, double b) {
  return unary(
      a, "mul_scalar", [b](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x * b; },
      [b](const Eigen::VectorXd& g, const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::VectorXd {
        return g * b;
      });
}

Tensor operator-(const Tensor& a) { return mul(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x.array().exp(); },
      [](const Eigen::VectorXd& g, const Eigen::VectorXd&, const Eigen::VectorXd& y) -> Eigen::VectorXd {
        return g.cwiseProduct(y);
      });
}

Tensor log(const Tensor& a) {
  return unary(
      a, "log", [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x.array().log(); },
      [](const Eigen::VectorXd& g, const Eigen::VectorXd& x, const Eigen::VectorXd&) -> Eigen::VectorXd {
        return g.cwiseQuotient(x);
      });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      a, "sqrt", [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x.array().sqrt(); },
      [](const Eigen::VectorXd& g, const Eigen::VectorXd&, const Eigen::VectorXd& y) -> Eigen::VectorXd {
        return (0.5 * g.array() / y.array()).matrix();
      });
}

Tensor square(const Tensor& a) {
  return unary(
      a, "square", [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x.array().square(); },
      [](const Eigen::VectorXd& g, const Eigen::VectorXd& x, const Eigen::VectorXd&) -> Eigen::VectorXd {
        return 2.0 * g.cwiseProduct(x);
      });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, "abs", [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x.cwiseAbs(); },
      [](const Eigen::VectorXd& g, const Eigen::VectorXd& x, const Eigen::VectorXd&) -> Eigen::VectorXd {
        return (g.array() * x.array().sign()).matrix();
      });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, "relu", [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x.cwiseMax(0.0); },
      [](const Eigen::VectorXd& g, const Eigen::VectorXd& x, const Eigen::VectorXd&) -> Eigen::VectorXd {
        return (x.array() > 0.0).select(g, 0.0);
      });
}

Tensor gelu(const Tensor& a) {
  static constexpr double kInvSqrt2 = 0.70710678118654752440;
  static constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      a, "gelu",
      [](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
      },
      [](const Eigen::VectorXd& g, const Eigen::VectorXd& x, const Eigen::VectorXd&) -> Eigen::VectorXd {
        Eigen::VectorXd d = x.unaryExpr([](double v) {
          return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
        });
        return g.cwiseProduct(d);
      });
}

Tensor clamp_min(const Tensor& a, double floor) {
  return unary(
      a, "clamp_min", [floor](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x.cwiseMax(floor); },
      [floor](const Eigen::VectorXd& g, const Eigen::VectorXd& x, const Eigen::VectorXd&) -> Eigen::VectorXd {
        return (x.array() > floor).select(g, 0.0);
      });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  Eigen::VectorXd value(1);
  value[0] = a.values().sum();
  return finish({1}, std::move(value), "sum", {a}, [](Node& self) {
    if (wants(self, 0)) self.inputs[0]->grad_buffer().array() += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return mul(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum(const Tensor& a, int axis, bool keepdim) {
  const int ax = normalize_axis(axis, a.rank(), "sum");
  const Lanes l = lanes_for(a.shape(), ax);
  Shape out_shape = a.shape();
  if (keepdim || a.rank() == 1) {
    out_shape[static_cast<std::size_t>(ax)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + ax);
  }
  Eigen::VectorXd value = Eigen::VectorXd::Zero(l.outer * l.inner);
  const Eigen::VectorXd& x = a.values();
  for (Index o = 0; o < l.outer; ++o)
    for (Index k = 0; k < l.n; ++k)
      for (Index i = 0; i < l.inner; ++i) value[o * l.inner + i] += x[(o * l.n + k) * l.inner + i];
  return finish(std::move(out_shape), std::move(value), "sum_axis", {a}, [l](Node& self) {
    if (!wants(self, 0)) return;
    Eigen::VectorXd& g = self.inputs[0]->grad_buffer();
    for (Index o = 0; o < l.outer; ++o)
      for (Index k = 0; k < l.n; ++k)
        for (Index i = 0; i < l.inner; ++i) g[(o * l.n + k) * l.inner + i] += self.grad[o * l.inner + i];
  });
}

Tensor mean(const Tensor& a, int axis, bool keepdim) {
  const int ax = normalize_axis(axis, a.rank(), "mean");
  return mul(sum(a, ax, keepdim), 1.0 / static_cast<double>(a.shape()[static_cast<std::size_t>(ax)]));
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) fail(ErrorKind::kDimension, "matmul: operands must have rank >= 2");
  const Index m = as[as.size() - 2];
  const Index k = as.back();
  if (bs[bs.size() - 2] != k) {
    fail(ErrorKind::kDimension, "matmul: inner dimensions disagree, " + shape_string(as) + " x " + shape_string(bs));
  }
  const Index n = bs.back();
  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(n);

  if (bs.size() == 2) {
    const Index rows = a.numel() / k;
    Eigen::VectorXd value(rows * n);
    RowMatrixMap(value.data(), rows, n).noalias() =
        ConstRowMatrixMap(a.values().data(), rows, k) * ConstRowMatrixMap(b.values().data(), k, n);
    return finish(std::move(out_shape), std::move(value), "matmul", {a, b}, [rows, k, n](Node& self) {
      ConstRowMatrixMap g(self.grad.data(), rows, n);
      if (wants(self, 0)) {
        RowMatrixMap(self.inputs[0]->grad_buffer().data(), rows, k).noalias() +=
            g * ConstRowMatrixMap(self.inputs[1]->value.data(), k, n).transpose();
      }
      if (wants(self, 1)) {
        RowMatrixMap(self.inputs[1]->grad_buffer().data(), k, n).noalias() +=
            ConstRowMatrixMap(self.inputs[0]->value.data(), rows, k).transpose() * g;
      }
    });
  }

  if (as.size() != bs.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())) {
    fail(ErrorKind::kDimension, "matmul: batch dimensions disagree, " + shape_string(as) + " x " + shape_string(bs));
  }
  const Index batch = a.numel() / (m * k);
  Eigen::VectorXd value(batch * m * n);
  for (Index p = 0; p < batch; ++p) {
    RowMatrixMap(value.data() + p * m * n, m, n).noalias() =
        ConstRowMatrixMap(a.values().data() + p * m * k, m, k) *
        ConstRowMatrixMap(b.values().data() + p * k * n, k, n);
  }
  return finish(std::move(out_shape), std::move(value), "batched_matmul", {a, b}, [batch, m, k, n](Node& self) {
    const bool ga = wants(self, 0);
    const bool gb = wants(self, 1);
    double* da = ga ? self.inputs[0]->grad_buffer().data() : nullptr;
    double* db = gb ? self.inputs[1]->grad_buffer().data() : nullptr;
    const double* av = self.inputs[0]->value.data();
    const double* bv = self.inputs[1]->value.data();
    for (Index p = 0; p < batch; ++p) {
      ConstRowMatrixMap g(self.grad.data() + p * m * n, m, n);
      if (ga) RowMatrixMap(da + p * m * k, m, k).noalias() += g * ConstRowMatrixMap(bv + p * k * n, k, n).transpose();
      if (gb) RowMatrixMap(db + p * k * n, k, n).noalias() += ConstRowMatrixMap(av + p * m * k, m, k).transpose() * g;
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& a, Shape shape) {
  validate_shape(shape);
  if (simmtm::numel(shape) != a.numel()) {
    fail(ErrorKind::kDimension, "reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  return finish(std::move(shape), a.values(), "reshape", {a}, [](Node& self) {
    if (wants(self, 0)) self.inputs[0]->grad_buffer() += self.grad;
  });
}

Tensor permute(const Tensor& a, const std::vector<int>& order) {
  const Shape& in = a.shape();
  const std::size_t rank = in.size();
  if (order.size() != rank) fail(ErrorKind::kDimension, "permute: order rank mismatch");
  std::vector<bool> used(rank, false);
  for (int o : order) {
    if (o < 0 || static_cast<std::size_t>(o) >= rank || used[static_cast<std::size_t>(o)]) {
      fail(ErrorKind::kDimension, "permute: invalid axis order");
    }
    used[static_cast<std::size_t>(o)] = true;
  }
  std::vector<Index> in_stride(rank, 1);
  for (std::size_t i = rank - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * in[i + 1];
  Shape out(rank);
  std::vector<Index> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out[i] = in[static_cast<std::size_t>(order[i])];
    stride[i] = in_stride[static_cast<std::size_t>(order[i])];
  }
  auto idx = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(a.numel()));
  std::vector<Index> counter(rank, 0);
  Index pos = 0;
  for (auto& slot : *idx) {
    slot = pos;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++counter[ax];
      pos += stride[ax];
      if (counter[ax] < out[ax]) break;
      pos -= stride[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return gather(a, std::move(out), std::move(idx), "permute");
}

Tensor transpose(const Tensor& a, int axis0, int axis1) {
  std::vector<int> order(static_cast<std::size_t>(a.rank()));
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[static_cast<std::size_t>(normalize_axis(axis0, a.rank(), "transpose"))],
            order[static_cast<std::size_t>(normalize_axis(axis1, a.rank(), "transpose"))]);
  return permute(a, order);
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) fail(ErrorKind::kDimension, "transpose: rank-2 input required");
  return transpose(a, 0, 1);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) fail(ErrorKind::kDimension, "concat: no inputs");
  const int ax = normalize_axis(axis, parts.front().rank(), "concat");
  Shape out_shape = parts.front().shape();
  out_shape[static_cast<std::size_t>(ax)] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) fail(ErrorKind::kDimension, "concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != ax && s[i] != out_shape[i]) fail(ErrorKind::kDimension, "concat: shape mismatch");
    }
    out_shape[static_cast<std::size_t>(ax)] += s[static_cast<std::size_t>(ax)];
  }
  const Lanes whole = lanes_for(out_shape, ax);
  std::vector<Index> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[static_cast<std::size_t>(ax)] * whole.inner);
  const Index row = whole.n * whole.inner;
  Eigen::VectorXd value(simmtm::numel(out_shape));
  Index offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Index w = widths[pi];
    for (Index o = 0; o < whole.outer; ++o) value.segment(o * row + offset, w) = parts[pi].values().segment(o * w, w);
    offset += w;
  }
  const Index outer = whole.outer;
  return finish_many(std::move(out_shape), std::move(value), "concat", parts, [widths, outer, row](Node& self) {
    Index off = 0;
    for (std::size_t pi = 0; pi < widths.size(); ++pi) {
      const Index w = widths[pi];
      if (self.inputs[pi]->requires_grad) {
        Eigen::VectorXd& g = self.inputs[pi]->grad_buffer();
        for (Index o = 0; o < outer; ++o) g.segment(o * w, w) += self.grad.segment(o * row + off, w);
      }
      off += w;
    }
  });
}

Tensor slice(const Tensor& a, int axis, Index start, Index length) {
  const int ax = normalize_axis(axis, a.rank(), "slice");
  const Lanes l = lanes_for(a.shape(), ax);
  if (start < 0 || length <= 0 || start + length > l.n) fail(ErrorKind::kDimension, "slice: range out of bounds");
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(ax)] = length;
  auto idx = std::make_shared<std::vector<Index>>();
  idx->reserve(static_cast<std::size_t>(l.outer * length * l.inner));
  for (Index o = 0; o < l.outer; ++o)
    for (Index k = start; k < start + length; ++k)
      for (Index i = 0; i < l.inner; ++i) idx->push_back((o * l.n + k) * l.inner + i);
  return gather(a, std::move(out_shape), std::move(idx), "slice");
}

Tensor index_select(const Tensor& a, std::span<const Index> rows) {
  if (rows.empty()) fail(ErrorKind::kDimension, "index_select: no rows");
  const Index n = a.shape()[0];
  const Index inner = a.numel() / n;
  Shape out_shape = a.shape();
  out_shape[0] = static_cast<Index>(rows.size());
  auto idx = std::make_shared<std::vector<Index>>();
  idx->reserve(rows.size() * static_cast<std::size_t>(inner));
  for (Index r : rows) {
    if (r < 0 || r >= n) fail(ErrorKind::kDimension, "index_select: row out of range");
    for (Index i = 0; i < inner; ++i) idx->push_back(r * inner + i);
  }
  return gather(a, std::move(out_shape), std::move(idx), "index_select");
}

// ---------------------------------------------------------------------------
// Normalizations

Tensor softmax(const Tensor& a, int axis) {
  const int ax = normalize_axis(axis, a.rank(), "softmax");
  const Lanes l = lanes_for(a.shape(), ax);
  const Eigen::VectorXd& x = a.values();
  Eigen::VectorXd y(x.size());
  for (Index o = 0; o < l.outer; ++o) {
    for (Index i = 0; i < l.inner; ++i) {
      const Index base = o * l.n * l.inner + i;
      double peak = x[base];
      for (Index k = 1; k < l.n; ++k) peak = std::max(peak, x[base + k * l.inner]);
      double total = 0.0;
      for (Index k = 0; k < l.n; ++k) total += (y[base + k * l.inner] = std::exp(x[base + k * l.inner] - peak));
      for (Index k = 0; k < l.n; ++k) y[base + k * l.inner] /= total;
    }
  }
  return finish(a.shape(), std::move(y), "softmax", {a}, [l](Node& self) {
    if (!wants(self, 0)) return;
    Eigen::VectorXd& gx = self.inputs[0]->grad_buffer();
    const Eigen::VectorXd& yv = self.value;
    for (Index o = 0; o < l.outer; ++o) {
      for (Index i = 0; i < l.inner; ++i) {
        const Index base = o * l.n * l.inner + i;
        double dot = 0.0;
        for (Index k = 0; k < l.n; ++k) dot += self.grad[base + k * l.inner] * yv[base + k * l.inner];
        for (Index k = 0; k < l.n; ++k) {
          const Index j = base + k * l.inner;
          gx[j] += yv[j] * (self.grad[j] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& a, int axis) {
  const int ax = normalize_axis(axis, a.rank(), "log_softmax");
  const Lanes l = lanes_for(a.shape(), ax);
  const Eigen::VectorXd& x = a.values();
  Eigen::VectorXd y(x.size());
  for (Index o = 0; o < l.outer; ++o) {
    for (Index i = 0; i < l.inner; ++i) {
      const Index base = o * l.n * l.inner + i;
      double peak = x[base];
      for (Index k = 1; k < l.n; ++k) peak = std::max(peak, x[base + k * l.inner]);
      double total = 0.0;
      for (Index k = 0; k < l.n; ++k) total += std::exp(x[base + k * l.inner] - peak);
      const double shift = peak + std::log(total);
      for (Index k = 0; k < l.n; ++k) y[base + k * l.inner] = x[base + k * l.inner] - shift;
    }
  }
  return finish(a.shape(), std::move(y), "log_softmax", {a}, [l](Node& self) {
    if (!wants(self, 0)) return;
    Eigen::VectorXd& gx = self.inputs[0]->grad_buffer();
    for (Index o = 0; o < l.outer; ++o) {
      for (Index i = 0; i < l.inner; ++i) {
        const Index base = o * l.n * l.inner + i;
        double gsum = 0.0;
        for (Index k = 0; k < l.n; ++k) gsum += self.grad[base + k * l.inner];
        for (Index k = 0; k < l.n; ++k) {
          const Index j = base + k * l.inner;
          gx[j] += self.grad[j] - std::exp(self.value[j]) * gsum;
        }
      }
    }
  });
}

namespace {

using Mask = std::shared_ptr<const std::vector<std::uint8_t>>;

Mask checked_mask(const Tensor& a, std::span<const std::uint8_t> include, const char* op) {
  if (static_cast<Index>(include.size()) != a.numel()) {
    fail(ErrorKind::kDimension, std::string(op) + ": mask size does not match input");
  }
  const Index n = a.shape().back();
  for (Index r = 0; r < a.numel() / n; ++r) {
    bool any = false;
    for (Index k = 0; k < n; ++k) any = any || include[static_cast<std::size_t>(r * n + k)] != 0;
    if (!any) fail(ErrorKind::kContract, std::string(op) + ": a row excludes every entry");
  }
  return std::make_shared<const std::vector<std::uint8_t>>(include.begin(), include.end());
}

}  // namespace

Tensor masked_softmax(const Tensor& a, std::span<const std::uint8_t> include) {
  Mask mask = checked_mask(a, include, "masked_softmax");
  const Index n = a.shape().back();
  const Index rows = a.numel() / n;
  const Eigen::VectorXd& x = a.values();
  Eigen::VectorXd y = Eigen::VectorXd::Zero(x.size());
  for (Index r = 0; r < rows; ++r) {
    double peak = -std::numeric_limits<double>::infinity();
    for (Index k = 0; k < n; ++k)
      if ((*mask)[static_cast<std::size_t>(r * n + k)]) peak = std::max(peak, x[r * n + k]);
    double total = 0.0;
    for (Index k = 0; k < n; ++k)
      if ((*mask)[static_cast<std::size_t>(r * n + k)]) total += (y[r * n + k] = std::exp(x[r * n + k] - peak));
    y.segment(r * n, n) /= total;
  }
  return finish(a.shape(), std::move(y), "masked_softmax", {a}, [n, rows](Node& self) {
    if (!wants(self, 0)) return;
    Eigen::VectorXd& gx = self.inputs[0]->grad_buffer();
    for (Index r = 0; r < rows; ++r) {
      const auto yv = self.value.segment(r * n, n);
      const auto gv = self.grad.segment(r * n, n);
      const double dot = yv.dot(gv);
      gx.segment(r * n, n).array() += yv.array() * (gv.array() - dot);
    }
  });
}

Tensor masked_log_softmax(const Tensor& a, std::span<const std::uint8_t> include) {
  Mask mask = checked_mask(a, include, "masked_log_softmax");
  const Index n = a.shape().back();
  const Index rows = a.numel() / n;
  const Eigen::VectorXd& x = a.values();
  Eigen::VectorXd y = Eigen::VectorXd::Zero(x.size());
  for (Index r = 0; r < rows; ++r) {
    double peak = -std::numeric_limits<double>::infinity();
    for (Index k = 0; k < n; ++k)
      if ((*mask)[static_cast<std::size_t>(r * n + k)]) peak = std::max(peak, x[r * n + k]);
    double total = 0.0;
    for (Index k = 0; k < n; ++k)
      if ((*mask)[static_cast<std::size_t>(r * n + k)]) total += std::exp(x[r * n + k] - peak);
    const double shift = peak + std::log(total);
    for (Index k = 0; k < n; ++k)
      if ((*mask)[static_cast<std::size_t>(r * n + k)]) y[r * n + k] = x[r * n + k] - shift;
  }
  return finish(a.shape(), std::move(y), "masked_log_softmax", {a}, [mask, n, rows](Node& self) {
    if (!wants(self, 0)) return;
    Eigen::VectorXd& gx = self.inputs[0]->grad_buffer();
    for (Index r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (Index k = 0; k < n; ++k)
        if ((*mask)[static_cast<std::size_t>(r * n + k)]) gsum += self.grad[r * n + k];
      for (Index k = 0; k < n; ++k) {
        const Index j = r * n + k;
        if ((*mask)[static_cast<std::size_t>(j)]) gx[j] += self.grad[j] - std::exp(self.value[j]) * gsum;
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Index n = x.shape().back();
  if (gain.numel() != n || bias.numel() != n) fail(ErrorKind::kDimension, "layer_norm: parameter size mismatch");
  const Index rows = x.numel() / n;
  auto normalized = std::make_shared<Eigen::VectorXd>(x.numel());
  auto inv_std = std::make_shared<Eigen::VectorXd>(rows);
  Eigen::VectorXd y(x.numel());
  for (Index r = 0; r < rows; ++r) {
    const auto row = x.values().segment(r * n, n);
    const double mu = row.mean();
    const double var = (row.array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    normalized->segment(r * n, n) = (row.array() - mu) * is;
    y.segment(r * n, n) =
        (normalized->segment(r * n, n).array() * gain.values().array() + bias.values().array()).matrix();
  }
  return finish(x.shape(), std::move(y), "layer_norm", {x, gain, bias}, [normalized, inv_std, n, rows](Node& self) {
    const Eigen::VectorXd& g = self.grad;
    const Eigen::VectorXd& gamma = self.inputs[1]->value;
    if (wants(self, 0)) {
      Eigen::VectorXd& gx = self.inputs[0]->grad_buffer();
      for (Index r = 0; r < rows; ++r) {
        const Eigen::ArrayXd dxhat = g.segment(r * n, n).array() * gamma.array();
        const Eigen::ArrayXd xhat = normalized->segment(r * n, n).array();
        const double m1 = dxhat.mean();
        const double m2 = (dxhat * xhat).mean();
        gx.segment(r * n, n).array() += (*inv_std)[r] * (dxhat - m1 - xhat * m2);
      }
    }
    if (wants(self, 1)) {
      Eigen::VectorXd& gg = self.inputs[1]->grad_buffer();
      for (Index r = 0; r < rows; ++r) gg += g.segment(r * n, n).cwiseProduct(normalized->segment(r * n, n));
    }
    if (wants(self, 2)) {
      Eigen::VectorXd& gb = self.inputs[2]->grad_buffer();
      for (Index r = 0; r < rows; ++r) gb += g.segment(r * n, n);
    }
  });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 3 || weight.rank() != 3) fail(ErrorKind::kDimension, "conv1d: expects x[B,L,Cin], w[K,Cin,Cout]");
  const Index batch = x.dim(0), length = x.dim(1), cin = x.dim(2);
  const Index taps = weight.dim(0), cout = weight.dim(2);
  if (weight.dim(1) != cin) fail(ErrorKind::kDimension, "conv1d: input channels disagree");
  if (bias.numel() != cout) fail(ErrorKind::kDimension, "conv1d: bias size mismatch");
  const Index pad = (taps - 1) / 2;
  const Index rows = batch * length;
  const Index width = taps * cin;

  // im2col: row (b, t) holds x[b, t + k - pad, :] for k in [0, taps).
  auto cols = std::make_shared<RowMatrix>(RowMatrix::Zero(rows, width));
  const double* xv = x.values().data();
  for (Index b = 0; b < batch; ++b)
    for (Index t = 0; t < length; ++t)
      for (Index k = 0; k < taps; ++k) {
        const Index src = t + k - pad;
        if (src < 0 || src >= length) continue;
        for (Index c = 0; c < cin; ++c) (*cols)(b * length + t, k * cin + c) = xv[(b * length + src) * cin + c];
      }
  Eigen::VectorXd value(rows * cout);
  RowMatrixMap out(value.data(), rows, cout);
  out.noalias() = *cols * ConstRowMatrixMap(weight.values().data(), width, cout);
  out.rowwise() += bias.values().transpose();

  return finish({batch, length, cout}, std::move(value), "conv1d", {x, weight, bias},
                [cols, batch, length, cin, taps, cout, pad, rows, width](Node& self) {
                  ConstRowMatrixMap g(self.grad.data(), rows, cout);
                  if (wants(self, 1)) {
                    RowMatrixMap(self.inputs[1]->grad_buffer().data(), width, cout).noalias() +=
                        cols->transpose() * g;
                  }
                  if (wants(self, 2)) self.inputs[2]->grad_buffer() += g.colwise().sum().transpose();
                  if (wants(self, 0)) {
                    RowMatrix dcols = g * ConstRowMatrixMap(self.inputs[1]->value.data(), width, cout).transpose();
                    double* gx = self.inputs[0]->grad_buffer().data();
                    for (Index b = 0; b < batch; ++b)
                      for (Index t = 0; t < length; ++t)
                        for (Index k = 0; k < taps; ++k) {
                          const Index src = t + k - pad;
                          if (src < 0 || src >= length) continue;
                          for (Index c = 0; c < cin; ++c)
                            gx[(b * length + src) * cin + c] += dcols(b * length + t, k * cin + c);
                        }
                  }
                });
}

}  // namespace simmtm
