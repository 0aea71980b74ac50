#include "wdae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "wdae/errors.hpp"

namespace wdae {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

Tensor make_result(Shape shape, std::vector<double> data, std::vector<NodePtr> inputs, const char* op,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs_grad = std::any_of(inputs.begin(), inputs.end(), [](const NodePtr& n) { return n->requires_grad; });
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

const NodePtr& checked(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
  return t.node();
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

// [outer, n, inner] view of a tensor around `axis`.
struct AxisView {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;

  [[nodiscard]] std::size_t at(std::size_t o, std::size_t k, std::size_t i) const { return (o * n + k) * inner + i; }
};

AxisView axis_view(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) throw ShapeError(std::string(op) + ": axis out of range for " + to_string(shape));
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

constexpr double kNormEps = 1e-12;

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
  }
  if (shape_size(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " + to_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return checked(*this, "shape")->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw ShapeError("dim: axis out of range for " + to_string(s));
  return s[axis];
}

std::size_t Tensor::size() const { return checked(*this, "size")->data.size(); }

std::span<const double> Tensor::data() const { return checked(*this, "data")->data; }

std::span<double> Tensor::mutable_data() { return checked(*this, "mutable_data")->data; }

bool Tensor::requires_grad() const { return checked(*this, "requires_grad")->requires_grad; }

bool Tensor::has_grad() const { return !checked(*this, "grad")->grad.empty(); }

std::vector<double> Tensor::grad() const {
  const auto& n = checked(*this, "grad");
  if (n->grad.empty()) return std::vector<double>(n->data.size(), 0.0);
  return n->grad;
}

void Tensor::zero_grad() { checked(*this, "zero_grad")->grad.clear(); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
  return node_->data[0];
}

double Tensor::at(std::size_t i) const { return data()[i]; }

double Tensor::at(std::size_t i, std::size_t j) const {
  require_rank(*this, 2, "at");
  return node_->data[i * node_->shape[1] + j];
}

Tensor Tensor::detach() const { return from(shape(), std::vector<double>(data().begin(), data().end()), false); }

void Tensor::backward() const {
  const NodePtr& root = checked(*this, "backward");
  if (root->data.size() != 1) throw ShapeError("backward: loss must be a scalar, got " + to_string(root->shape));
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward) n->grad.assign(n->data.size(), 0.0);
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  checked(a, "matmul");
  checked(b, "matmul");
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      const double* brow = &bd[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {a.node(), b.node()}, "matmul", [m, k, n](Node& self) {
    Node& a = *self.inputs[0];
    Node& b = *self.inputs[1];
    const auto& g = self.grad;
    if (a.requires_grad) {
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * b.data[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (b.requires_grad) {
      auto& gb = b.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = a.data[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  checked(a, "transpose");
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto ad = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
  return make_result({n, m}, std::move(out), {a.node()}, "transpose", [m, n](Node& self) {
    auto& ga = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
  });
}

namespace {

template <class Fwd, class DA, class DB>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, DA da, DB db) {
  checked(a, op);
  checked(b, op);
  require_same_shape(a, b, op);
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ad[i], bd[i]);
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, op, [da, db](Node& self) {
    Node& a = *self.inputs[0];
    Node& b = *self.inputs[1];
    if (a.requires_grad) {
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += da(a.data[i], b.data[i]) * self.grad[i];
    }
    if (b.requires_grad) {
      auto& gb = b.grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += db(a.data[i], b.data[i]) * self.grad[i];
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  checked(a, "scale");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), {a.node()}, "scale", [factor](Node& self) {
    auto& ga = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * self.grad[i];
  });
}

Tensor square(const Tensor& a) {
  checked(a, "square");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= v;
  return make_result(a.shape(), std::move(out), {a.node()}, "square", [](Node& self) {
    Node& a = *self.inputs[0];
    auto& ga = a.grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * a.data[i] * self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  checked(a, "sum");
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result({}, {total}, {a.node()}, "sum", [](Node& self) {
    auto& ga = self.inputs[0]->grad_buffer();
    for (double& g : ga) g += self.grad[0];
  });
}

namespace {

void require_row_vector(const Tensor& x, const Tensor& row, const char* op) {
  require_rank(x, 2, op);
  if (row.size() != x.dim(1)) {
    throw ShapeError(std::string(op) + ": row of " + std::to_string(row.size()) + " values for " + to_string(x.shape()));
  }
}

}  // namespace

Tensor add_rowwise(const Tensor& x, const Tensor& row) {
  checked(x, "add_rowwise");
  checked(row, "add_rowwise");
  require_row_vector(x, row, "add_rowwise");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.data().begin(), x.data().end());
  auto rd = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rd[j];
  return make_result(x.shape(), std::move(out), {x.node(), row.node()}, "add_rowwise", [m, n](Node& self) {
    Node& x = *self.inputs[0];
    Node& r = *self.inputs[1];
    if (x.requires_grad) {
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    }
    if (r.requires_grad) {
      auto& gr = r.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += self.grad[i * n + j];
    }
  });
}

Tensor mul_rowwise(const Tensor& x, const Tensor& row) {
  checked(x, "mul_rowwise");
  checked(row, "mul_rowwise");
  require_row_vector(x, row, "mul_rowwise");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.data().begin(), x.data().end());
  auto rd = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= rd[j];
  return make_result(x.shape(), std::move(out), {x.node(), row.node()}, "mul_rowwise", [m, n](Node& self) {
    Node& x = *self.inputs[0];
    Node& r = *self.inputs[1];
    if (x.requires_grad) {
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += r.data[j] * self.grad[i * n + j];
    }
    if (r.requires_grad) {
      auto& gr = r.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += x.data[i * n + j] * self.grad[i * n + j];
    }
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  checked(a, "concat_cols");
  checked(b, "concat_cols");
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError("concat_cols: row counts differ, " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), p = a.dim(1), q = b.dim(1);
  std::vector<double> out(m * (p + q));
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(&ad[i * p], p, &out[i * (p + q)]);
    std::copy_n(&bd[i * q], q, &out[i * (p + q) + p]);
  }
  return make_result({m, p + q}, std::move(out), {a.node(), b.node()}, "concat_cols", [m, p, q](Node& self) {
    Node& a = *self.inputs[0];
    Node& b = *self.inputs[1];
    if (a.requires_grad) {
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += self.grad[i * (p + q) + j];
    }
    if (b.requires_grad) {
      auto& gb = b.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += self.grad[i * (p + q) + p + j];
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  checked(x, "slice_cols");
  require_rank(x, 2, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (begin >= end || end > n) {
    throw ShapeError("slice_cols: invalid range [" + std::to_string(begin) + ", " + std::to_string(end) + ") for " +
                     to_string(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(m * w);
  auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i) std::copy_n(&xd[i * n + begin], w, &out[i * w]);
  return make_result({m, w}, std::move(out), {x.node()}, "slice_cols", [m, n, w, begin](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * n + begin + j] += self.grad[i * w + j];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  checked(x, "gather_rows");
  require_rank(x, 2, "gather_rows");
  if (rows.empty()) throw ShapeError("gather_rows: empty index list");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<std::size_t> index(rows.begin(), rows.end());
  std::vector<double> out(index.size() * n);
  auto xd = x.data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= m) throw IndexError("gather_rows: row " + std::to_string(index[r]) + " out of " + std::to_string(m));
    std::copy_n(&xd[index[r] * n], n, &out[r * n]);
  }
  const std::size_t count = index.size();
  return make_result({count, n}, std::move(out), {x.node()}, "gather_rows", [index = std::move(index), n](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < index.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) gx[index[r] * n + j] += self.grad[r * n + j];
  });
}

Tensor mix_rows(const Tensor& x, const RowMixing& mixing) {
  checked(x, "mix_rows");
  require_rank(x, 2, "mix_rows");
  const std::size_t m = x.dim(0), n = x.dim(1), outputs = mixing.num_outputs();
  if (outputs == 0) throw ShapeError("mix_rows: no output rows");
  if (mixing.offsets.back() != mixing.sources.size() || mixing.sources.size() != mixing.weights.size()) {
    throw ShapeError("mix_rows: inconsistent CSR arrays");
  }
  for (std::size_t s : mixing.sources) {
    if (s >= m) throw IndexError("mix_rows: source row " + std::to_string(s) + " out of " + std::to_string(m));
  }
  auto xd = x.data();
  std::vector<double> out(outputs * n, 0.0);
  for (std::size_t r = 0; r < outputs; ++r) {
    for (std::size_t k = mixing.offsets[r]; k < mixing.offsets[r + 1]; ++k) {
      const double w = mixing.weights[k];
      const double* src = &xd[mixing.sources[k] * n];
      for (std::size_t j = 0; j < n; ++j) out[r * n + j] += w * src[j];
    }
  }
  return make_result({outputs, n}, std::move(out), {x.node()}, "mix_rows", [mixing, n](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < mixing.num_outputs(); ++r) {
      for (std::size_t k = mixing.offsets[r]; k < mixing.offsets[r + 1]; ++k) {
        const double w = mixing.weights[k];
        double* dst = &gx[mixing.sources[k] * n];
        for (std::size_t j = 0; j < n; ++j) dst[j] += w * self.grad[r * n + j];
      }
    }
  });
}

// ---- nonlinearities --------------------------------------------------------

Tensor softmax_scaled(const Tensor& x, double inverse_temperature, std::size_t axis) {
  checked(x, "softmax_scaled");
  const AxisView v = axis_view(x.shape(), axis, "softmax_scaled");
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      double hi = -INFINITY;
      for (std::size_t k = 0; k < v.n; ++k) hi = std::max(hi, inverse_temperature * xd[v.at(o, k, i)]);
      double total = 0.0;
      for (std::size_t k = 0; k < v.n; ++k) {
        double e = std::exp(inverse_temperature * xd[v.at(o, k, i)] - hi);
        out[v.at(o, k, i)] = e;
        total += e;
      }
      for (std::size_t k = 0; k < v.n; ++k) out[v.at(o, k, i)] /= total;
    }
  }
  return make_result(x.shape(), std::move(out), {x.node()}, "softmax_scaled", [v, inverse_temperature](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    const auto& y = self.data;
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        double dot = 0.0;
        for (std::size_t k = 0; k < v.n; ++k) dot += self.grad[v.at(o, k, i)] * y[v.at(o, k, i)];
        for (std::size_t k = 0; k < v.n; ++k) {
          const std::size_t idx = v.at(o, k, i);
          gx[idx] += inverse_temperature * y[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor l2_normalize(const Tensor& x, std::size_t axis) {
  checked(x, "l2_normalize");
  const AxisView v = axis_view(x.shape(), axis, "l2_normalize");
  auto xd = x.data();
  std::vector<double> out(xd.size());
  std::vector<double> norms(v.outer * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      double ss = 0.0;
      for (std::size_t k = 0; k < v.n; ++k) ss += xd[v.at(o, k, i)] * xd[v.at(o, k, i)];
      const double norm = std::sqrt(ss);
      norms[o * v.inner + i] = norm;
      const double denom = std::max(norm, kNormEps);
      for (std::size_t k = 0; k < v.n; ++k) out[v.at(o, k, i)] = xd[v.at(o, k, i)] / denom;
    }
  }
  return make_result(x.shape(), std::move(out), {x.node()}, "l2_normalize", [v, norms = std::move(norms)](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    const auto& y = self.data;
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const double norm = norms[o * v.inner + i];
        if (norm > kNormEps) {
          double dot = 0.0;
          for (std::size_t k = 0; k < v.n; ++k) dot += self.grad[v.at(o, k, i)] * y[v.at(o, k, i)];
          for (std::size_t k = 0; k < v.n; ++k) {
            const std::size_t idx = v.at(o, k, i);
            gx[idx] += (self.grad[idx] - y[idx] * dot) / norm;
          }
        } else {
          for (std::size_t k = 0; k < v.n; ++k) {
            const std::size_t idx = v.at(o, k, i);
            gx[idx] += self.grad[idx] / kNormEps;
          }
        }
      }
    }
  });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  checked(x, "leaky_relu");
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = std::max(v, slope * v);
  return make_result(x.shape(), std::move(out), {x.node()}, "leaky_relu", [slope](Node& self) {
    Node& x = *self.inputs[0];
    auto& gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double d = (x.data[i] >= slope * x.data[i]) ? 1.0 : slope;
      gx[i] += d * self.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  checked(x, "sigmoid");
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) {
    // Branching keeps exp() from overflowing for large |v|.
    if (v >= 0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  return make_result(x.shape(), std::move(out), {x.node()}, "sigmoid", [](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.data[i] * (1.0 - self.data[i]) * self.grad[i];
  });
}

// ---- batch norm ------------------------------------------------------------

BatchNorm::BatchNorm(std::size_t channels)
    : gamma(channels ? Tensor::full({channels}, 1.0, true) : Tensor()),
      beta(channels ? Tensor::zeros({channels}, true) : Tensor()),
      running(std::make_shared<BatchNormStats>(
          BatchNormStats{std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)})) {}

Tensor batch_norm(const Tensor& x, const BatchNorm& params, Mode mode) {
  checked(x, "batch_norm");
  require_rank(x, 2, "batch_norm");
  const std::size_t m = x.dim(0), c = x.dim(1);
  if (params.channels() != c || params.gamma.size() != c || params.beta.size() != c) {
    throw ShapeError("batch_norm: " + std::to_string(params.channels()) + " channels configured, input " +
                     to_string(x.shape()));
  }
  auto xd = x.data();
  auto gamma = params.gamma.data();
  auto beta = params.beta.data();
  std::vector<double> out(m * c);

  if (mode == Mode::eval) {
    std::vector<double> inv_std(c);
    const auto& rs = *params.running;
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(rs.var[j] + params.eps);
    std::vector<double> xhat(m * c);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        xhat[i * c + j] = (xd[i * c + j] - rs.mean[j]) * inv_std[j];
        out[i * c + j] = gamma[j] * xhat[i * c + j] + beta[j];
      }
    return make_result(x.shape(), std::move(out), {x.node(), params.gamma.node(), params.beta.node()}, "batch_norm",
                       [m, c, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
                         Node& x = *self.inputs[0];
                         Node& g = *self.inputs[1];
                         Node& b = *self.inputs[2];
                         if (x.requires_grad) {
                           auto& gx = x.grad_buffer();
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < c; ++j)
                               gx[i * c + j] += self.grad[i * c + j] * g.data[j] * inv_std[j];
                         }
                         if (g.requires_grad) {
                           auto& gg = g.grad_buffer();
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < c; ++j) gg[j] += self.grad[i * c + j] * xhat[i * c + j];
                         }
                         if (b.requires_grad) {
                           auto& gb = b.grad_buffer();
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < c; ++j) gb[j] += self.grad[i * c + j];
                         }
                       });
  }

  if (m < 2) throw ShapeError("batch_norm: degenerate batch of " + std::to_string(m) + " row(s) in train mode");
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < c; ++j) mean[j] += xd[i * c + j];
  for (double& v : mean) v /= static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xd[i * c + j] - mean[j];
      var[j] += d * d;
    }
  for (double& v : var) v /= static_cast<double>(m);

  std::vector<double> inv_std(c);
  for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + params.eps);
  std::vector<double> xhat(m * c);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xd[i * c + j] - mean[j]) * inv_std[j];
      out[i * c + j] = gamma[j] * xhat[i * c + j] + beta[j];
    }

  auto& rs = *params.running;
  const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
  for (std::size_t j = 0; j < c; ++j) {
    rs.mean[j] = (1.0 - params.momentum) * rs.mean[j] + params.momentum * mean[j];
    rs.var[j] = (1.0 - params.momentum) * rs.var[j] + params.momentum * var[j] * unbias;
  }

  return make_result(x.shape(), std::move(out), {x.node(), params.gamma.node(), params.beta.node()}, "batch_norm",
                     [m, c, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
                       Node& x = *self.inputs[0];
                       Node& g = *self.inputs[1];
                       Node& b = *self.inputs[2];
                       std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < c; ++j) {
                           sum_g[j] += self.grad[i * c + j];
                           sum_gx[j] += self.grad[i * c + j] * xhat[i * c + j];
                         }
                       if (x.requires_grad) {
                         auto& gx = x.grad_buffer();
                         const double inv_m = 1.0 / static_cast<double>(m);
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < c; ++j) {
                             const double dxhat_sum = self.grad[i * c + j] - inv_m * sum_g[j] -
                                                      inv_m * xhat[i * c + j] * sum_gx[j];
                             gx[i * c + j] += g.data[j] * inv_std[j] * dxhat_sum;
                           }
                       }
                       if (g.requires_grad) {
                         auto& gg = g.grad_buffer();
                         for (std::size_t j = 0; j < c; ++j) gg[j] += sum_gx[j];
                       }
                       if (b.requires_grad) {
                         auto& gb = b.grad_buffer();
                         for (std::size_t j = 0; j < c; ++j) gb[j] += sum_g[j];
                       }
                     });
}

// ---- dropout ---------------------------------------------------------------

Tensor dropout(const Tensor& x, double drop_probability, Mode mode, Rng* rng, DropoutScope scope) {
  checked(x, "dropout");
  if (!(drop_probability >= 0.0 && drop_probability < 1.0)) {
    throw ConfigError("dropout: drop probability must lie in [0, 1), got " + std::to_string(drop_probability));
  }
  if (mode == Mode::eval || drop_probability == 0.0) return x;
  if (rng == nullptr) throw ConfigError("dropout: train mode requires a seeded random stream");

  const double keep_scale = 1.0 / (1.0 - drop_probability);
  std::vector<double> mask(x.size());
  if (scope == DropoutScope::per_element) {
    for (double& v : mask) v = rng->uniform() < drop_probability ? 0.0 : keep_scale;
  } else {
    require_rank(x, 2, "dropout");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> columns(n);
    for (double& v : columns) v = rng->uniform() < drop_probability ? 0.0 : keep_scale;
    for (std::size_t i = 0; i < m; ++i) std::copy(columns.begin(), columns.end(), mask.begin() + i * n);
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_result(x.shape(), std::move(out), {x.node()}, "dropout", [mask = std::move(mask)](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += mask[i] * self.grad[i];
  });
}

// ---- loss ------------------------------------------------------------------

Tensor cross_entropy_from_scores(const Tensor& scores, std::span<const std::size_t> labels) {
  checked(scores, "cross_entropy_from_scores");
  require_rank(scores, 2, "cross_entropy_from_scores");
  const std::size_t m = scores.dim(0), n = scores.dim(1);
  if (labels.size() != m) {
    throw ShapeError("cross_entropy_from_scores: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(m) + " rows");
  }
  auto sd = scores.data();
  std::vector<double> probs(m * n);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] >= n) {
      throw IndexError("cross_entropy_from_scores: label " + std::to_string(labels[i]) + " out of " +
                       std::to_string(n) + " classes");
    }
    double hi = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) hi = std::max(hi, sd[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      probs[i * n + j] = std::exp(sd[i * n + j] - hi);
      z += probs[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] /= z;
    total += -sd[i * n + labels[i]] + hi + std::log(z);
  }
  std::vector<std::size_t> label_copy(labels.begin(), labels.end());
  return make_result({}, {total / static_cast<double>(m)}, {scores.node()}, "cross_entropy",
                     [m, n, probs = std::move(probs), label_copy = std::move(label_copy)](Node& self) {
                       auto& gs = self.inputs[0]->grad_buffer();
                       const double g = self.grad[0] / static_cast<double>(m);
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t j = 0; j < n; ++j) gs[i * n + j] += g * probs[i * n + j];
                         gs[i * n + label_copy[i]] -= g;
                       }
                     });
}

}  // namespace wdae
