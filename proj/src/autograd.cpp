#include "mtm/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "mtm/errors.hpp"

namespace mtm::ag {

namespace {

thread_local bool g_grad_enabled = true;

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

using NodePtr = std::shared_ptr<Node>;

Tensor make_result(Shape shape, std::vector<double> data, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename Fwd, typename DA, typename DB>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, DA da, DB db) {
  require_same_shape(a, b, op);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i], y[i]);
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [da, db](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {
      auto& ga = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(pa.data[i], pb.data[i], self.data[i]);
    }
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(pa.data[i], pb.data[i], self.data[i]);
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary_elementwise(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  return make_result(a.shape(), std::move(out), {a.node()}, [deriv](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gp[i] += self.grad[i] * deriv(p.data[i], self.data[i]);
  });
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& Node::ensure_grad() {
  if (!has_grad) {
    grad.assign(data.size(), 0.0);
    has_grad = true;
  }
  return grad;
}

Tensor Tensor::constant(Shape shape, std::vector<double> data) {
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return constant({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t = constant(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

std::size_t Tensor::rows() const {
  require_2d(*this, "rows");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  require_2d(*this, "cols");
  return node_->shape[1];
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on a tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

void Tensor::zero_grad() {
  node_->grad.clear();
  node_->has_grad = false;
}

Tensor Tensor::detach() const { return constant(shape(), node_->data); }

Tensor Tensor::clone() const {
  Tensor t = constant(shape(), node_->data);
  t.node_->requires_grad = node_->requires_grad && node_->is_leaf();
  return t;
}

void Tensor::backward() const {
  if (size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are per-call scratch; only leaves accumulate across calls.
  for (Node* n : order) {
    if (!n->is_leaf()) {
      n->grad.assign(n->data.size(), 0.0);
      n->has_grad = true;
    }
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, n);
  return make_result({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    MapC dc(self.grad.data(), m, n);
    if (pa.requires_grad) {
      Map(pa.ensure_grad().data(), m, k).noalias() += dc * MapC(pb.data.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      Map(pb.ensure_grad().data(), k, n).noalias() += MapC(pa.data.data(), m, k).transpose() * dc;
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), n, k).transpose();
  return make_result({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    MapC dc(self.grad.data(), m, n);
    if (pa.requires_grad) {
      Map(pa.ensure_grad().data(), m, k).noalias() += dc * MapC(pb.data.data(), n, k);
    }
    if (pb.requires_grad) {
      Map(pb.ensure_grad().data(), n, k).noalias() += dc.transpose() * MapC(pa.data.data(), m, k);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  Map(out.data(), n, m) = MapC(a.data().data(), m, n).transpose();
  return make_result({n, m}, std::move(out), {a.node()}, [m, n](Node& self) {
    Map(self.parents[0]->ensure_grad().data(), m, n) += MapC(self.grad.data(), n, m).transpose();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

// Ties route the gradient to the first argument.
Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "minimum", [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "maximum", [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_2d(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (row.size() != n) {
    throw ShapeError("add_row: row " + shape_str(row.shape()) + " does not broadcast over " +
                     shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto r = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += r[j];
  return make_result(a.shape(), std::move(out), {a.node(), row.node()}, [m, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pr = *self.parents[1];
    if (pa.requires_grad) {
      auto& ga = pa.ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (pr.requires_grad) {
      auto& gr = pr.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += self.grad[i * n + j];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_elementwise(
      a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary_elementwise(
      a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_elementwise(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor abs(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// ---------------------------------------------------------------------------

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  std::vector<NodePtr> nodes;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool compatible = s.size() == first.size();
    for (std::size_t d = 0; compatible && d < s.size(); ++d) compatible = d == axis || s[d] == first[d];
    if (!compatible) {
      throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s) +
                       " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
    widths.push_back(s[axis] * inner);
    nodes.push_back(p.node());
  }
  const std::size_t row_width = out_shape[axis] * inner;
  std::vector<double> out(outer * row_width);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.begin() + o * widths[k], widths[k], out.begin() + o * row_width + offset);
    offset += widths[k];
  }
  return make_result(std::move(out_shape), std::move(out), std::move(nodes),
                     [widths, outer, row_width](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         Node& p = *self.parents[k];
                         if (p.requires_grad) {
                           auto& g = p.ensure_grad();
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t i = 0; i < widths[k]; ++i)
                               g[o * widths[k] + i] += self.grad[o * row_width + offset + i];
                         }
                         offset += widths[k];
                       }
                     });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_2d(a, "slice_rows");
  if (begin > end || end > a.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_str(a.shape()));
  }
  const std::size_t n = a.cols();
  std::vector<double> out(a.data().begin() + begin * n, a.data().begin() + end * n);
  return make_result({end - begin, n}, std::move(out), {a.node()}, [begin, n](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_2d(a, "slice_cols");
  if (begin > end || end > a.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_str(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols(), w = end - begin;
  std::vector<double> out(m * w);
  const auto src = a.data();
  for (std::size_t i = 0; i < m; ++i) std::copy_n(src.begin() + i * n + begin, w, out.begin() + i * w);
  return make_result({m, w}, std::move(out), {a.node()}, [m, n, w, begin](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_2d(a, "gather_rows");
  const std::size_t n = a.cols();
  std::vector<double> out(rows.size() * n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.rows()) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(a.data().begin() + rows[i] * n, n, out.begin() + i * n);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result({rows.size(), n}, std::move(out), {a.node()}, [idx, n](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) g[idx[i] * n + j] += self.grad[i * n + j];
  });
}

// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({1}, {s}, {a.node()}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw ShapeError("softmax: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t len = s[axis];
  const auto x = a.data();
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  std::vector<double> y(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = x[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, x[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < len; ++k) z += (y[base + k * inner] = std::exp(x[base + k * inner] - mx));
      for (std::size_t k = 0; k < len; ++k) y[base + k * inner] /= z;
    }
  }
  return make_result(s, std::move(y), {a.node()}, [outer, inner, len](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = self.data;
    const auto& dy = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += dy[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t idx = base + k * inner;
          g[idx] += y[idx] * (dy[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw ShapeError("layer_norm: zero-length normalization axis in " + shape_str(x.shape()));
  }
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.size() / c;
  if (gain.size() != c || bias.size() != c) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(c) + " entries");
  }
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * c + j] = h;
      out[r * c + j] = gv[j] * h + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
                     [xhat, inv_std, rows, c](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pb = *self.parents[2];
                       const auto& dy = self.grad;
                       if (pg.requires_grad) {
                         auto& gg = pg.ensure_grad();
                         for (std::size_t i = 0; i < dy.size(); ++i) gg[i % c] += dy[i] * (*xhat)[i];
                       }
                       if (pb.requires_grad) {
                         auto& gb = pb.ensure_grad();
                         for (std::size_t i = 0; i < dy.size(); ++i) gb[i % c] += dy[i];
                       }
                       if (px.requires_grad) {
                         auto& gx = px.ensure_grad();
                         const double inv_c = 1.0 / static_cast<double>(c);
                         for (std::size_t r = 0; r < rows; ++r) {
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t j = 0; j < c; ++j) {
                             const double dh = dy[r * c + j] * pg.data[j];
                             m1 += dh;
                             m2 += dh * (*xhat)[r * c + j];
                           }
                           m1 *= inv_c;
                           m2 *= inv_c;
                           for (std::size_t j = 0; j < c; ++j) {
                             const double dh = dy[r * c + j] * pg.data[j];
                             gx[r * c + j] += (*inv_std)[r] * (dh - m1 - (*xhat)[r * c + j] * m2);
                           }
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------

Tensor bce_with_logits(const Tensor& logits, double label) {
  if (logits.size() == 0) throw ShapeError("bce_with_logits: empty input");
  const auto x = logits.data();
  double total = 0.0;
  for (double v : x) total += std::max(v, 0.0) - v * label + std::log1p(std::exp(-std::fabs(v)));
  const double n = static_cast<double>(x.size());
  return make_result({1}, {total / n}, {logits.node()}, [label, n](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = p.data[i];
      const double sig = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      g[i] += self.grad[0] * (sig - label) / n;
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                     std::span<const double> class_weights) {
  require_2d(logits, "cross_entropy");
  const std::size_t n = logits.rows(), k = logits.cols();
  if (targets.size() != n) throw ShapeError("cross_entropy: one target per row required");
  if (class_weights.size() != k) throw ShapeError("cross_entropy: one weight per class required");
  const auto x = logits.data();
  auto probs = std::make_shared<std::vector<double>>(n * k);
  double total = 0.0, weight_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= k) throw ContractError("cross_entropy: target class out of range");
    const double* row = x.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] = std::exp(row[j] - log_z);
    const double w = class_weights[targets[i]];
    total += w * (log_z - row[targets[i]]);
    weight_sum += w;
  }
  if (weight_sum <= 0.0) throw ContractError("cross_entropy: total weight must be positive");
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  std::vector<double> weights(class_weights.begin(), class_weights.end());
  return make_result({1}, {total / weight_sum}, {logits.node()},
                     [probs, tgt, weights, weight_sum, k](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       const double up = self.grad[0] / weight_sum;
                       for (std::size_t i = 0; i < tgt.size(); ++i) {
                         const double w = weights[tgt[i]] * up;
                         for (std::size_t j = 0; j < k; ++j) {
                           g[i * k + j] += w * ((*probs)[i * k + j] - (j == tgt[i] ? 1.0 : 0.0));
                         }
                       }
                     });
}

Tensor grad_reverse(const Tensor& x, double coefficient) {
  if (coefficient < 0.0) throw ContractError("grad_reverse: coefficient must be non-negative");
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(x.shape(), std::move(out), {x.node()}, [coefficient](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= coefficient * self.grad[i];
  });
}

}  // namespace mtm::ag
