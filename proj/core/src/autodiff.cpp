// SPDX-License-Identifier: Apache-2.0
#include "mpfm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_set>

#include "mpfm/error.hpp"

namespace mpfm::ad {

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

namespace {

using Backprop = std::function<void(Node&)>;

Var make_result(Tensor value, std::initializer_list<const Var*> inputs, Backprop rule) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  for (const Var* v : inputs) needs = needs || v->requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const Var* v : inputs) node->inputs.push_back(v->shared());
    node->backprop = std::move(rule);
  }
  return Var(std::move(node));
}

Var make_result(Tensor value, std::span<const Var> inputs, Backprop rule) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  for (const Var& v : inputs) needs = needs || v.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const Var& v : inputs) node->inputs.push_back(v.shared());
    node->backprop = std::move(rule);
  }
  return Var(std::move(node));
}

bool wants(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }

void require_matrix(const Var& a, const char* op) {
  if (!a.defined()) throw ContractViolation(std::string(op) + ": undefined operand");
  if (a.value().rank() != 2) {
    throw InvalidInput(std::string(op) + ": expected matrix, got " + a.value().shape_string());
  }
}

// ---- broadcasting elementwise binary ops ----------------------------------

struct Broadcast {
  std::size_t rows, cols;
  std::size_t ar, ac, br, bc;
  std::size_t a_index(std::size_t r, std::size_t c) const {
    return (ar == 1 ? 0 : r) * ac + (ac == 1 ? 0 : c);
  }
  std::size_t b_index(std::size_t r, std::size_t c) const {
    return (br == 1 ? 0 : r) * bc + (bc == 1 ? 0 : c);
  }
};

Broadcast broadcast_shape(const Var& a, const Var& b, const char* op) {
  require_matrix(a, op);
  require_matrix(b, op);
  Broadcast s{0, 0, a.rows(), a.cols(), b.rows(), b.cols()};
  auto join = [&](std::size_t x, std::size_t y) -> std::size_t {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    throw InvalidInput(std::string(op) + ": incompatible shapes " + a.value().shape_string() +
                       " and " + b.value().shape_string());
  };
  s.rows = join(s.ar, s.br);
  s.cols = join(s.ac, s.bc);
  return s;
}

template <class F, class DA, class DB>
Var binary(const Var& a, const Var& b, const char* op, F f, DA dfa, DB dfb) {
  const Broadcast s = broadcast_shape(a, b, op);
  Tensor out = Tensor::matrix(s.rows, s.cols);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t r = 0; r < s.rows; ++r) {
    for (std::size_t c = 0; c < s.cols; ++c) {
      out(r, c) = f(av[s.a_index(r, c)], bv[s.b_index(r, c)]);
    }
  }
  return make_result(std::move(out), {&a, &b}, [s, dfa, dfb](Node& self) {
    const Tensor& g = self.grad;
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    const bool want_a = wants(self, 0);
    const bool want_b = wants(self, 1);
    Tensor* ga = want_a ? &self.inputs[0]->grad_buffer() : nullptr;
    Tensor* gb = want_b ? &self.inputs[1]->grad_buffer() : nullptr;
    for (std::size_t r = 0; r < s.rows; ++r) {
      for (std::size_t c = 0; c < s.cols; ++c) {
        const std::size_t ia = s.a_index(r, c);
        const std::size_t ib = s.b_index(r, c);
        const double gv = g(r, c);
        if (want_a) (*ga)[ia] += gv * dfa(av[ia], bv[ib]);
        if (want_b) (*gb)[ib] += gv * dfb(av[ia], bv[ib]);
      }
    }
  });
}

// ---- elementwise unary ops -------------------------------------------------

template <class F, class D>
Var unary(const Var& a, const char* op, F f, D df) {
  require_matrix(a, op);
  Tensor out = a.value();
  for (double& v : out.data()) v = f(v);
  return make_result(std::move(out), {&a}, [df](Node& self) {
    const Tensor& x = self.inputs[0]->value;
    Tensor& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += self.grad[i] * df(x[i], self.value[i]);
  });
}

double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---- graph traversal -------------------------------------------------------

std::vector<Node*> topological_order(const Var& root) {
  std::vector<Node*> order;
  if (!root.requires_grad()) return order;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS; graphs from unrolled integrators are deep.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
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
  return order;
}

void backward(const Var& root) {
  if (!root.defined()) throw ContractViolation("backward: undefined root");
  if (root.value().size() != 1) {
    throw ContractViolation("backward: root must be a scalar, got shape " + root.value().shape_string());
  }
  const std::vector<Node*> order = topological_order(root);
  if (order.empty()) return;
  // Interior gradients belong to this pass only; leaves keep accumulating.
  for (Node* node : order) {
    if (node->backprop) node->grad = Tensor();
  }
  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop && !node->grad.empty()) node->backprop(*node);
  }
}

std::vector<Tensor> gradients(const Var& root, std::span<const Var> params) {
  for (const Var& p : params) {
    if (!p.requires_grad()) throw ContractViolation("gradients: parameter does not require grad");
    p.node()->grad = Tensor();
  }
  backward(root);
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Var& p : params) out.push_back(p.grad());
  return out;
}

// ---- binary ----------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var matmul(const Var& a, const Var& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) {
    throw InvalidInput("matmul: inner dimensions differ, " + a.value().shape_string() + " x " +
                       b.value().shape_string());
  }
  Tensor out = Tensor::matrix(n, m);
  const auto& A = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = &out(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A(i, p);
      if (aip == 0.0) continue;
      const double* brow = B.data().data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  return make_result(std::move(out), {&a, &b}, [n, k, m](Node& self) {
    const Tensor& G = self.grad;
    const Tensor& A = self.inputs[0]->value;
    const Tensor& B = self.inputs[1]->value;
    if (wants(self, 0)) {
      Tensor& GA = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += G(i, j) * B(p, j);
          GA(i, p) += acc;
        }
      }
    }
    if (wants(self, 1)) {
      Tensor& GB = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A(i, p);
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) GB(p, j) += aip * G(i, j);
        }
      }
    }
  });
}

// ---- unary -----------------------------------------------------------------

Var neg(const Var& a) {
  return unary(a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(const Var& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
  return unary(
      a, "add_scalar", [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var square(const Var& a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var exp(const Var& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(const Var& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(const Var& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
  return unary(a, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& a) {
  return unary(a, "softplus", stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var xlogx(const Var& a) {
  return unary(
      a, "xlogx", [](double x) { return x > 0.0 ? x * std::log(x) : 0.0; },
      [](double x, double) { return std::log(std::max(x, std::numeric_limits<double>::min())) + 1.0; });
}

Var clamp_min(const Var& a, double floor) {
  return unary(
      a, "clamp_min", [floor](double x) { return x > floor ? x : floor; },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

// ---- reductions ------------------------------------------------------------

Var sum(const Var& a) {
  require_matrix(a, "sum");
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return make_result(Tensor::scalar(total), {&a}, [](Node& self) {
    const double g = self.grad[0];
    for (double& v : self.inputs[0]->grad_buffer().data()) v += g;
  });
}

Var mean(const Var& a) {
  require_matrix(a, "mean");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var row_sum(const Var& a) {
  require_matrix(a, "row_sum");
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out = Tensor::matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) acc += a.value()(i, j);
    out(i, 0) = acc;
  }
  return make_result(std::move(out), {&a}, [n, m](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) g(i, j) += self.grad(i, 0);
  });
}

Var col_sum(const Var& a) {
  require_matrix(a, "col_sum");
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out = Tensor::matrix(1, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(0, j) += a.value()(i, j);
  return make_result(std::move(out), {&a}, [n, m](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) g(i, j) += self.grad(0, j);
  });
}

Var col_mean(const Var& a) {
  require_matrix(a, "col_mean");
  return scale(col_sum(a), 1.0 / static_cast<double>(a.rows()));
}

Var logsumexp_rows(const Var& a) {
  require_matrix(a, "logsumexp_rows");
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out = Tensor::matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = a.value().row_span(i);
    const double mx = *std::max_element(row.begin(), row.end());
    if (!std::isfinite(mx)) {
      out(i, 0) = mx;
      continue;
    }
    double acc = 0.0;
    for (double v : row) acc += std::exp(v - mx);
    out(i, 0) = mx + std::log(acc);
  }
  return make_result(std::move(out), {&a}, [n, m](Node& self) {
    const Tensor& x = self.inputs[0]->value;
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      const double lse = self.value(i, 0);
      for (std::size_t j = 0; j < m; ++j) g(i, j) += self.grad(i, 0) * std::exp(x(i, j) - lse);
    }
  });
}

Var log_softmax_rows(const Var& a) {
  require_matrix(a, "log_softmax_rows");
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i) {
    auto row = out.row_span(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double acc = 0.0;
    for (double v : row) acc += std::exp(v - mx);
    const double lse = mx + std::log(acc);
    for (double& v : row) v -= lse;
  }
  return make_result(std::move(out), {&a}, [n, m](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < m; ++j) gsum += self.grad(i, j);
      for (std::size_t j = 0; j < m; ++j) g(i, j) += self.grad(i, j) - std::exp(self.value(i, j)) * gsum;
    }
  });
}

Var softmax_rows(const Var& a) { return exp(log_softmax_rows(a)); }

// ---- shape ops -------------------------------------------------------------

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_cols");
  if (begin >= end || end > a.cols()) throw InvalidInput("slice_cols: bad range");
  const std::size_t n = a.rows(), w = end - begin;
  Tensor out = Tensor::matrix(n, w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = a.value()(i, begin + j);
  return make_result(std::move(out), {&a}, [n, w, begin](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) g(i, begin + j) += self.grad(i, j);
  });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_rows");
  if (begin >= end || end > a.rows()) throw InvalidInput("slice_rows: bad range");
  const std::size_t m = a.cols();
  const auto src = a.value().data().subspan(begin * m, (end - begin) * m);
  Tensor out({end - begin, m}, std::vector<double>(src.begin(), src.end()));
  return make_result(std::move(out), {&a}, [begin, m](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * m + i] += self.grad[i];
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidInput("concat_cols: no parts");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != n) throw InvalidInput("concat_cols: row counts differ");
    total += p.cols();
  }
  Tensor out = Tensor::matrix(n, total);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out(i, off + j) = p.value()(i, j);
    off += p.cols();
  }
  return make_result(std::move(out), parts, [offsets, n](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      if (!wants(self, k)) continue;
      Tensor& g = self.inputs[k]->grad_buffer();
      const std::size_t w = g.cols();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) g(i, j) += self.grad(i, offsets[k] + j);
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidInput("concat_rows: no parts");
  const std::size_t m = parts[0].cols();
  std::vector<double> data;
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != m) throw InvalidInput("concat_rows: column counts differ");
    offsets.push_back(data.size());
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    rows += p.rows();
  }
  Tensor out({rows, m}, std::move(data));
  return make_result(std::move(out), parts, [offsets](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      if (!wants(self, k)) continue;
      Tensor& g = self.inputs[k]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
    }
  });
}

Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  require_matrix(a, "reshape");
  if (rows * cols != a.value().size()) throw InvalidInput("reshape: element count differs");
  Tensor out = a.value().reshaped({rows, cols});
  return make_result(std::move(out), {&a}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var repeat_cols(const Var& a, std::size_t times) {
  require_matrix(a, "repeat_cols");
  if (times == 0) throw InvalidInput("repeat_cols: times must be positive");
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out = Tensor::matrix(n, m * times);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < times; ++r)
      for (std::size_t j = 0; j < m; ++j) out(i, r * m + j) = a.value()(i, j);
  return make_result(std::move(out), {&a}, [n, m, times](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < times; ++r)
        for (std::size_t j = 0; j < m; ++j) g(i, j) += self.grad(i, r * m + j);
  });
}

Var group_sum_cols(const Var& a, std::size_t group) {
  require_matrix(a, "group_sum_cols");
  if (group == 0 || a.cols() % group != 0) throw InvalidInput("group_sum_cols: bad group size");
  const std::size_t n = a.rows(), k = a.cols() / group;
  Tensor out = Tensor::matrix(n, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < group; ++j) acc += a.value()(i, c * group + j);
      out(i, c) = acc;
    }
  return make_result(std::move(out), {&a}, [n, k, group](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < k; ++c)
        for (std::size_t j = 0; j < group; ++j) g(i, c * group + j) += self.grad(i, c);
  });
}

Var gather_rows(const Var& a, std::span<const std::size_t> index) {
  require_matrix(a, "gather_rows");
  if (index.empty()) throw InvalidInput("gather_rows: empty index");
  const std::size_t m = a.cols();
  Tensor out = Tensor::matrix(index.size(), m);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.rows()) throw InvalidInput("gather_rows: index out of range");
    for (std::size_t j = 0; j < m; ++j) out(i, j) = a.value()(index[i], j);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result(std::move(out), {&a}, [idx = std::move(idx), m](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < m; ++j) g(idx[i], j) += self.grad(i, j);
  });
}

Var squared_distances(const Var& y, const Var& centers) {
  require_matrix(y, "squared_distances");
  require_matrix(centers, "squared_distances");
  const std::size_t n = y.rows(), d = y.cols(), k = centers.rows();
  if (centers.cols() != d) throw InvalidInput("squared_distances: dimension mismatch");
  Tensor out = Tensor::matrix(n, k);
  const Tensor& Y = y.value();
  const Tensor& C = centers.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = Y(i, j) - C(c, j);
        acc += diff * diff;
      }
      out(i, c) = acc;
    }
  return make_result(std::move(out), {&y, &centers}, [n, d, k](Node& self) {
    const Tensor& Y = self.inputs[0]->value;
    const Tensor& C = self.inputs[1]->value;
    Tensor* gy = wants(self, 0) ? &self.inputs[0]->grad_buffer() : nullptr;
    Tensor* gc = wants(self, 1) ? &self.inputs[1]->grad_buffer() : nullptr;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < k; ++c) {
        const double g2 = 2.0 * self.grad(i, c);
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = Y(i, j) - C(c, j);
          if (gy) (*gy)(i, j) += g2 * diff;
          if (gc) (*gc)(c, j) -= g2 * diff;
        }
      }
  });
}

Var mixture_combine(const Var& weights, const Var& means) {
  require_matrix(weights, "mixture_combine");
  require_matrix(means, "mixture_combine");
  const std::size_t n = weights.rows(), k = weights.cols();
  if (means.rows() != n || means.cols() % k != 0) throw InvalidInput("mixture_combine: shape mismatch");
  const std::size_t d = means.cols() / k;
  Tensor out = Tensor::matrix(n, d);
  const Tensor& W = weights.value();
  const Tensor& M = means.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t j = 0; j < d; ++j) out(i, j) += W(i, c) * M(i, c * d + j);
  return make_result(std::move(out), {&weights, &means}, [n, k, d](Node& self) {
    const Tensor& W = self.inputs[0]->value;
    const Tensor& M = self.inputs[1]->value;
    Tensor* gw = wants(self, 0) ? &self.inputs[0]->grad_buffer() : nullptr;
    Tensor* gm = wants(self, 1) ? &self.inputs[1]->grad_buffer() : nullptr;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < k; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          acc += self.grad(i, j) * M(i, c * d + j);
          if (gm) (*gm)(i, c * d + j) += self.grad(i, j) * W(i, c);
        }
        if (gw) (*gw)(i, c) += acc;
      }
  });
}

Var topk_mean_rows(const Var& a, std::size_t count) {
  require_matrix(a, "topk_mean_rows");
  const std::size_t n = a.rows(), p = a.cols();
  if (count == 0 || count > p) throw InvalidInput("topk_mean_rows: count must be in [1, cols]");
  Tensor out = Tensor::matrix(n, 1);
  std::vector<std::size_t> chosen(n * count);
  std::vector<std::size_t> order(p);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = a.value().row_span(i);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return row[x] > row[y]; });
    double acc = 0.0;
    for (std::size_t r = 0; r < count; ++r) {
      chosen[i * count + r] = order[r];
      acc += row[order[r]];
    }
    out(i, 0) = acc / static_cast<double>(count);
  }
  return make_result(std::move(out), {&a}, [chosen = std::move(chosen), n, count](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const double inv = 1.0 / static_cast<double>(count);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < count; ++r) g(i, chosen[i * count + r]) += self.grad(i, 0) * inv;
  });
}

}  // namespace mpfm::ad
