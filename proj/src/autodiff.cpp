#include "pcqa/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pcqa {

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (!t.is_matrix()) throw std::invalid_argument(std::string(op) + ": expected a 2-D tensor");
}

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data) {
    if (!std::isfinite(v)) throw std::runtime_error(std::string(op) + ": non-finite value produced");
  }
}

// C = A * B, row-major ikj loop
Tensor mat_mul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = &a.data[i * k];
    double* ci = &c.data[i * n];
    for (std::size_t l = 0; l < k; ++l) {
      const double ail = ai[l];
      if (ail == 0.0) continue;
      const double* bl = &b.data[l * n];
      for (std::size_t j = 0; j < n; ++j) ci[j] += ail * bl[j];
    }
  }
  return c;
}

// C = A * B^T
Tensor mat_mul_bt(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor c = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = &a.data[i * k];
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = &b.data[j * k];
      double s = 0.0;
      for (std::size_t l = 0; l < k; ++l) s += ai[l] * bj[l];
      c.data[i * n + j] = s;
    }
  }
  return c;
}

// C = A^T * B
Tensor mat_at_mul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.cols(), k = a.rows(), n = b.cols();
  Tensor c = Tensor::zeros({m, n});
  for (std::size_t l = 0; l < k; ++l) {
    const double* al = &a.data[l * m];
    const double* bl = &b.data[l * n];
    for (std::size_t i = 0; i < m; ++i) {
      const double ali = al[i];
      if (ali == 0.0) continue;
      double* ci = &c.data[i * n];
      for (std::size_t j = 0; j < n; ++j) ci[j] += ali * bl[j];
    }
  }
  return c;
}

Tensor transposed(const Tensor& a) {
  Tensor t = Tensor::zeros({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

void accumulate(Node* target, const Tensor& contribution, const char* op) {
  check_finite(contribution, op);
  if (target->grad.empty()) {
    target->grad = contribution;
    return;
  }
  for (std::size_t i = 0; i < contribution.data.size(); ++i) target->grad.data[i] += contribution.data[i];
}

// sums the rows of g into a 1 x F tensor
Tensor column_sums(const Tensor& g) {
  Tensor s = Tensor::zeros({1, g.cols()});
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) s.data[j] += g.at(i, j);
  return s;
}

enum class BroadcastMode { None, First, Second };

BroadcastMode broadcast_mode(const Tensor& a, const Tensor& b, const char* op) {
  require_matrix(a, op);
  require_matrix(b, op);
  if (a.same_shape(b)) return BroadcastMode::None;
  if (b.rows() == 1 && b.cols() == a.cols()) return BroadcastMode::Second;
  if (a.rows() == 1 && a.cols() == b.cols()) return BroadcastMode::First;
  throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Node* Graph::emplace(Tensor value, const char* op, std::vector<Node*> inputs) {
  check_finite(value, op);
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.value = std::move(value);
  n.op = op;
  n.inputs = std::move(inputs);
  return &n;
}

Node* Graph::leaf(Tensor v) {
  Node* n = emplace(std::move(v), "leaf", {});
  n->is_leaf = true;
  return n;
}

Node* Graph::matmul(Node* a, Node* b) {
  require_matrix(a->value, "matmul");
  require_matrix(b->value, "matmul");
  if (a->value.cols() != b->value.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Node* out = emplace(mat_mul(a->value, b->value), "matmul", {a, b});
  out->vjp = [a, b](Node& self) {
    accumulate(a, mat_mul_bt(self.grad, b->value), "matmul");
    accumulate(b, mat_at_mul(a->value, self.grad), "matmul");
  };
  return out;
}

Node* Graph::transpose(Node* a) {
  require_matrix(a->value, "transpose");
  Node* out = emplace(transposed(a->value), "transpose", {a});
  out->vjp = [a](Node& self) { accumulate(a, transposed(self.grad), "transpose"); };
  return out;
}

Node* Graph::add(Node* a, Node* b) {
  BroadcastMode mode = broadcast_mode(a->value, b->value, "add");
  const Tensor& full = (mode == BroadcastMode::First) ? b->value : a->value;
  Tensor v = full;
  if (mode == BroadcastMode::None) {
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] += b->value.data[i];
  } else {
    const Tensor& row = (mode == BroadcastMode::First) ? a->value : b->value;
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) v.at(i, j) += row.data[j];
  }
  Node* out = emplace(std::move(v), "add", {a, b});
  out->vjp = [a, b, mode](Node& self) {
    switch (mode) {
      case BroadcastMode::None:
        accumulate(a, self.grad, "add");
        accumulate(b, self.grad, "add");
        break;
      case BroadcastMode::Second:
        accumulate(a, self.grad, "add");
        accumulate(b, column_sums(self.grad), "add");
        break;
      case BroadcastMode::First:
        accumulate(a, column_sums(self.grad), "add");
        accumulate(b, self.grad, "add");
        break;
    }
  };
  return out;
}

Node* Graph::mul(Node* a, Node* b) {
  BroadcastMode mode = broadcast_mode(a->value, b->value, "multiply_elementwise");
  const Tensor& full = (mode == BroadcastMode::First) ? b->value : a->value;
  Tensor v = full;
  if (mode == BroadcastMode::None) {
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] *= b->value.data[i];
  } else {
    const Tensor& row = (mode == BroadcastMode::First) ? a->value : b->value;
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) v.at(i, j) *= row.data[j];
  }
  Node* out = emplace(std::move(v), "multiply_elementwise", {a, b});
  out->vjp = [a, b, mode](Node& self) {
    auto dense = [&](const Tensor& g, const Tensor& other) {
      Tensor d = g;
      for (std::size_t i = 0; i < d.rows(); ++i)
        for (std::size_t j = 0; j < d.cols(); ++j) {
          double o = (other.rows() == 1 && d.rows() > 1) ? other.data[j] : other.at(i, j);
          d.at(i, j) *= o;
        }
      return d;
    };
    Tensor da = dense(self.grad, b->value);
    Tensor db = dense(self.grad, a->value);
    if (mode == BroadcastMode::First) da = column_sums(da);
    if (mode == BroadcastMode::Second) db = column_sums(db);
    accumulate(a, da, "multiply_elementwise");
    accumulate(b, db, "multiply_elementwise");
  };
  return out;
}

Node* Graph::scale(Node* a, double c) {
  Tensor v = a->value;
  for (double& x : v.data) x *= c;
  Node* out = emplace(std::move(v), "scalar_multiply", {a});
  out->vjp = [a, c](Node& self) {
    Tensor d = self.grad;
    for (double& x : d.data) x *= c;
    accumulate(a, d, "scalar_multiply");
  };
  return out;
}

Node* Graph::relu(Node* a) {
  Tensor v = a->value;
  for (double& x : v.data) x = std::max(0.0, x);
  Node* out = emplace(std::move(v), "relu", {a});
  // derivative at exactly 0 is taken as 0
  out->vjp = [a](Node& self) {
    Tensor d = self.grad;
    for (std::size_t i = 0; i < d.data.size(); ++i)
      if (a->value.data[i] <= 0.0) d.data[i] = 0.0;
    accumulate(a, d, "relu");
  };
  return out;
}

Node* Graph::softmax_rows(Node* a) {
  require_matrix(a->value, "softmax_rows");
  Tensor v = a->value;
  const std::size_t n = v.rows(), m = v.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = &v.data[i * m];
    double hi = *std::max_element(row, row + m);
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      row[j] = std::exp(row[j] - hi);
      sum += row[j];
    }
    for (std::size_t j = 0; j < m; ++j) row[j] /= sum;
  }
  Node* out = emplace(std::move(v), "softmax_rows", {a});
  out->vjp = [a](Node& self) {
    const Tensor& y = self.value;
    Tensor d = self.grad;
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += d.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) d.at(i, j) = y.at(i, j) * (d.at(i, j) - dot);
    }
    accumulate(a, d, "softmax_rows");
  };
  return out;
}

Node* Graph::mean_rows(Node* a) {
  require_matrix(a->value, "row_mean");
  const std::size_t n = a->value.rows();
  Tensor v = column_sums(a->value);
  for (double& x : v.data) x /= static_cast<double>(n);
  Node* out = emplace(std::move(v), "row_mean", {a});
  out->vjp = [a, n](Node& self) {
    Tensor d = Tensor::zeros(a->value.shape);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d.cols(); ++j) d.at(i, j) = self.grad.data[j] / static_cast<double>(n);
    accumulate(a, d, "row_mean");
  };
  return out;
}

Node* Graph::variance_rows(Node* a) {
  require_matrix(a->value, "row_variance");
  const std::size_t n = a->value.rows(), f = a->value.cols();
  Tensor mean = column_sums(a->value);
  for (double& x : mean.data) x /= static_cast<double>(n);
  Tensor v = Tensor::zeros({1, f});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) {
      double c = a->value.at(i, j) - mean.data[j];
      v.data[j] += c * c;
    }
  for (double& x : v.data) x /= static_cast<double>(n);
  Node* out = emplace(std::move(v), "row_variance", {a});
  out->vjp = [a, mean, n](Node& self) {
    Tensor d = Tensor::zeros(a->value.shape);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d.cols(); ++j)
        d.at(i, j) = self.grad.data[j] * 2.0 * (a->value.at(i, j) - mean.data[j]) / static_cast<double>(n);
    accumulate(a, d, "row_variance");
  };
  return out;
}

Node* Graph::max_rows(Node* a) {
  require_matrix(a->value, "reduce_max_rows");
  const std::size_t n = a->value.rows(), f = a->value.cols();
  Tensor v = Tensor::zeros({1, f});
  std::vector<std::size_t> argmax(f, 0);
  for (std::size_t j = 0; j < f; ++j) {
    double best = a->value.at(0, j);
    for (std::size_t i = 1; i < n; ++i) {
      if (a->value.at(i, j) > best) {  // strict: first maximal row wins
        best = a->value.at(i, j);
        argmax[j] = i;
      }
    }
    v.data[j] = best;
  }
  Node* out = emplace(std::move(v), "reduce_max_rows", {a});
  out->vjp = [a, argmax](Node& self) {
    Tensor d = Tensor::zeros(a->value.shape);
    for (std::size_t j = 0; j < d.cols(); ++j) d.at(argmax[j], j) = self.grad.data[j];
    accumulate(a, d, "reduce_max_rows");
  };
  return out;
}

Node* Graph::concat_cols(const std::vector<Node*>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_columns: no inputs");
  const std::size_t n = xs[0]->value.rows();
  std::size_t total = 0;
  for (Node* x : xs) {
    require_matrix(x->value, "concat_columns");
    if (x->value.rows() != n) throw std::invalid_argument("concat_columns: row counts differ");
    total += x->value.cols();
  }
  Tensor v = Tensor::zeros({n, total});
  std::size_t off = 0;
  for (Node* x : xs) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < x->value.cols(); ++j) v.at(i, off + j) = x->value.at(i, j);
    off += x->value.cols();
  }
  Node* out = emplace(std::move(v), "concat_columns", xs);
  out->vjp = [xs](Node& self) {
    std::size_t off = 0;
    for (Node* x : xs) {
      Tensor d = Tensor::zeros(x->value.shape);
      for (std::size_t i = 0; i < d.rows(); ++i)
        for (std::size_t j = 0; j < d.cols(); ++j) d.at(i, j) = self.grad.at(i, off + j);
      accumulate(x, d, "concat_columns");
      off += x->value.cols();
    }
  };
  return out;
}

Node* Graph::concat_rows(const std::vector<Node*>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t f = xs[0]->value.cols();
  std::size_t total = 0;
  for (Node* x : xs) {
    require_matrix(x->value, "concat_rows");
    if (x->value.cols() != f) throw std::invalid_argument("concat_rows: column counts differ");
    total += x->value.rows();
  }
  Tensor v = Tensor::zeros({total, f});
  std::size_t off = 0;
  for (Node* x : xs) {
    std::copy(x->value.data.begin(), x->value.data.end(), v.data.begin() + static_cast<std::ptrdiff_t>(off * f));
    off += x->value.rows();
  }
  Node* out = emplace(std::move(v), "concat_rows", xs);
  out->vjp = [xs, f](Node& self) {
    std::size_t off = 0;
    for (Node* x : xs) {
      Tensor d = Tensor::zeros(x->value.shape);
      std::copy(self.grad.data.begin() + static_cast<std::ptrdiff_t>(off * f),
                self.grad.data.begin() + static_cast<std::ptrdiff_t>((off + x->value.rows()) * f), d.data.begin());
      accumulate(x, d, "concat_rows");
      off += x->value.rows();
    }
  };
  return out;
}

Node* Graph::slice_cols(Node* a, std::size_t lo, std::size_t hi) {
  require_matrix(a->value, "slice_columns");
  if (lo >= hi || hi > a->value.cols()) throw std::invalid_argument("slice_columns: bad range");
  const std::size_t n = a->value.rows(), w = hi - lo;
  Tensor v = Tensor::zeros({n, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) v.at(i, j) = a->value.at(i, lo + j);
  Node* out = emplace(std::move(v), "slice_columns", {a});
  out->vjp = [a, lo, w](Node& self) {
    Tensor d = Tensor::zeros(a->value.shape);
    for (std::size_t i = 0; i < d.rows(); ++i)
      for (std::size_t j = 0; j < w; ++j) d.at(i, lo + j) = self.grad.at(i, j);
    accumulate(a, d, "slice_columns");
  };
  return out;
}

Node* Graph::sqrt_elem(Node* a) {
  Tensor v = a->value;
  for (double& x : v.data) x = std::sqrt(x);
  Node* out = emplace(std::move(v), "sqrt", {a});
  out->vjp = [a](Node& self) {
    Tensor d = self.grad;
    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] *= 0.5 / self.value.data[i];
    accumulate(a, d, "sqrt");
  };
  return out;
}

Node* Graph::rsqrt_shifted(Node* a, double eps) {
  Tensor v = a->value;
  for (double& x : v.data) x = 1.0 / std::sqrt(x + eps);
  Node* out = emplace(std::move(v), "reciprocal_sqrt_shifted", {a});
  out->vjp = [a](Node& self) {
    Tensor d = self.grad;
    for (std::size_t i = 0; i < d.data.size(); ++i) {
      double y = self.value.data[i];
      d.data[i] *= -0.5 * y * y * y;
    }
    accumulate(a, d, "reciprocal_sqrt_shifted");
  };
  return out;
}

void Graph::backward(Node* loss) {
  if (loss->value.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  for (Node& n : nodes_) n.grad = Tensor{};
  loss->grad = Tensor::full(loss->value.shape, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->vjp && !it->grad.empty()) it->vjp(*it);
  }
  for (Node& n : nodes_) {
    if (n.is_leaf && n.grad.empty()) n.grad = Tensor::zeros(n.value.shape);
  }
}

GradCheckResult finite_difference_check(const ScalarBuilder& f, std::vector<Tensor> params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_difference_check: h must be positive");

  auto evaluate = [&](const std::vector<Tensor>& p) {
    Graph g;
    std::vector<Node*> leaves;
    leaves.reserve(p.size());
    for (const Tensor& t : p) leaves.push_back(g.leaf(t));
    Node* loss = f(g, leaves);
    if (loss->value.size() != 1) throw std::invalid_argument("finite_difference_check: function is not scalar");
    return loss->value.data[0];
  };

  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Node*> leaves;
    leaves.reserve(params.size());
    for (const Tensor& t : params) leaves.push_back(g.leaf(t));
    Node* loss = f(g, leaves);
    g.backward(loss);
    for (Node* l : leaves) analytic.push_back(l->grad);
  }

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].data.size(); ++i) {
      const double orig = params[p].data[i];
      params[p].data[i] = orig + h;
      const double up = evaluate(params);
      params[p].data[i] = orig - h;
      const double down = evaluate(params);
      params[p].data[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[p].data[i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (err > result.max_rel_err) {
        result.max_rel_err = err;
        result.worst_param = p;
        result.worst_coord = i;
      }
    }
  }
  return result;
}

}  // namespace pcqa
