#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "pcqa/tensor.hpp"

namespace pcqa {

// One vertex of a dynamically built computation graph. Nodes are owned by the
// Graph that created them and stay valid until it is destroyed.
struct Node {
  Tensor value;
  Tensor grad;  // empty until backward reaches this node
  std::vector<Node*> inputs;
  const char* op = "leaf";
  bool is_leaf = false;
  std::function<void(Node&)> vjp;  // pulls this->grad into inputs' grads
};

// Reverse-mode engine over dense 2-D tensors. A graph instance is confined to
// one thread; rebuild per forward pass. Every primitive checks its output for
// NaN/Inf and throws on violation.
class Graph {
 public:
  Node* leaf(Tensor v);

  // a: m x k, b: k x n -> m x n
  Node* matmul(Node* a, Node* b);
  Node* transpose(Node* a);
  // same shape, or one side 1 x F broadcast over the other's rows
  Node* add(Node* a, Node* b);
  Node* mul(Node* a, Node* b);
  Node* scale(Node* a, double c);
  Node* relu(Node* a);
  Node* softmax_rows(Node* a);
  // column statistics over the N rows, N x F -> 1 x F
  Node* mean_rows(Node* a);
  Node* variance_rows(Node* a);  // population variance, divide by N
  Node* max_rows(Node* a);       // gradient routed to the first maximal row per column
  Node* concat_cols(const std::vector<Node*>& xs);
  Node* concat_rows(const std::vector<Node*>& xs);
  Node* slice_cols(Node* a, std::size_t lo, std::size_t hi);
  Node* sqrt_elem(Node* a);
  // 1 / sqrt(x + eps)
  Node* rsqrt_shifted(Node* a, double eps);

  // Reverse accumulation from a scalar loss. Afterwards every leaf carries a
  // gradient (zero tensor if the leaf never reached the loss).
  void backward(Node* loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  Node* emplace(Tensor value, const char* op, std::vector<Node*> inputs);
  std::deque<Node> nodes_;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_coord = 0;
};

// Builds a scalar loss from leaves created for each tensor in `params`, in
// order. Must be pure: same tensors, same scalar.
using ScalarBuilder = std::function<Node*(Graph&, const std::vector<Node*>&)>;

// Central differences (f(p+h) - f(p-h)) / 2h per coordinate against the
// analytic gradient; error per coordinate is |a - n| / max(1, |a|, |n|).
GradCheckResult finite_difference_check(const ScalarBuilder& f, std::vector<Tensor> params, double h);

}  // namespace pcqa
