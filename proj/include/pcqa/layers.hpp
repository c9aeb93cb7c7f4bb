#pragma once

#include <cstddef>
#include <vector>

#include "pcqa/autodiff.hpp"
#include "pcqa/tensor.hpp"

namespace pcqa {

// Two pointwise sub-layers with relu between and after: the shared per-point
// feature map. Biases are stored as 1 x F_out rows.
struct EmbeddingParams {
  Tensor w1, b1;
  Tensor w2, b2;
};

struct AttentionParams {
  Tensor wq, wk, wv, wo;  // each C x C; heads act on C/heads column blocks
  std::size_t heads = 1;
};

struct GraphNormParams {
  Tensor alpha, gamma, beta;  // 1 x F each
  // Deliberately tiny: attention at a fresh initialization averages rows almost
  // uniformly, leaving post-attention variance far below any comfortable-looking
  // epsilon. A larger offset then attenuates instead of re-normalizing, and the
  // signal collapses geometrically over stacked blocks.
  double epsilon = 1e-10;
};

// Graph-lifted views of the same parameters: leaves created in a particular
// Graph so gradients accumulate on them during backward.
struct EmbeddingNodes {
  Node *w1, *b1, *w2, *b2;
};

struct AttentionNodes {
  Node *wq, *wk, *wv, *wo;
  std::size_t heads = 1;
};

struct GraphNormNodes {
  Node *alpha, *gamma, *beta;
  double epsilon = 1e-10;
};

EmbeddingNodes lift(Graph& g, const EmbeddingParams& p);
AttentionNodes lift(Graph& g, const AttentionParams& p);
GraphNormNodes lift(Graph& g, const GraphNormParams& p);

// relu(relu(X W1 + b1) W2 + b2), rows independent.
Node* feature_embedding(Graph& g, Node* x, const EmbeddingNodes& p);

// Scaled dot-product attention per head over C/heads column blocks, heads
// concatenated and projected by wo. The 1/sqrt(C/heads) factor multiplies the
// logits before the softmax. When `attention_out` is non-null the row-stochastic
// attention matrix node of every head is appended to it.
Node* multi_head_self_attention(Graph& g, Node* x, const AttentionNodes& p,
                                std::vector<Node*>* attention_out = nullptr);

// Same computation with queries drawn from the color stream and keys/values
// from the geometry stream; the result is the updated geometry representation.
Node* multi_head_cross_attention(Graph& g, Node* x_rgb, Node* x_xyz, const AttentionNodes& p,
                                 std::vector<Node*>* attention_out = nullptr);

// Per channel j over the N rows: y = x - alpha_j mu_j, out = y / sqrt(var(y) +
// eps) * gamma_j + beta_j, variance taken over the rows (divide by N).
Node* graph_norm(Graph& g, Node* x, const GraphNormNodes& p);

// concat(column-max, column-mean): N x F -> 1 x 2F, order-invariant.
Node* point_aggregation(Graph& g, Node* x);

// Column-max over self-attention of the patch vectors: M x D -> 1 x D.
Node* patch_aggregation(Graph& g, Node* v, const AttentionNodes& p);

}  // namespace pcqa
