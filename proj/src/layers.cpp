#include <cmath>
#include <stdexcept>

#include "pcqa/layers.hpp"

namespace pcqa {

EmbeddingNodes lift(Graph& g, const EmbeddingParams& p) {
  return {g.leaf(p.w1), g.leaf(p.b1), g.leaf(p.w2), g.leaf(p.b2)};
}

AttentionNodes lift(Graph& g, const AttentionParams& p) {
  return {g.leaf(p.wq), g.leaf(p.wk), g.leaf(p.wv), g.leaf(p.wo), p.heads};
}

GraphNormNodes lift(Graph& g, const GraphNormParams& p) {
  return {g.leaf(p.alpha), g.leaf(p.gamma), g.leaf(p.beta), p.epsilon};
}

Node* feature_embedding(Graph& g, Node* x, const EmbeddingNodes& p) {
  Node* hidden = g.relu(g.add(g.matmul(x, p.w1), p.b1));
  return g.relu(g.add(g.matmul(hidden, p.w2), p.b2));
}

namespace {

Node* attention_core(Graph& g, Node* q_src, Node* kv_src, const AttentionNodes& p,
                     std::vector<Node*>* attention_out) {
  const std::size_t c = q_src->value.cols();
  if (kv_src->value.cols() != c) throw std::invalid_argument("attention: stream width mismatch");
  if (p.heads == 0 || c % p.heads != 0)
    throw std::invalid_argument("attention: head count must divide the channel width");
  if (p.wq->value.rows() != c || p.wq->value.cols() != c)
    throw std::invalid_argument("attention: projection shape mismatch");

  Node* q = g.matmul(q_src, p.wq);
  Node* k = g.matmul(kv_src, p.wk);
  Node* v = g.matmul(kv_src, p.wv);

  const std::size_t dh = c / p.heads;
  const double scale = 1.0 / std::sqrt(double(dh));
  std::vector<Node*> head_outputs;
  head_outputs.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    const std::size_t lo = h * dh, hi = lo + dh;
    Node* qh = g.slice_cols(q, lo, hi);
    Node* kh = g.slice_cols(k, lo, hi);
    Node* vh = g.slice_cols(v, lo, hi);
    Node* logits = g.scale(g.matmul(qh, g.transpose(kh)), scale);
    Node* attn = g.softmax_rows(logits);
    if (attention_out) attention_out->push_back(attn);
    head_outputs.push_back(g.matmul(attn, vh));
  }
  Node* merged = p.heads == 1 ? head_outputs[0] : g.concat_cols(head_outputs);
  return g.matmul(merged, p.wo);
}

}  // namespace

Node* multi_head_self_attention(Graph& g, Node* x, const AttentionNodes& p,
                                std::vector<Node*>* attention_out) {
  return attention_core(g, x, x, p, attention_out);
}

Node* multi_head_cross_attention(Graph& g, Node* x_rgb, Node* x_xyz, const AttentionNodes& p,
                                 std::vector<Node*>* attention_out) {
  if (x_rgb->value.rows() != x_xyz->value.rows())
    throw std::invalid_argument("attention: stream row-count mismatch");
  return attention_core(g, x_rgb, x_xyz, p, attention_out);
}

Node* graph_norm(Graph& g, Node* x, const GraphNormNodes& p) {
  if (p.epsilon <= 0.0) throw std::invalid_argument("graph_norm: epsilon must be positive");
  Node* mu = g.mean_rows(x);
  Node* shifted_mean = g.mul(p.alpha, mu);
  Node* centered = g.add(x, g.scale(shifted_mean, -1.0));
  Node* inv_std = g.rsqrt_shifted(g.variance_rows(centered), p.epsilon);
  return g.add(g.mul(g.mul(centered, inv_std), p.gamma), p.beta);
}

Node* point_aggregation(Graph& g, Node* x) {
  return g.concat_cols({g.max_rows(x), g.mean_rows(x)});
}

Node* patch_aggregation(Graph& g, Node* v, const AttentionNodes& p) {
  return g.max_rows(multi_head_self_attention(g, v, p));
}

}  // namespace pcqa
